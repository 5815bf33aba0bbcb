#include "mmr/cli.hpp"

int main(int argc, char** argv) { return mmr::cli::run(argc, argv); }
