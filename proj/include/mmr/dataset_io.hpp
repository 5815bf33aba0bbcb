#pragma once

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/dataset.hpp"

namespace mmr {

/// Malformed or inconsistent dataset directory.
class DatasetFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kDatasetFormatVersion = 1;

namespace io {

/// Shortest representation that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().remove_suffix(1);
    return out;
}

template <typename V>
V parse_number(std::string_view s, const std::string& where) {
    V v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw DatasetFormatError(where + ": cannot parse '" + std::string(s) + "'");
    return v;
}

inline std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(p, mode);
    if (!in) throw DatasetFormatError("cannot open " + p.string());
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(p, mode | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

/// Reads a CSV with a fixed header; returns the data rows split into fields.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p, std::string_view header,
                                                      std::size_t fields) {
    auto in = open_in(p);
    std::string line;
    if (!std::getline(in, line)) throw DatasetFormatError(p.filename().string() + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header)
        throw DatasetFormatError(p.filename().string() + " line 1: expected header '" + std::string(header) + "'");
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto parts = split_csv(line);
        if (parts.size() != fields)
            throw DatasetFormatError(p.filename().string() + " line " + std::to_string(lineno) + ": expected " +
                                     std::to_string(fields) + " fields, got " + std::to_string(parts.size()));
        rows.emplace_back(parts.begin(), parts.end());
    }
    return rows;
}

inline void write_f32_le(std::ostream& out, const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            auto bits = std::bit_cast<std::uint32_t>(data[i]);
            char b[4] = {char(bits), char(bits >> 8), char(bits >> 16), char(bits >> 24)};
            out.write(b, 4);
        }
    }
}

inline std::vector<float> read_f32_le(const std::filesystem::path& p) {
    auto in = open_in(p, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0)
        throw DatasetFormatError(p.filename().string() + ": length " + std::to_string(bytes.size()) +
                                 " is not a multiple of 4 (truncated at byte " +
                                 std::to_string(bytes.size() - bytes.size() % 4) + ")");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 3; k >= 0; --k) bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 4 + k]);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace io

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json meta = {
        {"format_version", kDatasetFormatVersion},
        {"N", ds.size()},
        {"H", ds.height},
        {"W", ds.width},
        {"classes", {"stable", "unstable"}},
        {"provenance", ds.provenance},
    };
    if (ds.provenance.contains("generator")) {
        meta["seed"] = ds.provenance["generator"].value("seed", 0);
        meta["generator"] = ds.provenance["generator"];
    }
    io::open_out(dir / "meta.json") << meta.dump(2) << '\n';

    {
        auto out = io::open_out(dir / "features.bin", std::ios::binary);
        io::write_f32_le(out, ds.features.data(), ds.features.size());
    }
    {
        auto out = io::open_out(dir / "labels_true.csv");
        out << "index,label\n";
        for (std::size_t i = 0; i < ds.size(); ++i) out << i << ',' << ds.labels_true[i] << '\n';
    }
    {
        auto out = io::open_out(dir / "labels_train.csv");
        out << "index,p_stable,p_unstable\n";
        for (std::size_t i = 0; i < ds.size(); ++i)
            out << i << ',' << io::fmt_double(ds.labels_train[i].p_stable) << ','
                << io::fmt_double(ds.labels_train[i].p_unstable) << '\n';
    }
    {
        auto out = io::open_out(dir / "masks.csv");
        out << "index,flipped,annotated\n";
        for (std::size_t i = 0; i < ds.size(); ++i)
            out << i << ',' << int(ds.flipped[i]) << ',' << int(ds.annotated[i]) << '\n';
    }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::open_in(dir / "meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError(std::string("meta.json: ") + e.what());
    }
    if (meta.value("format_version", -1) != kDatasetFormatVersion)
        throw DatasetFormatError("meta.json: unsupported format_version");
    Dataset ds;
    std::size_t n = 0;
    try {
        n = meta.at("N").get<std::size_t>();
        ds.height = meta.at("H").get<std::size_t>();
        ds.width = meta.at("W").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError(std::string("meta.json: ") + e.what());
    }
    ds.provenance = meta.value("provenance", nlohmann::json::object());

    ds.features = io::read_f32_le(dir / "features.bin");
    if (ds.features.size() != n * ds.height * ds.width)
        throw DatasetFormatError("features.bin: " + std::to_string(ds.features.size()) + " floats, meta.json implies " +
                                 std::to_string(n * ds.height * ds.width) + " (N=" + std::to_string(n) + ")");

    const auto check_rows = [&](const auto& rows, const char* file) {
        if (rows.size() != n)
            throw DatasetFormatError(std::string(file) + ": " + std::to_string(rows.size()) +
                                     " rows, meta.json says N=" + std::to_string(n));
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (io::parse_number<std::size_t>(rows[i][0], std::string(file) + " line " + std::to_string(i + 2)) != i)
                throw DatasetFormatError(std::string(file) + " line " + std::to_string(i + 2) + ": index out of order");
    };

    auto lt = io::read_csv(dir / "labels_true.csv", "index,label", 2);
    check_rows(lt, "labels_true.csv");
    for (std::size_t i = 0; i < n; ++i)
        ds.labels_true.push_back(io::parse_number<int>(lt[i][1], "labels_true.csv line " + std::to_string(i + 2)));

    auto ltr = io::read_csv(dir / "labels_train.csv", "index,p_stable,p_unstable", 3);
    check_rows(ltr, "labels_train.csv");
    for (std::size_t i = 0; i < n; ++i) {
        const std::string where = "labels_train.csv line " + std::to_string(i + 2);
        ds.labels_train.push_back(
            {io::parse_number<double>(ltr[i][1], where), io::parse_number<double>(ltr[i][2], where)});
    }

    auto masks = io::read_csv(dir / "masks.csv", "index,flipped,annotated", 3);
    check_rows(masks, "masks.csv");
    for (std::size_t i = 0; i < n; ++i) {
        const std::string where = "masks.csv line " + std::to_string(i + 2);
        ds.flipped.push_back(static_cast<std::uint8_t>(io::parse_number<int>(masks[i][1], where)));
        ds.annotated.push_back(static_cast<std::uint8_t>(io::parse_number<int>(masks[i][2], where)));
    }

    try {
        ds.validate();
    } catch (const std::invalid_argument& e) {
        throw DatasetFormatError(e.what());
    }
    return ds;
}

}  // namespace mmr
