#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/adam.hpp"
#include "mmr/dataset.hpp"
#include "mmr/fuzzy_clustering.hpp"
#include "mmr/layers.hpp"
#include "mmr/losses.hpp"

namespace mmr {

enum class Architecture { conv, dense };

struct ModelConfig {
    Architecture architecture = Architecture::conv;
    std::size_t input_height = 16;
    std::size_t input_width = 32;
    std::vector<std::size_t> channels{8, 16, 32};
    std::vector<std::size_t> kernels{5, 5, 4};
    std::vector<std::size_t> paddings{2, 2, 1};
    std::size_t stride = 2;
    std::size_t dense_hidden = 128;  // dense architecture only
    std::size_t z_dim = 64;
    std::size_t classifier_hidden = 16;
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    double fuzzifier = 2.0;
    std::size_t batch_size = 64;
    double penalty = 3.0;
    double learning_rate = 1e-3;

    void validate() const {
        if (z_dim == 0) throw std::invalid_argument("z_dim must be positive");
        if (alpha1 < 0.0 || alpha2 < 0.0) throw std::invalid_argument("alpha1/alpha2 must be nonnegative");
        if (!(fuzzifier > 1.0)) throw std::invalid_argument("fuzzifier must exceed 1");
        if (penalty < 1.0) throw std::invalid_argument("penalty must be >= 1");
        if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
        if (architecture == Architecture::conv &&
            (channels.size() != kernels.size() || kernels.size() != paddings.size() || channels.empty()))
            throw std::invalid_argument("conv stack needs matching channels/kernels/paddings");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"architecture", c.architecture == Architecture::conv ? "conv" : "dense"},
         {"input_height", c.input_height},
         {"input_width", c.input_width},
         {"channels", c.channels},
         {"kernels", c.kernels},
         {"paddings", c.paddings},
         {"stride", c.stride},
         {"dense_hidden", c.dense_hidden},
         {"z_dim", c.z_dim},
         {"classifier_hidden", c.classifier_hidden},
         {"alpha1", c.alpha1},
         {"alpha2", c.alpha2},
         {"fuzzifier", c.fuzzifier},
         {"batch_size", c.batch_size},
         {"penalty", c.penalty},
         {"learning_rate", c.learning_rate}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    const std::string arch = j.value("architecture", std::string("conv"));
    if (arch != "conv" && arch != "dense") throw std::invalid_argument("unknown architecture '" + arch + "'");
    c.architecture = arch == "conv" ? Architecture::conv : Architecture::dense;
    c.input_height = j.value("input_height", d.input_height);
    c.input_width = j.value("input_width", d.input_width);
    c.channels = j.value("channels", d.channels);
    c.kernels = j.value("kernels", d.kernels);
    c.paddings = j.value("paddings", d.paddings);
    c.stride = j.value("stride", d.stride);
    c.dense_hidden = j.value("dense_hidden", d.dense_hidden);
    c.z_dim = j.value("z_dim", d.z_dim);
    c.classifier_hidden = j.value("classifier_hidden", d.classifier_hidden);
    c.alpha1 = j.value("alpha1", d.alpha1);
    c.alpha2 = j.value("alpha2", d.alpha2);
    c.fuzzifier = j.value("fuzzifier", d.fuzzifier);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.penalty = j.value("penalty", d.penalty);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
}

/// Batch of samples as [B, 1, H, W].
template <typename T>
Tensor<T> gather_features(const Dataset& ds, std::span<const std::size_t> idx) {
    Tensor<T> x({idx.size(), 1, ds.height, ds.width});
    const std::size_t ss = ds.sample_size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const float* src = ds.sample(idx[b]);
        std::copy(src, src + ss, x.data() + b * ss);
    }
    return x;
}

template <typename T>
Tensor<T> gather_labels(const Dataset& ds, std::span<const std::size_t> idx) {
    Tensor<T> y({idx.size(), 2});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        y.at(b, 0) = static_cast<T>(ds.labels_train[idx[b]].p_stable);
        y.at(b, 1) = static_cast<T>(ds.labels_train[idx[b]].p_unstable);
    }
    return y;
}

/// Loss terms of one optimisation step. `total` is what the gradients belong to.
struct LossBreakdown {
    double reconstruction = 0.0;
    double classification = 0.0;  // unscaled (weighted) cross-entropy
    double clustering = 0.0;      // KL term
    double total = 0.0;
};

/// Encoder, decoder, classifier and clustering layer of the alternating framework.
template <typename T>
class MmrModel {
public:
    MmrModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        std::mt19937_64 rng(seed);
        if (cfg.architecture == Architecture::conv)
            build_conv(rng);
        else
            build_dense(rng);
        classifier_.template add<Dense<T>>(cfg.z_dim, cfg.classifier_hidden, rng);
        classifier_.template add<ActivationLayer<T>>(Activation::relu);
        classifier_.template add<Dense<T>>(cfg.classifier_hidden, std::size_t{2}, rng);
        classifier_.template add<SoftmaxLayer<T>>();
        const Shape in{1, 1, cfg.input_height, cfg.input_width};
        if (decoder_.output_shape(encoder_.output_shape(in)) != in)
            throw ShapeError("decoder does not mirror encoder for input " + shape_str(in));
    }

    const ModelConfig& config() const { return cfg_; }
    Sequential<T>& encoder() { return encoder_; }
    Sequential<T>& decoder() { return decoder_; }
    Sequential<T>& classifier() { return classifier_; }
    ClusteringLayer<T>& clustering() { return clustering_; }
    const ClusteringLayer<T>& clustering() const { return clustering_; }

    std::vector<Parameter<T>*> parameters() {
        auto out = encoder_.parameters();
        for (auto* p : decoder_.parameters()) out.push_back(p);
        for (auto* p : classifier_.parameters()) out.push_back(p);
        if (clustering_.initialized()) out.push_back(&clustering_.centers());
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    void init_clustering(const ClusterState<T>& s) { clustering_ = ClusteringLayer<T>(s); }

    // ----- value + gradient for one batch --------------------------------

    /// Reconstruction term alone, gradients into encoder/decoder.
    double reconstruction_step(const Tensor<T>& x) {
        auto z = encoder_.forward(x);
        auto rec = squared_error_loss(decoder_.forward(z), x);
        encoder_.backward(decoder_.backward(rec.grad));
        return rec.value;
    }

    /// L_Rec + (alpha1/N) sum_i w_i CE_i; with no weights this is L_Rec + alpha1 L_C.
    LossBreakdown classification_step(const Tensor<T>& x, const Tensor<T>& labels, std::span<const T> weights = {}) {
        auto z = encoder_.forward(x);
        auto rec = squared_error_loss(decoder_.forward(z), x);
        auto probs = classifier_.forward(z);
        const T a1 = static_cast<T>(cfg_.alpha1);
        auto ce = cross_entropy_loss(probs, labels, weights, a1);
        auto dz = decoder_.backward(rec.grad);
        auto dz_c = classifier_.backward(ce.grad);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_c[i];
        encoder_.backward(dz);
        const double ce_unscaled = cfg_.alpha1 > 0 ? ce.value / cfg_.alpha1 : unscaled_ce(probs, labels, weights);
        return {rec.value, ce_unscaled, 0.0, static_cast<double>(rec.value) + static_cast<double>(ce.value)};
    }

    /// L_Rec + alpha2 KL(q || p_t) with p_t held fixed.
    LossBreakdown clustering_step(const Tensor<T>& x, const Tensor<T>& target) {
        if (!clustering_.initialized()) throw std::logic_error("clustering layer used before initialisation");
        auto z = encoder_.forward(x);
        auto rec = squared_error_loss(decoder_.forward(z), x);
        auto q = clustering_.forward(z);
        auto kl = kl_divergence_loss(q, target);
        const T a2 = static_cast<T>(cfg_.alpha2);
        for (auto& g : kl.grad.values()) g *= a2;
        auto dz = decoder_.backward(rec.grad);
        auto dz_c = clustering_.backward(kl.grad);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_c[i];
        encoder_.backward(dz);
        return {rec.value, 0.0, kl.value, static_cast<double>(rec.value) + cfg_.alpha2 * kl.value};
    }

    /// Plain cross-entropy through encoder + classifier (no decoder).
    LossBreakdown cross_entropy_step(const Tensor<T>& x, const Tensor<T>& labels) {
        auto z = encoder_.forward(x);
        auto probs = classifier_.forward(z);
        auto ce = cross_entropy_loss(probs, labels);
        encoder_.backward(classifier_.backward(ce.grad));
        return {0.0, ce.value, 0.0, static_cast<double>(ce.value)};
    }

    // ----- inference ------------------------------------------------------

    Tensor<T> embed(const Tensor<T>& x) { return encoder_.forward(x); }
    Tensor<T> reconstruct(const Tensor<T>& x) { return decoder_.forward(encoder_.forward(x)); }
    Tensor<T> predict_proba(const Tensor<T>& x) { return classifier_.forward(encoder_.forward(x)); }
    Tensor<T> assignments(const Tensor<T>& x) { return clustering_.forward(encoder_.forward(x)); }

private:
    static double unscaled_ce(const Tensor<T>& probs, const Tensor<T>& labels, std::span<const T> w) {
        return static_cast<double>(cross_entropy_loss(probs, labels, w).value);
    }

    void build_conv(std::mt19937_64& rng) {
        const auto& ch = cfg_.channels;
        std::size_t cin = 1;
        for (std::size_t l = 0; l < ch.size(); ++l) {
            encoder_.template add<Conv2d<T>>(cin, ch[l], cfg_.kernels[l], cfg_.stride, cfg_.paddings[l], rng);
            encoder_.template add<ActivationLayer<T>>(Activation::relu);
            cin = ch[l];
        }
        const Shape conv_out = encoder_.output_shape({1, 1, cfg_.input_height, cfg_.input_width});
        const std::size_t flat = conv_out[1] * conv_out[2] * conv_out[3];
        encoder_.template add<FlattenLayer<T>>();
        encoder_.template add<Dense<T>>(flat, cfg_.z_dim, rng);

        decoder_.template add<Dense<T>>(cfg_.z_dim, flat, rng);
        decoder_.template add<ActivationLayer<T>>(Activation::relu);
        decoder_.template add<FlattenLayer<T>>(Shape{conv_out[1], conv_out[2], conv_out[3]});
        for (std::size_t l = ch.size(); l-- > 0;) {
            const std::size_t cout = l == 0 ? 1 : ch[l - 1];
            const std::size_t k = cfg_.kernels[l], p = cfg_.paddings[l], s = cfg_.stride;
            // output padding restores the size that the strided conv rounded away
            const long si = static_cast<long>(s);
            const long op = ((si + 2 * static_cast<long>(p) - static_cast<long>(k)) % si + si) % si;
            decoder_.template add<ConvTranspose2d<T>>(ch[l], cout, k, s, p, static_cast<std::size_t>(op), rng);
            if (l != 0) decoder_.template add<ActivationLayer<T>>(Activation::relu);
        }
    }

    void build_dense(std::mt19937_64& rng) {
        const std::size_t in = cfg_.input_height * cfg_.input_width;
        encoder_.template add<FlattenLayer<T>>();
        encoder_.template add<Dense<T>>(in, cfg_.dense_hidden, rng);
        encoder_.template add<ActivationLayer<T>>(Activation::relu);
        encoder_.template add<Dense<T>>(cfg_.dense_hidden, cfg_.z_dim, rng);
        decoder_.template add<Dense<T>>(cfg_.z_dim, cfg_.dense_hidden, rng);
        decoder_.template add<ActivationLayer<T>>(Activation::relu);
        decoder_.template add<Dense<T>>(cfg_.dense_hidden, in, rng);
        decoder_.template add<FlattenLayer<T>>(Shape{1, cfg_.input_height, cfg_.input_width});
    }

    ModelConfig cfg_;
    Sequential<T> encoder_, decoder_, classifier_;
    ClusteringLayer<T> clustering_;
};

// ----- batch-level loss evaluation (no gradient bookkeeping needed) -------

template <typename T>
double reconstruction_loss(MmrModel<T>& m, const Tensor<T>& x) {
    return squared_error_loss(m.reconstruct(x), x).value;
}

template <typename T>
double classification_loss(MmrModel<T>& m, const Tensor<T>& x, const Tensor<T>& labels) {
    return cross_entropy_loss(m.predict_proba(x), labels).value;
}

template <typename T>
double classification_module_loss(MmrModel<T>& m, const Tensor<T>& x, const Tensor<T>& labels) {
    return reconstruction_loss(m, x) + m.config().alpha1 * classification_loss(m, x, labels);
}

template <typename T>
double kl_clustering_loss(const Tensor<T>& q, const Tensor<T>& p_t) {
    return kl_divergence_loss(q, p_t).value;
}

template <typename T>
double clustering_module_loss(MmrModel<T>& m, const Tensor<T>& x, const Tensor<T>& p_t) {
    return reconstruction_loss(m, x) + m.config().alpha2 * kl_clustering_loss(m.assignments(x), p_t);
}

template <typename T>
double penalized_classification_loss(MmrModel<T>& m, const Tensor<T>& x, const Tensor<T>& labels,
                                     std::span<const T> weights) {
    return reconstruction_loss(m, x) +
           m.config().alpha1 * cross_entropy_loss(m.predict_proba(x), labels, weights).value;
}

/// Argmax per row, ties broken toward unstable.
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& probs) {
    std::vector<int> out(probs.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probs.at(i, 0) > probs.at(i, 1) ? kStable : kUnstable;
    return out;
}

template <typename T>
std::vector<int> predict_classes(MmrModel<T>& m, const Tensor<T>& x) {
    return argmax_classes(m.predict_proba(x));
}

/// Runs `fn(batch_tensor, begin, end)` over the dataset in fixed-size chunks.
template <typename T, typename Fn>
void for_each_chunk(const Dataset& ds, std::size_t chunk, Fn&& fn) {
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < ds.size(); b += chunk) {
        const std::size_t e = std::min(ds.size(), b + chunk);
        idx.resize(e - b);
        for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
        fn(gather_features<T>(ds, idx), b, e);
    }
}

template <typename T>
Tensor<T> embed_dataset(MmrModel<T>& m, const Dataset& ds, std::size_t chunk = 256) {
    Tensor<T> out({ds.size(), m.config().z_dim});
    for_each_chunk<T>(ds, chunk, [&](const Tensor<T>& x, std::size_t b, std::size_t) {
        auto z = m.embed(x);
        std::copy(z.data(), z.data() + z.size(), out.data() + b * z.dim(1));
    });
    return out;
}

template <typename T>
Tensor<T> predict_proba_dataset(MmrModel<T>& m, const Dataset& ds, std::size_t chunk = 256) {
    Tensor<T> out({ds.size(), 2});
    for_each_chunk<T>(ds, chunk, [&](const Tensor<T>& x, std::size_t b, std::size_t) {
        auto p = m.predict_proba(x);
        std::copy(p.data(), p.data() + p.size(), out.data() + b * 2);
    });
    return out;
}

}  // namespace mmr
