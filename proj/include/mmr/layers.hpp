#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mmr/tensor.hpp"

namespace mmr {

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

enum class LayerKind { dense, conv2d, transposed_conv2d, activation, softmax, flatten };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::transposed_conv2d: return "transposed-conv2d";
        case LayerKind::activation: return "activation";
        case LayerKind::softmax: return "softmax";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

/// Batch-first layer with a hand-written backward pass.
///
/// forward() caches whatever backward() needs, so a layer instance serves one
/// forward/backward pair at a time. backward() accumulates into the parameter
/// gradients and returns the gradient with respect to the input.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    virtual Shape output_shape(const Shape& input) const = 0;
    virtual Tensor<T> forward(const Tensor<T>& input) = 0;
    virtual Tensor<T> backward(const Tensor<T>& grad_output) = 0;
    virtual std::vector<Parameter<T>*> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

namespace detail {

template <typename T>
void uniform_fill(Tensor<T>& t, T bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

struct ConvGeometry {
    std::size_t channels, height, width;  // image side
    std::size_t kernel, stride, padding;
    std::size_t grid_h, grid_w;           // column side
};

// Image batch [B, C, H, W] -> matrix (C*k*k) x (B*grid_h*grid_w).
template <typename T>
void im2col(const T* image, std::size_t batch, const ConvGeometry& g, T* cols) {
    const std::size_t grid = g.grid_h * g.grid_w;
    const std::size_t ncols = batch * grid;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (std::size_t b = 0; b < batch; ++b) {
                    const T* img = image + (b * g.channels + c) * g.height * g.width;
                    for (std::size_t oh = 0; oh < g.grid_h; ++oh) {
                        const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
                        T* out = row + b * grid + oh * g.grid_w;
                        if (ih < 0 || ih >= static_cast<long>(g.height)) {
                            std::fill(out, out + g.grid_w, T{0});
                            continue;
                        }
                        for (std::size_t ow = 0; ow < g.grid_w; ++ow) {
                            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
                            out[ow] = (iw < 0 || iw >= static_cast<long>(g.width))
                                          ? T{0}
                                          : img[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)];
                        }
                    }
                }
            }
}

// Adjoint of im2col: scatter-add columns back into a zeroed image batch.
template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* image) {
    const std::size_t grid = g.grid_h * g.grid_w;
    const std::size_t ncols = batch * grid;
    std::fill(image, image + batch * g.channels * g.height * g.width, T{0});
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kernel; ++ki)
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const T* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * ncols;
                for (std::size_t b = 0; b < batch; ++b) {
                    T* img = image + (b * g.channels + c) * g.height * g.width;
                    for (std::size_t oh = 0; oh < g.grid_h; ++oh) {
                        const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
                        if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
                        const T* in = row + b * grid + oh * g.grid_w;
                        for (std::size_t ow = 0; ow < g.grid_w; ++ow) {
                            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
                            if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
                            img[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)] += in[ow];
                        }
                    }
                }
            }
}

// [B, C, P] <-> [C, B*P]
template <typename T>
void batch_to_channel_major(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(src + (b * channels + c) * plane, plane, dst + (c * batch + b) * plane);
}

template <typename T>
void channel_major_to_batch(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(src + (c * batch + b) * plane, plane, dst + (b * channels + c) * plane);
}

}  // namespace detail

/// Fully connected layer: y = x W^T + b, input [B, in].
template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(std::size_t in, std::size_t out, std::mt19937_64& rng)
        : in_(in), out_(out), weight_("weight", Tensor<T>({out, in})), bias_("bias", Tensor<T>({out})) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in));
        detail::uniform_fill(weight_.value, bound, rng);
        detail::uniform_fill(bias_.value, bound, rng);
    }

    Dense(Tensor<T> weight, Tensor<T> bias)
        : in_(weight.dim(1)), out_(weight.dim(0)), weight_("weight", std::move(weight)), bias_("bias", std::move(bias)) {
        require_shape(bias_.value.shape(), {out_}, "Dense bias");
    }

    LayerKind kind() const override { return LayerKind::dense; }

    Shape output_shape(const Shape& input) const override {
        if (input.size() != 2 || input[1] != in_)
            throw ShapeError("dense expects [B, " + std::to_string(in_) + "], got " + shape_str(input));
        return {input[0], out_};
    }

    Tensor<T> forward(const Tensor<T>& input) override {
        Tensor<T> out(output_shape(input.shape()));
        const std::size_t b = input.dim(0);
        ConstMatrixMap<T> x(input.data(), b, in_);
        ConstMatrixMap<T> w(weight_.value.data(), out_, in_);
        MatrixMap<T> y(out.data(), b, out_);
        y.noalias() = x * w.transpose();
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(), out_);
        input_ = input;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_output) override {
        require_shape(grad_output.shape(), output_shape(input_.shape()), "Dense::backward");
        const std::size_t b = input_.dim(0);
        ConstMatrixMap<T> x(input_.data(), b, in_);
        ConstMatrixMap<T> dy(grad_output.data(), b, out_);
        ConstMatrixMap<T> w(weight_.value.data(), out_, in_);
        MatrixMap<T>(weight_.grad.data(), out_, in_).noalias() += dy.transpose() * x;
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), out_) += dy.colwise().sum();
        Tensor<T> grad_in(input_.shape());
        MatrixMap<T>(grad_in.data(), b, in_).noalias() = dy * w;
        return grad_in;
    }

    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

private:
    std::size_t in_, out_;
    Parameter<T> weight_, bias_;
    Tensor<T> input_;
};

/// 2-D convolution over [B, C, H, W] with square kernels.
template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
           std::size_t padding, std::mt19937_64& rng)
        : cin_(in_channels), cout_(out_channels), k_(kernel), s_(stride), p_(padding),
          weight_("weight", Tensor<T>({out_channels, in_channels * kernel * kernel})),
          bias_("bias", Tensor<T>({out_channels})) {
        const T bound = T(1) / std::sqrt(static_cast<T>(in_channels * kernel * kernel));
        detail::uniform_fill(weight_.value, bound, rng);
        detail::uniform_fill(bias_.value, bound, rng);
    }

    LayerKind kind() const override { return LayerKind::conv2d; }

    Shape output_shape(const Shape& input) const override {
        if (input.size() != 4 || input[1] != cin_)
            throw ShapeError("conv2d expects [B, " + std::to_string(cin_) + ", H, W], got " + shape_str(input));
        if (input[2] + 2 * p_ < k_ || input[3] + 2 * p_ < k_)
            throw ShapeError("conv2d kernel larger than padded input " + shape_str(input));
        return {input[0], cout_, (input[2] + 2 * p_ - k_) / s_ + 1, (input[3] + 2 * p_ - k_) / s_ + 1};
    }

    Tensor<T> forward(const Tensor<T>& input) override {
        const Shape os = output_shape(input.shape());
        geom_ = {cin_, input.dim(2), input.dim(3), k_, s_, p_, os[2], os[3]};
        batch_ = input.dim(0);
        const std::size_t ncols = batch_ * os[2] * os[3];
        cols_.assign(cin_ * k_ * k_ * ncols, T{0});
        detail::im2col(input.data(), batch_, geom_, cols_.data());

        std::vector<T> ym(cout_ * ncols);
        MatrixMap<T> y(ym.data(), cout_, ncols);
        y.noalias() = ConstMatrixMap<T>(weight_.value.data(), cout_, cin_ * k_ * k_) *
                      ConstMatrixMap<T>(cols_.data(), cin_ * k_ * k_, ncols);
        y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.value.data(), cout_);

        Tensor<T> out(os);
        detail::channel_major_to_batch(ym.data(), batch_, cout_, os[2] * os[3], out.data());
        in_shape_ = input.shape();
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_output) override {
        require_shape(grad_output.shape(), output_shape(in_shape_), "Conv2d::backward");
        const std::size_t plane = geom_.grid_h * geom_.grid_w;
        const std::size_t ncols = batch_ * plane;
        const std::size_t krows = cin_ * k_ * k_;
        std::vector<T> dym(cout_ * ncols);
        detail::batch_to_channel_major(grad_output.data(), batch_, cout_, plane, dym.data());
        ConstMatrixMap<T> dy(dym.data(), cout_, ncols);

        MatrixMap<T>(weight_.grad.data(), cout_, krows).noalias() +=
            dy * ConstMatrixMap<T>(cols_.data(), krows, ncols).transpose();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.grad.data(), cout_) += dy.rowwise().sum();

        std::vector<T> dcols(krows * ncols);
        MatrixMap<T>(dcols.data(), krows, ncols).noalias() =
            ConstMatrixMap<T>(weight_.value.data(), cout_, krows).transpose() * dy;
        Tensor<T> grad_in(in_shape_);
        detail::col2im(dcols.data(), batch_, geom_, grad_in.data());
        return grad_in;
    }

    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    std::size_t cin_, cout_, k_, s_, p_;
    Parameter<T> weight_, bias_;
    detail::ConvGeometry geom_{};
    std::size_t batch_ = 0;
    Shape in_shape_;
    std::vector<T> cols_;
};

/// Transposed convolution (adjoint of Conv2d in its input), with output padding
/// to disambiguate the output size when stride > 1.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
public:
    ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                    std::size_t padding, std::size_t output_padding, std::mt19937_64& rng)
        : cin_(in_channels), cout_(out_channels), k_(kernel), s_(stride), p_(padding), op_(output_padding),
          weight_("weight", Tensor<T>({in_channels, out_channels * kernel * kernel})),
          bias_("bias", Tensor<T>({out_channels})) {
        if (output_padding >= stride) throw ShapeError("output padding must be smaller than stride");
        const T bound = T(1) / std::sqrt(static_cast<T>(out_channels * kernel * kernel));
        detail::uniform_fill(weight_.value, bound, rng);
        detail::uniform_fill(bias_.value, bound, rng);
    }

    LayerKind kind() const override { return LayerKind::transposed_conv2d; }

    Shape output_shape(const Shape& input) const override {
        if (input.size() != 4 || input[1] != cin_)
            throw ShapeError("transposed-conv2d expects [B, " + std::to_string(cin_) + ", H, W], got " +
                             shape_str(input));
        const auto grow = [&](std::size_t n) -> std::size_t {
            const std::size_t full = (n - 1) * s_ + k_ + op_;
            if (full <= 2 * p_) throw ShapeError("transposed-conv2d padding consumes output " + shape_str(input));
            return full - 2 * p_;
        };
        return {input[0], cout_, grow(input[2]), grow(input[3])};
    }

    Tensor<T> forward(const Tensor<T>& input) override {
        const Shape os = output_shape(input.shape());
        batch_ = input.dim(0);
        geom_ = {cout_, os[2], os[3], k_, s_, p_, input.dim(2), input.dim(3)};
        const std::size_t plane = input.dim(2) * input.dim(3);
        const std::size_t ncols = batch_ * plane;
        const std::size_t krows = cout_ * k_ * k_;

        xm_.assign(cin_ * ncols, T{0});
        detail::batch_to_channel_major(input.data(), batch_, cin_, plane, xm_.data());
        std::vector<T> cols(krows * ncols);
        MatrixMap<T>(cols.data(), krows, ncols).noalias() =
            ConstMatrixMap<T>(weight_.value.data(), cin_, krows).transpose() *
            ConstMatrixMap<T>(xm_.data(), cin_, ncols);

        Tensor<T> out(os);
        detail::col2im(cols.data(), batch_, geom_, out.data());
        const std::size_t oplane = os[2] * os[3];
        for (std::size_t b = 0; b < batch_; ++b)
            for (std::size_t c = 0; c < cout_; ++c) {
                T* p = out.data() + (b * cout_ + c) * oplane;
                for (std::size_t i = 0; i < oplane; ++i) p[i] += bias_.value[c];
            }
        in_shape_ = input.shape();
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_output) override {
        require_shape(grad_output.shape(), output_shape(in_shape_), "ConvTranspose2d::backward");
        const std::size_t plane = geom_.grid_h * geom_.grid_w;
        const std::size_t ncols = batch_ * plane;
        const std::size_t krows = cout_ * k_ * k_;
        const std::size_t oplane = geom_.height * geom_.width;

        for (std::size_t b = 0; b < batch_; ++b)
            for (std::size_t c = 0; c < cout_; ++c) {
                const T* p = grad_output.data() + (b * cout_ + c) * oplane;
                T acc{0};
                for (std::size_t i = 0; i < oplane; ++i) acc += p[i];
                bias_.grad[c] += acc;
            }

        std::vector<T> dcols(krows * ncols);
        detail::im2col(grad_output.data(), batch_, geom_, dcols.data());
        ConstMatrixMap<T> dc(dcols.data(), krows, ncols);
        MatrixMap<T>(weight_.grad.data(), cin_, krows).noalias() +=
            ConstMatrixMap<T>(xm_.data(), cin_, ncols) * dc.transpose();

        std::vector<T> dxm(cin_ * ncols);
        MatrixMap<T>(dxm.data(), cin_, ncols).noalias() = ConstMatrixMap<T>(weight_.value.data(), cin_, krows) * dc;
        Tensor<T> grad_in(in_shape_);
        detail::channel_major_to_batch(dxm.data(), batch_, cin_, plane, grad_in.data());
        return grad_in;
    }

    std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

private:
    std::size_t cin_, cout_, k_, s_, p_, op_;
    Parameter<T> weight_, bias_;
    detail::ConvGeometry geom_{};
    std::size_t batch_ = 0;
    Shape in_shape_;
    std::vector<T> xm_;
};

enum class Activation { relu, leaky_relu, tanh, sigmoid, identity };

template <typename T>
class ActivationLayer final : public Layer<T> {
public:
    explicit ActivationLayer(Activation a) : act_(a) {}

    LayerKind kind() const override { return LayerKind::activation; }
    Activation activation() const { return act_; }
    Shape output_shape(const Shape& input) const override { return input; }

    Tensor<T> forward(const Tensor<T>& input) override {
        Tensor<T> out(input.shape());
        for (std::size_t i = 0; i < input.size(); ++i) out[i] = apply(input[i]);
        input_ = input;
        output_ = out;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& grad_output) override {
        require_shape(grad_output.shape(), input_.shape(), "Activation::backward");
        Tensor<T> grad_in(input_.shape());
        for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] = grad_output[i] * derivative(i);
        return grad_in;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ActivationLayer>(*this); }

private:
    static constexpr T kLeak = T(0.01);

    T apply(T x) const {
        switch (act_) {
            case Activation::relu: return x > T{0} ? x : T{0};
            case Activation::leaky_relu: return x > T{0} ? x : kLeak * x;
            case Activation::tanh: return std::tanh(x);
            case Activation::sigmoid: return T(1) / (T(1) + std::exp(-x));
            case Activation::identity: return x;
        }
        return x;
    }

    T derivative(std::size_t i) const {
        const T x = input_[i], y = output_[i];
        switch (act_) {
            case Activation::relu: return x > T{0} ? T(1) : T{0};
            case Activation::leaky_relu: return x > T{0} ? T(1) : kLeak;
            case Activation::tanh: return T(1) - y * y;
            case Activation::sigmoid: return y * (T(1) - y);
            case Activation::identity: return T(1);
        }
        return T(1);
    }

    Activation act_;
    Tensor<T> input_, output_;
};

/// Row-wise softmax over [B, C], max-shifted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects [B, C], got " + shape_str(logits.shape()));
    Tensor<T> out(logits.shape());
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
        const T* x = logits.data() + i * c;
        T* y = out.data() + i * c;
        const T mx = *std::max_element(x, x + c);
        T sum{0};
        for (std::size_t j = 0; j < c; ++j) sum += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
    }
    return out;
}

template <typename T>
class SoftmaxLayer final : public Layer<T> {
public:
    LayerKind kind() const override { return LayerKind::softmax; }
    Shape output_shape(const Shape& input) const override {
        if (input.size() != 2) throw ShapeError("softmax expects [B, C], got " + shape_str(input));
        return input;
    }

    Tensor<T> forward(const Tensor<T>& input) override {
        output_ = softmax_rows(input);
        return output_;
    }

    // dx_j = y_j (dy_j - sum_k dy_k y_k)
    Tensor<T> backward(const Tensor<T>& grad_output) override {
        require_shape(grad_output.shape(), output_.shape(), "Softmax::backward");
        Tensor<T> grad_in(output_.shape());
        const std::size_t b = output_.dim(0), c = output_.dim(1);
        for (std::size_t i = 0; i < b; ++i) {
            const T* y = output_.data() + i * c;
            const T* dy = grad_output.data() + i * c;
            T dot{0};
            for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) grad_in[i * c + j] = y[j] * (dy[j] - dot);
        }
        return grad_in;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<SoftmaxLayer>(*this); }

private:
    Tensor<T> output_;
};

/// Reshape every sample to `sample_shape`; flatten is the rank-1 case.
template <typename T>
class FlattenLayer final : public Layer<T> {
public:
    FlattenLayer() = default;
    explicit FlattenLayer(Shape sample_shape) : target_(std::move(sample_shape)) {}

    LayerKind kind() const override { return LayerKind::flatten; }

    Shape output_shape(const Shape& input) const override {
        if (input.empty()) throw ShapeError("flatten needs a batch axis");
        const std::size_t per = shape_size(input) / input[0];
        if (target_.empty()) return {input[0], per};
        if (shape_size(target_) != per)
            throw ShapeError("cannot reshape " + shape_str(input) + " samples to " + shape_str(target_));
        Shape s{input[0]};
        s.insert(s.end(), target_.begin(), target_.end());
        return s;
    }

    Tensor<T> forward(const Tensor<T>& input) override {
        in_shape_ = input.shape();
        return input.reshaped(output_shape(input.shape()));
    }

    Tensor<T> backward(const Tensor<T>& grad_output) override { return grad_output.reshaped(in_shape_); }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FlattenLayer>(*this); }

private:
    Shape target_;
    Shape in_shape_;
};

/// Ordered stack of layers, deep-copyable.
template <typename T>
class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other) {
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    Sequential& operator=(const Sequential& other) {
        if (this != &other) {
            Sequential tmp(other);
            layers_.swap(tmp.layers_);
        }
        return *this;
    }
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    Sequential& add(Args&&... args) {
        layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
        return *this;
    }
    Sequential& add(std::unique_ptr<Layer<T>> layer) {
        layers_.push_back(std::move(layer));
        return *this;
    }

    Shape output_shape(Shape input) const {
        for (const auto& l : layers_) input = l->output_shape(input);
        return input;
    }

    Tensor<T> forward(Tensor<T> x) {
        for (auto& l : layers_) x = l->forward(x);
        return x;
    }

    Tensor<T> backward(Tensor<T> g) {
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }

    std::vector<Parameter<T>*> parameters() {
        std::vector<Parameter<T>*> out;
        for (auto& l : layers_)
            for (auto* p : l->parameters()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    std::size_t size() const { return layers_.size(); }
    Layer<T>& operator[](std::size_t i) { return *layers_.at(i); }

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace mmr
