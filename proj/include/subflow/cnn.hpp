#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/rng.hpp"

namespace subflow {

/// Dense channels-height-width tensor of doubles; index (c*H + y)*W + x.
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int c, int h, int w)
        : channels(c), height(h), width(w),
          v(static_cast<std::size_t>(c) * h * w, 0.0) {}

    int size() const { return channels * height * width; }
    double& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::array<int, 3> shape() const { return {channels, height, width}; }
};

inline std::string shape_string(const std::array<int, 3>& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

/// Network building block. Parameters live in a flat array owned by the
/// Network; layers see a non-owning pointer into it, so forward/backward are
/// const and safe to run concurrently across samples.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::array<int, 3> output_shape(const std::array<int, 3>& in) const = 0;
    virtual int param_count() const { return 0; }
    virtual void bind(double* /*params*/) {}
    virtual void init_params(std::mt19937_64& /*rng*/) {}

    virtual void forward(const Tensor3& x, Tensor3& y) const = 0;
    /// Propagate gy back to gx and accumulate parameter gradients into
    /// param_grads (the layer's slice of the flat gradient array).
    virtual void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx,
                          double* param_grads) const = 0;

    virtual std::string describe() const = 0;
};

namespace detail {

inline double uniform_pm(std::mt19937_64& rng, double limit) {
    const double u = static_cast<double>(rng() >> 11) * 0x1p-53;  // [0,1)
    return (2.0 * u - 1.0) * limit;
}

}  // namespace detail

/// Valid-padding convolution, stride 1, square kernels.
class Conv2D : public Layer {
public:
    Conv2D(int in_channels, int out_channels, int kernel)
        : in_(in_channels), out_(out_channels), k_(kernel) {
        if (in_ < 1 || out_ < 1 || k_ < 1) {
            throw std::invalid_argument("Conv2D: channels and kernel must be >= 1");
        }
    }

    std::array<int, 3> output_shape(const std::array<int, 3>& in) const override {
        if (in[0] != in_ || in[1] < k_ || in[2] < k_) {
            throw std::invalid_argument("Conv2D: input " + shape_string(in) + " incompatible with " +
                                        describe());
        }
        return {out_, in[1] - k_ + 1, in[2] - k_ + 1};
    }

    int param_count() const override { return out_ * in_ * k_ * k_ + out_; }
    void bind(double* params) override {
        weights_ = params;
        biases_ = params + out_ * in_ * k_ * k_;
    }
    void init_params(std::mt19937_64& rng) override {
        const double fan_in = static_cast<double>(in_ * k_ * k_);
        const double fan_out = static_cast<double>(out_ * k_ * k_);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (int w = 0; w < out_ * in_ * k_ * k_; ++w) {
            weights_[w] = detail::uniform_pm(rng, limit);
        }
        for (int b = 0; b < out_; ++b) {
            biases_[b] = 0.0;
        }
    }

    void forward(const Tensor3& x, Tensor3& y) const override {
        const int oh = x.height - k_ + 1;
        const int ow = x.width - k_ + 1;
        y = Tensor3(out_, oh, ow);
        for (int oc = 0; oc < out_; ++oc) {
            const double b = biases_[oc];
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b;
                    for (int ic = 0; ic < in_; ++ic) {
                        const double* w = kernel(oc, ic);
                        for (int ky = 0; ky < k_; ++ky) {
                            const double* row = &x.v[(static_cast<std::size_t>(ic) * x.height +
                                                      (oy + ky)) * x.width + ox];
                            for (int kx = 0; kx < k_; ++kx) {
                                acc += w[ky * k_ + kx] * row[kx];
                            }
                        }
                    }
                    y.at(oc, oy, ox) = acc;
                }
            }
        }
    }

    void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx,
                  double* param_grads) const override {
        gx = Tensor3(x.channels, x.height, x.width);
        double* gw = param_grads;
        double* gb = param_grads + out_ * in_ * k_ * k_;
        for (int oc = 0; oc < out_; ++oc) {
            for (int oy = 0; oy < gy.height; ++oy) {
                for (int ox = 0; ox < gy.width; ++ox) {
                    const double g = gy.at(oc, oy, ox);
                    if (g == 0.0) {
                        continue;
                    }
                    gb[oc] += g;
                    for (int ic = 0; ic < in_; ++ic) {
                        const double* w = kernel(oc, ic);
                        double* gwk = gw + (static_cast<std::size_t>(oc) * in_ + ic) * k_ * k_;
                        for (int ky = 0; ky < k_; ++ky) {
                            for (int kx = 0; kx < k_; ++kx) {
                                gwk[ky * k_ + kx] += g * x.at(ic, oy + ky, ox + kx);
                                gx.at(ic, oy + ky, ox + kx) += g * w[ky * k_ + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    std::string describe() const override {
        return "conv" + std::to_string(k_) + "x" + std::to_string(k_) + "x" + std::to_string(in_) +
               "-" + std::to_string(out_);
    }

private:
    const double* kernel(int oc, int ic) const {
        return weights_ + (static_cast<std::size_t>(oc) * in_ + ic) * k_ * k_;
    }

    int in_, out_, k_;
    double* weights_ = nullptr;
    double* biases_ = nullptr;
};

class ReLU : public Layer {
public:
    std::array<int, 3> output_shape(const std::array<int, 3>& in) const override { return in; }

    void forward(const Tensor3& x, Tensor3& y) const override {
        y = x;
        for (double& v : y.v) {
            v = v > 0.0 ? v : 0.0;
        }
    }

    /// Gradient is zero for negative inputs and at exactly zero.
    void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx, double*) const override {
        gx = gy;
        for (std::size_t i = 0; i < gx.v.size(); ++i) {
            if (!(x.v[i] > 0.0)) {
                gx.v[i] = 0.0;
            }
        }
    }

    std::string describe() const override { return "relu"; }
};

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// occurrence in scan order (top-left first).
class MaxPool2 : public Layer {
public:
    std::array<int, 3> output_shape(const std::array<int, 3>& in) const override {
        if (in[1] % 2 != 0 || in[2] % 2 != 0) {
            throw std::invalid_argument("MaxPool2: input " + shape_string(in) +
                                        " must have even height and width");
        }
        return {in[0], in[1] / 2, in[2] / 2};
    }

    void forward(const Tensor3& x, Tensor3& y) const override {
        y = Tensor3(x.channels, x.height / 2, x.width / 2);
        for (int c = 0; c < x.channels; ++c) {
            for (int oy = 0; oy < y.height; ++oy) {
                for (int ox = 0; ox < y.width; ++ox) {
                    y.at(c, oy, ox) = window_max(x, c, oy, ox).first;
                }
            }
        }
    }

    void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx, double*) const override {
        gx = Tensor3(x.channels, x.height, x.width);
        for (int c = 0; c < x.channels; ++c) {
            for (int oy = 0; oy < gy.height; ++oy) {
                for (int ox = 0; ox < gy.width; ++ox) {
                    const int arg = window_max(x, c, oy, ox).second;
                    gx.v[arg] += gy.at(c, oy, ox);
                }
            }
        }
    }

    std::string describe() const override { return "pool2"; }

private:
    static std::pair<double, int> window_max(const Tensor3& x, int c, int oy, int ox) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
                const int y = 2 * oy + dy;
                const int xx = 2 * ox + dx;
                const int idx = (c * x.height + y) * x.width + xx;
                if (x.v[idx] > best) {
                    best = x.v[idx];
                    arg = idx;
                }
            }
        }
        return {best, arg};
    }
};

class Flatten : public Layer {
public:
    std::array<int, 3> output_shape(const std::array<int, 3>& in) const override {
        return {in[0] * in[1] * in[2], 1, 1};
    }
    void forward(const Tensor3& x, Tensor3& y) const override {
        y = Tensor3(x.size(), 1, 1);
        y.v = x.v;
    }
    void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx, double*) const override {
        gx = Tensor3(x.channels, x.height, x.width);
        gx.v = gy.v;
    }
    std::string describe() const override { return "flatten"; }
};

class Dense : public Layer {
public:
    Dense(int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
        if (in_ < 1 || out_ < 1) {
            throw std::invalid_argument("Dense: dimensions must be >= 1");
        }
    }

    std::array<int, 3> output_shape(const std::array<int, 3>& in) const override {
        if (in[0] != in_ || in[1] != 1 || in[2] != 1) {
            throw std::invalid_argument("Dense: input " + shape_string(in) + " incompatible with " +
                                        describe());
        }
        return {out_, 1, 1};
    }

    int param_count() const override { return out_ * in_ + out_; }
    void bind(double* params) override {
        weights_ = params;
        biases_ = params + out_ * in_;
    }
    void init_params(std::mt19937_64& rng) override {
        const double limit = std::sqrt(6.0 / (in_ + out_));
        for (int w = 0; w < out_ * in_; ++w) {
            weights_[w] = detail::uniform_pm(rng, limit);
        }
        for (int b = 0; b < out_; ++b) {
            biases_[b] = 0.0;
        }
    }

    void forward(const Tensor3& x, Tensor3& y) const override {
        y = Tensor3(out_, 1, 1);
        for (int o = 0; o < out_; ++o) {
            const double* w = weights_ + static_cast<std::size_t>(o) * in_;
            double acc = biases_[o];
            for (int i = 0; i < in_; ++i) {
                acc += w[i] * x.v[i];
            }
            y.v[o] = acc;
        }
    }

    void backward(const Tensor3& x, const Tensor3& gy, Tensor3& gx,
                  double* param_grads) const override {
        gx = Tensor3(in_, 1, 1);
        double* gw = param_grads;
        double* gb = param_grads + out_ * in_;
        for (int o = 0; o < out_; ++o) {
            const double g = gy.v[o];
            gb[o] += g;
            const double* w = weights_ + static_cast<std::size_t>(o) * in_;
            double* gwo = gw + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) {
                gwo[i] += g * x.v[i];
                gx.v[i] += g * w[i];
            }
        }
    }

    std::string describe() const override {
        return "dense" + std::to_string(in_) + "-" + std::to_string(out_);
    }

private:
    int in_, out_;
    double* weights_ = nullptr;
    double* biases_ = nullptr;
};

/// Feed-forward stack with flat parameter storage.
class Network {
public:
    Network(std::array<int, 3> input_shape, std::vector<std::unique_ptr<Layer>> layers)
        : input_shape_(input_shape), layers_(std::move(layers)) {
        std::array<int, 3> shape = input_shape_;
        int total = 0;
        offsets_.reserve(layers_.size());
        for (const auto& layer : layers_) {
            offsets_.push_back(total);
            total += layer->param_count();
            shape = layer->output_shape(shape);  // validates the chain
        }
        output_shape_ = shape;
        params_.assign(static_cast<std::size_t>(total), 0.0);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i]->bind(params_.data() + offsets_[i]);
        }
    }

    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    int param_count() const { return static_cast<int>(params_.size()); }
    std::vector<double>& parameters() { return params_; }
    const std::vector<double>& parameters() const { return params_; }
    const std::array<int, 3>& input_shape() const { return input_shape_; }
    const std::array<int, 3>& output_shape() const { return output_shape_; }

    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(splitmix64(seed));
        for (auto& layer : layers_) {
            layer->init_params(rng);
        }
    }

    std::string architecture() const {
        std::string s = "in" + shape_string(input_shape_);
        for (const auto& layer : layers_) {
            s += "|" + layer->describe();
        }
        return s;
    }

    /// Scalar forward pass. When acts is given it receives the input to each
    /// layer plus the final output, which backward_scalar consumes.
    double forward_scalar(const Tensor3& x, std::vector<Tensor3>* acts = nullptr) const {
        if (x.shape() != input_shape_) {
            throw std::invalid_argument("Network: input shape " + shape_string(x.shape()) +
                                        " does not match " + shape_string(input_shape_));
        }
        if (output_shape_ != std::array<int, 3>{1, 1, 1}) {
            throw std::logic_error("Network: forward_scalar requires a 1x1x1 output");
        }
        if (acts) {
            acts->assign(layers_.size() + 1, Tensor3{});
            (*acts)[0] = x;
            for (std::size_t i = 0; i < layers_.size(); ++i) {
                layers_[i]->forward((*acts)[i], (*acts)[i + 1]);
            }
            return acts->back().v[0];
        }
        Tensor3 cur = x;
        Tensor3 next;
        for (const auto& layer : layers_) {
            layer->forward(cur, next);
            cur = std::move(next);
        }
        return cur.v[0];
    }

    /// Accumulate d(output)/d(params) * gy into grads (size param_count()).
    /// Returns the gradient with respect to the network input.
    Tensor3 backward_scalar(const std::vector<Tensor3>& acts, double gy,
                            std::vector<double>& grads) const {
        if (acts.size() != layers_.size() + 1) {
            throw std::logic_error("Network: activation stack does not match the layer count");
        }
        if (grads.size() != params_.size()) {
            throw std::invalid_argument("Network: gradient buffer has the wrong size");
        }
        Tensor3 g(1, 1, 1);
        g.v[0] = gy;
        Tensor3 gx;
        for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
            layers_[static_cast<std::size_t>(i)]->backward(acts[static_cast<std::size_t>(i)], g, gx,
                                                           grads.data() + offsets_[static_cast<std::size_t>(i)]);
            g = std::move(gx);
        }
        return g;
    }

private:
    std::array<int, 3> input_shape_{};
    std::array<int, 3> output_shape_{};
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<int> offsets_;
    std::vector<double> params_;
};

/// The rate-prediction architecture: LeNet-style encoder over a 24x24 field.
/// conv(5x5,1->6)+relu, pool2, conv(5x5,6->16)+relu, pool2, flatten(144),
/// dense(144->120)+relu, dense(120->84)+relu, dense(84->1).
inline Network make_rate_network() {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(std::make_unique<Conv2D>(1, 6, 5));
    layers.push_back(std::make_unique<ReLU>());
    layers.push_back(std::make_unique<MaxPool2>());
    layers.push_back(std::make_unique<Conv2D>(6, 16, 5));
    layers.push_back(std::make_unique<ReLU>());
    layers.push_back(std::make_unique<MaxPool2>());
    layers.push_back(std::make_unique<Flatten>());
    layers.push_back(std::make_unique<Dense>(144, 120));
    layers.push_back(std::make_unique<ReLU>());
    layers.push_back(std::make_unique<Dense>(120, 84));
    layers.push_back(std::make_unique<ReLU>());
    layers.push_back(std::make_unique<Dense>(84, 1));
    Network net({1, 24, 24}, std::move(layers));

    // The encoder must flatten to exactly 144 features (16*3*3); anything
    // else means the shape pipeline drifted from the declared design.
    const std::string arch = net.architecture();
    if (arch.find("dense144-120") == std::string::npos) {
        throw std::logic_error("make_rate_network: flatten size is not 144: " + arch);
    }
    return net;
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double d_softplus(double x) {
    if (x > 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace subflow
