#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/kaf.hpp"
#include "kafforge/tensor.hpp"

// Layer zoo. Every layer caches what its hand-derived backward pass needs;
// backward must follow a matching forward and accumulates into the layer's
// gradient tensors (callers zero them per step).

namespace kafforge {

/// Non-owning view of one trainable tensor. `decay` marks participation in
/// the L2 regularizer (weights, batchnorm scale, alpha, mu; never biases or
/// batchnorm shift).
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
    bool decay = true;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const = 0;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& upstream) = 0;
    virtual std::vector<ParamRef> params() { return {}; }
    /// Non-trainable tensors that belong in a checkpoint (running statistics).
    virtual std::vector<Tensor*> state_tensors() { return {}; }
};

namespace detail {

inline void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out,
                           std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(rng);
}

inline void expect_rank(const Tensor& x, std::size_t rank, const std::string& who) {
    if (x.rank() != rank)
        throw DomainError(who + ": expected rank-" + std::to_string(rank) + " input, got " +
                          x.shape_string());
}

} // namespace detail

class DenseLayer : public Layer {
public:
    DenseLayer(std::size_t in, std::size_t out, std::mt19937_64& rng)
        : in_(in), out_(out), w_({out, in}), b_({out}), w_grad_({out, in}), b_grad_({out}) {
        if (in == 0 || out == 0) throw DomainError("dense layer dimensions must be positive");
        detail::glorot_uniform(w_, in, out, rng);
    }

    std::string name() const override { return "dense(" + std::to_string(out_) + ")"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() != 2 || in[1] != in_)
            throw DomainError(name() + " expects (batch," + std::to_string(in_) + ") input");
        return {in[0], out_};
    }

    Tensor forward(const Tensor& x, bool) override {
        detail::expect_rank(x, 2, name());
        if (x.dim(1) != in_)
            throw DomainError(name() + ": input features " + std::to_string(x.dim(1)) +
                              " != " + std::to_string(in_));
        input_ = x;
        const std::size_t batch = x.dim(0);
        Tensor y({batch, out_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_; ++o) {
                double acc = b_[o];
                for (std::size_t i = 0; i < in_; ++i) acc += w_(o, i) * x(b, i);
                y(b, o) = acc;
            }
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        const std::size_t batch = input_.dim(0);
        if (upstream.rank() != 2 || upstream.dim(0) != batch || upstream.dim(1) != out_)
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx({batch, in_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_; ++o) {
                const double g = upstream(b, o);
                b_grad_[o] += g;
                for (std::size_t i = 0; i < in_; ++i) {
                    w_grad_(o, i) += g * input_(b, i);
                    dx(b, i) += g * w_(o, i);
                }
            }
        return dx;
    }

    std::vector<ParamRef> params() override {
        return {{"weight", &w_, &w_grad_, true}, {"bias", &b_, &b_grad_, false}};
    }

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_, out_;
    Tensor w_, b_, w_grad_, b_grad_;
    Tensor input_;
};

class Conv2dLayer : public Layer {
public:
    /// padding < 0 means shape-preserving ("same") padding; requires odd k.
    Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, int padding,
                std::size_t stride, std::mt19937_64& rng)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride),
          w_({out_ch, in_ch, k, k}), b_({out_ch}), w_grad_({out_ch, in_ch, k, k}),
          b_grad_({out_ch}) {
        if (in_ch == 0 || out_ch == 0 || k == 0 || stride == 0)
            throw DomainError("conv layer dimensions must be positive");
        if (padding < 0) {
            if (k % 2 == 0)
                throw DomainError("same padding requires an odd kernel size");
            pad_ = (k - 1) / 2;
        } else {
            pad_ = static_cast<std::size_t>(padding);
        }
        detail::glorot_uniform(w_, in_ch * k * k, out_ch * k * k, rng);
    }

    std::string name() const override {
        return "conv(" + std::to_string(out_ch_) + ",k=" + std::to_string(k_) + ")";
    }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() != 4 || in[1] != in_ch_)
            throw DomainError(name() + " expects (batch," + std::to_string(in_ch_) +
                              ",H,W) input");
        return {in[0], out_ch_, spatial_out(in[2]), spatial_out(in[3])};
    }

    Tensor forward(const Tensor& x, bool) override {
        detail::expect_rank(x, 4, name());
        const auto out_shape = output_shape(x.shape());
        input_ = x;
        const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_shape[2], wo = out_shape[3];
        Tensor y(out_shape);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t oc = 0; oc < out_ch_; ++oc)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        double acc = b_[oc];
                        for (std::size_t ic = 0; ic < in_ch_; ++ic)
                            for (std::size_t u = 0; u < k_; ++u) {
                                const std::ptrdiff_t yy =
                                    static_cast<std::ptrdiff_t>(i * stride_ + u) -
                                    static_cast<std::ptrdiff_t>(pad_);
                                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t v = 0; v < k_; ++v) {
                                    const std::ptrdiff_t xx =
                                        static_cast<std::ptrdiff_t>(j * stride_ + v) -
                                        static_cast<std::ptrdiff_t>(pad_);
                                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                                    acc += w_(oc, ic, u, v) *
                                           x(b, ic, static_cast<std::size_t>(yy),
                                             static_cast<std::size_t>(xx));
                                }
                            }
                        y(b, oc, i, j) = acc;
                    }
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        const std::size_t batch = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
        const std::size_t ho = upstream.dim(2), wo = upstream.dim(3);
        if (upstream.rank() != 4 || upstream.dim(0) != batch || upstream.dim(1) != out_ch_ ||
            ho != spatial_out(h) || wo != spatial_out(w))
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx(input_.shape());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t oc = 0; oc < out_ch_; ++oc)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        const double g = upstream(b, oc, i, j);
                        b_grad_[oc] += g;
                        for (std::size_t ic = 0; ic < in_ch_; ++ic)
                            for (std::size_t u = 0; u < k_; ++u) {
                                const std::ptrdiff_t yy =
                                    static_cast<std::ptrdiff_t>(i * stride_ + u) -
                                    static_cast<std::ptrdiff_t>(pad_);
                                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t v = 0; v < k_; ++v) {
                                    const std::ptrdiff_t xx =
                                        static_cast<std::ptrdiff_t>(j * stride_ + v) -
                                        static_cast<std::ptrdiff_t>(pad_);
                                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                                    const auto sy = static_cast<std::size_t>(yy);
                                    const auto sx = static_cast<std::size_t>(xx);
                                    w_grad_(oc, ic, u, v) += g * input_(b, ic, sy, sx);
                                    dx(b, ic, sy, sx) += g * w_(oc, ic, u, v);
                                }
                            }
                    }
        return dx;
    }

    std::vector<ParamRef> params() override {
        return {{"weight", &w_, &w_grad_, true}, {"bias", &b_, &b_grad_, false}};
    }

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }

private:
    std::size_t spatial_out(std::size_t extent) const {
        const std::size_t padded = extent + 2 * pad_;
        if (padded < k_)
            throw DomainError(name() + ": spatial extent " + std::to_string(extent) +
                              " smaller than kernel after padding");
        return (padded - k_) / stride_ + 1;
    }

    std::size_t in_ch_, out_ch_, k_, stride_, pad_ = 0;
    Tensor w_, b_, w_grad_, b_grad_;
    Tensor input_;
};

/// Pad-free max pooling; gradient routes to each window's first maximum in
/// row-major order.
class MaxPool2dLayer : public Layer {
public:
    explicit MaxPool2dLayer(std::size_t k = 2, std::size_t stride = 2) : k_(k), stride_(stride) {
        if (k == 0 || stride == 0) throw DomainError("pooling dimensions must be positive");
    }

    std::string name() const override { return "maxpool(" + std::to_string(k_) + ")"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() != 4)
            throw DomainError(name() + " expects (batch,ch,H,W) input");
        return {in[0], in[1], pooled(in[2]), pooled(in[3])};
    }

    Tensor forward(const Tensor& x, bool) override {
        detail::expect_rank(x, 4, name());
        const auto out_shape = output_shape(x.shape());
        input_shape_ = x.shape();
        const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t ho = out_shape[2], wo = out_shape[3];
        Tensor y(out_shape);
        argmax_.assign(y.size(), 0);
        std::size_t out_pos = 0;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j, ++out_pos) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t u = 0; u < k_; ++u)
                            for (std::size_t v = 0; v < k_; ++v) {
                                const std::size_t yy = i * stride_ + u;
                                const std::size_t xx = j * stride_ + v;
                                const std::size_t idx = ((b * ch + c) * h + yy) * w + xx;
                                if (x[idx] > best) {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        y[out_pos] = best;
                        argmax_[out_pos] = best_idx;
                    }
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        if (upstream.size() != argmax_.size())
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx(input_shape_);
        for (std::size_t p = 0; p < upstream.size(); ++p) dx[argmax_[p]] += upstream[p];
        return dx;
    }

private:
    std::size_t pooled(std::size_t extent) const {
        if (extent < k_ || extent % stride_ != 0 || (extent - k_) % stride_ != 0)
            throw DomainError(name() + ": spatial extent " + std::to_string(extent) +
                              " not divisible by stride " + std::to_string(stride_));
        return (extent - k_) / stride_ + 1;
    }

    std::size_t k_, stride_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> input_shape_;
};

/// Normalizes over axis 1 (dense features or conv channels). Training
/// passes use batch statistics and fold them into running estimates;
/// inference uses the running estimates only.
class BatchNormLayer : public Layer {
public:
    BatchNormLayer(std::size_t features, double momentum = 0.9, double eps = 1e-5)
        : features_(features), momentum_(momentum), eps_(eps), gamma_({features}),
          beta_({features}), gamma_grad_({features}), beta_grad_({features}),
          running_mean_({features}), running_var_({features}) {
        if (features == 0) throw DomainError("batchnorm feature count must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("batchnorm momentum in [0,1)");
        gamma_.fill(1.0);
        running_var_.fill(1.0);
    }

    std::string name() const override { return "batchnorm(" + std::to_string(features_) + ")"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() < 2 || in[1] != features_)
            throw DomainError(name() + " expects " + std::to_string(features_) +
                              " features on axis 1");
        return in;
    }

    Tensor forward(const Tensor& x, bool training) override {
        (void)output_shape(x.shape());
        const std::size_t inner = x.size() / (x.dim(0) * features_);
        const std::size_t reduce = x.dim(0) * inner;
        Tensor y(x.shape());
        if (training) {
            if (x.dim(0) < 2)
                throw DomainError(name() + ": training mode needs batch size >= 2");
            mean_.assign(features_, 0.0);
            inv_std_.assign(features_, 0.0);
            for (std::size_t p = 0; p < x.size(); ++p)
                mean_[feature_of(p, inner)] += x[p];
            for (double& m : mean_) m /= static_cast<double>(reduce);
            std::vector<double> var(features_, 0.0);
            for (std::size_t p = 0; p < x.size(); ++p) {
                const double d = x[p] - mean_[feature_of(p, inner)];
                var[feature_of(p, inner)] += d * d;
            }
            for (std::size_t f = 0; f < features_; ++f) {
                var[f] /= static_cast<double>(reduce);
                inv_std_[f] = 1.0 / std::sqrt(var[f] + eps_);
                running_mean_[f] = momentum_ * running_mean_[f] + (1.0 - momentum_) * mean_[f];
                running_var_[f] = momentum_ * running_var_[f] + (1.0 - momentum_) * var[f];
            }
            xhat_ = Tensor(x.shape());
            for (std::size_t p = 0; p < x.size(); ++p) {
                const std::size_t f = feature_of(p, inner);
                xhat_[p] = (x[p] - mean_[f]) * inv_std_[f];
                y[p] = gamma_[f] * xhat_[p] + beta_[f];
            }
            reduce_count_ = reduce;
            inner_ = inner;
            has_cache_ = true;
        } else {
            for (std::size_t p = 0; p < x.size(); ++p) {
                const std::size_t f = feature_of(p, inner);
                y[p] = gamma_[f] * (x[p] - running_mean_[f]) /
                           std::sqrt(running_var_[f] + eps_) +
                       beta_[f];
            }
        }
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        if (!has_cache_ || !upstream.same_shape(xhat_))
            throw DomainError(name() + ": backward needs a matching training forward");
        const std::size_t n = reduce_count_;
        std::vector<double> sum_dy(features_, 0.0), sum_dy_xhat(features_, 0.0);
        for (std::size_t p = 0; p < upstream.size(); ++p) {
            const std::size_t f = feature_of(p, inner_);
            sum_dy[f] += upstream[p];
            sum_dy_xhat[f] += upstream[p] * xhat_[p];
        }
        for (std::size_t f = 0; f < features_; ++f) {
            beta_grad_[f] += sum_dy[f];
            gamma_grad_[f] += sum_dy_xhat[f];
        }
        Tensor dx(upstream.shape());
        for (std::size_t p = 0; p < upstream.size(); ++p) {
            const std::size_t f = feature_of(p, inner_);
            dx[p] = gamma_[f] * inv_std_[f] *
                    (upstream[p] - sum_dy[f] / static_cast<double>(n) -
                     xhat_[p] * sum_dy_xhat[f] / static_cast<double>(n));
        }
        return dx;
    }

    std::vector<ParamRef> params() override {
        return {{"gamma", &gamma_, &gamma_grad_, true}, {"beta", &beta_, &beta_grad_, false}};
    }

    std::vector<Tensor*> state_tensors() override { return {&running_mean_, &running_var_}; }

    Tensor& gamma() { return gamma_; }
    Tensor& beta() { return beta_; }

private:
    std::size_t feature_of(std::size_t pos, std::size_t inner) const {
        return (pos / inner) % features_;
    }

    std::size_t features_;
    double momentum_, eps_;
    Tensor gamma_, beta_, gamma_grad_, beta_grad_;
    Tensor running_mean_, running_var_;
    std::vector<double> mean_, inv_std_;
    Tensor xhat_;
    std::size_t reduce_count_ = 0, inner_ = 1;
    bool has_cache_ = false;
};

/// Inverted dropout: keeps an element with probability 1-p and scales it by
/// 1/(1-p); identity at inference.
class DropoutLayer : public Layer {
public:
    DropoutLayer(double p, std::uint64_t seed) : p_(p), rng_(seed) {
        if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout probability must be in [0,1)");
    }

    std::string name() const override { return "dropout"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        return in;
    }

    Tensor forward(const Tensor& x, bool training) override {
        Tensor y(x.shape());
        factors_.assign(x.size(), 1.0);
        if (training && p_ > 0.0) {
            const double scale = 1.0 / (1.0 - p_);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (std::size_t i = 0; i < x.size(); ++i)
                factors_[i] = unit(rng_) < p_ ? 0.0 : scale;
        }
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factors_[i];
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        if (upstream.size() != factors_.size())
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx(upstream.shape());
        for (std::size_t i = 0; i < upstream.size(); ++i) dx[i] = upstream[i] * factors_[i];
        return dx;
    }

    const std::vector<double>& mask_factors() const { return factors_; }

private:
    double p_;
    std::mt19937_64 rng_;
    std::vector<double> factors_;
};

class FlattenLayer : public Layer {
public:
    std::string name() const override { return "flatten"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() < 2)
            throw DomainError(name() + " expects a batched input");
        std::size_t rest = 1;
        for (std::size_t i = 1; i < in.size(); ++i) rest *= in[i];
        return {in[0], rest};
    }

    Tensor forward(const Tensor& x, bool) override {
        input_shape_ = x.shape();
        return x.reshaped(output_shape(x.shape()));
    }

    Tensor backward(const Tensor& upstream) override { return upstream.reshaped(input_shape_); }

private:
    std::vector<std::size_t> input_shape_;
};

class ReluLayer : public Layer {
public:
    std::string name() const override { return "relu"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        return in;
    }

    Tensor forward(const Tensor& x, bool) override {
        input_ = x;
        Tensor y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        return y;
    }

    // Subgradient 0 at the kink.
    Tensor backward(const Tensor& upstream) override {
        if (!upstream.same_shape(input_))
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx(upstream.shape());
        for (std::size_t i = 0; i < upstream.size(); ++i)
            dx[i] = input_[i] > 0.0 ? upstream[i] : 0.0;
        return dx;
    }

private:
    Tensor input_;
};

class EluLayer : public Layer {
public:
    std::string name() const override { return "elu"; }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        return in;
    }

    Tensor forward(const Tensor& x, bool) override {
        input_ = x;
        Tensor y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = elu(x[i]);
        return y;
    }

    Tensor backward(const Tensor& upstream) override {
        if (!upstream.same_shape(input_))
            throw DomainError(name() + ": upstream shape mismatch");
        Tensor dx(upstream.shape());
        for (std::size_t i = 0; i < upstream.size(); ++i)
            dx[i] = upstream[i] * elu_grad(input_[i]);
        return dx;
    }

private:
    Tensor input_;
};

/// Trainable kernel-expansion activation; owns the per-neuron alpha and mu.
class KafLayer : public Layer {
public:
    explicit KafLayer(MultiKafParams params)
        : params_(std::move(params)), alpha_grad_(params_.alpha.shape()),
          mu_grad_(params_.mu.shape()) {
        params_.validate();
    }

    std::string name() const override {
        return (params_.kernel_count() == 1 ? "kaf(" : "multikaf(") +
               std::to_string(params_.neurons()) + ")";
    }

    std::vector<std::size_t> output_shape(const std::vector<std::size_t>& in) const override {
        if (in.size() < 2 || in[1] != params_.neurons())
            throw DomainError(name() + " expects " + std::to_string(params_.neurons()) +
                              " neurons on axis 1");
        return in;
    }

    Tensor forward(const Tensor& x, bool training) override {
        if (training) return multikaf_forward(params_, x, &cache_);
        return multikaf_forward(params_, x, nullptr);
    }

    Tensor backward(const Tensor& upstream) override {
        MultiKafGrads grads = multikaf_backward(params_, cache_, upstream);
        for (std::size_t i = 0; i < alpha_grad_.size(); ++i) alpha_grad_[i] += grads.alpha[i];
        for (std::size_t i = 0; i < mu_grad_.size(); ++i) mu_grad_[i] += grads.mu[i];
        return std::move(grads.input);
    }

    std::vector<ParamRef> params() override {
        return {{"alpha", &params_.alpha, &alpha_grad_, true},
                {"mu", &params_.mu, &mu_grad_, true}};
    }

    const MultiKafParams& kaf_params() const { return params_; }
    MultiKafParams& kaf_params() { return params_; }

private:
    MultiKafParams params_;
    Tensor alpha_grad_, mu_grad_;
    CachedKernels cache_;
};

} // namespace kafforge
