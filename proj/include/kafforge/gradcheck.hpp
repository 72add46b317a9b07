#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kafforge/layers.hpp"
#include "kafforge/network.hpp"
#include "kafforge/tensor.hpp"

// Finite-difference audit of every backward implementation. Central
// differences with h = 1e-6; per-entry relative error, with an absolute
// 1e-8 criterion where the analytic value is below 1e-8.

namespace kafforge {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kLayerTolerance = 1e-5;
inline constexpr double kNetworkTolerance = 1e-4;

/// Error measure for one gradient entry. Values above the tolerance mean
/// the analytic and numeric derivatives disagree.
inline double grad_error(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (std::abs(analytic) < 1e-8)
        return diff <= 1e-8 ? 0.0 : 1.0 + diff;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

/// Worst grad_error over all entries of `values`, comparing `analytic`
/// against central differences of `f`.
inline double max_fd_error(const std::function<double()>& f, Tensor& values,
                           const Tensor& analytic, double h = kFdStep) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double orig = values[i];
        values[i] = orig + h;
        const double fp = f();
        values[i] = orig - h;
        const double fm = f();
        values[i] = orig;
        worst = std::max(worst, grad_error(analytic[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

struct AuditEntry {
    std::string name;
    double max_err = 0.0;
    double tolerance = kLayerTolerance;

    bool passed() const { return max_err < tolerance; }
};

namespace detail {

inline Tensor randn(const std::vector<std::size_t>& shape, std::mt19937_64& rng,
                    double scale = 1.0) {
    Tensor t(shape);
    std::normal_distribution<double> dist(0.0, scale);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

// Upstream weights bounded away from zero keep the projected gradients
// well above the finite-difference noise floor.
inline Tensor random_upstream(const std::vector<std::size_t>& shape, std::mt19937_64& rng) {
    Tensor t(shape);
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

} // namespace detail

/// Audits one layer: the scalar probe sum(upstream * forward(x)) is
/// differentiated against the layer's input and every parameter.
inline std::vector<AuditEntry> check_layer(Layer& layer, Tensor x, const std::string& label,
                                           std::mt19937_64& rng,
                                           double tolerance = kLayerTolerance) {
    const Tensor y0 = layer.forward(x, true);
    const Tensor upstream = detail::random_upstream(y0.shape(), rng);

    for (ParamRef p : layer.params()) p.grad->fill(0.0);
    const Tensor input_grad = layer.backward(upstream);
    std::vector<Tensor> param_grads;
    for (ParamRef p : layer.params()) param_grads.push_back(*p.grad);

    const auto probe = [&]() { return detail::dot(upstream, layer.forward(x, true)); };

    std::vector<AuditEntry> entries;
    entries.push_back({label + "/input", max_fd_error(probe, x, input_grad), tolerance});
    std::vector<ParamRef> params = layer.params();
    for (std::size_t i = 0; i < params.size(); ++i)
        entries.push_back({label + "/" + params[i].name,
                           max_fd_error(probe, *params[i].value, param_grads[i]), tolerance});
    return entries;
}

/// The full audit: every layer type standalone, then a composed network
/// differentiated through the complete regularized objective.
inline std::vector<AuditEntry> run_gradient_audit(std::uint64_t seed) {
    std::vector<AuditEntry> entries;
    std::mt19937_64 rng(seed);
    const auto append = [&entries](std::vector<AuditEntry> more) {
        entries.insert(entries.end(), more.begin(), more.end());
    };

    {
        DenseLayer dense(7, 5, rng);
        append(check_layer(dense, detail::randn({4, 7}, rng), "dense", rng));
    }
    {
        Conv2dLayer conv(2, 3, 5, -1, 1, rng);
        append(check_layer(conv, detail::randn({2, 2, 8, 8}, rng), "conv2d", rng));
    }
    {
        MaxPool2dLayer pool(2, 2);
        append(check_layer(pool, detail::randn({2, 3, 6, 6}, rng), "maxpool", rng));
    }
    {
        BatchNormLayer bn(6);
        append(check_layer(bn, detail::randn({8, 6}, rng), "batchnorm", rng));
    }
    {
        BatchNormLayer bn(3);
        append(check_layer(bn, detail::randn({4, 3, 5, 5}, rng), "batchnorm2d", rng));
    }
    {
        ReluLayer relu;
        Tensor x = detail::randn({3, 40}, rng);
        for (std::size_t i = 0; i < x.size(); ++i) // keep clear of the kink
            if (std::abs(x[i]) < 1e-3) x[i] = x[i] < 0.0 ? x[i] - 2e-3 : x[i] + 2e-3;
        append(check_layer(relu, x, "relu", rng));
    }
    {
        EluLayer elu_layer;
        append(check_layer(elu_layer, detail::randn({3, 40}, rng), "elu", rng));
    }

    const auto kaf_instance = [&rng](ActKind kind, const std::string& label,
                                     std::vector<AuditEntry>& out) {
        KafSettings settings;
        const Dictionary dict = make_dictionary(settings.dict_size, settings.lo, settings.hi);
        MultiKafParams params =
            init_multikaf(5, settings.dict_size, settings.lo, settings.hi,
                          settings.kernel_set(kind, dict.delta));
        std::normal_distribution<double> jitter(0.0, 0.2); // break the identical-neuron init
        for (std::size_t i = 0; i < params.alpha.size(); ++i) params.alpha[i] += jitter(rng);
        for (std::size_t i = 0; i < params.mu.size(); ++i) params.mu[i] += jitter(rng);
        KafLayer layer(std::move(params));
        auto more = check_layer(layer, detail::randn({4, 5}, rng), label, rng);
        out.insert(out.end(), more.begin(), more.end());
    };
    kaf_instance(ActKind::Kaf, "kaf", entries);
    kaf_instance(ActKind::MultiKaf, "multikaf", entries);

    // Composed network through the full objective (cross entropy + L2).
    {
        NetworkSpec spec;
        spec.layers = {Conv2dSpec{3}, BatchNormSpec{}, ActivationSpec{ActKind::MultiKaf},
                       MaxPoolSpec{}, FlattenSpec{},   DenseSpec{16},
                       BatchNormSpec{}, ActivationSpec{ActKind::Elu}, DenseSpec{4}};
        Network net(spec, {4, 2, 8, 8}, rng());
        Tensor x = detail::randn({4, 2, 8, 8}, rng);
        Tensor targets({4, 4});
        std::uniform_int_distribution<int> pick(0, 3);
        for (std::size_t b = 0; b < 4; ++b)
            targets(b, static_cast<std::size_t>(pick(rng))) = 1.0;
        const double lambda = 1e-3;

        Tensor input_grad;
        loss_and_grads(net, x, targets, lambda, true, &input_grad);
        std::vector<Tensor> param_grads;
        for (ParamRef p : net.params()) param_grads.push_back(*p.grad);

        const auto loss_only = [&]() {
            const Tensor logits = net.forward(x, true);
            return softmax_cross_entropy(logits, targets, lambda * net.l2_norm_sq()).loss;
        };

        double worst_params = 0.0;
        std::vector<ParamRef> params = net.params();
        for (std::size_t i = 0; i < params.size(); ++i)
            worst_params = std::max(
                worst_params, max_fd_error(loss_only, *params[i].value, param_grads[i]));
        entries.push_back({"network/params", worst_params, kNetworkTolerance});
        entries.push_back(
            {"network/input", max_fd_error(loss_only, x, input_grad), kNetworkTolerance});
    }

    return entries;
}

inline bool audit_passed(const std::vector<AuditEntry>& entries) {
    for (const AuditEntry& e : entries)
        if (!e.passed()) return false;
    return true;
}

} // namespace kafforge
