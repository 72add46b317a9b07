#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/kernels.hpp"
#include "kafforge/linalg.hpp"
#include "kafforge/tensor.hpp"

// Kernel-expansion activation functions. Each neuron owns a row of mixing
// coefficients alpha (one per dictionary point) and a row of kernel weights
// mu (one per base kernel); the dictionary itself is shared network-wide and
// never trained. A plain single-kernel activation is simply the M = 1 case.

namespace kafforge {

/// D strictly increasing, equispaced sample points on [lo, hi].
struct Dictionary {
    std::vector<double> points;
    double delta = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    std::size_t size() const { return points.size(); }
};

inline Dictionary make_dictionary(std::size_t d, double lo, double hi) {
    if (d < 2)
        throw DomainError("dictionary needs at least 2 points");
    if (!(lo < hi))
        throw DomainError("dictionary range requires lo < hi");
    Dictionary dict;
    dict.lo = lo;
    dict.hi = hi;
    dict.delta = (hi - lo) / static_cast<double>(d - 1);
    dict.points.resize(d);
    for (std::size_t i = 0; i < d; ++i)
        dict.points[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(d - 1);
    dict.points.front() = lo;
    dict.points.back() = hi;
    return dict;
}

/// Exponential linear unit (unit scale): s for s > 0, exp(s) - 1 otherwise.
inline double elu(double s) { return s > 0.0 ? s : std::expm1(s); }
inline double elu_grad(double s) { return s > 0.0 ? 1.0 : std::exp(s); }

/// Per-neuron activation parameters. alpha is n_neurons x D, mu is
/// n_neurons x M. For tensors of rank >= 2 the neuron axis is axis 1
/// (dense features, conv channels); every spatial position of a channel
/// shares that channel's row.
struct MultiKafParams {
    Tensor alpha;
    Tensor mu;
    std::vector<KernelSpec> kernels;
    Dictionary dictionary;

    std::size_t neurons() const { return alpha.rank() == 2 ? alpha.dim(0) : 0; }
    std::size_t dict_size() const { return dictionary.size(); }
    std::size_t kernel_count() const { return kernels.size(); }

    void validate() const {
        if (kernels.empty())
            throw DomainError("multi-KAF needs at least one kernel");
        if (dictionary.size() < 2)
            throw DomainError("multi-KAF dictionary needs at least 2 points");
        if (alpha.rank() != 2 || alpha.dim(1) != dictionary.size())
            throw DomainError("alpha must be n_neurons x D");
        if (mu.rank() != 2 || mu.dim(0) != alpha.dim(0) || mu.dim(1) != kernels.size())
            throw DomainError("mu must be n_neurons x M");
        for (const auto& k : kernels) k.validate();
    }
};

/// Base-kernel evaluations recorded by the forward pass, laid out as
/// [scalar][kernel][dictionary point], plus the input they were computed at.
/// All M kernels and the backward pass share this one evaluation sweep.
struct CachedKernels {
    Tensor input;
    std::vector<double> values;
    std::size_t m = 0;
    std::size_t d = 0;

    bool empty() const { return values.empty(); }
};

namespace detail {

inline void check_neuron_axis(const MultiKafParams& params, const Tensor& x) {
    const std::size_t n = params.neurons();
    if (x.rank() < 2 || x.dim(1) != n)
        throw DomainError("activation input " + x.shape_string() + " does not carry " +
                          std::to_string(n) + " neurons on axis 1");
}

// Number of scalars per neuron slice (spatial positions of one channel).
inline std::size_t inner_extent(const Tensor& x) {
    std::size_t inner = 1;
    for (std::size_t axis = 2; axis < x.rank(); ++axis) inner *= x.dim(axis);
    return inner;
}

} // namespace detail

/// g(s) = sum_i alpha[n][i] * sum_m mu[n][m] * k_m(s, d_i), applied
/// elementwise per neuron. When `cache` is given, the M x D base-kernel
/// values per scalar are recorded for the backward pass.
inline Tensor multikaf_forward(const MultiKafParams& params, const Tensor& x,
                               CachedKernels* cache = nullptr) {
    params.validate();
    detail::check_neuron_axis(params, x);

    const std::size_t m_count = params.kernel_count();
    const std::size_t d_count = params.dict_size();
    const std::size_t inner = detail::inner_extent(x);
    const std::size_t n = params.neurons();
    const double* dict = params.dictionary.points.data();

    Tensor out(x.shape());
    std::vector<double> scratch;
    double* kv = nullptr;
    if (cache) {
        cache->input = x;
        cache->m = m_count;
        cache->d = d_count;
        cache->values.assign(x.size() * m_count * d_count, 0.0);
    } else {
        scratch.resize(m_count * d_count);
    }

    for (std::size_t pos = 0; pos < x.size(); ++pos) {
        const std::size_t neuron = (pos / inner) % n;
        const double s = x[pos];
        kv = cache ? cache->values.data() + pos * m_count * d_count : scratch.data();
        for (std::size_t m = 0; m < m_count; ++m)
            for (std::size_t i = 0; i < d_count; ++i)
                kv[m * d_count + i] = eval_kernel(params.kernels[m], s, dict[i]);

        double g = 0.0;
        for (std::size_t i = 0; i < d_count; ++i) {
            double mixed = 0.0;
            for (std::size_t m = 0; m < m_count; ++m)
                mixed += params.mu(neuron, m) * kv[m * d_count + i];
            g += params.alpha(neuron, i) * mixed;
        }
        out[pos] = g;
    }
    return out;
}

struct MultiKafGrads {
    Tensor input;
    Tensor alpha; // n_neurons x D
    Tensor mu;    // n_neurons x M
};

/// Reverse-mode gradients of multikaf_forward. `cache` must come from the
/// matching forward call; gradients accumulate over every scalar position
/// belonging to a neuron.
inline MultiKafGrads multikaf_backward(const MultiKafParams& params, const CachedKernels& cache,
                                       const Tensor& upstream) {
    params.validate();
    if (cache.empty() || !cache.input.same_shape(upstream))
        throw DomainError("multi-KAF backward needs the cache of a matching forward pass");
    if (cache.m != params.kernel_count() || cache.d != params.dict_size())
        throw DomainError("multi-KAF cache does not match the parameter layout");

    const std::size_t m_count = params.kernel_count();
    const std::size_t d_count = params.dict_size();
    const std::size_t inner = detail::inner_extent(cache.input);
    const std::size_t n = params.neurons();
    const double* dict = params.dictionary.points.data();

    MultiKafGrads grads;
    grads.input = Tensor(cache.input.shape());
    grads.alpha = Tensor({n, d_count});
    grads.mu = Tensor({n, m_count});

    for (std::size_t pos = 0; pos < cache.input.size(); ++pos) {
        const std::size_t neuron = (pos / inner) % n;
        const double s = cache.input[pos];
        const double up = upstream[pos];
        const double* kv = cache.values.data() + pos * m_count * d_count;

        double dg_ds = 0.0;
        for (std::size_t i = 0; i < d_count; ++i) {
            double mixed = 0.0;       // kernels combined at d_i
            double mixed_grad = 0.0;  // d/ds of the same combination
            for (std::size_t m = 0; m < m_count; ++m) {
                const double v = kv[m * d_count + i];
                mixed += params.mu(neuron, m) * v;
                mixed_grad += params.mu(neuron, m) *
                              detail::kernel_grad_s_from_value(params.kernels[m], s, dict[i], v);
            }
            const double a = params.alpha(neuron, i);
            grads.alpha(neuron, i) += up * mixed;
            dg_ds += a * mixed_grad;
            for (std::size_t m = 0; m < m_count; ++m)
                grads.mu(neuron, m) += up * a * kv[m * d_count + i];
        }
        grads.input[pos] = up * dg_ds;
    }
    return grads;
}

/// Mixing coefficients that make the expansion reproduce `targets` on the
/// dictionary: solves (K + eps I) alpha = targets with K the mu-weighted
/// Gram of the dictionary against itself.
inline std::vector<double> krr_init(const std::vector<KernelSpec>& kernels,
                                    const std::vector<double>& mu, const Dictionary& dictionary,
                                    const std::vector<double>& targets, double epsilon) {
    if (kernels.empty() || kernels.size() != mu.size())
        throw DomainError("kernel ridge init needs matching kernel and weight lists");
    if (targets.size() != dictionary.size())
        throw DomainError("kernel ridge init needs one target per dictionary point");
    if (epsilon < 0.0)
        throw DomainError("kernel ridge init needs epsilon >= 0");

    const std::size_t d = dictionary.size();
    Tensor combined({d, d});
    for (std::size_t m = 0; m < kernels.size(); ++m) {
        const Tensor gram = gram_matrix(kernels[m], dictionary.points);
        for (std::size_t i = 0; i < d * d; ++i)
            combined[i] += mu[m] * gram[i];
    }
    for (std::size_t i = 0; i < d; ++i)
        combined(i, i) += epsilon;
    return solve_linear(combined, targets);
}

/// Fresh parameters for n identical neurons: every mu row is 1/M and every
/// alpha row is the ridge fit of the ELU on the dictionary (eps = 1e-4).
inline MultiKafParams init_multikaf(std::size_t n_neurons, std::size_t dict_size, double lo,
                                    double hi, std::vector<KernelSpec> kernels) {
    if (n_neurons == 0)
        throw DomainError("activation needs at least one neuron");
    if (kernels.empty())
        throw DomainError("activation needs at least one kernel");

    MultiKafParams params;
    params.dictionary = make_dictionary(dict_size, lo, hi);
    params.kernels = std::move(kernels);

    const std::size_t m = params.kernels.size();
    const std::vector<double> mu_row(m, 1.0 / static_cast<double>(m));
    std::vector<double> targets(dict_size);
    for (std::size_t i = 0; i < dict_size; ++i)
        targets[i] = elu(params.dictionary.points[i]);
    const std::vector<double> alpha_row =
        krr_init(params.kernels, mu_row, params.dictionary, targets, 1e-4);

    params.alpha = Tensor({n_neurons, dict_size});
    params.mu = Tensor({n_neurons, m});
    for (std::size_t neuron = 0; neuron < n_neurons; ++neuron) {
        for (std::size_t i = 0; i < dict_size; ++i)
            params.alpha(neuron, i) = alpha_row[i];
        for (std::size_t j = 0; j < m; ++j)
            params.mu(neuron, j) = mu_row[j];
    }
    return params;
}

/// One neuron's activation value at s, and the same split per base kernel:
/// component m is mu[m] * sum_i alpha[i] k_m(s, d_i).
inline std::vector<double> activation_components(const MultiKafParams& params, std::size_t neuron,
                                                 double s) {
    if (neuron >= params.neurons())
        throw DomainError("neuron index out of range");
    std::vector<double> parts(params.kernel_count(), 0.0);
    for (std::size_t m = 0; m < params.kernel_count(); ++m) {
        double acc = 0.0;
        for (std::size_t i = 0; i < params.dict_size(); ++i)
            acc += params.alpha(neuron, i) *
                   eval_kernel(params.kernels[m], s, params.dictionary.points[i]);
        parts[m] = params.mu(neuron, m) * acc;
    }
    return parts;
}

} // namespace kafforge
