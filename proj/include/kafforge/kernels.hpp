#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kafforge/errors.hpp"
#include "kafforge/tensor.hpp"

namespace kafforge {

enum class KernelKind { Gaussian, RationalQuadratic, Polynomial2 };

/// The rational-quadratic family ships in two forms:
///   Plus:  1 + (s-d)^2 / ((s-d)^2 + c), range [1,2)
///   Minus: c / ((s-d)^2 + c), the standard rational quadratic, range (0,1]
/// Only the Minus form is guaranteed positive semi-definite.
enum class RqVariant { Plus, Minus };

struct KernelSpec {
    KernelKind kind = KernelKind::Gaussian;
    double gamma = 1.0;                   // Gaussian bandwidth, > 0
    double c = 1.0;                       // rational-quadratic parameter, > 0
    RqVariant rq_variant = RqVariant::Plus;

    static KernelSpec gaussian(double gamma) { return {KernelKind::Gaussian, gamma, 1.0, RqVariant::Plus}; }
    static KernelSpec rational_quadratic(double c, RqVariant variant = RqVariant::Plus) {
        return {KernelKind::RationalQuadratic, 1.0, c, variant};
    }
    static KernelSpec polynomial2() { return {KernelKind::Polynomial2, 1.0, 1.0, RqVariant::Plus}; }

    void validate() const {
        if (kind == KernelKind::Gaussian && !(gamma > 0.0))
            throw DomainError("Gaussian kernel requires gamma > 0");
        if (kind == KernelKind::RationalQuadratic && !(c > 0.0))
            throw DomainError("rational-quadratic kernel requires c > 0");
    }
};

inline std::string kernel_name(const KernelSpec& spec) {
    switch (spec.kind) {
    case KernelKind::Gaussian: return "gaussian";
    case KernelKind::RationalQuadratic:
        return spec.rq_variant == RqVariant::Plus ? "rq_plus" : "rq_minus";
    case KernelKind::Polynomial2: return "poly2";
    }
    return "?";
}

inline double eval_kernel(const KernelSpec& spec, double s, double d) {
    switch (spec.kind) {
    case KernelKind::Gaussian: {
        const double r = s - d;
        return std::exp(-spec.gamma * r * r);
    }
    case KernelKind::RationalQuadratic: {
        const double r2 = (s - d) * (s - d);
        if (spec.rq_variant == RqVariant::Plus)
            return 1.0 + r2 / (r2 + spec.c);
        return spec.c / (r2 + spec.c);
    }
    case KernelKind::Polynomial2: {
        const double p = 1.0 + s * d;
        return p * p;
    }
    }
    throw DomainError("unknown kernel kind");
}

/// Analytic d/ds of eval_kernel.
inline double eval_kernel_grad_s(const KernelSpec& spec, double s, double d) {
    switch (spec.kind) {
    case KernelKind::Gaussian: {
        const double r = s - d;
        return -2.0 * spec.gamma * r * std::exp(-spec.gamma * r * r);
    }
    case KernelKind::RationalQuadratic: {
        const double r = s - d;
        const double den = r * r + spec.c;
        const double g = 2.0 * r * spec.c / (den * den);
        return spec.rq_variant == RqVariant::Plus ? g : -g;
    }
    case KernelKind::Polynomial2:
        return 2.0 * (1.0 + s * d) * d;
    }
    throw DomainError("unknown kernel kind");
}

namespace detail {

// d/ds recomputed from an already evaluated kernel value; saves the exp in
// the Gaussian branch on the backward pass.
inline double kernel_grad_s_from_value(const KernelSpec& spec, double s, double d, double value) {
    if (spec.kind == KernelKind::Gaussian)
        return -2.0 * spec.gamma * (s - d) * value;
    return eval_kernel_grad_s(spec, s, d);
}

} // namespace detail

/// Default Gaussian bandwidth from the dictionary spacing: 1 / (6 delta^2).
inline double gamma_rule_of_thumb(double delta) {
    if (!(delta > 0.0))
        throw DomainError("gamma rule of thumb requires a positive spacing");
    return 1.0 / (6.0 * delta * delta);
}

/// Symmetric Gram matrix K[i][j] = kernel(points[i], points[j]).
inline Tensor gram_matrix(const KernelSpec& spec, const std::vector<double>& points) {
    spec.validate();
    if (points.empty())
        throw DomainError("gram matrix requires at least one point");
    const std::size_t n = points.size();
    Tensor gram({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            const double value = eval_kernel(spec, points[i], points[j]);
            gram(i, j) = value;
            gram(j, i) = value;
        }
    return gram;
}

/// sum_ij coeffs[i] coeffs[j] gram[i][j].
inline double quadratic_form(const Tensor& gram, const std::vector<double>& coeffs) {
    if (gram.rank() != 2 || gram.dim(0) != gram.dim(1))
        throw DomainError("quadratic form requires a square matrix, got " + gram.shape_string());
    if (gram.dim(0) != coeffs.size())
        throw DomainError("coefficient length does not match matrix size");
    double acc = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i)
        for (std::size_t j = 0; j < coeffs.size(); ++j)
            acc += coeffs[i] * coeffs[j] * gram(i, j);
    return acc;
}

} // namespace kafforge
