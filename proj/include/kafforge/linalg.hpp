#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "kafforge/errors.hpp"
#include "kafforge/tensor.hpp"

// Dense linear algebra for the small (dictionary-sized) symmetric systems
// used by the kernel machinery. Backed by Eigen behind a Tensor-based API.

namespace kafforge {

namespace detail {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenRowMajor> as_eigen(const Tensor& m) {
    if (m.rank() != 2)
        throw DomainError("expected a rank-2 tensor, got shape " + m.shape_string());
    return {m.data(), static_cast<Eigen::Index>(m.dim(0)), static_cast<Eigen::Index>(m.dim(1))};
}

} // namespace detail

/// Eigenvalues of a symmetric matrix, ascending.
inline std::vector<double> symmetric_eigenvalues(const Tensor& m) {
    auto a = detail::as_eigen(m);
    if (a.rows() != a.cols())
        throw DomainError("eigensolve requires a square matrix, got " + m.shape_string());
    Eigen::SelfAdjointEigenSolver<detail::EigenRowMajor> solver(a, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        throw NumericError("symmetric eigensolve failed to converge");
    const auto& ev = solver.eigenvalues();
    return {ev.data(), ev.data() + ev.size()};
}

inline double min_symmetric_eigenvalue(const Tensor& m) {
    return symmetric_eigenvalues(m).front();
}

/// Solves a x = b for a dense (not necessarily definite) square system.
/// Throws NumericError when the solution does not reproduce b.
inline std::vector<double> solve_linear(const Tensor& a, const std::vector<double>& b) {
    auto m = detail::as_eigen(a);
    if (m.rows() != m.cols())
        throw DomainError("linear solve requires a square matrix, got " + a.shape_string());
    if (static_cast<std::size_t>(m.rows()) != b.size())
        throw DomainError("right-hand side length does not match matrix size");
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
    Eigen::VectorXd x = Eigen::PartialPivLU<detail::EigenRowMajor>(m).solve(rhs);

    const double scale = rhs.lpNorm<Eigen::Infinity>() + 1.0;
    const double residual = (m * x - rhs).lpNorm<Eigen::Infinity>();
    if (!std::isfinite(residual) || residual > 1e-8 * scale)
        throw NumericError("linear system is numerically singular (residual " +
                           std::to_string(residual) + ")");
    return {x.data(), x.data() + x.size()};
}

} // namespace kafforge
