#pragma once

// Cholesky factorisation and triangular solves, with reverse-mode rules.

#include <cmath>
#include <cstddef>
#include <string>

#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

/// Lower Cholesky factor of a symmetric positive-definite matrix. Only the
/// lower triangle of `a` is read.
inline Tensor cholesky_factor(const Tensor& a) {
    detail::require_rank(a, 2, "cholesky");
    const std::size_t n = a.dim(0);
    if (a.dim(1) != n) throw ShapeError("cholesky: matrix must be square, got " + shape_string(a.shape()));
    Tensor l(Shape{n, n});
    double* L = l.mutable_ptr();
    const double* A = a.ptr();
    for (std::size_t j = 0; j < n; ++j) {
        double pivot = A[j * n + j];
        for (std::size_t k = 0; k < j; ++k) pivot -= L[j * n + k] * L[j * n + k];
        if (!(pivot > 0.0)) throw FactorizationError(j, pivot);
        const double d = std::sqrt(pivot);
        L[j * n + j] = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = A[i * n + j];
            for (std::size_t k = 0; k < j; ++k) v -= L[i * n + k] * L[j * n + k];
            L[i * n + j] = v / d;
        }
    }
    return l;
}

/// Solves op(T) x = b in place of b, where T is lower (or upper) triangular
/// and op is identity or transpose.
inline Tensor solve_triangular(const Tensor& t, const Tensor& b, bool lower, bool transpose) {
    detail::require_rank(t, 2, "triangular_solve");
    detail::require_rank(b, 2, "triangular_solve");
    const std::size_t n = t.dim(0);
    if (t.dim(1) != n || b.dim(0) != n) {
        throw ShapeError("triangular_solve: " + shape_string(t.shape()) + " vs rhs " + shape_string(b.shape()));
    }
    const std::size_t k = b.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        if (t[i * n + i] == 0.0) {
            throw NumericError("triangular_solve: zero diagonal entry at index " + std::to_string(i));
        }
    }
    // Effective matrix M = op(T); M is lower triangular iff lower != transpose.
    const bool forward = lower != transpose;
    auto m = [&](std::size_t i, std::size_t j) { return transpose ? t[j * n + i] : t[i * n + j]; };
    Tensor x = b.clone();
    double* X = x.mutable_ptr();
    if (forward) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                const double mij = m(i, j);
                if (mij == 0.0) continue;
                for (std::size_t c = 0; c < k; ++c) X[i * k + c] -= mij * X[j * k + c];
            }
            const double d = m(i, i);
            for (std::size_t c = 0; c < k; ++c) X[i * k + c] /= d;
        }
    } else {
        for (std::size_t i = n; i-- > 0;) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double mij = m(i, j);
                if (mij == 0.0) continue;
                for (std::size_t c = 0; c < k; ++c) X[i * k + c] -= mij * X[j * k + c];
            }
            const double d = m(i, i);
            for (std::size_t c = 0; c < k; ++c) X[i * k + c] /= d;
        }
    }
    return x;
}

/// Differentiable Cholesky factorisation. The gradient returned for `a` is
/// the symmetric G = L⁻ᵀ Φ L⁻¹, where Φ is tril(Lᵀ L̄) mirrored with every
/// entry halved; it is the derivative for symmetric perturbations of `a`.
inline Var cholesky(Var a) {
    Tensor l = cholesky_factor(a.value());
    Tensor saved = l;
    return a.graph().record("cholesky", std::move(l), {a}, [saved](const Tensor& g, GradSink& s) {
        const std::size_t n = saved.dim(0);
        RowMatrix p = as_matrix(saved).transpose() * as_matrix(g);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 0.0;
        }
        // Mirror the lower triangle and halve everything.
        RowMatrix sym = 0.5 * (p + p.transpose());
        sym.diagonal() *= 0.5;
        Tensor half = solve_triangular(saved, from_matrix(sym), true, true);   // L⁻ᵀ Φ
        Tensor full = solve_triangular(saved, transposed(half), true, true);  // L⁻ᵀ Φ L⁻¹
        RowMatrix grad = as_matrix(full);
        RowMatrix symmetric = 0.5 * (grad + grad.transpose());
        s.add(0, from_matrix(symmetric));
    });
}

/// x with op(T) x = b, op = transpose if requested. Differentiable in T and b;
/// the gradient for T is restricted to its triangle.
inline Var triangular_solve(Var t, Var b, bool lower = true, bool transpose = false) {
    Tensor tv = t.value();
    Tensor x = solve_triangular(tv, b.value(), lower, transpose);
    Tensor saved_x = x;
    return t.graph().record(
        "triangular_solve", std::move(x), {t, b}, [tv, saved_x, lower, transpose](const Tensor& g, GradSink& s) {
            // With M = op(T): b̄ = M⁻ᵀ x̄ and M̄ = −b̄ xᵀ.
            Tensor gb = solve_triangular(tv, g, lower, !transpose);
            if (s.wants(0)) {
                RowMatrix gm = -(as_matrix(gb) * as_matrix(saved_x).transpose());
                if (transpose) gm.transposeInPlace();
                const auto n = gm.rows();
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = 0; j < n; ++j)
                        if (lower ? j > i : j < i) gm(i, j) = 0.0;
                s.add(0, from_matrix(gm));
            }
            s.add(1, std::move(gb));
        });
}

}  // namespace gpdnn
