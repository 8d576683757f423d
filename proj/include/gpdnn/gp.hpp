#pragma once

// Sparse variational GP head in the whitened inducing-point representation:
// u = L_zz v with q(v) = N(m_c, L_c L_cᵀ) per class and prior N(0, I).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gpdnn/error.hpp"
#include "gpdnn/graph.hpp"
#include "gpdnn/linalg.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/random.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

enum class KernelKind { Rbf, Linear };

inline const char* to_string(KernelKind k) { return k == KernelKind::Rbf ? "rbf" : "linear"; }

/// Kernel hyperparameters, stored as logs so that every value stays positive.
struct KernelParams {
    KernelKind kind = KernelKind::Rbf;
    double log_variance = 0.0;     // σ_f²
    double log_lengthscale = 0.0;  // ℓ, unused by the linear kernel
    double log_noise = std::log(1e-3);  // σ_n², white noise on the diagonal

    double variance() const { return std::exp(log_variance); }
    double lengthscale() const { return std::exp(log_lengthscale); }
    double noise() const { return std::exp(log_noise); }
};

struct GPLayerState {
    Tensor inducing;          // Z, [M, D]
    Tensor mean;              // columns are m_c, [M, C]
    std::vector<Tensor> chol; // L_c, lower triangular [M, M] per class
    KernelParams kernel;

    std::size_t num_inducing() const { return inducing.dim(0); }
    std::size_t num_classes() const { return mean.dim(1); }
};

struct LatentMarginals {
    Tensor mean;      // [B, C]
    Tensor variance;  // [B, C]
};

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr double kMaxJitter = 1e-2;

// ---------------------------------------------------------------------------
// Graph-level representation

struct KernelVars {
    KernelKind kind;
    Var log_variance, log_lengthscale, log_noise;
};

struct GpVars {
    Var inducing, mean;
    std::vector<Var> chol;
    KernelVars kernel;
};

struct LatentMarginalVars {
    Var mean, variance;
};

/// Pairwise squared Euclidean distances between the rows of a [n,D] and b [m,D].
inline Var squared_distances(Var a, Var b) {
    const Tensor av = a.value();
    const Tensor bv = b.value();
    detail::require_rank(av, 2, "squared_distances");
    detail::require_rank(bv, 2, "squared_distances");
    if (av.dim(1) != bv.dim(1)) throw ShapeError("squared_distances: feature dimensions differ");
    const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
    Tensor out(Shape{n, m});
    double* o = out.mutable_ptr();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = av[i * d + k] - bv[j * d + k];
                acc += diff * diff;
            }
            o[i * m + j] = acc;
        }
    return a.graph().record("squared_distances", std::move(out), {a, b}, [av, bv, n, m, d](const Tensor& g, GradSink& s) {
        Tensor ga(av.shape()), gb(bv.shape());
        double* pa = ga.mutable_ptr();
        double* pb = gb.mutable_ptr();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double w = 2.0 * g[i * m + j];
                if (w == 0.0) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = w * (av[i * d + k] - bv[j * d + k]);
                    pa[i * d + k] += diff;
                    pb[j * d + k] -= diff;
                }
            }
        s.add(0, std::move(ga));
        s.add(1, std::move(gb));
    });
}

/// k(A, B); white noise joins the diagonal only when `same_inputs`.
inline Var kernel_matrix(const KernelVars& k, Var a, Var b, bool same_inputs) {
    Var variance = exp(k.log_variance);
    Var cov;
    if (k.kind == KernelKind::Rbf) {
        Var inv_two_l2 = scale(exp(scale(k.log_lengthscale, -2.0)), -0.5);  // −1/(2ℓ²)
        cov = mul(exp(mul(squared_distances(a, b), inv_two_l2)), variance);
    } else {
        cov = mul(matmul(a, transpose(b)), variance);
    }
    if (same_inputs) {
        if (cov.shape()[0] != cov.shape()[1]) throw ShapeError("kernel_matrix: same_inputs needs square output");
        cov = add_diag(cov, exp(k.log_noise));
    }
    return cov;
}

/// k(x, x) for every row of x, white noise included.
inline Var kernel_diagonal(const KernelVars& k, Var x) {
    Graph& g = x.graph();
    const std::size_t n = x.shape().at(0);
    Var variance = exp(k.log_variance);
    Var noise = exp(k.log_noise);
    if (k.kind == KernelKind::Rbf) {
        return add(g.constant(Tensor::zeros(Shape{n})), add(variance, noise));
    }
    return add(mul(sum(square(x), 1), variance), noise);
}

/// Cholesky of K + jitter·I, doubling the jitter from 1e-6 up to 1e-2 on failure.
inline Var jittered_cholesky(Var k, double jitter = kDefaultJitter) {
    Graph& g = k.graph();
    const std::size_t n = k.shape().at(0);
    for (;;) {
        Tensor shift = Tensor::identity(n);
        for (double& v : shift.mutable_data()) v *= jitter;
        try {
            return cholesky(add(k, g.constant(shift)));
        } catch (const FactorizationError& e) {
            if (jitter * 2.0 > kMaxJitter) {
                throw FactorizationError(e.pivot(), 0.0, std::string("K_zz jitter reached ") + std::to_string(jitter));
            }
            jitter *= 2.0;
        }
    }
}

/// Marginals of q(f_x) at the rows of `features`.
///   A = L_zz⁻¹ K_zx,  μ = Aᵀ m,  v_c = k(x,x) − colsum(A∘A) + colsum((L_cᵀA)∘(L_cᵀA)).
inline LatentMarginalVars latent_marginals(const GpVars& gp, Var features, double jitter = kDefaultJitter) {
    Var kzz = kernel_matrix(gp.kernel, gp.inducing, gp.inducing, true);
    Var lzz = jittered_cholesky(kzz, jitter);
    Var kzx = kernel_matrix(gp.kernel, gp.inducing, features, false);
    Var a = triangular_solve(lzz, kzx, true, false);
    Var mean = matmul(transpose(a), gp.mean);
    Var base = sub(kernel_diagonal(gp.kernel, features), sum(square(a), 0));
    std::vector<Var> columns;
    columns.reserve(gp.chol.size());
    for (const Var& l : gp.chol) {
        Var projected = matmul(transpose(tril(l)), a);
        columns.push_back(add(base, sum(square(projected), 0)));
    }
    return {mean, stack_columns(columns)};
}

/// Σ_c KL(N(m_c, L_c L_cᵀ) ‖ N(0, I)) = ½ Σ_c [tr S_c + m_cᵀm_c − M − log det S_c].
inline Var kl_to_prior(const GpVars& gp) {
    const std::size_t m = gp.mean.shape().at(0);
    const std::size_t classes = gp.chol.size();
    Var total = sum(square(gp.mean));
    for (const Var& l : gp.chol) {
        Var lower = tril(l);
        total = add(total, sum(square(lower)));
        total = sub(total, sum(log(square(diag_part(lower)))));
    }
    return scale(add_scalar(total, -static_cast<double>(m * classes)), 0.5);
}

// ---------------------------------------------------------------------------
// Tensor-level convenience wrappers (no gradients kept)

inline KernelVars constant_kernel(Graph& g, const KernelParams& p) {
    return {p.kind, g.constant(Tensor::scalar(p.log_variance)), g.constant(Tensor::scalar(p.log_lengthscale)),
            g.constant(Tensor::scalar(p.log_noise))};
}

inline GpVars bind_gp(Graph& g, const GPLayerState& state, bool trainable) {
    auto leaf = [&](const Tensor& t) { return trainable ? g.variable(t) : g.constant(t); };
    GpVars v{leaf(state.inducing), leaf(state.mean), {},
             {state.kernel.kind, leaf(Tensor::scalar(state.kernel.log_variance)),
              leaf(Tensor::scalar(state.kernel.log_lengthscale)), leaf(Tensor::scalar(state.kernel.log_noise))}};
    for (const Tensor& l : state.chol) v.chol.push_back(leaf(l));
    return v;
}

inline Tensor kernel_matrix(const KernelParams& params, const Tensor& a, const Tensor& b, bool same_inputs) {
    Graph g;
    return kernel_matrix(constant_kernel(g, params), g.constant(a), g.constant(b), same_inputs).value();
}

inline LatentMarginals latent_marginals(const GPLayerState& state, const Tensor& features) {
    Graph g;
    const auto gp = bind_gp(g, state, false);
    const auto lm = latent_marginals(gp, g.constant(features));
    return {lm.mean.value(), lm.variance.value()};
}

inline double kl_to_prior(const GPLayerState& state) {
    Graph g;
    return kl_to_prior(bind_gp(g, state, false)).value().item();
}

/// Median of all pairwise row distances (i < j).
inline double median_pairwise_distance(const Tensor& x) {
    detail::require_rank(x, 2, "median_pairwise_distance");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (n < 2) throw ContractError("median_pairwise_distance: need at least two rows");
    std::vector<double> dist;
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x[i * d + k] - x[j * d + k];
                acc += diff * diff;
            }
            dist.push_back(std::sqrt(acc));
        }
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    double median = dist[mid];
    if (dist.size() % 2 == 0) {
        const double below = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
        median = 0.5 * (median + below);
    }
    return median;
}

/// Fresh head: Z = M distinct sample rows, m_c = 0, L_c = I, ℓ = median
/// pairwise distance, σ_f² = 1, σ_n² = 1e-3.
inline GPLayerState init_gp_head(const Tensor& features, std::size_t num_inducing, KernelKind kind,
                                 std::size_t classes, std::uint64_t seed) {
    detail::require_rank(features, 2, "init_gp_head");
    const std::size_t n = features.dim(0);
    if (num_inducing == 0) throw ContractError("init_gp_head: need at least one inducing point");
    if (n < num_inducing) {
        throw ContractError("init_gp_head: " + std::to_string(n) + " feature rows for " +
                            std::to_string(num_inducing) + " inducing points");
    }
    Rng rng(seed);
    const auto rows = rng.sample_without_replacement(n, num_inducing);
    GPLayerState state;
    state.inducing = gather_rows(features, rows);
    state.mean = Tensor::zeros(Shape{num_inducing, classes});
    state.chol.assign(classes, Tensor::identity(num_inducing));
    state.kernel.kind = kind;
    state.kernel.log_variance = 0.0;
    state.kernel.log_noise = std::log(1e-3);
    double lengthscale = n >= 2 ? median_pairwise_distance(features) : 1.0;
    if (!(lengthscale > 0.0)) lengthscale = 1.0;
    state.kernel.log_lengthscale = std::log(lengthscale);
    return state;
}

}  // namespace gpdnn
