#pragma once

// Robustmax likelihood: probability 1−β for the class whose latent is the
// largest and β/(C−1) for every other class. Expectations under Gaussian
// latent marginals reduce to one-dimensional Gauss-Hermite quadrature.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpdnn/error.hpp"
#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

/// Physicists' Gauss-Hermite rule: ∫ f(x) e^{−x²} dx ≈ Σ w_h f(g_h).
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const noexcept { return nodes.size(); }
};

inline constexpr std::size_t kDefaultQuadratureNodes = 20;

/// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix with
/// off-diagonal √(k/2); weights are √π times the squared first eigenvector components.
inline QuadratureRule gauss_hermite(std::size_t points) {
    if (points < 1 || points > 100) {
        throw ContractError("gauss_hermite: number of nodes must be in [1, 100], got " + std::to_string(points));
    }
    const auto n = static_cast<Eigen::Index>(points);
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 1; k < n; ++k) {
        const double off = std::sqrt(static_cast<double>(k) / 2.0);
        jacobi(k, k - 1) = off;
        jacobi(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    const double sqrt_pi = std::sqrt(std::numbers::pi);
    QuadratureRule rule;
    rule.nodes.resize(points);
    rule.weights.resize(points);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double v0 = solver.eigenvectors()(0, k);
        rule.nodes[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
        rule.weights[static_cast<std::size_t>(k)] = sqrt_pi * v0 * v0;
    }
    // Exact symmetry about zero.
    for (std::size_t k = 0; k < points / 2; ++k) {
        const std::size_t j = points - 1 - k;
        const double node = 0.5 * (rule.nodes[j] - rule.nodes[k]);
        const double weight = 0.5 * (rule.weights[j] + rule.weights[k]);
        rule.nodes[k] = -node;
        rule.nodes[j] = node;
        rule.weights[k] = rule.weights[j] = weight;
    }
    if (points % 2 == 1) rule.nodes[points / 2] = 0.0;
    return rule;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

/// Robustmax β, either fixed or learnt through a logistic map onto (0, 0.5).
struct RobustmaxParams {
    double beta = 1e-3;
    bool learnable = false;
    std::size_t classes = 10;

    static double logit_for(double beta) { return std::log(2.0 * beta / (1.0 - 2.0 * beta)); }
    static double beta_from_logit(double logit) { return 0.5 * stable_sigmoid(logit); }

    void validate() const {
        if (!(beta > 0.0 && beta < 0.5)) throw ContractError("robustmax: beta must lie in (0, 0.5)");
        if (classes < 2) throw ContractError("robustmax: need at least two classes");
    }
};

/// β as a graph node: a constant, or 0.5·sigmoid(logit) when learnt.
inline Var robustmax_beta(Graph& g, const RobustmaxParams& params, std::optional<Var> logit = std::nullopt) {
    if (logit) return scale(sigmoid(*logit), 0.5);
    return g.constant(Tensor::scalar(params.beta));
}

namespace detail {

inline void check_marginals(const Tensor& mean, const Tensor& var, const char* op) {
    require_rank(mean, 2, op);
    if (mean.shape() != var.shape()) throw ShapeError(std::string(op) + ": mean/variance shapes differ");
    for (double v : var.data()) {
        if (!(v > 0.0)) throw NumericError(std::string(op) + ": non-positive latent variance " + std::to_string(v));
    }
}

}  // namespace detail

/// P(argmax f = c) for independent Gaussian latents f_c ~ N(μ_c, v_c):
///   P_c = π^{-1/2} Σ_h w_h Π_{j≠c} Φ((μ_c + √2 σ_c g_h − μ_j) / σ_j).
inline Var argmax_probs(Var mean, Var variance, const QuadratureRule& quad) {
    const Tensor mu = mean.value();
    const Tensor var = variance.value();
    detail::check_marginals(mu, var, "argmax_probs");
    const std::size_t rows = mu.dim(0), classes = mu.dim(1), points = quad.size();
    const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
    const double sqrt2 = std::numbers::sqrt2;

    Tensor out(mu.shape());
    double* o = out.mutable_ptr();
    std::vector<double> sigma(classes);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* m = mu.ptr() + r * classes;
        for (std::size_t j = 0; j < classes; ++j) sigma[j] = std::sqrt(var[r * classes + j]);
        for (std::size_t c = 0; c < classes; ++c) {
            double acc = 0.0;
            for (std::size_t h = 0; h < points; ++h) {
                const double t = m[c] + sqrt2 * sigma[c] * quad.nodes[h];
                double prod = 1.0;
                for (std::size_t j = 0; j < classes; ++j) {
                    if (j != c) prod *= normal_cdf((t - m[j]) / sigma[j]);
                }
                acc += quad.weights[h] * prod;
            }
            o[r * classes + c] = inv_sqrt_pi * acc;
        }
    }

    return mean.graph().record("argmax_probs", std::move(out), {mean, variance}, [mu, var, quad](const Tensor& g, GradSink& s) {
        const std::size_t rows = mu.dim(0), classes = mu.dim(1), points = quad.size();
        const double inv_sqrt_pi = 1.0 / std::sqrt(std::numbers::pi);
        const double sqrt2 = std::numbers::sqrt2;
        Tensor gmu(mu.shape()), gvar(var.shape());
        double* gm = gmu.mutable_ptr();
        double* gv = gvar.mutable_ptr();
        std::vector<double> sigma(classes), z(classes), cdf(classes), prefix(classes + 1), suffix(classes + 1);
        std::vector<double> gsigma(classes);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* m = mu.ptr() + r * classes;
            for (std::size_t j = 0; j < classes; ++j) sigma[j] = std::sqrt(var[r * classes + j]);
            std::fill(gsigma.begin(), gsigma.end(), 0.0);
            for (std::size_t c = 0; c < classes; ++c) {
                const double upstream = g[r * classes + c];
                if (upstream == 0.0) continue;
                for (std::size_t h = 0; h < points; ++h) {
                    const double t = m[c] + sqrt2 * sigma[c] * quad.nodes[h];
                    for (std::size_t j = 0; j < classes; ++j) {
                        z[j] = (t - m[j]) / sigma[j];
                        cdf[j] = j == c ? 1.0 : normal_cdf(z[j]);
                    }
                    prefix[0] = 1.0;
                    for (std::size_t j = 0; j < classes; ++j) prefix[j + 1] = prefix[j] * cdf[j];
                    suffix[classes] = 1.0;
                    for (std::size_t j = classes; j-- > 0;) suffix[j] = suffix[j + 1] * cdf[j];
                    const double scale = upstream * inv_sqrt_pi * quad.weights[h];
                    for (std::size_t j = 0; j < classes; ++j) {
                        if (j == c) continue;
                        // ∂P_c/∂z_j for this node
                        const double dz = scale * normal_pdf(z[j]) * prefix[j] * suffix[j + 1];
                        if (dz == 0.0) continue;
                        gm[r * classes + c] += dz / sigma[j];
                        gm[r * classes + j] -= dz / sigma[j];
                        gsigma[c] += dz * sqrt2 * quad.nodes[h] / sigma[j];
                        gsigma[j] -= dz * z[j] / sigma[j];
                    }
                }
            }
            for (std::size_t j = 0; j < classes; ++j) gv[r * classes + j] = gsigma[j] / (2.0 * sigma[j]);
        }
        s.add(0, std::move(gmu));
        s.add(1, std::move(gvar));
    });
}

/// Rows of `probs` scaled to sum to one.
inline Var normalize_rows(Var probs) {
    const std::size_t rows = probs.shape().at(0);
    return div(probs, reshape(sum(probs, 1), Shape{rows, 1}));
}

/// p(y = c) = (1−β) P_c + β/(C−1) (1 − P_c). Rows of P must sum to one within 1e-6.
inline Var predictive_probs(Var argmax_p, Var beta) {
    const Tensor& p = argmax_p.value();
    detail::require_rank(p, 2, "predictive_probs");
    const std::size_t rows = p.dim(0), classes = p.dim(1);
    if (classes < 2) throw ContractError("predictive_probs: need at least two classes");
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) total += p[r * classes + c];
        if (std::abs(total - 1.0) > 1e-6) {
            throw NumericError("predictive_probs: row " + std::to_string(r) + " of argmax probabilities sums to " +
                               std::to_string(total));
        }
    }
    Var off = scale(beta, 1.0 / static_cast<double>(classes - 1));        // β/(C−1)
    Var win = add_scalar(neg(beta), 1.0);                                   // 1−β
    Var complement = add_scalar(neg(argmax_p), 1.0);
    return add(mul(argmax_p, win), mul(complement, off));
}

/// E_q[log p(y | f)] = P_y log(1−β) + (1 − P_y) log(β/(C−1)) per row.
inline Var variational_expectation(Var argmax_p, std::span<const std::size_t> labels, Var beta) {
    const Tensor& p = argmax_p.value();
    detail::require_rank(p, 2, "variational_expectation");
    const std::size_t classes = p.dim(1);
    if (labels.size() != p.dim(0)) throw ShapeError("variational_expectation: one label per row required");
    for (std::size_t y : labels) {
        if (y >= classes) throw ContractError("variational_expectation: label " + std::to_string(y) + " out of range");
    }
    Var py = pick(argmax_p, std::vector<std::size_t>(labels.begin(), labels.end()));
    Var log_win = log(add_scalar(neg(beta), 1.0));
    Var log_off = add_scalar(log(beta), -std::log(static_cast<double>(classes - 1)));
    return add(mul(py, log_win), mul(add_scalar(neg(py), 1.0), log_off));
}

// Tensor-level wrappers

inline Tensor argmax_probs(const Tensor& mean, const Tensor& variance, const QuadratureRule& quad) {
    Graph g;
    return argmax_probs(g.constant(mean), g.constant(variance), quad).value();
}

inline Tensor predictive_probs(const Tensor& argmax_p, const RobustmaxParams& params) {
    params.validate();
    Graph g;
    return predictive_probs(g.constant(argmax_p), robustmax_beta(g, params)).value();
}

inline Tensor variational_expectation(const Tensor& mean, const Tensor& variance, std::span<const std::size_t> labels,
                                      const RobustmaxParams& params, const QuadratureRule& quad) {
    params.validate();
    Graph g;
    Var p = argmax_probs(g.constant(mean), g.constant(variance), quad);
    return variational_expectation(p, labels, robustmax_beta(g, params)).value();
}

}  // namespace gpdnn
