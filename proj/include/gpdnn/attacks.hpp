#pragma once

// Non-targeted adversarial attacks: FGSM and Carlini-Wagner L2 with
// robustmax pseudo-logits (log class probabilities).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gpdnn/csv.hpp"
#include "gpdnn/metrics.hpp"
#include "gpdnn/model.hpp"

namespace gpdnn {

struct FGSMConfig {
    double epsilon = 0.1;
    double lo = -1.0, hi = 1.0;

    void validate() const {
        if (!(lo < hi)) throw ContractError("fgsm: data bounds must satisfy lo < hi");
        if (!std::isfinite(epsilon)) throw ContractError("fgsm: epsilon must be finite");
    }
};

struct CWConfig {
    std::size_t search_steps = 9;
    double initial_const = 1e-3;
    std::size_t iterations = 1000;
    double learning_rate = 1e-2;
    double confidence = 0.0;
    double lo = -1.0, hi = 1.0;
    double const_growth = 10.0;  // factor applied to c while no upper bracket exists
    bool abort_early = true;
    std::size_t threads = 1;
    std::size_t block = 25;  // images optimised together

    void validate() const {
        if (!(lo < hi)) throw ContractError("cw: data bounds must satisfy lo < hi");
        if (search_steps == 0 || iterations == 0) throw ContractError("cw: search steps and iterations must be positive");
        if (!(initial_const > 0.0 && learning_rate > 0.0 && const_growth > 1.0 && confidence >= 0.0)) {
            throw ContractError("cw: constants must be positive");
        }
    }
};

struct AttackResult {
    Tensor adversarial;  // single image, shape of one input
    bool success = false;
    double l2 = 0.0;  // ‖x' − x‖₂, +∞ for a failed CW attack
    std::size_t true_label = 0;
    std::size_t clean_pred = 0;
    std::size_t adv_pred = 0;
    std::vector<double> clean_probs;
    std::vector<double> adv_probs;
};

inline CsvTable attack_table(const std::vector<AttackResult>& results) {
    CsvTable t({"index", "true_label", "clean_pred", "adv_pred", "success", "l2_dist"});
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        t.add(i, r.true_label, r.clean_pred, r.adv_pred, r.success, r.l2);
    }
    return t;
}

/// ∇ₓ Σᵢ −log p(yᵢ | xᵢ), evaluated in eval mode.
inline Tensor input_gradient(const Model& model, const Tensor& x, std::span<const std::size_t> y) {
    Graph g;
    const BoundModel b = bind(g, model, false);
    Var xv = g.variable(x);
    const ForwardOutputs out = forward(b, xv);
    Var nll = neg(sum(pick(out.log_probs, std::vector<std::size_t>(y.begin(), y.end()))));
    g.backward(nll);
    Tensor grad = g.grad(xv);
    if (!grad.all_finite()) throw NumericError("fgsm: input gradient is not finite");
    return grad;
}

/// x' = clip(x + ε·sign(∇ₓ NLL), lo, hi) for a batch, block by block.
inline Tensor fgsm_images(const Model& model, const Tensor& x, std::span<const std::size_t> y, const FGSMConfig& cfg,
                          std::size_t batch = 250) {
    cfg.validate();
    if (y.size() != x.dim(0)) throw ShapeError("fgsm: one label per image required");
    Tensor out = x.clone();
    if (cfg.epsilon == 0.0) return out;
    double* o = out.mutable_ptr();
    const std::size_t per = x.dim(0) ? x.size() / x.dim(0) : 0;
    for_each_block(x.dim(0), batch, [&](std::size_t begin, std::size_t end) {
        const Tensor grad = input_gradient(model, slice_rows(x, begin, end), y.subspan(begin, end - begin));
        for (std::size_t k = 0; k < grad.size(); ++k) {
            const double g = grad[k];
            const double step = g > 0.0 ? cfg.epsilon : g < 0.0 ? -cfg.epsilon : 0.0;
            double& v = o[begin * per + k];
            v = std::clamp(v + step, cfg.lo, cfg.hi);
        }
    });
    return out;
}

namespace detail {

inline std::vector<double> row_probs(const Tensor& log_probs, std::size_t r) {
    const std::size_t c = log_probs.dim(1);
    std::vector<double> p(c);
    for (std::size_t k = 0; k < c; ++k) p[k] = std::exp(log_probs[r * c + k]);
    return p;
}

inline Shape image_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

inline double l2_distance(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

template <class F>
void parallel_blocks(std::size_t blocks, std::size_t threads, F fn) {
    threads = std::max<std::size_t>(1, std::min(threads, blocks));
    if (threads == 1) {
        for (std::size_t k = 0; k < blocks; ++k) fn(k);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t k = t; k < blocks; k += threads) fn(k);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline std::vector<AttackResult> fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> y,
                                      const FGSMConfig& cfg) {
    const Tensor adv = fgsm_images(model, x, y, cfg);
    const Tensor clean_lp = predict_log_probs(model, x);
    const Tensor adv_lp = predict_log_probs(model, adv);
    const auto clean_pred = argmax_rows(clean_lp);
    const auto adv_pred = argmax_rows(adv_lp);
    const std::size_t per = x.size() / std::max<std::size_t>(1, x.dim(0));
    std::vector<AttackResult> out;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        AttackResult r;
        r.adversarial = Tensor(detail::image_shape(x), std::vector<double>(adv.ptr() + i * per, adv.ptr() + (i + 1) * per));
        r.true_label = y[i];
        r.clean_pred = clean_pred[i];
        r.adv_pred = adv_pred[i];
        r.success = adv_pred[i] != y[i];
        r.l2 = detail::l2_distance(adv.ptr() + i * per, x.ptr() + i * per, per);
        r.clean_probs = detail::row_probs(clean_lp, i);
        r.adv_probs = detail::row_probs(adv_lp, i);
        out.push_back(std::move(r));
    }
    return out;
}

/// Pseudo-logits of a probability vector: Z_i = log p_i.
inline Tensor pseudo_logits(const Tensor& probs) {
    Tensor z(probs.shape());
    double* o = z.mutable_ptr();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] > 0.0)) throw NumericError("pseudo_logits: class probability " + std::to_string(i) + " is not positive");
        o[i] = std::log(probs[i]);
    }
    return z;
}

/// CW margin f = Z_y − max_{i≠y} Z_i on pseudo-logits, one value per row.
inline Var cw_margin(Var log_probs, std::span<const std::size_t> y) {
    const std::size_t rows = log_probs.shape().at(0), classes = log_probs.shape().at(1);
    Tensor mask(Shape{rows, classes});
    double* m = mask.mutable_ptr();
    for (std::size_t r = 0; r < rows; ++r) m[r * classes + y[r]] = -1e30;
    Graph& g = log_probs.graph();
    Var others = max(add(log_probs, g.constant(std::move(mask))), 1);
    return sub(pick(log_probs, std::vector<std::size_t>(y.begin(), y.end())), others);
}

namespace detail {

struct CwImageState {
    double c = 0.0, lower = 0.0, upper = 1e10;
    double best_l2 = std::numeric_limits<double>::infinity();
    std::vector<double> best;
};

/// One CW block: all search rounds for images [begin, end).
inline void cw_block(const Model& model, const Tensor& x, std::span<const std::size_t> y, const CWConfig& cfg,
                     std::vector<CwImageState>& states) {
    const std::size_t n = x.dim(0);
    const std::size_t per = x.size() / n;
    const double half = 0.5 * (cfg.hi - cfg.lo);
    const std::vector<std::size_t> labels(y.begin(), y.end());

    Tensor w0(x.shape());
    {
        double* w = w0.mutable_ptr();
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double u = std::clamp((x[k] - cfg.lo) / half - 1.0, -1.0, 1.0) * 0.999999;
            w[k] = std::atanh(u);
        }
    }

    for (std::size_t step = 0; step < cfg.search_steps; ++step) {
        Tensor w = w0.clone();
        Tensor m1(x.shape()), m2(x.shape());
        std::vector<bool> active(n, true), succeeded(n, false);
        std::vector<double> prev(n, std::numeric_limits<double>::infinity());
        std::size_t t = 0;
        const std::size_t check_every = std::max<std::size_t>(1, cfg.iterations / 10);
        bool crashed = false;

        Tensor cvals(Shape{n});
        for (std::size_t i = 0; i < n; ++i) cvals.mutable_data()[i] = states[i].c;

        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
            Tensor grad;
            Tensor adv_now, margin_now, lp_now, dist_now, total_now;
            try {
                Graph g;
                const BoundModel b = bind(g, model, false);
                Var wv = g.variable(w);
                Var adv = add_scalar(scale(add_scalar(tanh(wv), 1.0), half), cfg.lo);
                Var diff = sub(adv, g.constant(x));
                Var dist = sum(reshape(square(diff), Shape{n, per}), 1);
                Var lp = forward(b, adv).log_probs;
                Var f = cw_margin(lp, labels);
                Var hinge = add_scalar(relu(add_scalar(f, cfg.confidence)), -cfg.confidence);
                Var per_image = add(dist, mul(g.constant(cvals), hinge));
                g.backward(sum(per_image));
                grad = g.grad(wv);
                adv_now = adv.value();
                margin_now = f.value();
                lp_now = lp.value();
                dist_now = dist.value();
                total_now = per_image.value();
            } catch (const NumericError&) {
                crashed = true;
                break;
            }
            if (!grad.all_finite()) {
                crashed = true;
                break;
            }
            const auto pred = argmax_rows(lp_now);
            for (std::size_t i = 0; i < n; ++i) {
                if (!active[i]) continue;
                if (pred[i] != labels[i] && margin_now[i] <= -cfg.confidence) {
                    succeeded[i] = true;
                    const double l2 = std::sqrt(dist_now[i]);
                    if (l2 < states[i].best_l2) {
                        states[i].best_l2 = l2;
                        states[i].best.assign(adv_now.ptr() + i * per, adv_now.ptr() + (i + 1) * per);
                    }
                }
                if (cfg.abort_early && it % check_every == 0) {
                    if (total_now[i] > prev[i] * 0.9999) {
                        active[i] = false;
                        continue;
                    }
                    prev[i] = total_now[i];
                }
            }
            ++t;
            const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(0.999, static_cast<double>(t));
            double* wp = w.mutable_ptr();
            double* a = m1.mutable_ptr();
            double* v = m2.mutable_ptr();
            for (std::size_t i = 0; i < n; ++i) {
                if (!active[i]) continue;
                for (std::size_t k = i * per; k < (i + 1) * per; ++k) {
                    a[k] = 0.9 * a[k] + 0.1 * grad[k];
                    v[k] = 0.999 * v[k] + 0.001 * grad[k] * grad[k];
                    wp[k] -= cfg.learning_rate * (a[k] / c1) / (std::sqrt(v[k] / c2) + 1e-8);
                }
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            CwImageState& s = states[i];
            if (succeeded[i] && !crashed) {
                s.upper = std::min(s.upper, s.c);
                if (s.upper < 1e9) s.c = 0.5 * (s.lower + s.upper);
            } else {
                s.lower = std::max(s.lower, s.c);
                s.c = s.upper < 1e9 ? 0.5 * (s.lower + s.upper) : s.c * cfg.const_growth;
            }
        }
    }
}

}  // namespace detail

/// Carlini-Wagner L2 in tanh space with a per-image binary search over c.
/// Every image must be classified correctly before the attack.
inline std::vector<AttackResult> cw_l2(const Model& model, const Tensor& x, std::span<const std::size_t> y,
                                       const CWConfig& cfg) {
    cfg.validate();
    const std::size_t n = x.dim(0);
    if (y.size() != n) throw ShapeError("cw: one label per image required");
    if (n == 0) return {};
    const std::size_t per = x.size() / n;
    for (double v : x.data()) {
        if (v < cfg.lo || v > cfg.hi) throw ContractError("cw: input outside the data bounds");
    }
    const Tensor clean_lp = predict_log_probs(model, x);
    const auto clean_pred = argmax_rows(clean_lp);
    for (std::size_t i = 0; i < n; ++i) {
        if (clean_pred[i] != y[i]) {
            throw ContractError("cw: image " + std::to_string(i) + " is already misclassified (predicted " +
                                std::to_string(clean_pred[i]) + ", label " + std::to_string(y[i]) + ")");
        }
    }

    std::vector<detail::CwImageState> states(n);
    for (auto& s : states) s.c = cfg.initial_const;
    const std::size_t block = std::max<std::size_t>(1, cfg.block);
    const std::size_t blocks = (n + block - 1) / block;
    detail::parallel_blocks(blocks, cfg.threads, [&](std::size_t k) {
        const std::size_t begin = k * block, end = std::min(n, begin + block);
        std::vector<detail::CwImageState> local(states.begin() + static_cast<std::ptrdiff_t>(begin),
                                                states.begin() + static_cast<std::ptrdiff_t>(end));
        detail::cw_block(model, slice_rows(x, begin, end), y.subspan(begin, end - begin), cfg, local);
        std::copy(local.begin(), local.end(), states.begin() + static_cast<std::ptrdiff_t>(begin));
    });

    Tensor adv_batch = x.clone();
    double* ab = adv_batch.mutable_ptr();
    for (std::size_t i = 0; i < n; ++i) {
        if (!states[i].best.empty()) std::copy(states[i].best.begin(), states[i].best.end(), ab + i * per);
    }
    const Tensor adv_lp = predict_log_probs(model, adv_batch);
    const auto adv_pred = argmax_rows(adv_lp);

    std::vector<AttackResult> out;
    for (std::size_t i = 0; i < n; ++i) {
        AttackResult r;
        r.adversarial = Tensor(detail::image_shape(x), std::vector<double>(ab + i * per, ab + (i + 1) * per));
        r.true_label = y[i];
        r.clean_pred = clean_pred[i];
        r.clean_probs = detail::row_probs(clean_lp, i);
        r.success = !states[i].best.empty() && adv_pred[i] != y[i];
        if (r.success) {
            r.l2 = detail::l2_distance(ab + i * per, x.ptr() + i * per, per);
            r.adv_pred = adv_pred[i];
            r.adv_probs = detail::row_probs(adv_lp, i);
        } else {
            r.adversarial = Tensor(detail::image_shape(x), std::vector<double>(x.ptr() + i * per, x.ptr() + (i + 1) * per));
            r.l2 = std::numeric_limits<double>::infinity();
            r.adv_pred = clean_pred[i];
            r.adv_probs = r.clean_probs;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace gpdnn
