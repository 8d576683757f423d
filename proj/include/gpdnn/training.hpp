#pragma once

// Losses, Adam and the minibatch training loop with validation-selected checkpoints.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gpdnn/csv.hpp"
#include "gpdnn/datasets.hpp"
#include "gpdnn/metrics.hpp"
#include "gpdnn/model.hpp"

namespace gpdnn {

struct TrainConfig {
    std::size_t batch_size = 250;
    std::size_t iterations = 6000;
    double learning_rate = 1e-3;
    std::optional<double> gp_learning_rate;  // GP head and β; defaults to learning_rate
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    std::size_t val_interval = 500;
    std::size_t dataset_size = 0;  // N in the ELBO scaling; 0 → size of the training set
    // Optional B → C head switch.
    std::optional<std::size_t> switch_iteration;
    std::size_t switch_inducing = 100;
    KernelKind switch_kernel = KernelKind::Rbf;
    std::size_t switch_sample = 1000;

    void validate(std::size_t n) const {
        if (batch_size == 0) throw ContractError("train: batch size must be positive");
        if (batch_size > n) {
            throw ContractError("train: batch size " + std::to_string(batch_size) + " exceeds " + std::to_string(n) +
                                " training items");
        }
        if (!(learning_rate > 0.0)) throw ContractError("train: learning rate must be positive");
        if (gp_learning_rate && !(*gp_learning_rate > 0.0)) throw ContractError("train: GP learning rate must be positive");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
            throw ContractError("train: invalid Adam constants");
        }
    }
};

/// Training objective on a batch, as a graph node.
///   A/B: mean cross-entropy.  C: −[(N/B) Σ_batch E_q log p(y|f) − KL].
inline Var training_loss(const BoundModel& b, Var x, std::span<const std::size_t> y, std::size_t dataset_size,
                         Mode mode = Mode::Train, Rng* rng = nullptr) {
    const std::size_t batch = x.shape().at(0);
    if (batch == 0) throw ContractError("loss: empty batch");
    if (y.size() != batch) throw ShapeError("loss: one label per example required");
    const ForwardOutputs out = forward(b, x, mode, rng);
    const std::vector<std::size_t> labels(y.begin(), y.end());
    if (!b.model->spec.has_gp_head()) return neg(mean(pick(out.log_probs, labels)));
    const std::size_t n = dataset_size == 0 ? batch : dataset_size;
    // The data term uses the raw quadrature P: its rows sum to one only up to quadrature error.
    Var data = sum(variational_expectation(*out.argmax_p, y, *out.beta));
    Var elbo = sub(scale(data, static_cast<double>(n) / static_cast<double>(batch)), kl_to_prior(gp_vars(b)));
    return neg(elbo);
}

/// Eval-mode loss value for a batch.
inline double loss(const Model& model, const Tensor& x, std::span<const std::size_t> y, std::size_t dataset_size = 0) {
    Graph g;
    const BoundModel b = bind(g, model, false);
    return training_loss(b, g.constant(x), y, dataset_size, Mode::Eval).value().item();
}

struct AdamState {
    std::vector<Tensor> m, v;
    std::size_t t = 0;
};

/// Bias-corrected Adam, one learning rate per parameter tensor.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
                      std::span<const double> learning_rates, double beta1 = 0.9, double beta2 = 0.999,
                      double epsilon = 1e-8) {
    if (grads.size() != params.size() || learning_rates.size() != params.size()) {
        throw ShapeError("adam_step: parameter, gradient and rate counts differ");
    }
    if (state.m.empty()) {
        for (const Tensor& p : params) {
            state.m.emplace_back(p.shape());
            state.v.emplace_back(p.shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                             shape_string(params[i].shape()) + " vs gradient " + shape_string(grads[i].shape()));
        }
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].mutable_ptr();
        double* m = state.m[i].mutable_ptr();
        double* v = state.v[i].mutable_ptr();
        const double* g = grads[i].ptr();
        const double lr = learning_rates[i];
        for (std::size_t k = 0; k < params[i].size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon);
        }
    }
}

inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
    const std::vector<double> rates(params.size(), lr);
    adam_step(params, grads, state, rates, beta1, beta2, epsilon);
}

struct TraceRow {
    std::size_t iter = 0;
    double loss = 0.0;
    double val_error = NAN;
    double val_ll = NAN;
};

struct TrainResult {
    Model model;  // lowest validation error (final model without validation data)
    std::vector<TraceRow> trace;
    std::size_t best_iteration = 0;
};

inline CsvTable trace_table(const std::vector<TraceRow>& trace) {
    CsvTable t({"iter", "loss", "val_error", "val_ll"});
    for (const auto& r : trace) t.add(r.iter, r.loss, r.val_error, r.val_ll);
    return t;
}

namespace detail {

inline std::vector<double> learning_rates(const Model& model, const TrainConfig& cfg) {
    std::vector<double> rates;
    for (const auto& p : model.params) {
        const bool head = p.name.rfind("gp.", 0) == 0 || p.name.rfind("robustmax.", 0) == 0;
        rates.push_back(head ? cfg.gp_learning_rate.value_or(cfg.learning_rate) : cfg.learning_rate);
    }
    return rates;
}

class BatchSampler {
public:
    BatchSampler(std::size_t n, std::size_t batch, Rng& rng) : n_(n), batch_(batch), rng_(rng) {}

    std::vector<std::size_t> next() {
        std::vector<std::size_t> rows;
        rows.reserve(batch_);
        while (rows.size() < batch_) {
            if (pos_ == order_.size()) {
                order_ = rng_.permutation(n_);
                pos_ = 0;
            }
            rows.push_back(order_[pos_++]);
        }
        return rows;
    }

private:
    std::size_t n_, batch_;
    Rng& rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Minibatch Adam on `data`. Every `val_interval` iterations (and at 0 and at
/// the end) the model is scored on `validation`; the best-scoring snapshot is returned.
inline TrainResult train(Model model, const Dataset& data, const Dataset* validation, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
    cfg.validate(data.size());
    const std::size_t n = cfg.dataset_size == 0 ? data.size() : cfg.dataset_size;
    Rng rng(cfg.seed);
    detail::BatchSampler sampler(data.size(), cfg.batch_size, rng);
    AdamState adam;
    std::vector<double> rates = detail::learning_rates(model, cfg);

    TrainResult result{model, {}, 0};
    std::optional<EvalReport> best;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    auto record = [&](std::size_t iter, double batch_loss) {
        TraceRow row{iter, batch_loss, NAN, NAN};
        if (validation) {
            const EvalReport r = evaluate(model, *validation);
            row.val_error = r.error;
            row.val_ll = r.ll;
            if (!best || r.error < best->error || (r.error == best->error && r.ll > best->ll)) {
                best = r;
                result.model = model;
                result.best_iteration = iter;
            }
        } else {
            result.model = model;
            result.best_iteration = iter;
        }
        result.trace.push_back(row);
        if (log) {
            *log << "iter " << iter << " loss " << format_number(row.loss) << " val_error " << format_number(row.val_error)
                 << " val_ll " << format_number(row.val_ll) << '\n';
        }
    };

    {
        // Initial row: eval-mode loss on the first training items, no random state consumed.
        std::vector<std::size_t> first(cfg.batch_size);
        for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
        const Dataset head = data.subset(first);
        double initial = 0.0;
        try {
            initial = loss(model, head.images, head.labels, n);
        } catch (const NumericError& e) {
            throw NumericError("training diverged at iteration 0: " + std::string(e.what()));
        }
        record(0, initial);
    }

    for (std::size_t iter = 1; iter <= cfg.iterations; ++iter) {
        if (cfg.switch_iteration && iter == *cfg.switch_iteration + 1 && model.spec.arch == Architecture::B) {
            const Dataset sample = data.head(cfg.switch_sample);
            model = switch_head(model, cfg.switch_inducing, cfg.switch_kernel, sample.images, cfg.seed);
            adam = AdamState{};
            rates = detail::learning_rates(model, cfg);
            best.reset();
            if (log) *log << "switched to " << model.spec.name << " after iteration " << iter - 1 << '\n';
        }
        const std::vector<std::size_t> rows = sampler.next();
        const Tensor x = gather_rows(data.images, rows);
        std::vector<std::size_t> y;
        y.reserve(rows.size());
        for (std::size_t r : rows) y.push_back(data.labels[r]);

        std::vector<Tensor> grads;
        double value = 0.0;
        try {
            Graph g;
            const BoundModel b = bind(g, model, true);
            Var l = training_loss(b, g.constant(x), y, n, Mode::Train, &rng);
            value = l.value().item();
            g.backward(l);
            for (Var v : b.vars) grads.push_back(g.grad(v));
        } catch (const NumericError& e) {
            throw NumericError("training diverged at iteration " + std::to_string(iter) + ": " + e.what());
        }
        for (const Tensor& gt : grads) {
            if (!gt.all_finite()) throw NumericError("training diverged at iteration " + std::to_string(iter) + ": non-finite gradient");
        }
        std::vector<Tensor> params;
        params.reserve(model.params.size());
        for (auto& p : model.params) params.push_back(std::move(p.value));
        adam_step(params, grads, adam, rates, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
        for (std::size_t i = 0; i < params.size(); ++i) model.params[i].value = std::move(params[i]);
        if (!std::isfinite(value)) throw NumericError("training diverged at iteration " + std::to_string(iter) + ": loss is not finite");

        loss_sum += value;
        ++loss_count;
        if ((cfg.val_interval > 0 && iter % cfg.val_interval == 0) || iter == cfg.iterations) {
            record(iter, loss_sum / static_cast<double>(loss_count));
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    return result;
}

}  // namespace gpdnn
