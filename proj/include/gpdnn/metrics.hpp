#pragma once

// Error rate, mean log likelihood and mean predictive entropy.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gpdnn/csv.hpp"
#include "gpdnn/datasets.hpp"
#include "gpdnn/model.hpp"

namespace gpdnn {

struct EvalReport {
    std::string dataset;
    std::string model;
    std::size_t n = 0;
    double error = 0.0;
    double ll = 0.0;       // mean log p(y | x), nats
    double entropy = 0.0;  // mean −Σ p log p, nats
};

/// Row-wise argmax, ties to the lowest index.
inline std::vector<std::size_t> argmax_rows(const Tensor& scores) {
    detail::require_rank(scores, 2, "argmax_rows");
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c)
            if (scores[r * cols + c] > scores[r * cols + best]) best = c;
        out[r] = best;
    }
    return out;
}

inline EvalReport report_from_log_probs(const Tensor& log_probs, std::span<const std::size_t> labels, std::string dataset,
                                        std::string model) {
    detail::require_rank(log_probs, 2, "evaluate");
    const std::size_t n = log_probs.dim(0), classes = log_probs.dim(1);
    if (n == 0) throw ContractError("evaluate: empty evaluation set");
    if (labels.size() != n) throw ShapeError("evaluate: one label per row required");
    const auto pred = argmax_rows(log_probs);
    std::size_t wrong = 0;
    double ll = 0.0, ent = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= classes) throw ContractError("evaluate: label out of range");
        wrong += pred[r] != labels[r];
        ll += log_probs[r * classes + labels[r]];
        double h = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
            const double lp = log_probs[r * classes + c];
            if (lp > -INFINITY) h -= std::exp(lp) * lp;
        }
        ent += h;
    }
    const double dn = static_cast<double>(n);
    return {std::move(dataset), std::move(model), n, static_cast<double>(wrong) / dn, ll / dn, ent / dn};
}

inline EvalReport evaluate(const Model& model, const Tensor& xs, std::span<const std::size_t> ys,
                           const std::string& dataset = "data") {
    if (xs.dim(0) == 0) throw ContractError("evaluate: empty evaluation set");
    return report_from_log_probs(predict_log_probs(model, xs), ys, dataset, model.spec.name);
}

inline EvalReport evaluate(const Model& model, const Dataset& data) { return evaluate(model, data.images, data.labels, data.name); }

inline CsvTable eval_table() { return CsvTable({"dataset", "model", "n", "error", "ll", "entropy"}); }

inline void add_row(CsvTable& t, const EvalReport& r) { t.add(r.dataset, r.model, r.n, r.error, r.ll, r.entropy); }

}  // namespace gpdnn
