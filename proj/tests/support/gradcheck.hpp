#pragma once

// Central-difference gradient checks for graph functions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gpdnn/random.hpp"

namespace gradcheck {

using gpdnn::Graph;
using gpdnn::Tensor;
using gpdnn::Var;

/// Builds a scalar from graph variables bound to the given inputs.
using Fn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct Result {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

inline double relative_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

/// Reduces a non-scalar output to a scalar with fixed random weights so every
/// output entry contributes to the checked gradient.
inline Var weighted_sum(Var y, std::uint64_t seed = 99) {
    gpdnn::Rng rng(seed);
    Tensor w(y.shape());
    for (double& v : w.mutable_data()) v = rng.uniform(0.5, 1.5);
    return gpdnn::sum(gpdnn::mul(y, y.graph().constant(std::move(w))));
}

inline double evaluate(const Fn& fn, const std::vector<Tensor>& inputs) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.constant(t));
    Var y = fn(g, vars);
    return y.value().size() == 1 ? y.value()[0] : weighted_sum(y).value().item();
}

/// Compares analytic and central-difference gradients for up to `max_entries`
/// entries per input (all entries when the input is small).
inline Result check(const Fn& fn, const std::vector<Tensor>& inputs, double h = 1e-5, std::size_t max_entries = 40,
                    std::uint64_t seed = 7) {
    std::vector<Tensor> analytic;
    {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(g.variable(t));
        Var y = fn(g, vars);
        if (y.value().size() != 1) y = weighted_sum(y);
        else if (y.value().rank() != 0) y = gpdnn::sum(y);
        g.backward(y);
        for (Var v : vars) analytic.push_back(g.grad(v));
    }
    Result res;
    gpdnn::Rng rng(seed);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t n = inputs[i].size();
        std::vector<std::size_t> entries;
        if (n <= max_entries) {
            for (std::size_t k = 0; k < n; ++k) entries.push_back(k);
        } else {
            entries = rng.sample_without_replacement(n, max_entries);
        }
        for (std::size_t k : entries) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[i] = inputs[i].clone();
            minus[i] = inputs[i].clone();
            plus[i].mutable_data()[k] += h;
            minus[i].mutable_data()[k] -= h;
            const double numeric = (evaluate(fn, plus) - evaluate(fn, minus)) / (2.0 * h);
            const double err = relative_error(analytic[i][k], numeric);
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                std::ostringstream os;
                os << "input " << i << " entry " << k << ": analytic " << analytic[i][k] << " numeric " << numeric;
                res.worst = os.str();
            }
        }
    }
    return res;
}

}  // namespace gradcheck

namespace gradcheck {

inline Tensor random_tensor(gpdnn::Shape shape, gpdnn::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace gradcheck
