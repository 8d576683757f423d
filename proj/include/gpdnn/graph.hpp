#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gpdnn/error.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Receives input gradients from a node's backward rule.
class GradSink {
public:
    GradSink(Graph& graph, const std::vector<std::size_t>& inputs) : graph_(graph), inputs_(inputs) {}

    /// Whether input `k` of the op needs a gradient at all.
    bool wants(std::size_t k) const;
    /// Adds `grad` into the accumulated gradient of input `k`.
    void add(std::size_t k, Tensor grad);

private:
    Graph& graph_;
    const std::vector<std::size_t>& inputs_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Record-and-replay tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction; backward() walks it once in reverse. A graph is
/// meant for a single forward/backward pass and must not be shared between
/// threads.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that receives a gradient (parameters, attacked inputs).
    Var variable(Tensor value) { return push("variable", std::move(value), {}, nullptr, true); }

    /// Leaf that never receives a gradient.
    Var constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }

    /// Appends an op node. `value` is checked for NaN/Inf and the op named on failure.
    Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
        if (!value.all_finite()) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        bool needs = false;
        for (const Var& v : inputs) {
            if (&v.graph() != this) throw Error(std::string("op '") + op + "' mixes graphs");
            ids.push_back(v.id());
            needs = needs || nodes_[v.id()].requires_grad;
        }
        return push(op, std::move(value), std::move(ids), needs ? std::move(backward) : nullptr, needs);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse sweep from a scalar loss; gradients of every node upstream of it
    /// become available through grad().
    void backward(Var loss) {
        if (&loss.graph() != this) throw Error("backward: loss belongs to another graph");
        if (loss.value().size() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " +
                             shape_string(loss.value().shape()));
        }
        grads_.assign(nodes_.size(), std::nullopt);
        grads_[loss.id()] = Tensor(loss.value().shape(), 1.0);
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& node = nodes_[id];
            if (!node.backward || !grads_[id]) continue;
            GradSink sink(*this, node.inputs);
            node.backward(*grads_[id], sink);
        }
    }

    /// Gradient of the last backward() loss w.r.t. `v`; zeros if `v` does not influence it.
    Tensor grad(Var v) const {
        if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
        return Tensor::zeros(v.value().shape());
    }

private:
    friend class GradSink;

    struct Node {
        const char* op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad;
    };

    Var push(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
             bool requires_grad) {
        nodes_.push_back(Node{op, std::move(value), std::move(inputs), std::move(backward), requires_grad});
        return Var(this, nodes_.size() - 1);
    }

    void accumulate(std::size_t id, Tensor grad) {
        const Tensor& target = nodes_[id].value;
        if (grad.shape() != target.shape()) {
            throw ShapeError(std::string("backward of op feeding '") + nodes_[id].op +
                             "' produced gradient shape " + shape_string(grad.shape()) +
                             " for value shape " + shape_string(target.shape()));
        }
        auto& slot = grads_[id];
        if (!slot) {
            slot = std::move(grad);
            return;
        }
        auto acc = slot->mutable_data();
        const auto add = grad.data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

inline bool GradSink::wants(std::size_t k) const { return graph_.nodes_[inputs_.at(k)].requires_grad; }

inline void GradSink::add(std::size_t k, Tensor grad) {
    if (wants(k)) graph_.accumulate(inputs_.at(k), std::move(grad));
}

}  // namespace gpdnn
