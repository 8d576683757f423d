#pragma once

// Differentiable tensor operations recorded on a Graph.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gpdnn/graph.hpp"
#include "gpdnn/tensor.hpp"

namespace gpdnn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_string(t.shape()));
    return ConstMatrixMap(t.ptr(), static_cast<Eigen::Index>(t.dim(0)),
                          static_cast<Eigen::Index>(t.dim(1)));
}

inline Tensor from_matrix(const RowMatrix& m) {
    Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    MatrixMap(t.mutable_ptr(), m.rows(), m.cols()) = m;
    return t;
}

namespace detail {

// Trailing-dimension broadcasting of two shapes, with the index of each
// operand for every output element.
struct Broadcast {
    Shape out;
    bool a_same = true, b_same = true;
    std::vector<std::size_t> a_map, b_map;

    std::size_t a(std::size_t i) const { return a_same ? i : a_map[i]; }
    std::size_t b(std::size_t i) const { return b_same ? i : b_map[i]; }
};

inline std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
    const std::size_t n = shape_size(out);
    std::vector<std::size_t> map(n, 0);
    if (shape_size(in) == 1) return map;
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        stride[k + offset] = in[k] == 1 ? 0 : s;
        s *= in[k];
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = pos;
        for (std::size_t k = rank; k-- > 0;) {
            ++idx[k];
            pos += stride[k];
            if (idx[k] < out[k]) break;
            pos -= stride[k] * idx[k];
            idx[k] = 0;
        }
    }
    return map;
}

inline std::shared_ptr<const Broadcast> broadcast(const Shape& a, const Shape& b, const char* op) {
    auto bc = std::make_shared<Broadcast>();
    const std::size_t rank = std::max(a.size(), b.size());
    bc->out.assign(rank, 1);
    for (std::size_t k = 0; k < rank; ++k) {
        const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
        const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " +
                             shape_string(b) + " do not broadcast");
        }
        bc->out[k] = da == 1 ? db : da;
    }
    bc->a_same = a == bc->out;
    bc->b_same = b == bc->out;
    if (!bc->a_same) bc->a_map = broadcast_map(bc->out, a);
    if (!bc->b_same) bc->b_map = broadcast_map(bc->out, b);
    return bc;
}

// Sums an output-shaped gradient back onto an operand through its index map.
inline Tensor reduce_to(const Tensor& grad, const Shape& shape, bool same,
                        const std::vector<std::size_t>& map) {
    if (same) return grad;
    Tensor out(shape);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < grad.size(); ++i) o[map[i]] += grad[i];
    return out;
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
    Tensor out(x.shape());
    auto o = out.mutable_data();
    const double* in = x.ptr();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
    return out;
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (trailing-dimension broadcasting)

inline Var add(Var a, Var b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "add");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor out(bc->out);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[bc->a(i)] + y[bc->b(i)];
    Shape sa = x.shape(), sb = y.shape();
    return a.graph().record("add", std::move(out), {a, b}, [bc, sa, sb](const Tensor& g, GradSink& s) {
        if (s.wants(0)) s.add(0, detail::reduce_to(g, sa, bc->a_same, bc->a_map));
        if (s.wants(1)) s.add(1, detail::reduce_to(g, sb, bc->b_same, bc->b_map));
    });
}

inline Var sub(Var a, Var b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "sub");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    Tensor out(bc->out);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[bc->a(i)] - y[bc->b(i)];
    Shape sa = x.shape(), sb = y.shape();
    return a.graph().record("sub", std::move(out), {a, b}, [bc, sa, sb](const Tensor& g, GradSink& s) {
        if (s.wants(0)) s.add(0, detail::reduce_to(g, sa, bc->a_same, bc->a_map));
        if (s.wants(1)) {
            Tensor neg = detail::map_unary(g, [](double v) { return -v; });
            s.add(1, detail::reduce_to(neg, sb, bc->b_same, bc->b_map));
        }
    });
}

inline Var mul(Var a, Var b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "mul");
    const Tensor x = a.value();
    const Tensor y = b.value();
    Tensor out(bc->out);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[bc->a(i)] * y[bc->b(i)];
    return a.graph().record("mul", std::move(out), {a, b}, [bc, x, y](const Tensor& g, GradSink& s) {
        if (s.wants(0)) {
            Tensor ga(bc->out);
            auto d = ga.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * y[bc->b(i)];
            s.add(0, detail::reduce_to(ga, x.shape(), bc->a_same, bc->a_map));
        }
        if (s.wants(1)) {
            Tensor gb(bc->out);
            auto d = gb.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * x[bc->a(i)];
            s.add(1, detail::reduce_to(gb, y.shape(), bc->b_same, bc->b_map));
        }
    });
}

inline Var div(Var a, Var b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "div");
    const Tensor x = a.value();
    const Tensor y = b.value();
    for (double v : y.data()) {
        if (v == 0.0) throw NumericError("div: division by zero");
    }
    Tensor out(bc->out);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[bc->a(i)] / y[bc->b(i)];
    return a.graph().record("div", std::move(out), {a, b}, [bc, x, y](const Tensor& g, GradSink& s) {
        if (s.wants(0)) {
            Tensor ga(bc->out);
            auto d = ga.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / y[bc->b(i)];
            s.add(0, detail::reduce_to(ga, x.shape(), bc->a_same, bc->a_map));
        }
        if (s.wants(1)) {
            Tensor gb(bc->out);
            auto d = gb.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double yb = y[bc->b(i)];
                d[i] = -g[i] * x[bc->a(i)] / (yb * yb);
            }
            s.add(1, detail::reduce_to(gb, y.shape(), bc->b_same, bc->b_map));
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

inline Var neg(Var a) {
    return a.graph().record("neg", detail::map_unary(a.value(), [](double v) { return -v; }), {a},
                            [](const Tensor& g, GradSink& s) {
                                s.add(0, detail::map_unary(g, [](double v) { return -v; }));
                            });
}

inline Var exp(Var a) {
    Tensor y = detail::map_unary(a.value(), [](double v) { return std::exp(v); });
    Tensor saved = y;
    return a.graph().record("exp", std::move(y), {a}, [saved](const Tensor& g, GradSink& s) {
        Tensor d(g.shape());
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] * saved[i];
        s.add(0, std::move(d));
    });
}

inline Var log(Var a) {
    const Tensor x = a.value();
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NumericError("log: non-positive argument " + std::to_string(v));
    }
    return a.graph().record("log", detail::map_unary(x, [](double v) { return std::log(v); }), {a},
                            [x](const Tensor& g, GradSink& s) {
                                Tensor d(g.shape());
                                auto o = d.mutable_data();
                                for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] / x[i];
                                s.add(0, std::move(d));
                            });
}

inline Var relu(Var a) {
    const Tensor x = a.value();
    return a.graph().record("relu", detail::map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; }),
                            {a}, [x](const Tensor& g, GradSink& s) {
                                Tensor d(g.shape());
                                auto o = d.mutable_data();
                                for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? g[i] : 0.0;
                                s.add(0, std::move(d));
                            });
}

inline Var tanh(Var a) {
    Tensor y = detail::map_unary(a.value(), [](double v) { return std::tanh(v); });
    Tensor saved = y;
    return a.graph().record("tanh", std::move(y), {a}, [saved](const Tensor& g, GradSink& s) {
        Tensor d(g.shape());
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] * (1.0 - saved[i] * saved[i]);
        s.add(0, std::move(d));
    });
}

inline double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
    Tensor y = detail::map_unary(a.value(), stable_sigmoid);
    Tensor saved = y;
    return a.graph().record("sigmoid", std::move(y), {a}, [saved](const Tensor& g, GradSink& s) {
        Tensor d(g.shape());
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] * saved[i] * (1.0 - saved[i]);
        s.add(0, std::move(d));
    });
}

inline Var square(Var a) {
    const Tensor x = a.value();
    return a.graph().record("square", detail::map_unary(x, [](double v) { return v * v; }), {a},
                            [x](const Tensor& g, GradSink& s) {
                                Tensor d(g.shape());
                                auto o = d.mutable_data();
                                for (std::size_t i = 0; i < o.size(); ++i) o[i] = 2.0 * x[i] * g[i];
                                s.add(0, std::move(d));
                            });
}

inline Var sqrt(Var a) {
    for (double v : a.value().data()) {
        if (v < 0.0) throw NumericError("sqrt: negative argument " + std::to_string(v));
    }
    Tensor y = detail::map_unary(a.value(), [](double v) { return std::sqrt(v); });
    Tensor saved = y;
    return a.graph().record("sqrt", std::move(y), {a}, [saved](const Tensor& g, GradSink& s) {
        Tensor d(g.shape());
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] / (2.0 * saved[i]);
        s.add(0, std::move(d));
    });
}

/// a * factor for a fixed factor.
inline Var scale(Var a, double factor) {
    return a.graph().record("scale", detail::map_unary(a.value(), [factor](double v) { return v * factor; }),
                            {a}, [factor](const Tensor& g, GradSink& s) {
                                s.add(0, detail::map_unary(g, [factor](double v) { return v * factor; }));
                            });
}

/// a + offset for a fixed offset.
inline Var add_scalar(Var a, double offset) {
    return a.graph().record("add_scalar",
                            detail::map_unary(a.value(), [offset](double v) { return v + offset; }), {a},
                            [](const Tensor& g, GradSink& s) { s.add(0, g); });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(Var a, Shape shape) {
    Shape original = a.shape();
    return a.graph().record("reshape", a.value().reshaped(std::move(shape)), {a},
                            [original](const Tensor& g, GradSink& s) { s.add(0, g.reshaped(original)); });
}

inline Var flatten(Var a) {
    const Shape& sh = a.shape();
    if (sh.empty()) throw ShapeError("flatten: scalar input");
    return reshape(a, Shape{sh[0], sh[0] ? a.value().size() / sh[0] : 0});
}

inline Tensor transposed(const Tensor& t) {
    detail::require_rank(t, 2, "transpose");
    return from_matrix(as_matrix(t).transpose());
}

inline Var transpose(Var a) {
    return a.graph().record("transpose", transposed(a.value()), {a},
                            [](const Tensor& g, GradSink& s) { s.add(0, transposed(g)); });
}

// ---------------------------------------------------------------------------
// Products

inline Var matmul(Var a, Var b) {
    const Tensor x = a.value();
    const Tensor y = b.value();
    detail::require_rank(x, 2, "matmul");
    detail::require_rank(y, 2, "matmul");
    if (x.dim(1) != y.dim(0)) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(x.shape()) + " x " +
                         shape_string(y.shape()));
    }
    Tensor out(Shape{x.dim(0), y.dim(1)});
    MatrixMap(out.mutable_ptr(), x.dim(0), y.dim(1)).noalias() = as_matrix(x) * as_matrix(y);
    return a.graph().record("matmul", std::move(out), {a, b}, [x, y](const Tensor& g, GradSink& s) {
        if (s.wants(0)) {
            Tensor ga(x.shape());
            MatrixMap(ga.mutable_ptr(), x.dim(0), x.dim(1)).noalias() =
                as_matrix(g) * as_matrix(y).transpose();
            s.add(0, std::move(ga));
        }
        if (s.wants(1)) {
            Tensor gb(y.shape());
            MatrixMap(gb.mutable_ptr(), y.dim(0), y.dim(1)).noalias() =
                as_matrix(x).transpose() * as_matrix(g);
            s.add(1, std::move(gb));
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    Shape sh = a.shape();
    return a.graph().record("sum", Tensor::scalar(total), {a}, [sh](const Tensor& g, GradSink& s) {
        s.add(0, Tensor(sh, g.item()));
    });
}

inline Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

namespace detail {

struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
    for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
    return s;
}

inline Shape drop_axis(Shape shape, std::size_t axis) {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    return shape;
}

}  // namespace detail

inline Var sum(Var a, std::size_t axis) {
    const Tensor& x = a.value();
    const auto sp = detail::split_axis(x.shape(), axis, "sum");
    Tensor out(detail::drop_axis(x.shape(), axis));
    auto o = out.mutable_data();
    for (std::size_t p = 0; p < sp.outer; ++p)
        for (std::size_t k = 0; k < sp.extent; ++k)
            for (std::size_t q = 0; q < sp.inner; ++q)
                o[p * sp.inner + q] += x[(p * sp.extent + k) * sp.inner + q];
    Shape sh = x.shape();
    return a.graph().record("sum_axis", std::move(out), {a}, [sh, sp](const Tensor& g, GradSink& s) {
        Tensor d(sh);
        auto o = d.mutable_data();
        for (std::size_t p = 0; p < sp.outer; ++p)
            for (std::size_t k = 0; k < sp.extent; ++k)
                for (std::size_t q = 0; q < sp.inner; ++q)
                    o[(p * sp.extent + k) * sp.inner + q] = g[p * sp.inner + q];
        s.add(0, std::move(d));
    });
}

inline Var mean(Var a, std::size_t axis) {
    const std::size_t n = detail::split_axis(a.shape(), axis, "mean").extent;
    if (n == 0) throw ShapeError("mean: empty axis");
    return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

/// Maximum over all elements; the gradient goes to the first maximal index.
inline Var max(Var a) {
    const Tensor& x = a.value();
    if (x.size() == 0) throw ShapeError("max: empty tensor");
    std::size_t best = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] > x[best]) best = i;
    Shape sh = x.shape();
    return a.graph().record("max", Tensor::scalar(x[best]), {a}, [sh, best](const Tensor& g, GradSink& s) {
        Tensor d(sh);
        d.mutable_data()[best] = g.item();
        s.add(0, std::move(d));
    });
}

/// Maximum along `axis`; ties resolve to the first index.
inline Var max(Var a, std::size_t axis) {
    const Tensor& x = a.value();
    const auto sp = detail::split_axis(x.shape(), axis, "max");
    if (sp.extent == 0) throw ShapeError("max: empty axis");
    Tensor out(detail::drop_axis(x.shape(), axis));
    auto o = out.mutable_data();
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t p = 0; p < sp.outer; ++p)
        for (std::size_t q = 0; q < sp.inner; ++q) {
            std::size_t best = p * sp.extent * sp.inner + q;
            for (std::size_t k = 1; k < sp.extent; ++k) {
                const std::size_t idx = (p * sp.extent + k) * sp.inner + q;
                if (x[idx] > x[best]) best = idx;
            }
            o[p * sp.inner + q] = x[best];
            (*argmax)[p * sp.inner + q] = best;
        }
    Shape sh = x.shape();
    return a.graph().record("max_axis", std::move(out), {a}, [sh, argmax](const Tensor& g, GradSink& s) {
        Tensor d(sh);
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < argmax->size(); ++i) o[(*argmax)[i]] += g[i];
        s.add(0, std::move(d));
    });
}

// ---------------------------------------------------------------------------
// Indexing and matrix structure

/// out[i] = a[i, index[i]] for a matrix a.
inline Var pick(Var a, std::vector<std::size_t> index) {
    const Tensor& x = a.value();
    detail::require_rank(x, 2, "pick");
    if (index.size() != x.dim(0)) throw ShapeError("pick: one index per row required");
    const std::size_t cols = x.dim(1);
    Tensor out(Shape{x.dim(0)});
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= cols) throw ShapeError("pick: column index out of range");
        o[i] = x[i * cols + index[i]];
    }
    Shape sh = x.shape();
    return a.graph().record("pick", std::move(out), {a},
                            [sh, cols, index = std::move(index)](const Tensor& g, GradSink& s) {
                                Tensor d(sh);
                                auto o = d.mutable_data();
                                for (std::size_t i = 0; i < index.size(); ++i) o[i * cols + index[i]] = g[i];
                                s.add(0, std::move(d));
                            });
}

/// Stacks equally sized vectors as the columns of a matrix.
inline Var stack_columns(const std::vector<Var>& columns) {
    if (columns.empty()) throw ShapeError("stack_columns: no inputs");
    const std::size_t rows = columns.front().value().size();
    const std::size_t cols = columns.size();
    Tensor out(Shape{rows, cols});
    auto o = out.mutable_data();
    for (std::size_t c = 0; c < cols; ++c) {
        const Tensor& v = columns[c].value();
        if (v.rank() != 1 || v.size() != rows) throw ShapeError("stack_columns: ragged inputs");
        for (std::size_t r = 0; r < rows; ++r) o[r * cols + c] = v[r];
    }
    return columns.front().graph().record(
        "stack_columns", std::move(out), columns, [rows, cols](const Tensor& g, GradSink& s) {
            for (std::size_t c = 0; c < cols; ++c) {
                if (!s.wants(c)) continue;
                Tensor d(Shape{rows});
                auto o = d.mutable_data();
                for (std::size_t r = 0; r < rows; ++r) o[r] = g[r * cols + c];
                s.add(c, std::move(d));
            }
        });
}

/// Column `c` of a matrix.
inline Var column(Var a, std::size_t c) {
    const Tensor& x = a.value();
    detail::require_rank(x, 2, "column");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (c >= cols) throw ShapeError("column: index out of range");
    Tensor out(Shape{rows});
    auto o = out.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) o[r] = x[r * cols + c];
    return a.graph().record("column", std::move(out), {a}, [rows, cols, c](const Tensor& g, GradSink& s) {
        Tensor d(Shape{rows, cols});
        auto o = d.mutable_data();
        for (std::size_t r = 0; r < rows; ++r) o[r * cols + c] = g[r];
        s.add(0, std::move(d));
    });
}

/// Lower triangle (diagonal included) of a square matrix; zeros above.
inline Var tril(Var a) {
    const Tensor& x = a.value();
    detail::require_rank(x, 2, "tril");
    const std::size_t n = x.dim(0);
    if (x.dim(1) != n) throw ShapeError("tril: matrix must be square");
    auto mask = [n](const Tensor& t) {
        Tensor m(t.shape());
        auto o = m.mutable_data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) o[i * n + j] = t[i * n + j];
        return m;
    };
    return a.graph().record("tril", mask(x), {a}, [mask](const Tensor& g, GradSink& s) { s.add(0, mask(g)); });
}

/// Diagonal of a square matrix as a vector.
inline Var diag_part(Var a) {
    const Tensor& x = a.value();
    detail::require_rank(x, 2, "diag_part");
    const std::size_t n = x.dim(0);
    if (x.dim(1) != n) throw ShapeError("diag_part: matrix must be square");
    Tensor out(Shape{n});
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i * n + i];
    return a.graph().record("diag_part", std::move(out), {a}, [n](const Tensor& g, GradSink& s) {
        Tensor d(Shape{n, n});
        auto o = d.mutable_data();
        for (std::size_t i = 0; i < n; ++i) o[i * n + i] = g[i];
        s.add(0, std::move(d));
    });
}

/// a + value * I, with `value` a scalar node.
inline Var add_diag(Var a, Var value) {
    const std::size_t n = a.shape().at(0);
    return add(a, mul(a.graph().constant(Tensor::identity(n)), value));
}

/// Row-wise log-softmax of a matrix, stabilised by the row maximum.
inline Var log_softmax(Var a) {
    const Tensor& x = a.value();
    detail::require_rank(x, 2, "log_softmax");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    auto o = out.mutable_data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.ptr() + r * cols;
        const double m = *std::max_element(row, row + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - m);
        const double log_z = std::log(z);
        for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = (row[c] - m) - log_z;
    }
    Tensor saved = out;
    return a.graph().record("log_softmax", std::move(out), {a}, [saved, rows, cols](const Tensor& g, GradSink& s) {
        Tensor d(saved.shape());
        auto o = d.mutable_data();
        for (std::size_t r = 0; r < rows; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                o[r * cols + c] = g[r * cols + c] - std::exp(saved[r * cols + c]) * gs;
        }
        s.add(0, std::move(d));
    });
}

}  // namespace gpdnn
