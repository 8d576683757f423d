#include <gtest/gtest.h>

#include <cmath>

#include "gpdnn/graph.hpp"
#include "gpdnn/ops.hpp"
#include "gradcheck.hpp"

using namespace gpdnn;
using gradcheck::random_tensor;

namespace {

void expect_grad_ok(const gradcheck::Fn& fn, const std::vector<Tensor>& inputs, double tol = 1e-4) {
    const auto r = gradcheck::check(fn, inputs);
    EXPECT_LT(r.max_rel_error, tol) << r.worst;
    EXPECT_GT(r.checked, 0u);
}

}  // namespace

TEST(Tensor, CopiesShareStorageUntilWritten) {
    Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor b = a;
    EXPECT_TRUE(a.shares_storage_with(b));
    b.mutable_data()[0] = 9;
    EXPECT_FALSE(a.shares_storage_with(b));
    EXPECT_EQ(a[0], 1.0);
    EXPECT_EQ(b[0], 9.0);
}

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
    EXPECT_THROW(Tensor::vector({1, 2, 3}).reshaped(Shape{2, 2}), ShapeError);
    EXPECT_THROW(Tensor::vector({1, 2}).item(), ShapeError);
}

TEST(Tensor, SliceAndGatherRows) {
    Tensor t = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    EXPECT_EQ(slice_rows(t, 1, 3), Tensor::matrix({{3, 4}, {5, 6}}));
    const std::vector<std::size_t> rows{2, 0};
    EXPECT_EQ(gather_rows(t, rows), Tensor::matrix({{5, 6}, {1, 2}}));
}

TEST(Graph, NonFiniteValueNamesTheOp) {
    Graph g;
    Var x = g.variable(Tensor::vector({1e300}));
    try {
        mul(x, x);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
    }
}

TEST(Graph, BackwardNeedsScalar) {
    Graph g;
    Var x = g.variable(Tensor::vector({1, 2}));
    EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Graph, GradientsAccumulateOverFanOut) {
    Graph g;
    Var x = g.variable(Tensor::scalar(3.0));
    Var y = add(mul(x, x), x);  // dy/dx = 2x + 1
    g.backward(y);
    EXPECT_DOUBLE_EQ(g.grad(x).item(), 7.0);
}

TEST(Graph, ConstantsGetNoGradient) {
    Graph g;
    Var c = g.constant(Tensor::scalar(2.0));
    Var x = g.variable(Tensor::scalar(5.0));
    g.backward(mul(c, x));
    EXPECT_DOUBLE_EQ(g.grad(x).item(), 2.0);
    EXPECT_DOUBLE_EQ(g.grad(c).item(), 0.0);
}

TEST(Ops, BroadcastingMatchesNaiveLoops) {
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4}, rng);
    Graph g;
    const Tensor s = add(g.constant(a), g.constant(b)).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(s.at(i, j), a.at(i, j) + b[j]);
    EXPECT_THROW(add(g.constant(a), g.constant(Tensor::vector({1, 2, 3}))), ShapeError);
}

TEST(Ops, MatmulMatchesNaiveLoops) {
    Rng rng(2);
    Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
    Graph g;
    const Tensor c = matmul(g.constant(a), g.constant(b)).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
            EXPECT_NEAR(c.at(i, j), s, 1e-14);
        }
    EXPECT_THROW(matmul(g.constant(a), g.constant(a)), ShapeError);
}

TEST(Ops, DomainErrors) {
    Graph g;
    EXPECT_THROW(log(g.constant(Tensor::vector({1.0, 0.0}))), NumericError);
    EXPECT_THROW(sqrt(g.constant(Tensor::vector({-1.0}))), NumericError);
    EXPECT_THROW(div(g.constant(Tensor::vector({1.0})), g.constant(Tensor::vector({0.0}))), NumericError);
}

TEST(Ops, LogSoftmaxIsStableAndNormalised) {
    Graph g;
    const Tensor lp = log_softmax(g.constant(Tensor::matrix({{1000, 1001, 1002}, {-5, 0, 5}}))).value();
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += std::exp(lp.at(r, c));
        EXPECT_NEAR(s, 1.0, 1e-14);
    }
    EXPECT_NEAR(lp.at(0, 2) - lp.at(0, 0), 2.0, 1e-12);
}

TEST(Ops, MaxTiesGoToFirstIndex) {
    Graph g;
    Var x = g.variable(Tensor::matrix({{2, 2, 1}}));
    g.backward(sum(max(x, 1)));
    const Tensor gr = g.grad(x);
    EXPECT_EQ(gr.at(0, 0), 1.0);
    EXPECT_EQ(gr.at(0, 1), 0.0);
}

TEST(OpsGradient, ElementwiseBinary) {
    Rng rng(3);
    const std::vector<Tensor> in = {random_tensor({3, 4}, rng), random_tensor({4}, rng, 0.5, 2.0)};
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return sub(v[0], v[1]); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return div(v[0], v[1]); }, in);
}

TEST(OpsGradient, ElementwiseUnary) {
    Rng rng(4);
    const std::vector<Tensor> pos = {random_tensor({2, 5}, rng, 0.2, 2.0)};
    const std::vector<Tensor> any = {random_tensor({2, 5}, rng, -2.0, 2.0)};
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return exp(v[0]); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return log(v[0]); }, pos);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return sqrt(v[0]); }, pos);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return tanh(v[0]); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return sigmoid(v[0]); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return square(v[0]); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return neg(v[0]); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return scale(v[0], -2.5); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return add_scalar(v[0], 3.0); }, any);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return relu(v[0]); }, any);
}

TEST(OpsGradient, Reductions) {
    Rng rng(5);
    const std::vector<Tensor> in = {random_tensor({3, 4, 2}, rng)};
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return sum(v[0]); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return mean(v[0]); }, in);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        expect_grad_ok([axis](Graph&, const std::vector<Var>& v) { return sum(v[0], axis); }, in);
        expect_grad_ok([axis](Graph&, const std::vector<Var>& v) { return mean(v[0], axis); }, in);
        expect_grad_ok([axis](Graph&, const std::vector<Var>& v) { return max(v[0], axis); }, in);
    }
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return max(v[0]); }, in);
}

TEST(OpsGradient, MatrixOps) {
    Rng rng(6);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return matmul(v[0], v[1]); },
                   {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return transpose(v[0]); }, {random_tensor({3, 4}, rng)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return tril(v[0]); }, {random_tensor({4, 4}, rng)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return diag_part(v[0]); }, {random_tensor({4, 4}, rng)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return add_diag(v[0], v[1]); },
                   {random_tensor({3, 3}, rng), Tensor::scalar(0.3)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return log_softmax(v[0]); }, {random_tensor({3, 5}, rng, -3, 3)});
}

TEST(OpsGradient, IndexingAndShape) {
    Rng rng(7);
    const std::vector<Tensor> in = {random_tensor({4, 3}, rng)};
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return pick(v[0], {2, 0, 1, 2}); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return column(v[0], 1); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return reshape(v[0], Shape{2, 6}); }, in);
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return flatten(v[0]); }, {random_tensor({2, 3, 2}, rng)});
    expect_grad_ok([](Graph&, const std::vector<Var>& v) { return stack_columns({v[0], v[1]}); },
                   {random_tensor({4}, rng), random_tensor({4}, rng)});
}
