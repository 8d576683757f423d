#include <gtest/gtest.h>

#include "gpdnn/linalg.hpp"
#include "gradcheck.hpp"

using namespace gpdnn;
using gradcheck::random_tensor;

namespace {

Tensor spd(std::size_t n, Rng& rng) {
    const Tensor x = random_tensor({n, n}, rng);
    Tensor s(Shape{n, n});
    auto d = s.mutable_data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double v = 0.0;
            for (std::size_t k = 0; k < n; ++k) v += x.at(i, k) * x.at(j, k);
            d[i * n + j] = v + (i == j ? 0.5 : 0.0);
        }
    return s;
}

// Symmetric SPD matrix built from an unconstrained square input.
Var sym_spd(Var x) {
    const std::size_t n = x.shape()[0];
    Var s = scale(add(x, transpose(x)), 0.5);
    return add_diag(s, x.graph().constant(Tensor::scalar(static_cast<double>(n))));
}

}  // namespace

TEST(Cholesky, ReconstructsInput) {
    Rng rng(1);
    const Tensor a = spd(6, rng);
    const Tensor l = cholesky_factor(a);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            if (j > i) {
                EXPECT_EQ(l.at(i, j), 0.0);
            }
            double v = 0.0;
            for (std::size_t k = 0; k < 6; ++k) v += l.at(i, k) * l.at(j, k);
            EXPECT_NEAR(v, a.at(i, j), 1e-12);
        }
}

TEST(Cholesky, ReportsFailingPivot) {
    const Tensor a = Tensor::matrix({{4, 2, 0}, {2, 1, 0}, {0, 0, 1}});
    try {
        cholesky_factor(a);
        FAIL() << "expected FactorizationError";
    } catch (const FactorizationError& e) {
        EXPECT_EQ(e.pivot(), 1u);
        EXPECT_LE(e.value(), 1e-12);
    }
    EXPECT_THROW(cholesky_factor(Tensor::matrix({{1, 2, 3}})), ShapeError);
}

TEST(TriangularSolve, MatchesSubstitution) {
    const Tensor l = Tensor::matrix({{2, 0, 0}, {1, 3, 0}, {-1, 2, 4}});
    const Tensor b = Tensor::matrix({{2}, {7}, {13}});
    const Tensor x = solve_triangular(l, b, true, false);
    // forward substitution by hand: x0 = 1, x1 = (7−1)/3 = 2, x2 = (13+1−4)/4 = 2.5
    EXPECT_NEAR(x[0], 1.0, 1e-15);
    EXPECT_NEAR(x[1], 2.0, 1e-15);
    EXPECT_NEAR(x[2], 2.5, 1e-15);
    // Lᵀ y = b, back substitution
    const Tensor y = solve_triangular(l, b, true, true);
    const double y2 = 13.0 / 4.0, y1 = (7.0 - 2.0 * y2) / 3.0, y0 = (2.0 - y1 + y2) / 2.0;
    EXPECT_NEAR(y[0], y0, 1e-14);
    EXPECT_NEAR(y[1], y1, 1e-14);
    EXPECT_NEAR(y[2], y2, 1e-14);
    EXPECT_THROW(solve_triangular(Tensor::matrix({{1, 0}, {1, 0}}), Tensor::matrix({{1}, {1}}), true, false), NumericError);
}

TEST(LinalgGradient, Cholesky) {
    Rng rng(2);
    for (std::size_t n : {1u, 2u, 4u, 6u}) {
        const auto r = gradcheck::check([](Graph&, const std::vector<Var>& v) { return cholesky(sym_spd(v[0])); },
                                        {random_tensor({n, n}, rng)});
        EXPECT_LT(r.max_rel_error, 1e-4) << "n=" << n << " " << r.worst;
    }
}

TEST(LinalgGradient, TriangularSolveAllVariants) {
    Rng rng(3);
    for (bool lower : {true, false})
        for (bool trans : {false, true}) {
            Tensor t = random_tensor({4, 4}, rng);
            auto d = t.mutable_data();
            for (std::size_t i = 0; i < 4; ++i) d[i * 4 + i] = 2.0 + i;
            const auto r = gradcheck::check(
                [lower, trans](Graph&, const std::vector<Var>& v) {
                    Var tri = lower ? tril(v[0]) : transpose(tril(transpose(v[0])));
                    return triangular_solve(tri, v[1], lower, trans);
                },
                {t, random_tensor({4, 3}, rng)});
            EXPECT_LT(r.max_rel_error, 1e-4) << lower << trans << " " << r.worst;
        }
}

TEST(LinalgGradient, LogDeterminantThroughCholesky) {
    Rng rng(4);
    // log det S = 2 Σ log L_ii; gradient w.r.t. symmetric S is S⁻¹.
    const auto r = gradcheck::check(
        [](Graph&, const std::vector<Var>& v) { return scale(sum(log(diag_part(cholesky(sym_spd(v[0]))))), 2.0); },
        {random_tensor({5, 5}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
