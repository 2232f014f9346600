#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace rdlearn;

TEST(Simplex, TwoArmsAreSigns) {
    const auto v = build_vertices(2);
    EXPECT_EQ(v.matrix()(0, 0), 1.0);
    EXPECT_EQ(v.matrix()(1, 0), -1.0);
}

TEST(Simplex, ThreeArmValues) {
    const auto w = build_vertices(3).matrix();
    const double s = std::sqrt(0.5);
    EXPECT_NEAR(w(0, 0), s, 1e-12);
    EXPECT_NEAR(w(0, 1), s, 1e-12);
    EXPECT_NEAR(w(1, 0), (std::sqrt(3.0) - 1.0) / (2.0 * std::sqrt(2.0)), 1e-12);
    EXPECT_NEAR(w(1, 1), -(1.0 + std::sqrt(3.0)) / (2.0 * std::sqrt(2.0)), 1e-12);
    EXPECT_NEAR(w(2, 0), w(1, 1), 1e-12);
    EXPECT_NEAR(w(2, 1), w(1, 0), 1e-12);
    EXPECT_NEAR(w(1, 0), 0.25882, 1e-5);
    EXPECT_NEAR(w(1, 1), -0.96593, 1e-5);
}

TEST(Simplex, FourArmPairsAreMinusOneThird) {
    const auto w = build_vertices(4).matrix();
    int pairs = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j, ++pairs) EXPECT_NEAR(w.row(i).dot(w.row(j)), -1.0 / 3.0, 1e-12);
    EXPECT_EQ(pairs, 6);
}

TEST(Simplex, InvariantsForTwoThroughTwelve) {
    for (int k = 2; k <= 12; ++k) {
        const auto w = build_vertices(k).matrix();
        ASSERT_EQ(w.rows(), k);
        ASSERT_EQ(w.cols(), k - 1);
        const Matrix g = w * w.transpose();
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) EXPECT_NEAR(g(i, j), i == j ? 1.0 : -1.0 / (k - 1), 1e-12) << "k=" << k;
        EXPECT_LE(w.colwise().sum().cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
        // columns orthogonal with squared norm k/(k-1): the closed-form inverse relies on this
        EXPECT_LE((w.transpose() * w - Matrix::Identity(k - 1, k - 1) * k / (k - 1.0)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Simplex, RejectsFewerThanTwoArms) {
    EXPECT_THROW(build_vertices(1), DomainError);
    EXPECT_THROW(build_vertices(0), DomainError);
}

TEST(SimplexEffects, Examples) {
    const auto v2 = build_vertices(2);
    Vector f(1);
    f << 2.5;
    EXPECT_EQ(v2.effects_from_f(f), (Vector(2) << 2.5, -2.5).finished());
    const auto v3 = build_vertices(3);
    EXPECT_TRUE(v3.effects_from_f(Vector::Zero(2)).isZero());
    const Vector e = v3.effects_from_f(v3.vertex(1).transpose());
    EXPECT_NEAR(e(0), 1.0, 1e-12);
    EXPECT_NEAR(e(1), -0.5, 1e-12);
    EXPECT_NEAR(e(2), -0.5, 1e-12);
    EXPECT_THROW(v3.effects_from_f(Vector::Zero(3)), DomainError);
}

TEST(SimplexInverse, Examples) {
    const auto v2 = build_vertices(2);
    EXPECT_NEAR(v2.f_from_effects((Vector(2) << 3, -3).finished())(0), 3.0, 1e-12);
    const auto v3 = build_vertices(3);
    EXPECT_TRUE(v3.f_from_effects(Vector::Zero(3)).isZero());
    const Vector f = v3.f_from_effects((Vector(3) << 1, -0.5, -0.5).finished());
    EXPECT_LE((f - v3.vertex(1).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(v3.f_from_effects((Vector(3) << 1, 0, 0).finished()), DomainError);
    EXPECT_THROW(v3.f_from_effects(Vector::Zero(2)), DomainError);
}

TEST(SimplexProperty, RoundTripsAndSumToZero) {
    std::mt19937_64 eng(5);
    std::normal_distribution<double> z(0.0, 3.0);
    for (int k = 2; k <= 12; ++k) {
        const auto v = build_vertices(k);
        for (int rep = 0; rep < 50; ++rep) {
            Vector f(k - 1);
            for (auto& e : f) e = z(eng);
            const Vector d = v.effects_from_f(f);
            EXPECT_LE(std::abs(d.sum()), 1e-10 * std::max(1.0, f.norm()));
            EXPECT_LE((v.f_from_effects(d) - f).cwiseAbs().maxCoeff(), 1e-9);

            Vector g(k);
            for (auto& e : g) e = z(eng);
            g.array() -= g.mean();
            EXPECT_LE((v.effects_from_f(v.f_from_effects(g)) - g).cwiseAbs().maxCoeff(), 1e-9);

            const double c = z(eng);
            EXPECT_LE((v.effects_from_f(c * f) - c * d).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, std::abs(c) * f.norm()));
        }
    }
}

TEST(SimplexRows, MatchesPerRowEvaluation) {
    const auto v = build_vertices(4);
    std::mt19937_64 eng(2);
    const Matrix f = testutil::gaussian_matrix(6, 3, eng);
    const Matrix e = v.effects_from_f_rows(f);
    for (Index i = 0; i < 6; ++i) EXPECT_LE((e.row(i).transpose() - v.effects_from_f(f.row(i).transpose())).norm(), 1e-14);
}
