#include <gtest/gtest.h>

#include <Eigen/LU>

#include "test_util.hpp"

using namespace rdlearn;

namespace {

struct Problem {
    Matrix z;
    Vector y;
    Vector w;
};

Problem random_problem(Index n, Index p, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    Problem pr;
    pr.z = testutil::gaussian_matrix(n, p, eng);
    std::uniform_real_distribution<double> u(0.5, 4.0);
    std::normal_distribution<double> e(0.0, 1.0);
    pr.w.resize(n);
    pr.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        pr.w(i) = u(eng);
        pr.y(i) = 1.5 + 2.0 * pr.z(i, 0) - pr.z(i, 1 % p) + e(eng);
    }
    return pr;
}

}  // namespace

// ---- weighted least squares ----

TEST(WeightedLs, OneByOneToy) {
    const auto fit = weighted_ls(Matrix::Ones(2, 1), Vector{{2.0, 0.0}}, Vector{{2.0, 2.0}});
    EXPECT_NEAR(fit.beta(0), 1.0, 1e-14);
}

TEST(WeightedLs, InterpolatesExactResponse) {
    auto pr = random_problem(40, 4, 1);
    const Matrix z = augment(pr.z).rows;
    const Vector beta0{{0.3, -1.0, 2.0, 0.0, 5.5}};
    const auto fit = weighted_ls(z, z * beta0, pr.w);
    EXPECT_LE((fit.beta - beta0).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WeightedLs, EqualWeightsGiveOls) {
    auto pr = random_problem(30, 3, 2);
    const Matrix z = augment(pr.z).rows;
    const Vector ols = z.colPivHouseholderQr().solve(pr.y);
    const auto fit = weighted_ls(z, pr.y, Vector::Constant(30, 3.7));
    EXPECT_LE((fit.beta - ols).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WeightedLs, NormalEquationsHold) {
    auto pr = random_problem(50, 5, 3);
    const Matrix z = augment(pr.z).rows;
    const auto fit = weighted_ls(z, pr.y, pr.w);
    const Vector g = z.transpose() * pr.w.asDiagonal() * fit.residuals;
    EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-8 * (1.0 + pr.y.cwiseAbs().maxCoeff()) * 50);
}

TEST(WeightedLs, RowDuplicationWithHalvedWeight) {
    auto pr = random_problem(20, 3, 4);
    const Matrix z = augment(pr.z).rows;
    const auto base = weighted_ls(z, pr.y, pr.w);
    for (Index i : {Index{0}, Index{7}, Index{19}}) {
        Matrix z2(21, z.cols());
        Vector y2(21), w2(21);
        z2.topRows(20) = z;
        y2.head(20) = pr.y;
        w2.head(20) = pr.w;
        z2.row(20) = z.row(i);
        y2(20) = pr.y(i);
        w2(i) *= 0.5;
        w2(20) = w2(i);
        const auto dup = weighted_ls(z2, y2, w2);
        EXPECT_LE((dup.beta - base.beta).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(WeightedLs, CollinearDesignIsRegularizedByJitter) {
    auto pr = random_problem(25, 2, 5);
    Matrix z(25, 3);
    z.col(0).setOnes();
    z.col(1) = pr.z.col(0);
    z.col(2) = 2.0 * pr.z.col(0);
    const auto fit = weighted_ls(z, pr.y, pr.w);
    EXPECT_GT(fit.jitter, 0.0);
    EXPECT_TRUE(fit.beta.allFinite());
}

TEST(WeightedLs, Errors) {
    EXPECT_THROW(weighted_ls(Matrix::Ones(2, 1), Vector::Ones(3), Vector::Ones(2)), DomainError);
    EXPECT_THROW(weighted_ls(Matrix::Ones(2, 1), Vector::Ones(2), Vector{{1.0, 0.0}}), DomainError);
    Matrix bad = Matrix::Ones(2, 1);
    bad(0, 0) = std::nan("");
    EXPECT_THROW(weighted_ls(bad, Vector::Ones(2), Vector::Ones(2)), ValidationError);
}

TEST(SpdFactor, IndefiniteMatrixRaisesSingularity) {
    Matrix a{{1.0, 0.0}, {0.0, -1.0}};
    try {
        factor_spd(a);
        FAIL() << "expected singularity";
    } catch (const SingularityError& e) {
        EXPECT_GT(e.condition_estimate(), 1e6);
    }
}

// ---- soft threshold ----

TEST(SoftThreshold, Examples) {
    EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
    EXPECT_EQ(soft_threshold(-0.5, 1.0), 0.0);
    EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
    for (double z : {-2.5, 0.0, 1e-9, 7.0}) EXPECT_EQ(soft_threshold(z, 0.0), z);
}

// ---- weighted lasso ----

TEST(WeightedLasso, NullModelThreshold) {
    auto pr = random_problem(60, 6, 6);
    const double ybar = pr.w.dot(pr.y) / pr.w.sum();
    // independent computation of the factor-2 threshold
    double thr = 0.0;
    for (Index j = 0; j < 6; ++j) {
        const double zbar = pr.w.dot(pr.z.col(j)) / pr.w.sum();
        double s = 0.0;
        for (Index i = 0; i < 60; ++i) s += pr.w(i) * (pr.z(i, j) - zbar) * (pr.y(i) - ybar);
        thr = std::max(thr, 2.0 * std::abs(s) / 60.0);
    }
    WeightedLasso solver(pr.z, pr.y, pr.w);
    EXPECT_NEAR(solver.lambda_max(), thr, 1e-10 * thr);

    const auto above = weighted_lasso(pr.z, pr.y, pr.w, thr * (1.0 + 1e-9));
    EXPECT_TRUE(above.beta.isZero());
    EXPECT_NEAR(above.intercept, ybar, 1e-12);
    const auto below = weighted_lasso(pr.z, pr.y, pr.w, thr * 0.99);
    EXPECT_GT(below.beta.cwiseAbs().maxCoeff(), 0.0);
}

TEST(WeightedLasso, ZeroPenaltyMatchesWls) {
    auto pr = random_problem(80, 5, 7);
    LassoOptions o;
    o.tol = 1e-12;
    const auto lasso = weighted_lasso(pr.z, pr.y, pr.w, 0.0, o);
    const auto wls = weighted_ls(augment(pr.z).rows, pr.y, pr.w);
    EXPECT_NEAR(lasso.intercept, wls.beta(0), 1e-6);
    EXPECT_LE((lasso.beta - wls.beta.tail(5)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_TRUE(lasso.converged);
}

TEST(WeightedLasso, OrthonormalDesignMatchesClosedForm) {
    auto pr = random_problem(100, 4, 8);
    const double n = 100.0;
    // weighted-center the columns and orthonormalize under <u, v> = n^-1 sum w u v
    Matrix zc = pr.z.rowwise() - (pr.w.transpose() * pr.z) / pr.w.sum();
    const Matrix g = zc.transpose() * pr.w.asDiagonal() * zc / n;
    const Matrix l = g.llt().matrixL();
    const Matrix zo = zc * l.transpose().inverse();
    ASSERT_LE((zo.transpose() * pr.w.asDiagonal() * zo / n - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);

    const double ybar = pr.w.dot(pr.y) / pr.w.sum();
    const Vector s = zo.transpose() * pr.w.asDiagonal() * (pr.y.array() - ybar).matrix() / n;  // least-squares coefficients
    LassoOptions o;
    o.tol = 1e-13;
    for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.5}) {
        const auto fit = weighted_lasso(zo, pr.y, pr.w, lambda, o);
        for (Index j = 0; j < 4; ++j) EXPECT_NEAR(fit.beta(j), soft_threshold(s(j), lambda / 2.0), 1e-8) << lambda;
        EXPECT_NEAR(fit.intercept, ybar, 1e-8);
    }
}

TEST(WeightedLasso, KktConditions) {
    auto pr = random_problem(120, 10, 9);
    LassoOptions o;
    o.tol = 1e-10;
    WeightedLasso solver(pr.z, pr.y, pr.w, o);
    const double top = solver.lambda_max();
    for (double frac : {0.5, 0.1, 0.01}) {
        const double lambda = top * frac;
        const auto fit = solver.fit(lambda);
        EXPECT_TRUE(fit.converged);
        const Vector r = pr.y - fit.predict(pr.z);
        for (Index j = 0; j < 10; ++j) {
            const double grad = -2.0 / 120.0 * pr.z.col(j).dot(pr.w.asDiagonal() * r);
            if (fit.beta(j) != 0.0)
                EXPECT_NEAR(grad + lambda * (fit.beta(j) > 0 ? 1.0 : -1.0), 0.0, 1e-6);
            else
                EXPECT_LE(std::abs(grad), lambda + 1e-6);
        }
        // intercept stationarity
        EXPECT_NEAR(pr.w.dot(r), 0.0, 1e-8 * pr.w.sum());
        EXPECT_LE(fit.kkt_gap, 1e-6);
    }
}

TEST(WeightedLasso, ObjectiveNonIncreasingAcrossSweeps) {
    auto pr = random_problem(90, 15, 10);
    LassoOptions o;
    o.track_objective = true;
    o.tol = 1e-10;
    WeightedLasso solver(pr.z, pr.y, pr.w, o);
    const double lambda = 0.05 * solver.lambda_max();
    const double start = solver.objective(lambda);
    const auto fit = solver.fit(lambda);
    ASSERT_FALSE(fit.objective_trace.empty());
    double prev = start;
    for (double v : fit.objective_trace) {
        EXPECT_LE(v, prev + 1e-12 * std::max(1.0, prev));
        prev = v;
    }
}

TEST(WeightedLasso, PathL1NormIsMonotone) {
    auto pr = random_problem(70, 8, 11);
    WeightedLasso solver(pr.z, pr.y, pr.w);
    const auto grid = log_grid(solver.lambda_max(), 30, 4.0);
    double prev = 0.0;
    for (double lambda : grid) {
        const double norm = solver.fit(lambda).beta.lpNorm<1>();
        EXPECT_LE(prev, norm + 1e-8);
        prev = norm;
    }
}

TEST(WeightedLasso, NonConvergenceIsReported) {
    auto pr = random_problem(60, 12, 12);
    LassoOptions o;
    o.max_sweeps = 1;
    o.tol = 1e-14;
    const auto fit = weighted_lasso(pr.z, pr.y, pr.w, 1e-4, o);
    EXPECT_FALSE(fit.converged);
    EXPECT_GE(fit.kkt_gap, 0.0);
    EXPECT_EQ(fit.iterations, 1);
}

TEST(WeightedLasso, DeterministicAndPenaltyFactors) {
    auto pr = random_problem(60, 6, 13);
    const auto a = weighted_lasso(pr.z, pr.y, pr.w, 0.05);
    const auto b = weighted_lasso(pr.z, pr.y, pr.w, 0.05);
    EXPECT_EQ(a.beta, b.beta);
    EXPECT_EQ(a.intercept, b.intercept);
    LassoOptions o;
    o.penalty_factor = {0.0, 1, 1, 1, 1, 1};
    const auto free0 = weighted_lasso(pr.z, pr.y, pr.w, 1e3, o);
    EXPECT_NE(free0.beta(0), 0.0);
    EXPECT_TRUE(free0.beta.tail(5).isZero());
    EXPECT_THROW(weighted_lasso(pr.z, pr.y, pr.w, -1.0), DomainError);
}

TEST(WeightedLasso, CrossValidationPicksGridValueDeterministically) {
    auto pr = random_problem(100, 10, 14);
    CvOptions cv;
    cv.rng = RngSpec{3, 1};
    CvResult r1, r2;
    const auto f1 = cv_weighted_lasso(pr.z, pr.y, pr.w, {}, cv, &r1);
    const auto f2 = cv_weighted_lasso(pr.z, pr.y, pr.w, {}, cv, &r2);
    ASSERT_EQ(r1.lambdas.size(), 50u);
    EXPECT_EQ(r1.best_lambda, f1.lambda);
    EXPECT_NEAR(r1.lambdas.back(), r1.lambdas.front() * 1e-4, 1e-12 * r1.lambdas.front());
    EXPECT_EQ(f1.beta, f2.beta);
    EXPECT_EQ(r1.cv_error, r2.cv_error);
    // strong true signal on columns 0 and 1 must survive selection
    EXPECT_GT(std::abs(f1.beta(0)), 1.0);
}

// ---- kernel ----

TEST(GaussianGram, Examples) {
    const Matrix x{{0.0}, {1.0}};
    const Matrix k = gaussian_gram(x, x, 1.0);
    EXPECT_EQ(k(0, 0), 1.0);
    EXPECT_EQ(k(1, 1), 1.0);
    EXPECT_NEAR(k(0, 1), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(k(0, 1), 0.60653, 1e-5);
    EXPECT_EQ(k(0, 1), k(1, 0));

    const Matrix x2{{0.3, 1.0}, {0.3, 1.0}, {-2.0, 0.5}};
    const Matrix k2 = gaussian_gram(x2, x2, 0.7);
    EXPECT_EQ(k2.row(0), k2.row(1));
    EXPECT_EQ(k2, k2.transpose());

    const Matrix cross = gaussian_gram(x, Matrix{{0.5}, {2.0}, {0.0}}, 2.0);
    EXPECT_EQ(cross.rows(), 3);
    EXPECT_EQ(cross.cols(), 2);
    EXPECT_NEAR(cross(1, 0), std::exp(-4.0 / 8.0), 1e-15);
    EXPECT_THROW(gaussian_gram(x, x, 0.0), DomainError);
}

TEST(MedianBandwidth, Examples) {
    EXPECT_DOUBLE_EQ(median_bandwidth(Matrix{{0.0}, {1.0}, {2.0}}), 1.0);
    EXPECT_DOUBLE_EQ(median_bandwidth(Matrix{{0.0}, {1.0}, {3.0}, {7.0}}), 3.5);  // distances 1,2,3,4,6,7
    EXPECT_EQ(median_bandwidth(Matrix::Zero(4, 2)), 1.0);
}

TEST(KernelRidge, ConstantTargetGoesToIntercept) {
    std::mt19937_64 eng(15);
    const Matrix x = testutil::gaussian_matrix(30, 2, eng);
    const Vector w = Vector::LinSpaced(30, 1.0, 3.0);
    for (double lambda : {1e-3, 0.1, 10.0}) {
        const auto fit = weighted_kernel_ridge(x, Vector::Constant(30, 4.2), w, lambda, 1.0);
        EXPECT_NEAR(fit.intercept, 4.2, 1e-8);
        EXPECT_LE(fit.alpha.cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(KernelRidge, HugePenaltyCollapsesToWeightedMean) {
    std::mt19937_64 eng(16);
    const Matrix x = testutil::gaussian_matrix(40, 3, eng);
    Vector r = testutil::gaussian_matrix(40, 1, eng).col(0);
    r.array() -= r.mean();
    const Vector w = Vector::LinSpaced(40, 1.0, 5.0);
    const auto fit = weighted_kernel_ridge(x, r, w, 1e6, 1.0);
    const double mean = w.dot(r) / w.sum();
    EXPECT_LE((fit.predict(x).array() - mean).abs().maxCoeff(), 1e-3);
}

TEST(KernelRidge, ThreePointSystemMatchesDenseNormalEquations) {
    const Matrix x{{0.0, 0.1}, {1.0, -0.4}, {0.3, 2.0}};
    const Vector r{{1.0, -2.0, 0.5}};
    const Vector w{{1.25, 5.0, 2.0}};
    const double lambda = 0.2, n = 3.0;
    const auto fit = weighted_kernel_ridge(x, r, w, lambda, 0.9);

    // gradient of n^-1 (r - b1 - Ka)^T W (r - b1 - Ka) + lambda a^T K a set to zero
    const Matrix k = gaussian_gram(x, x, 0.9);
    const Matrix wm = w.asDiagonal();
    const Vector one = Vector::Ones(3);
    Matrix a(4, 4);
    a.topLeftCorner(3, 3) = k * wm * k / n + lambda * k;
    a.topRightCorner(3, 1) = k * wm * one / n;
    a.bottomLeftCorner(1, 3) = one.transpose() * wm * k / n;
    a(3, 3) = one.dot(wm * one) / n;
    Vector rhs(4);
    rhs.head(3) = k * wm * r / n;
    rhs(3) = one.dot(wm * r) / n;
    const Vector sol = a.fullPivLu().solve(rhs);
    EXPECT_LE((fit.alpha - sol.head(3)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(fit.intercept, sol(3), 1e-9);
}

TEST(KernelRidge, TinyPenaltyInterpolates) {
    const Matrix x{{0.0}, {0.7}, {1.9}, {-1.2}, {3.0}};
    const Vector r{{1.0, -1.0, 0.4, 2.2, -0.3}};
    const Vector w{{1.0, 2.0, 1.5, 1.0, 4.0}};
    const auto fit = weighted_kernel_ridge(x, r, w, 1e-10, 1.0);
    EXPECT_LE((fit.predict(x) - r).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(KernelRidge, LinearSystemResidual) {
    std::mt19937_64 eng(17);
    const Matrix x = testutil::gaussian_matrix(25, 2, eng);
    const Vector r = testutil::gaussian_matrix(25, 1, eng).col(0);
    const Vector w = Vector::LinSpaced(25, 1.0, 2.0);
    const double lambda = 0.05;
    const auto fit = weighted_kernel_ridge(x, r, w, lambda, 1.2);
    const Matrix k = gaussian_gram(x, x, 1.2);
    Matrix a = k;
    a.diagonal().array() += 25.0 * lambda / w.array();
    const Vector res = a * fit.alpha + Vector::Constant(25, fit.intercept) - r;
    EXPECT_LE(res.cwiseAbs().maxCoeff(), 1e-7 * (1.0 + r.cwiseAbs().maxCoeff()));
    EXPECT_NEAR(fit.alpha.sum(), 0.0, 1e-9);
}

TEST(KernelRidge, CrossValidationIsDeterministic) {
    std::mt19937_64 eng(18);
    const Matrix x = testutil::gaussian_matrix(60, 2, eng);
    Vector r(60);
    for (Index i = 0; i < 60; ++i) r(i) = std::sin(2.0 * x(i, 0)) + 0.1 * x(i, 1);
    const Vector w = Vector::Ones(60);
    CvOptions cv;
    cv.rng = RngSpec{1, 2};
    CvResult rep;
    const auto a = cv_weighted_kernel_ridge(x, r, w, cv, 0.0, &rep);
    const auto b = cv_weighted_kernel_ridge(x, r, w, cv);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_EQ(a.lambda, rep.best_lambda);
    EXPECT_DOUBLE_EQ(rep.lambdas.front(), kernel_lambda_top(w));
    EXPECT_DOUBLE_EQ(a.bandwidth, median_bandwidth(x));
    // a smooth target must be fitted far better than by its mean
    EXPECT_LT((a.predict(x) - r).squaredNorm(), 0.2 * (r.array() - r.mean()).matrix().squaredNorm());
}

TEST(KernelRidge, Errors) {
    const Matrix x{{0.0}, {1.0}};
    EXPECT_THROW(weighted_kernel_ridge(x, Vector::Ones(2), Vector::Ones(2), 0.0, 1.0), DomainError);
    EXPECT_THROW(weighted_kernel_ridge(x, Vector::Ones(3), Vector::Ones(2), 1.0, 1.0), DomainError);
    EXPECT_THROW(weighted_kernel_ridge(x, Vector::Ones(2), Vector::Ones(2), 1.0, -1.0), DomainError);
}

TEST(LogGrid, SpansRequestedDecades) {
    const auto g = log_grid(10.0, 5, 4.0);
    ASSERT_EQ(g.size(), 5u);
    EXPECT_DOUBLE_EQ(g[0], 10.0);
    EXPECT_NEAR(g[2], 0.1, 1e-15);
    EXPECT_NEAR(g[4], 1e-3, 1e-17);
}
