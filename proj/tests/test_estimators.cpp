#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"

using namespace rdlearn;

namespace {

MainEffectModel linear_main(double intercept, Vector beta) {
    Regressor r;
    r.space = FunctionSpace::linear;
    r.fn = LinearFunction{intercept, std::move(beta)};
    MainEffectModel m;
    m.kind = MainEffectKind::direct;
    m.space = FunctionSpace::linear;
    m.parts.push_back(std::move(r));
    return m;
}

MainEffectModel constant_main(double c) {
    Regressor r;
    r.fn = ConstantFunction{c};
    MainEffectModel m;
    m.kind = MainEffectKind::direct;
    m.parts.push_back(std::move(r));
    return m;
}

PropensityModel uniform(int k) { return known_constant_propensity(Vector::Constant(k, 1.0 / k)); }

/// Linear truth: mu_j(x) = m(x) + x~^T G_j with sum_j G_j = 0 (x~ = (1, x)).
struct LinearTruth {
    Vector m;   // p+1
    Matrix g;   // (p+1) x k
    Matrix delta(const Matrix& x) const { return augment(x).rows * g; }
    Vector main(const Matrix& x) const { return augment(x).rows * m; }
};

LinearTruth random_truth(Index p, int k, std::mt19937_64& eng) {
    LinearTruth t;
    t.m = testutil::gaussian_matrix(p + 1, 1, eng).col(0);
    t.g = testutil::gaussian_matrix(p + 1, k, eng);
    t.g.colwise() -= t.g.rowwise().mean();
    return t;
}

Dataset sample(const LinearTruth& t, Index n, int k, std::mt19937_64& eng, double noise) {
    Matrix x = testutil::gaussian_matrix(n, t.m.size() - 1, eng);
    auto a = testutil::random_arms(n, k, eng);
    const Matrix d = t.delta(x);
    const Vector m = t.main(x);
    std::normal_distribution<double> e(0.0, 1.0);
    Vector y(n);
    for (Index i = 0; i < n; ++i) y(i) = m(i) + d(i, a[static_cast<std::size_t>(i)] - 1) + noise * e(eng);
    return testutil::make_dataset(std::move(x), std::move(a), std::move(y), k);
}

}  // namespace

TEST(FitRd, InterceptOnlyToy) {
    const auto d = testutil::make_dataset(Matrix{{0.3}, {-0.2}}, {1, 2}, Vector{{2.0, 0.0}}, 2);
    for (const auto& fit : {fit_rd(d, uniform(2), zero_main_effect(), FunctionSpace::constant),
                            fit_d(d, uniform(2), FunctionSpace::constant)}) {
        const Matrix e = fit.predict_effects(Matrix{{0.0}, {10.0}, {-4.0}});
        for (Index i = 0; i < 3; ++i) {
            EXPECT_NEAR(e(i, 0), 1.0, 1e-15);
            EXPECT_NEAR(e(i, 1), -1.0, 1e-15);
        }
        EXPECT_EQ(fit.method, Method::d);
    }
}

TEST(FitRd, NoiselessLinearTruthIsReproduced) {
    std::mt19937_64 eng(51);
    for (int k : {2, 3, 5}) {
        const auto t = random_truth(4, k, eng);
        const auto d = sample(t, 80, k, eng, 0.0);
        const auto fit = fit_rd(d, uniform(k), linear_main(t.m(0), t.m.tail(4)), FunctionSpace::linear);
        EXPECT_EQ(fit.method, Method::rd);
        EXPECT_LE((fit.predict_effects(d.x) - t.delta(d.x)).cwiseAbs().maxCoeff(), 1e-6) << "k=" << k;
    }
}

TEST(FitD, NoiselessBinaryWithZeroMainEffect) {
    std::mt19937_64 eng(52);
    auto t = random_truth(3, 2, eng);
    t.m.setZero();
    const auto d = sample(t, 60, 2, eng, 0.0);
    const auto fit = fit_d(d, uniform(2), FunctionSpace::linear);
    EXPECT_LE((fit.predict_effects(d.x) - t.delta(d.x)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitRd, TwoArmAnglePathMatchesSignCodedPath) {
    for (int rep = 0; rep < 100; ++rep) {
        std::mt19937_64 eng(1000 + static_cast<std::uint64_t>(rep));
        const auto t = random_truth(10, 2, eng);
        auto d = sample(t, 100, 2, eng, 1.0);
        const auto prop = known_function_propensity(
            2,
            [](const Eigen::Ref<const Eigen::RowVectorXd>& x) {
                const double p1 = 1.0 / (1.0 + std::exp(-x(0)));
                return Vector{{p1, 1.0 - p1}};
            },
            "logit");
        const auto main = linear_main(0.5, Vector::LinSpaced(10, -1.0, 1.0));
        const auto angle = fit_rd(d, prop, main, FunctionSpace::linear);
        const auto sign = fit_rd_binary_linear(d, prop, main);
        ASSERT_LE((angle.coef - sign.coef).cwiseAbs().maxCoeff(), 1e-8) << "rep " << rep;
    }
}

TEST(PredictEffects, SumToZeroForEveryMethodAndSpace) {
    std::mt19937_64 eng(53);
    for (int k : {2, 3, 4}) {
        const auto t = random_truth(3, k, eng);
        const auto d = sample(t, 90, k, eng, 1.0);
        const Matrix probe = testutil::gaussian_matrix(25, 3, eng);
        EstimatorOptions o;
        o.regression.cv.grid_size = 10;
        for (auto space : {FunctionSpace::constant, FunctionSpace::linear, FunctionSpace::lasso, FunctionSpace::kernel}) {
            const auto main = fit_main_effect(d, uniform(k), FunctionSpace::linear);
            for (const auto& fit : {fit_rd(d, uniform(k), main, space, o), fit_d(d, uniform(k), space, o), fit_q(d, space, o)}) {
                const Matrix e = fit.predict_effects(probe);
                ASSERT_EQ(e.cols(), k);
                EXPECT_LE(e.rowwise().sum().cwiseAbs().maxCoeff(), 1e-8)
                    << to_string(fit.method) << " " << to_string(space) << " k=" << k;
                if (k == 2) { EXPECT_LE((e.col(0) + e.col(1)).cwiseAbs().maxCoeff(), 1e-12); }
            }
        }
    }
}

TEST(PredictEffects, ZeroFitGivesZeroMatrix) {
    TreatmentEffectFit fit;
    fit.k = 3;
    fit.p = 2;
    fit.simplex = SimplexVertices(3);
    fit.coef = Matrix::Zero(3, 2);
    EXPECT_TRUE(fit.predict_effects(Matrix::Ones(4, 2)).isZero());
    EXPECT_THROW(fit.predict_effects(Matrix::Ones(4, 3)), DomainError);
}

TEST(FitRd, LassoWithHugePenaltyKeepsOnlyArmIntercepts) {
    std::mt19937_64 eng(54);
    const auto t = random_truth(4, 3, eng);
    const auto d = sample(t, 120, 3, eng, 1.0);
    EstimatorOptions o;
    o.regression.lambda = 1e6;
    const auto lasso = fit_rd(d, uniform(3), zero_main_effect(), FunctionSpace::lasso, o);
    const auto constant = fit_rd(d, uniform(3), zero_main_effect(), FunctionSpace::constant);
    EXPECT_TRUE(lasso.coef.bottomRows(4).isZero());
    EXPECT_LE((lasso.coef.row(0) - constant.coef.row(0)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitRd, KernelLinearTruthIsTracked) {
    std::mt19937_64 eng(55);
    const auto t = random_truth(2, 3, eng);
    const auto d = sample(t, 300, 3, eng, 0.5);
    const auto fit = fit_rd(d, uniform(3), linear_main(t.m(0), t.m.tail(2)), FunctionSpace::kernel);
    const Matrix probe = testutil::gaussian_matrix(200, 2, eng) * 0.7;
    const double pe = prediction_error(fit.predict_effects(probe), t.delta(probe));
    const double scale = t.delta(probe).squaredNorm() / 200.0;
    EXPECT_LT(pe, 0.1 * scale);
}

TEST(FitRd, RejectsSingleArmAndMismatch) {
    auto d = testutil::make_dataset(Matrix{{0.0}, {1.0}}, {1, 1}, Vector{{1.0, 2.0}}, 1);
    EXPECT_THROW(fit_d(d, known_constant_propensity(Vector{{0.5, 0.5}}), FunctionSpace::linear), DomainError);
    const auto d3 = testutil::make_dataset(Matrix{{0.0}, {1.0}, {2.0}}, {1, 2, 3}, Vector{{1.0, 2.0, 3.0}}, 3);
    EXPECT_THROW(fit_d(d3, uniform(2), FunctionSpace::constant), DomainError);
    EXPECT_THROW(fit_rd_binary_linear(d3, uniform(3), zero_main_effect()), DomainError);
}

TEST(FitD, LargeMainEffectInflatesVariance) {
    // m(x) = 100 + x1; RD gets the exact main effect, D does not use one.
    std::vector<double> rd, dl;
    const auto prop = known_function_propensity(
        2,
        [](const Eigen::Ref<const Eigen::RowVectorXd>& x) {
            const double p1 = x(0) < 0.0 ? 0.8 : 0.2;
            return Vector{{p1, 1.0 - p1}};
        },
        "step");
    for (int rep = 0; rep < 200; ++rep) {
        std::mt19937_64 eng(2000 + static_cast<std::uint64_t>(rep));
        const Matrix x = testutil::gaussian_matrix(200, 3, eng);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> e(0.0, 1.0);
        std::vector<int> a(200);
        Vector y(200);
        for (Index i = 0; i < 200; ++i) {
            const double p1 = x(i, 0) < 0.0 ? 0.8 : 0.2;
            a[static_cast<std::size_t>(i)] = u(eng) < p1 ? 1 : 2;
            const double s = a[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
            y(i) = 100.0 + x(i, 0) + s * 0.5 * x(i, 1) + e(eng);
        }
        const auto d = testutil::make_dataset(x, a, y, 2);
        rd.push_back(fit_rd(d, prop, linear_main(100.0, Vector{{1.0, 0.0, 0.0}}), FunctionSpace::linear).coef(2, 0));
        dl.push_back(fit_d(d, prop, FunctionSpace::linear).coef(2, 0));
    }
    auto var = [](const std::vector<double>& v) {
        double m = 0.0, s = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size() - 1);
    };
    EXPECT_GT(var(dl), var(rd));
    EXPECT_GT(var(dl) / var(rd), 10.0);
}

TEST(FitQ, NoiselessLinearRecovery) {
    std::mt19937_64 eng(56);
    for (int k : {2, 3}) {
        const auto t = random_truth(3, k, eng);
        const auto d = sample(t, 90, k, eng, 0.0);
        const auto fit = fit_q(d, FunctionSpace::linear);
        const Matrix probe = testutil::gaussian_matrix(30, 3, eng);
        EXPECT_LE((fit.predict_effects(probe) - t.delta(probe)).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_THROW(fit.predict_f(probe), DomainError);
    }
}

TEST(FitQ, IdenticalArmsGiveNearZeroEffects) {
    std::mt19937_64 eng(57);
    auto t = random_truth(2, 3, eng);
    t.g.setZero();
    const auto d = sample(t, 6000, 3, eng, 1.0);
    const Matrix probe = testutil::gaussian_matrix(100, 2, eng);
    EXPECT_LE(fit_q(d, FunctionSpace::linear).predict_effects(probe).cwiseAbs().maxCoeff(), 0.15);
    EXPECT_LE(fit_rd(d, uniform(3), fit_main_effect(d, uniform(3), FunctionSpace::linear), FunctionSpace::linear)
                  .predict_effects(probe)
                  .cwiseAbs()
                  .maxCoeff(),
              0.15);
}

TEST(FitQ, EmptyArmIsRejected) {
    const auto d = testutil::make_dataset(Matrix{{0.0}, {1.0}, {2.0}}, {1, 1, 1}, Vector{{1.0, 2.0, 3.0}}, 2);
    EXPECT_THROW(fit_q(d, FunctionSpace::linear), DomainError);
}

TEST(Itr, ArgmaxExamplesAndTies) {
    EXPECT_EQ(argmax_arms(Matrix{{1.0, -1.0}}), std::vector<int>{1});
    EXPECT_EQ(argmax_arms(Matrix{{0.0, 0.0}}), std::vector<int>{1});
    EXPECT_EQ(argmax_arms(Matrix{{-1.0, 2.0, -1.0}}), std::vector<int>{2});
    EXPECT_EQ(argmax_arms(Matrix{{-1.0, 0.5, 0.5}}), std::vector<int>{2});
    const auto d = testutil::make_dataset(Matrix{{0.3}, {-0.2}}, {1, 2}, Vector{{2.0, 0.0}}, 2);
    const auto rule = itr(fit_d(d, uniform(2), FunctionSpace::constant));
    EXPECT_EQ(apply_itr(rule, Matrix{{0.0}, {5.0}}), (std::vector<int>{1, 1}));
}

TEST(Itr, MainEffectShiftLeavesRuleUnchanged) {
    std::mt19937_64 probe_eng(58);
    const Matrix probe = testutil::gaussian_matrix(500, 3, probe_eng);
    double worst = 1.0;
    for (int rep = 0; rep < 20; ++rep) {
        std::mt19937_64 eng(3000 + static_cast<std::uint64_t>(rep));
        const auto t = random_truth(3, 3, eng);
        const auto d = sample(t, 300, 3, eng, 1.0);
        Dataset shifted = d;
        for (Index i = 0; i < d.n(); ++i) shifted.y(i) += 3.0 * std::sin(d.x(i, 0)) + d.x(i, 1) * d.x(i, 1);
        EstimatorOptions o;
        o.regression.cv.rng = RngSpec{5, static_cast<std::uint64_t>(rep)};
        MainEffectOptions mo;
        mo.regression = o.regression;
        const auto base = fit_rd(d, uniform(3), fit_main_effect(d, uniform(3), FunctionSpace::kernel, mo), FunctionSpace::linear, o);
        const auto moved =
            fit_rd(shifted, uniform(3), fit_main_effect(shifted, uniform(3), FunctionSpace::kernel, mo), FunctionSpace::linear, o);
        const auto a1 = apply_itr(itr(base), probe);
        const auto a2 = apply_itr(itr(moved), probe);
        int same = 0;
        for (std::size_t i = 0; i < a1.size(); ++i) same += a1[i] == a2[i];
        worst = std::min(worst, same / 500.0);
    }
    EXPECT_GE(worst, 0.95);
}

TEST(DoubleRobustness, EitherNuisanceSufficesOnLinearTruth) {
    // Case III generator: m(x) = 1.5 x1 - x2 + 0.5 x3, delta linear, p1(x) = 2 / (2 + e^{x1}).
    const auto exact_main = linear_main(0.0, Vector{{1.5, -1.0, 0.5}});
    std::map<std::string, std::vector<double>> med;
    for (Index n : {200, 800, 3200}) {
        std::vector<double> a, b, c;
        for (int r = 0; r < 50; ++r) {
            DgpSpec s;
            s.case_id = CaseId::III;
            s.n = n;
            s.p = 3;
            s.rng = RngSpec{77, static_cast<std::uint64_t>(r)};
            const auto g = generate(s);
            DgpSpec ts = s;
            ts.n = 400;
            ts.rng = RngSpec{77, kTestStreamOffset + static_cast<std::uint64_t>(r)};
            const Matrix xt = generate(ts).data.x;
            const Matrix truth = g.oracle.delta(xt);
            const auto right_p = g.oracle.propensity_model();
            a.push_back(prediction_error(fit_rd(g.data, right_p, constant_main(0.0), FunctionSpace::linear).predict_effects(xt), truth));
            b.push_back(prediction_error(fit_rd(g.data, uniform(2), exact_main, FunctionSpace::linear).predict_effects(xt), truth));
            c.push_back(prediction_error(fit_rd(g.data, uniform(2), constant_main(0.0), FunctionSpace::linear).predict_effects(xt), truth));
        }
        med["a"].push_back(testutil::median(a));
        med["b"].push_back(testutil::median(b));
        med["c"].push_back(testutil::median(c));
    }
    for (const char* key : {"a", "b"}) {
        EXPECT_GT(med[key][0], med[key][1]) << key;
        EXPECT_GT(med[key][1], med[key][2]) << key;
        EXPECT_LT(med[key][2], med["c"][2]) << key;
    }
}
