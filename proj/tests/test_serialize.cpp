#include <gtest/gtest.h>

#include <rdlearn/serialize.hpp>

#include "test_util.hpp"

using namespace rdlearn;

namespace {

Dataset three_arm(std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    Matrix x = testutil::gaussian_matrix(90, 3, eng);
    auto a = testutil::random_arms(90, 3, eng);
    std::normal_distribution<double> e(0.0, 0.3);
    Vector y(90);
    for (Index i = 0; i < 90; ++i) y(i) = x(i, 0) * (a[static_cast<std::size_t>(i)] - 2) + x(i, 1) + e(eng);
    return testutil::make_dataset(std::move(x), std::move(a), std::move(y), 3);
}

TreatmentEffectFit reload(const TreatmentEffectFit& fit) { return fit_from_json(Json::parse(to_json(fit).dump())); }

}  // namespace

TEST(Serialize, RoundTripPreservesPredictions) {
    const auto d = three_arm(1);
    const auto prop = known_constant_propensity(Vector::Constant(3, 1.0 / 3.0));
    EstimatorOptions eo;
    eo.regression.cv.grid_size = 8;
    std::mt19937_64 eng(2);
    const Matrix xt = testutil::gaussian_matrix(25, 3, eng);
    for (auto space : {FunctionSpace::constant, FunctionSpace::linear, FunctionSpace::lasso, FunctionSpace::kernel}) {
        const auto fit = fit_rd(d, prop, zero_main_effect(), space, eo);
        const auto back = reload(fit);
        EXPECT_EQ(back.method, fit.method);
        EXPECT_EQ(back.space, fit.space);
        EXPECT_EQ(back.k, 3);
        EXPECT_EQ(back.lambda, fit.lambda);
        EXPECT_EQ(back.predict_effects(xt), fit.predict_effects(xt)) << to_string(space);
        EXPECT_EQ(back.predict_f(xt), fit.predict_f(xt));
    }
    for (auto space : {FunctionSpace::linear, FunctionSpace::kernel}) {
        const auto fit = fit_q(d, space, eo);
        EXPECT_EQ(reload(fit).predict_effects(xt), fit.predict_effects(xt)) << to_string(space);
    }
}

TEST(Serialize, NuisanceMetadataSurvives) {
    const auto d = three_arm(3);
    auto fit = fit_d(d, known_constant_propensity(Vector::Constant(3, 1.0 / 3.0)), FunctionSpace::linear);
    fit.nuisance = {"logistic", 0.05, "direct", "kernel"};
    fit.rng = RngSpec{42, 9};
    const auto back = reload(fit);
    EXPECT_EQ(back.nuisance.propensity, "logistic");
    EXPECT_EQ(back.nuisance.clip, 0.05);
    EXPECT_EQ(back.nuisance.main_effect, "direct");
    EXPECT_EQ(back.nuisance.main_space, "kernel");
    EXPECT_EQ(back.rng.seed, 42u);
    EXPECT_EQ(back.rng.stream, 9u);
}

TEST(Serialize, RejectsNewerVersionsAndForeignDocuments) {
    const auto d = three_arm(4);
    Json j = to_json(fit_d(d, known_constant_propensity(Vector::Constant(3, 1.0 / 3.0)), FunctionSpace::linear));
    j["format_version"] = kFormatVersion + 1;
    EXPECT_THROW(fit_from_json(j), SchemaError);
    j.erase("format_version");
    EXPECT_THROW(fit_from_json(j), SchemaError);
    EXPECT_THROW(fit_from_json(Json{{"format_version", 1}, {"kind", "simulation_summary"}}), SchemaError);
    Json bad = to_json(fit_d(d, known_constant_propensity(Vector::Constant(3, 1.0 / 3.0)), FunctionSpace::linear));
    bad["coef"] = Json::array({Json::array({1.0, 2.0})});
    EXPECT_THROW(fit_from_json(bad), SchemaError);
    bad["coef"] = Json::array({Json::array({1.0, 2.0}), Json::array({1.0})});
    EXPECT_THROW(fit_from_json(bad), SchemaError);
}

TEST(Serialize, NonFiniteNumbersBecomeNull) {
    EXPECT_TRUE(io::number(std::numeric_limits<double>::infinity()).is_null());
    EXPECT_TRUE(io::number(std::nan("")).is_null());
    EXPECT_EQ(io::number(1.5).get<double>(), 1.5);
    SummaryStats empty;
    EXPECT_TRUE(to_json(empty)["mean"].is_null());
}

TEST(Serialize, ErrorDocumentShape) {
    const Json e = error_json("domain", "bad k", 2);
    EXPECT_EQ(e["format_version"], kFormatVersion);
    EXPECT_EQ(e["error"]["kind"], "domain");
    EXPECT_EQ(e["error"]["exit_code"], 2);
}
