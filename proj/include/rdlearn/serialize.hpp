#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "estimators.hpp"
#include "inference.hpp"
#include "simulation.hpp"

namespace rdlearn {

using Json = nlohmann::json;

/// Bumped whenever a saved document changes incompatibly.
inline constexpr int kFormatVersion = 1;

namespace io {

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, Index cols_if_empty = 0) {
    if (!j.is_array()) throw SchemaError("expected a matrix (array of rows)");
    const auto rows = static_cast<Index>(j.size());
    const Index cols = rows ? static_cast<Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const Json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw SchemaError("ragged matrix in JSON");
        for (Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline Json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const Json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

/// NaN and infinities have no JSON literal; they are written as null.
inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline void check_version(const Json& j, const char* what) {
    if (!j.contains("format_version")) throw SchemaError(std::string(what) + ": missing format_version");
    const int v = j.at("format_version").get<int>();
    if (v > kFormatVersion)
        throw SchemaError(std::string(what) + ": format_version " + std::to_string(v) + " is newer than supported " +
                          std::to_string(kFormatVersion));
}

}  // namespace io

// ---- regressors -------------------------------------------------------------

inline Json to_json(const Regressor& r) {
    Json j{{"space", to_string(r.space)}, {"lambda", r.lambda}};
    std::visit(
        [&](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, ConstantFunction>) {
                j["type"] = "constant";
                j["value"] = f.value;
            } else if constexpr (std::is_same_v<T, LinearFunction>) {
                j["type"] = "linear";
                j["intercept"] = f.intercept;
                j["beta"] = io::vector_to_json(f.beta);
            } else {
                j["type"] = "kernel";
                j["intercept"] = f.intercept;
                j["alpha"] = io::vector_to_json(f.alpha);
                j["bandwidth"] = f.bandwidth;
                j["kernel_lambda"] = f.lambda;
                j["train_x"] = io::matrix_to_json(f.train_x);
            }
        },
        r.fn);
    return j;
}

inline Regressor regressor_from_json(const Json& j) {
    Regressor r;
    r.space = parse_space(j.at("space").get<std::string>());
    r.lambda = j.value("lambda", 0.0);
    const auto type = j.at("type").get<std::string>();
    if (type == "constant") {
        r.fn = ConstantFunction{j.at("value").get<double>()};
    } else if (type == "linear") {
        r.fn = LinearFunction{j.at("intercept").get<double>(), io::vector_from_json(j.at("beta"))};
    } else if (type == "kernel") {
        KernelFit f;
        f.intercept = j.at("intercept").get<double>();
        f.alpha = io::vector_from_json(j.at("alpha"));
        f.bandwidth = j.at("bandwidth").get<double>();
        f.lambda = j.value("kernel_lambda", 0.0);
        f.train_x = io::matrix_from_json(j.at("train_x"));
        r.fn = std::move(f);
    } else {
        throw SchemaError("unknown regressor type '" + type + "'");
    }
    return r;
}

// ---- treatment-effect fits --------------------------------------------------

inline Json to_json(const TreatmentEffectFit& fit) {
    Json j{{"format_version", kFormatVersion},
           {"kind", "treatment_effect_fit"},
           {"method", to_string(fit.method)},
           {"space", to_string(fit.space)},
           {"k", fit.k},
           {"p", fit.p},
           {"lambda", fit.lambda},
           {"seed", fit.rng.seed},
           {"stream", fit.rng.stream},
           {"nuisance",
            {{"propensity", fit.nuisance.propensity},
             {"clip", fit.nuisance.clip},
             {"main_effect", fit.nuisance.main_effect},
             {"main_space", fit.nuisance.main_space}}}};
    if (fit.method == Method::q) {
        Json arms = Json::array();
        for (const auto& m : fit.arm_models) arms.push_back(to_json(m));
        j["arm_models"] = std::move(arms);
    } else if (fit.space == FunctionSpace::kernel) {
        j["bandwidth"] = fit.bandwidth;
        j["kernel_weights"] = io::matrix_to_json(fit.kernel_weights);
        j["kernel_intercepts"] = io::vector_to_json(fit.kernel_intercepts);
        j["train_x"] = io::matrix_to_json(fit.train_x);
    } else {
        j["coef"] = io::matrix_to_json(fit.coef);
    }
    return j;
}

inline TreatmentEffectFit fit_from_json(const Json& j) {
    io::check_version(j, "model");
    if (j.value("kind", std::string()) != "treatment_effect_fit") throw SchemaError("document is not a treatment-effect fit");
    TreatmentEffectFit fit;
    fit.method = parse_method(j.at("method").get<std::string>());
    fit.space = parse_space(j.at("space").get<std::string>());
    fit.k = j.at("k").get<int>();
    fit.p = j.at("p").get<Index>();
    fit.simplex = SimplexVertices(fit.k);
    fit.lambda = j.value("lambda", 0.0);
    fit.rng = RngSpec{j.value("seed", std::uint64_t{0}), j.value("stream", std::uint64_t{0})};
    if (j.contains("nuisance")) {
        const Json& n = j["nuisance"];
        fit.nuisance = {n.value("propensity", std::string("none")), n.value("clip", 0.0),
                        n.value("main_effect", std::string("zero")), n.value("main_space", std::string())};
    }
    if (fit.method == Method::q) {
        for (const auto& m : j.at("arm_models")) fit.arm_models.push_back(regressor_from_json(m));
        if (static_cast<int>(fit.arm_models.size()) != fit.k) throw SchemaError("Q-Learning model needs one regressor per arm");
    } else if (fit.space == FunctionSpace::kernel) {
        fit.bandwidth = j.at("bandwidth").get<double>();
        fit.kernel_weights = io::matrix_from_json(j.at("kernel_weights"), fit.k - 1);
        fit.kernel_intercepts = io::vector_from_json(j.at("kernel_intercepts"));
        fit.train_x = io::matrix_from_json(j.at("train_x"), fit.p);
    } else {
        fit.coef = io::matrix_from_json(j.at("coef"));
        if (fit.coef.rows() != fit.p + 1 || fit.coef.cols() != fit.k - 1) throw SchemaError("coefficient matrix has wrong shape");
    }
    return fit;
}

// ---- inference --------------------------------------------------------------

inline Json to_json(const WaldTable& t, const std::vector<std::string>& arm_labels = {},
                    const std::vector<std::string>& coef_names = {}) {
    Json rows = Json::array();
    for (const auto& r : t.rows) {
        Json row{{"arm", r.arm},
                 {"coefficient", r.coefficient},
                 {"estimate", r.estimate},
                 {"se", r.se},
                 {"z", io::number(r.z)},
                 {"p_value", r.p_value},
                 {"ci_low", r.ci_low},
                 {"ci_high", r.ci_high},
                 {"stars", r.stars}};
        if (static_cast<std::size_t>(r.arm - 1) < arm_labels.size()) row["arm_label"] = arm_labels[static_cast<std::size_t>(r.arm - 1)];
        row["name"] = t.coefficient_name(r.coefficient, coef_names);
        rows.push_back(std::move(row));
    }
    return Json{{"alpha", t.alpha}, {"z_crit", t.z_crit}, {"intercept", t.intercept}, {"rows", std::move(rows)}};
}

inline Json to_json(const InferenceReport& rep, const WaldTable& table, const std::vector<std::string>& arm_labels = {},
                    const std::vector<std::string>& coef_names = {}) {
    Json j{{"format_version", kFormatVersion},
           {"kind", "inference_report"},
           {"n", rep.n},
           {"covariance_form", to_string(rep.form)},
           {"gamma", io::matrix_to_json(rep.gamma.gamma)},
           {"se", io::matrix_to_json(rep.se)},
           {"covariance", io::matrix_to_json(rep.covariance)},
           {"tests", to_json(table, arm_labels, coef_names)}};
    if (rep.gamma.beta_tilde) j["beta_tilde"] = io::vector_to_json(*rep.gamma.beta_tilde);
    return j;
}

// ---- simulation -------------------------------------------------------------

inline Json to_json(const SummaryStats& s) {
    return Json{{"count", s.count},        {"mean", io::number(s.mean)}, {"se", io::number(s.se)},
                {"q1", io::number(s.q1)}, {"median", io::number(s.median)}, {"q3", io::number(s.q3)}};
}

inline Json summary_json(const SimulationPlan& plan, const std::vector<SummaryGroup>& groups) {
    Json g = Json::array();
    for (const auto& s : groups)
        g.push_back(Json{{"case", s.case_id},
                         {"method", s.method},
                         {"n", s.n},
                         {"failures", s.failures},
                         {"pe", to_json(s.pe)},
                         {"value", to_json(s.value)}});
    Json cases = Json::array();
    for (auto c : plan.cases) cases.push_back(to_string(c));
    Json methods = Json::array();
    for (auto m : plan.methods) methods.push_back(to_string(m));
    return Json{{"format_version", kFormatVersion},
                {"kind", "simulation_summary"},
                {"seed", plan.seed},
                {"replications", plan.replications},
                {"p", plan.p},
                {"sigma", plan.sigma},
                {"test_size", plan.test_size},
                {"cases", std::move(cases)},
                {"methods", std::move(methods)},
                {"n_grid", plan.n_grid},
                {"groups", std::move(g)}};
}

inline Json error_json(const std::string& kind, const std::string& message, int exit_code) {
    return Json{{"format_version", kFormatVersion}, {"error", {{"kind", kind}, {"message", message}, {"exit_code", exit_code}}}};
}

}  // namespace rdlearn
