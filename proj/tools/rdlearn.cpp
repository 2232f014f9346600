// Command-line front end: fit, infer, simulate, evaluate, stepp, generate.
//
// Every setting is a config key from `kKeys`. The same table drives the
// command-line flags, the --help text, the --schema listing and the check that
// rejects unknown keys in a --config file. Flags override the config file.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <rdlearn/rdlearn.hpp>

namespace fs = std::filesystem;
using rdlearn::Json;

namespace {

enum class KeyType { string, number, integer, boolean, list };

const char* type_name(KeyType t) {
    switch (t) {
        case KeyType::string: return "string";
        case KeyType::number: return "number";
        case KeyType::integer: return "integer";
        case KeyType::boolean: return "boolean";
        case KeyType::list: return "list";
    }
    return "?";
}

struct ConfigKey {
    const char* name;
    KeyType type;
    const char* commands;  // space-separated command names
    const char* fallback;  // default as text; empty = unset
    const char* help;
};

// clang-format off
const ConfigKey kKeys[] = {
    {"data",               KeyType::string,  "fit infer evaluate",       "",               "training CSV path"},
    {"test_data",          KeyType::string,  "evaluate",                 "",               "held-out CSV path"},
    {"model",              KeyType::string,  "evaluate",                 "",               "saved model JSON (instead of fitting on --data)"},
    {"outcome",            KeyType::string,  "fit infer evaluate",       "y",              "outcome column"},
    {"treatment",          KeyType::string,  "fit infer evaluate",       "a",              "treatment column"},
    {"covariates",         KeyType::list,    "fit infer evaluate",       "",               "covariate columns, comma separated (default: all others)"},
    {"propensity_columns", KeyType::list,    "fit infer evaluate",       "",               "per-arm propensity columns for known:columns"},
    {"method",             KeyType::string,  "fit evaluate",             "rd",             "rd, d or q"},
    {"methods",            KeyType::list,    "simulate stepp",           "rd,d,q",         "methods to compare (rd, d, q)"},
    {"space",              KeyType::string,  "fit evaluate simulate stepp", "",            "effect space: constant, linear, lasso or kernel (simulate/stepp: override per-case default)"},
    {"main_space",         KeyType::string,  "fit infer evaluate simulate stepp", "",      "main-effect space (default: same as space; simulate/stepp: per-case default)"},
    {"main_effect",        KeyType::string,  "fit infer evaluate",       "direct",         "main-effect estimator for rd/infer: direct, qlearning or zero"},
    {"propensity",         KeyType::string,  "fit infer evaluate simulate stepp", "",      "known:<p1,...,pk> | known:uniform | known:columns | known:case:<id> | logistic (simulate/stepp: truth, uniform or logistic)"},
    {"clip",               KeyType::number,  "fit infer evaluate simulate stepp", "0.05", "propensity floor"},
    {"lambda",             KeyType::number,  "fit evaluate",             "",               "effect-stage penalty (default: cross-validation)"},
    {"main_lambda",        KeyType::number,  "fit infer evaluate",       "",               "main-effect penalty (default: cross-validation)"},
    {"bandwidth",          KeyType::number,  "fit evaluate",             "",               "Gaussian kernel bandwidth (default: median heuristic)"},
    {"folds",              KeyType::integer, "fit infer evaluate simulate stepp", "5",    "cross-validation folds"},
    {"grid_size",          KeyType::integer, "fit infer evaluate simulate stepp", "50",   "cross-validation grid points"},
    {"cross_fit_folds",    KeyType::integer, "fit infer evaluate",       "0",              "cross-fitting folds for the main effect (0 = off)"},
    {"covariance_form",    KeyType::string,  "infer",                    "identity-block", "identity-block or as-written-J"},
    {"alpha",              KeyType::number,  "infer",                    "0.05",           "test level; CIs have coverage 1 - alpha"},
    {"intercept",          KeyType::boolean, "infer",                    "true",           "include an intercept column in the inference design"},
    {"naive_bias",         KeyType::boolean, "infer",                    "false",          "print the exact bias of the naive weighted estimator in the n=3 toy"},
    {"case",               KeyType::list,    "simulate stepp generate",  "I",              "design: I, II, III, IV, fig1-I, fig1-II"},
    {"n",                  KeyType::list,    "simulate stepp generate",  "200",            "training sample sizes"},
    {"replications",       KeyType::integer, "simulate stepp",           "10",             "replications per (case, n)"},
    {"p",                  KeyType::integer, "simulate stepp generate",  "100",            "number of covariates"},
    {"sigma",              KeyType::number,  "simulate stepp generate",  "1",              "noise standard deviation"},
    {"normal_scale",       KeyType::string,  "simulate stepp generate",  "variance3",      "scale of the normal covariates: variance3 or sd3"},
    {"test_size",          KeyType::integer, "simulate",                 "400",            "test points per replication"},
    {"timing",             KeyType::boolean, "simulate",                 "false",          "add a wall-time column to the metrics CSV"},
    {"grid",               KeyType::string,  "stepp",                    "-3:3:41",        "x1 grid as lo:hi:count"},
    {"contrast",           KeyType::list,    "stepp",                    "1,2",            "arms a,b of the plotted contrast delta_a - delta_b"},
    {"seed",               KeyType::integer, "fit infer evaluate simulate stepp generate", "0", "random seed"},
    {"stream",             KeyType::integer, "generate",                 "0",              "random stream"},
    {"threads",            KeyType::integer, "simulate stepp",           "1",              "worker threads"},
    {"out",                KeyType::string,  "fit infer evaluate simulate stepp generate", ".", "output directory"},
};
// clang-format on

const char* kCommands[] = {"fit", "infer", "simulate", "evaluate", "stepp", "generate"};

const char* command_help(const std::string& c) {
    if (c == "fit") return "fit a treatment-effect model; writes model.json and effects.csv";
    if (c == "infer") return "unbiased linear coefficients with sandwich standard errors; writes inference.json and inference.txt";
    if (c == "simulate") return "Monte Carlo comparison of methods; writes metrics.csv and summary.json";
    if (c == "evaluate") return "empirical value of the fitted rule on held-out data; writes evaluate.json";
    if (c == "stepp") return "replication bands of the estimated CATE along x1; writes stepp.csv";
    if (c == "generate") return "draw one simulated dataset; writes data.csv";
    return "";
}

bool applies(const ConfigKey& k, const std::string& command) {
    std::istringstream in(k.commands);
    std::string c;
    while (in >> c)
        if (c == command) return true;
    return false;
}

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : kKeys)
        if (name == k.name) return &k;
    return nullptr;
}

std::string flag_name(const char* key) {
    std::string s = key;
    for (auto& ch : s)
        if (ch == '_') ch = '-';
    return "--" + s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        const auto t = rdlearn::csv::trim(cur);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

/// Text value from the command line -> typed JSON value.
Json convert(const ConfigKey& k, const std::string& text) {
    const std::string where = std::string("config key '") + k.name + "'";
    switch (k.type) {
        case KeyType::string: return text;
        case KeyType::number: {
            auto v = rdlearn::csv::parse_double(text);
            if (!v) throw rdlearn::ValidationError(where + ": expected a number, got '" + text + "'");
            return *v;
        }
        case KeyType::integer: {
            auto v = rdlearn::csv::parse_double(text);
            if (!v || *v != std::floor(*v)) throw rdlearn::ValidationError(where + ": expected an integer, got '" + text + "'");
            return static_cast<std::int64_t>(*v);
        }
        case KeyType::boolean:
            if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
            if (text == "false" || text == "0" || text == "no" || text == "off") return false;
            throw rdlearn::ValidationError(where + ": expected true or false, got '" + text + "'");
        case KeyType::list: {
            Json arr = Json::array();
            for (const auto& s : split(text, ',')) arr.push_back(s);
            return arr;
        }
    }
    return nullptr;
}

/// Config-file value type check; lists also accept a single scalar.
Json check_json_value(const ConfigKey& k, const Json& v) {
    const std::string where = std::string("config key '") + k.name + "'";
    switch (k.type) {
        case KeyType::string:
            if (!v.is_string()) throw rdlearn::ValidationError(where + ": expected a string");
            return v;
        case KeyType::number:
            if (!v.is_number()) throw rdlearn::ValidationError(where + ": expected a number");
            return v;
        case KeyType::integer:
            if (!v.is_number_integer()) throw rdlearn::ValidationError(where + ": expected an integer");
            return v;
        case KeyType::boolean:
            if (!v.is_boolean()) throw rdlearn::ValidationError(where + ": expected true or false");
            return v;
        case KeyType::list: {
            Json arr = Json::array();
            auto add = [&](const Json& e) {
                if (e.is_string()) arr.push_back(e);
                else if (e.is_number()) arr.push_back(e.is_number_integer() ? std::to_string(e.get<std::int64_t>()) : rdlearn::csv::format_double(e.get<double>()));
                else throw rdlearn::ValidationError(where + ": list entries must be strings or numbers");
            };
            if (v.is_array())
                for (const auto& e : v) add(e);
            else
                add(v);
            return arr;
        }
    }
    return v;
}

Json schema_json() {
    Json keys = Json::array();
    for (const auto& k : kKeys) {
        Json cmds = Json::array();
        for (const auto& c : split(k.commands, ' ')) cmds.push_back(c);
        keys.push_back(Json{{"key", k.name},
                            {"flag", flag_name(k.name)},
                            {"type", type_name(k.type)},
                            {"commands", cmds},
                            {"default", k.fallback},
                            {"help", k.help}});
    }
    return Json{{"format_version", rdlearn::kFormatVersion}, {"commands", kCommands}, {"keys", keys}};
}

// ---------------------------------------------------------------------------
// Resolved configuration
// ---------------------------------------------------------------------------

class Config {
public:
    Config(std::string command, Json values) : command_(std::move(command)), v_(std::move(values)) {}

    const std::string& command() const { return command_; }
    const Json& json() const { return v_; }

    bool has(const char* key) const { return v_.contains(key) && !v_.at(key).is_null(); }

    std::string str(const char* key) const { return has(key) ? v_.at(key).get<std::string>() : std::string(); }
    double num(const char* key, double fallback) const { return has(key) ? v_.at(key).get<double>() : fallback; }
    std::int64_t integer(const char* key) const { return v_.at(key).get<std::int64_t>(); }
    bool flag(const char* key) const { return has(key) && v_.at(key).get<bool>(); }
    std::vector<std::string> list(const char* key) const {
        return has(key) ? v_.at(key).get<std::vector<std::string>>() : std::vector<std::string>{};
    }

    std::string require_str(const char* key) const {
        if (!has(key) || str(key).empty())
            throw rdlearn::ValidationError("command '" + command_ + "' needs " + flag_name(key));
        return str(key);
    }

private:
    std::string command_;
    Json v_;
};

Json read_config_file(const std::string& path) {
    const std::string text = rdlearn::csv::read_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw rdlearn::SchemaError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw rdlearn::SchemaError("config file must hold a JSON object");
    return j;
}

/// Merge defaults < config file < flags, rejecting keys the command does not take.
Config resolve(const std::string& command, const Json& file, const std::map<std::string, std::string>& flags) {
    Json v = Json::object();
    for (const auto& k : kKeys)
        if (applies(k, command) && *k.fallback) v[k.name] = convert(k, k.fallback);
    for (const auto& [name, value] : file.items()) {
        if (name == "command" || name == "format_version") continue;
        const ConfigKey* k = find_key(name);
        if (!k) throw rdlearn::ValidationError("unknown config key '" + name + "'");
        if (!applies(*k, command))
            throw rdlearn::ValidationError("config key '" + name + "' does not apply to command '" + command + "'");
        v[name] = check_json_value(*k, value);
    }
    for (const auto& [name, text] : flags) v[name] = convert(*find_key(name), text);
    return Config(command, std::move(v));
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fs::path out_dir(const Config& c) {
    fs::path p = c.str("out").empty() ? fs::path(".") : fs::path(c.str("out"));
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw rdlearn::ValidationError("cannot create output directory '" + p.string() + "': " + ec.message());
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw rdlearn::ValidationError("cannot write '" + path.string() + "'");
    f << text;
}

rdlearn::CsvSchema schema_of(const Config& c) {
    rdlearn::CsvSchema s;
    s.outcome = c.str("outcome");
    s.treatment = c.str("treatment");
    s.covariates = c.list("covariates");
    s.propensity = c.list("propensity_columns");
    return s;
}

rdlearn::Dataset load_data(const Config& c, const char* key) {
    auto d = rdlearn::load_csv(c.require_str(key), schema_of(c));
    if (d.k < 2) throw rdlearn::DomainError("treatment column has a single level; at least two arms are needed");
    return d;
}

rdlearn::RegressionOptions regression_options(const Config& c, const char* lambda_key) {
    rdlearn::RegressionOptions r;
    r.cv.folds = static_cast<int>(c.integer("folds"));
    r.cv.grid_size = static_cast<int>(c.integer("grid_size"));
    if (r.cv.folds < 2) throw rdlearn::ValidationError("folds must be >= 2");
    if (r.cv.grid_size < 1) throw rdlearn::ValidationError("grid_size must be >= 1");
    r.cv.rng = rdlearn::RngSpec{static_cast<std::uint64_t>(c.integer("seed")), 0};
    if (lambda_key && c.has(lambda_key)) {
        r.lambda = c.num(lambda_key, -1.0);
        if (!(r.lambda >= 0.0)) throw rdlearn::ValidationError(std::string(lambda_key) + " must be >= 0");
    }
    if (c.has("bandwidth")) {
        r.bandwidth = c.num("bandwidth", 0.0);
        if (!(r.bandwidth > 0.0)) throw rdlearn::ValidationError("bandwidth must be positive");
    }
    return r;
}

double clip_of(const Config& c) {
    const double clip = c.num("clip", 0.05);
    if (!(clip >= 0.0 && clip < 0.5)) throw rdlearn::ValidationError("clip must lie in [0, 0.5)");
    return clip;
}

/// Propensity model from a spec string (see the `propensity` key).
rdlearn::PropensityModel make_propensity(const Config& c, const rdlearn::Dataset& d) {
    const std::string spec = c.has("propensity") && !c.str("propensity").empty() ? c.str("propensity") : "logistic";
    const double clip = clip_of(c);
    if (spec == "logistic") {
        rdlearn::LogisticOptions lo;
        lo.clip = clip;
        return rdlearn::fit_propensity_mlogit(d, lo);
    }
    if (spec.rfind("known:", 0) != 0)
        throw rdlearn::ValidationError("propensity must be 'logistic' or start with 'known:' (got '" + spec + "')");
    const std::string rest = spec.substr(6);
    if (rest == "uniform") return rdlearn::known_constant_propensity(rdlearn::Vector::Constant(d.k, 1.0 / d.k), clip);
    if (rest == "columns") {
        if (!d.has_propensity_table()) throw rdlearn::ValidationError("known:columns needs --propensity-columns");
        return rdlearn::known_table_propensity(d.propensity, clip);
    }
    if (rest.rfind("case:", 0) == 0) {
        rdlearn::DgpSpec s;
        s.case_id = rdlearn::parse_case(rest.substr(5));
        s.p = d.p();
        if (rdlearn::case_arms(s) != d.k) throw rdlearn::DomainError("case propensity arm count does not match data");
        if (d.p() < rdlearn::case_min_p(s.case_id)) throw rdlearn::DomainError("data has too few covariates for case " + rest.substr(5));
        return rdlearn::Oracle(s).propensity_model(clip);
    }
    const auto parts = split(rest, ',');
    rdlearn::Vector probs(static_cast<rdlearn::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) {
        auto v = rdlearn::csv::parse_double(parts[i]);
        if (!v) throw rdlearn::ValidationError("bad probability '" + parts[i] + "' in propensity spec");
        probs(static_cast<rdlearn::Index>(i)) = *v;
    }
    if (probs.size() != d.k)
        throw rdlearn::DomainError("propensity spec lists " + std::to_string(probs.size()) + " probabilities for " +
                                   std::to_string(d.k) + " arms");
    return rdlearn::known_constant_propensity(probs, clip);
}

rdlearn::FunctionSpace effect_space(const Config& c) {
    return rdlearn::parse_space(c.str("space").empty() ? "linear" : c.str("space"));
}

rdlearn::MainEffectModel make_main_effect(const Config& c, const rdlearn::Dataset& d, const rdlearn::PropensityModel& prop) {
    const std::string kind = c.str("main_effect");
    const auto space = rdlearn::parse_space(c.str("main_space").empty() ? (c.str("space").empty() ? "linear" : c.str("space"))
                                                                       : c.str("main_space"));
    rdlearn::MainEffectOptions mo;
    mo.regression = regression_options(c, "main_lambda");
    mo.regression.cv.rng = mo.regression.cv.rng.with_stream(1);
    mo.cross_fit_folds = static_cast<int>(c.integer("cross_fit_folds"));
    if (kind == "zero") return rdlearn::zero_main_effect();
    if (kind == "direct") return rdlearn::fit_main_effect(d, prop, space, mo);
    if (kind == "qlearning") return rdlearn::qlearning_main_effect(d, space, mo.regression);
    throw rdlearn::ValidationError("main_effect must be direct, qlearning or zero (got '" + kind + "')");
}

rdlearn::TreatmentEffectFit fit_from_config(const Config& c, const rdlearn::Dataset& d) {
    const auto method = rdlearn::parse_method(c.str("method"));
    const auto space = effect_space(c);
    rdlearn::EstimatorOptions eo;
    eo.regression = regression_options(c, "lambda");
    eo.regression.cv.rng = eo.regression.cv.rng.with_stream(2);
    if (method == rdlearn::Method::q) return rdlearn::fit_q(d, space, eo);
    const auto prop = make_propensity(c, d);
    if (method == rdlearn::Method::d) return rdlearn::fit_d(d, prop, space, eo);
    return rdlearn::fit_rd(d, prop, make_main_effect(c, d, prop), space, eo);
}

std::string effects_csv(const rdlearn::Matrix& eff, const std::vector<std::string>& labels) {
    std::ostringstream out;
    out << "row";
    for (std::size_t j = 0; j < labels.size(); ++j) out << "," << rdlearn::csv::quote("delta_" + labels[j]);
    out << ",itr\n";
    const auto arms = rdlearn::argmax_arms(eff);
    for (rdlearn::Index i = 0; i < eff.rows(); ++i) {
        out << i + 1;
        for (rdlearn::Index j = 0; j < eff.cols(); ++j) out << "," << rdlearn::csv::format_double(eff(i, j));
        out << "," << rdlearn::csv::quote(labels[static_cast<std::size_t>(arms[static_cast<std::size_t>(i)] - 1)]) << "\n";
    }
    return out.str();
}

std::vector<rdlearn::Index> int_list(const Config& c, const char* key) {
    std::vector<rdlearn::Index> out;
    for (const auto& s : c.list(key)) {
        auto v = rdlearn::csv::parse_double(s);
        if (!v || *v != std::floor(*v) || *v < 1) throw rdlearn::ValidationError(std::string(key) + ": expected positive integers");
        out.push_back(static_cast<rdlearn::Index>(*v));
    }
    if (out.empty()) throw rdlearn::ValidationError(std::string(key) + " is empty");
    return out;
}

rdlearn::SimulationPlan plan_from_config(const Config& c) {
    rdlearn::SimulationPlan plan;
    plan.cases.clear();
    for (const auto& s : c.list("case")) plan.cases.push_back(rdlearn::parse_case(s));
    if (plan.cases.empty()) throw rdlearn::ValidationError("case is empty");
    plan.methods.clear();
    for (const auto& s : c.list("methods")) plan.methods.push_back(rdlearn::parse_method(s));
    if (plan.methods.empty()) throw rdlearn::ValidationError("methods is empty");
    plan.n_grid = int_list(c, "n");
    plan.replications = static_cast<int>(c.integer("replications"));
    plan.threads = static_cast<int>(c.integer("threads"));
    if (plan.threads < 1) throw rdlearn::ValidationError("threads must be >= 1");
    plan.p = static_cast<rdlearn::Index>(c.integer("p"));
    plan.sigma = c.num("sigma", 1.0);
    const std::string scale = c.str("normal_scale");
    if (scale == "variance3") plan.scale = rdlearn::NormalScale::variance3;
    else if (scale == "sd3") plan.scale = rdlearn::NormalScale::sd3;
    else throw rdlearn::ValidationError("normal_scale must be variance3 or sd3");
    plan.seed = static_cast<std::uint64_t>(c.integer("seed"));
    if (c.has("test_size")) plan.test_size = static_cast<rdlearn::Index>(c.integer("test_size"));
    plan.clip = clip_of(c);
    if (!c.str("space").empty()) plan.overrides.effect_space = rdlearn::parse_space(c.str("space"));
    if (!c.str("main_space").empty()) plan.overrides.main_space = rdlearn::parse_space(c.str("main_space"));
    if (!c.str("propensity").empty()) plan.overrides.propensity = rdlearn::parse_propensity_source(c.str("propensity"));
    plan.regression = regression_options(c, nullptr);
    return plan;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_fit(const Config& c) {
    const auto d = load_data(c, "data");
    const auto fit = fit_from_config(c, d);
    const auto dir = out_dir(c);
    const auto eff = fit.predict_effects(d.x);
    Json model = rdlearn::to_json(fit);
    model["arm_labels"] = d.arm_labels;
    model["covariate_names"] = d.covariate_names;
    write_text(dir / "model.json", model.dump(2) + "\n");
    write_text(dir / "effects.csv", effects_csv(eff, d.arm_labels));
    std::cout << "method " << rdlearn::to_string(fit.method) << ", space " << rdlearn::to_string(fit.space) << ", n "
              << d.n() << ", k " << d.k << "\n";
    std::cout << "wrote " << (dir / "model.json").string() << " and " << (dir / "effects.csv").string() << "\n";
    return 0;
}

int cmd_infer(const Config& c) {
    if (c.flag("naive_bias")) {
        std::cout << rdlearn::bias_of_naive_beta() << "\n";
        return 0;
    }
    const auto d = load_data(c, "data");
    const std::string spec = c.str("propensity");
    if (spec.empty() || spec.rfind("known:", 0) != 0)
        throw rdlearn::ContractError("infer requires a known propensity (--propensity known:...)");
    const auto prop = make_propensity(c, d);
    const auto main = make_main_effect(c, d, prop);
    const bool intercept = c.flag("intercept");
    const auto gamma = rdlearn::estimate_gamma(d, prop, main, intercept);
    const auto form = rdlearn::parse_covariance_form(c.str("covariance_form"));
    const auto rep = rdlearn::sandwich_covariance(d, prop, main, gamma, form);
    const auto table = rdlearn::wald_tests(rep, c.num("alpha", 0.05));
    const std::string text = rdlearn::format_wald_table(table, d.arm_labels, d.covariate_names);
    const auto dir = out_dir(c);
    write_text(dir / "inference.json", rdlearn::to_json(rep, table, d.arm_labels, d.covariate_names).dump(2) + "\n");
    write_text(dir / "inference.txt", text);
    std::cout << "covariance form " << rdlearn::to_string(form) << ", z multiplier "
              << rdlearn::csv::format_double(table.z_crit) << "\n"
              << text;
    return 0;
}

int cmd_simulate(const Config& c) {
    const auto plan = plan_from_config(c);
    const auto rows = rdlearn::run_replications(plan);
    const auto groups = rdlearn::summarize_metrics(rows);
    const auto dir = out_dir(c);
    write_text(dir / "metrics.csv", rdlearn::metrics_csv(rows, c.flag("timing")));
    write_text(dir / "summary.json", rdlearn::summary_json(plan, groups).dump(2) + "\n");
    std::size_t failures = 0;
    for (const auto& g : groups) {
        failures += g.failures;
        std::cout << "case " << g.case_id << " method " << g.method << " n " << g.n << ": median PE "
                  << rdlearn::csv::format_double(g.pe.median) << " (" << g.pe.count << " ok, " << g.failures
                  << " failed)\n";
    }
    std::cout << "wrote " << rows.size() << " rows to " << (dir / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_evaluate(const Config& c) {
    const auto test = load_data(c, "test_data");
    rdlearn::TreatmentEffectFit fit;
    if (c.has("model") && !c.str("model").empty()) {
        const Json j = Json::parse(rdlearn::csv::read_file(c.str("model")), nullptr, false);
        if (j.is_discarded()) throw rdlearn::SchemaError("model file is not valid JSON");
        fit = rdlearn::fit_from_json(j);
    } else {
        fit = fit_from_config(c, load_data(c, "data"));
    }
    if (fit.k != test.k) throw rdlearn::DomainError("model arm count does not match test data");
    const auto prop = make_propensity(c, test);
    const auto assigned = rdlearn::argmax_arms(fit.predict_effects(test.x));
    const double value = rdlearn::empirical_value(assigned, test, prop);
    std::size_t followed = 0;
    for (std::size_t i = 0; i < assigned.size(); ++i) followed += assigned[i] == test.a[i];
    const auto dir = out_dir(c);
    const Json out{{"format_version", rdlearn::kFormatVersion},
                   {"kind", "evaluation"},
                   {"value", value},
                   {"n", test.n()},
                   {"followed", followed},
                   {"propensity", prop.name}};
    write_text(dir / "evaluate.json", out.dump(2) + "\n");
    std::cout << "empirical value " << rdlearn::csv::format_double(value) << " (" << followed << " of " << test.n()
              << " observations follow the rule)\n";
    return 0;
}

int cmd_stepp(const Config& c) {
    rdlearn::SteppPlan sp;
    sp.base = plan_from_config(c);
    if (sp.base.cases.size() != 1) throw rdlearn::ValidationError("stepp takes exactly one case");
    if (sp.base.n_grid.size() != 1) throw rdlearn::ValidationError("stepp takes exactly one n");
    sp.case_id = sp.base.cases.front();
    sp.n = sp.base.n_grid.front();
    sp.replications = sp.base.replications;
    sp.methods = sp.base.methods;
    const auto g = split(c.str("grid"), ':');
    if (g.size() != 3) throw rdlearn::ValidationError("grid must be lo:hi:count");
    const auto lo = rdlearn::csv::parse_double(g[0]), hi = rdlearn::csv::parse_double(g[1]),
               cnt = rdlearn::csv::parse_double(g[2]);
    if (!lo || !hi || !cnt || *cnt < 1 || *cnt != std::floor(*cnt) || !(*hi >= *lo))
        throw rdlearn::ValidationError("grid must be lo:hi:count with lo <= hi and count >= 1");
    sp.grid = rdlearn::linspace(*lo, *hi, static_cast<int>(*cnt));
    const auto contrast = int_list(c, "contrast");
    if (contrast.size() != 2) throw rdlearn::ValidationError("contrast needs two arms");
    sp.arm_a = static_cast<int>(contrast[0]);
    sp.arm_b = static_cast<int>(contrast[1]);
    const auto bands = rdlearn::run_stepp(sp);
    const auto dir = out_dir(c);
    write_text(dir / "stepp.csv", rdlearn::stepp_csv(bands));
    for (const auto& b : bands) {
        double w = 0.0;
        for (std::size_t i = 0; i < b.x1.size(); ++i) w += b.width(i);
        std::cout << "method " << b.method << ": mean band width " << rdlearn::csv::format_double(w / b.x1.size()) << "\n";
    }
    std::cout << "wrote " << (dir / "stepp.csv").string() << "\n";
    return 0;
}

int cmd_generate(const Config& c) {
    rdlearn::DgpSpec s;
    const auto cases = c.list("case");
    if (cases.size() != 1) throw rdlearn::ValidationError("generate takes exactly one case");
    s.case_id = rdlearn::parse_case(cases.front());
    const auto ns = int_list(c, "n");
    if (ns.size() != 1) throw rdlearn::ValidationError("generate takes exactly one n");
    s.n = ns.front();
    s.p = static_cast<rdlearn::Index>(c.integer("p"));
    s.sigma = c.num("sigma", 1.0);
    const std::string scale = c.str("normal_scale");
    if (scale == "variance3") s.scale = rdlearn::NormalScale::variance3;
    else if (scale == "sd3") s.scale = rdlearn::NormalScale::sd3;
    else throw rdlearn::ValidationError("normal_scale must be variance3 or sd3");
    s.rng = rdlearn::RngSpec{static_cast<std::uint64_t>(c.integer("seed")), static_cast<std::uint64_t>(c.integer("stream"))};
    auto g = rdlearn::generate(s);
    g.data.propensity = g.oracle.propensity(g.data.x);
    rdlearn::CsvSchema schema{"y", "a", {}, {}};
    for (int j = 0; j < g.data.k; ++j) schema.propensity.push_back("p_" + g.data.arm_labels[static_cast<std::size_t>(j)]);
    const auto dir = out_dir(c);
    write_text(dir / "data.csv", rdlearn::to_csv_text(g.data, schema));
    std::cout << "wrote " << g.data.n() << " rows of case " << rdlearn::to_string(s.case_id) << " to "
              << (dir / "data.csv").string() << "\n";
    return 0;
}

int run(const Config& c) {
    const auto& cmd = c.command();
    if (cmd == "fit") return cmd_fit(c);
    if (cmd == "infer") return cmd_infer(c);
    if (cmd == "simulate") return cmd_simulate(c);
    if (cmd == "evaluate") return cmd_evaluate(c);
    if (cmd == "stepp") return cmd_stepp(c);
    if (cmd == "generate") return cmd_generate(c);
    throw rdlearn::ValidationError("unknown command '" + cmd + "'");
}

/// 1: invalid input or contract violation; 2: numerical failure.
int exit_code_for(const rdlearn::Error& e) {
    const std::string kind = e.kind();
    return kind == "singular" || kind == "undefined-value" ? 2 : 1;
}

int report(const std::string& kind, const std::string& message, int code) {
    std::cerr << rdlearn::error_json(kind, message, code).dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Doubly robust estimation of heterogeneous treatment effects"};
    app.require_subcommand(0, 1);
    std::string top_config;
    app.add_option("--config", top_config, "JSON config file; may contain a \"command\" key");
    bool print_schema = false;
    app.add_flag("--schema", print_schema, "print every config key as JSON and exit");

    std::map<std::string, std::map<std::string, std::string>> flag_values;
    std::map<std::string, std::string> sub_config;
    for (const char* name : kCommands) {
        auto* sub = app.add_subcommand(name, command_help(name));
        sub->add_option("--config", sub_config[name], "JSON config file; flags override its keys");
        for (const auto& k : kKeys) {
            if (!applies(k, name)) continue;
            std::string desc = std::string(k.help) + " [" + type_name(k.type) + "; key " + k.name +
                               (*k.fallback ? std::string("; default ") + k.fallback : std::string()) + "]";
            auto& slot = flag_values[name][k.name];
            if (k.type == KeyType::boolean)
                sub->add_option(flag_name(k.name), slot, desc)->expected(0, 1)->default_str("true");
            else
                sub->add_option(flag_name(k.name), slot, desc);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("usage", e.what(), 1);
    }

    try {
        if (print_schema) {
            std::cout << schema_json().dump(2) << "\n";
            return 0;
        }
        std::string command;
        CLI::App* chosen = nullptr;
        for (const char* name : kCommands)
            if (app.got_subcommand(name)) {
                command = name;
                chosen = app.get_subcommand(name);
            }
        std::string config_path = top_config;
        if (chosen && !sub_config[command].empty()) config_path = sub_config[command];
        Json file = config_path.empty() ? Json::object() : read_config_file(config_path);
        if (file.contains("command")) {
            if (!file["command"].is_string()) throw rdlearn::ValidationError("config key 'command' must be a string");
            const auto fc = file["command"].get<std::string>();
            if (command.empty()) command = fc;
            else if (fc != command)
                throw rdlearn::ValidationError("config file is for command '" + fc + "', not '" + command + "'");
        }
        if (command.empty()) {
            std::cout << app.help();
            return 1;
        }
        if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands))
            throw rdlearn::ValidationError("unknown command '" + command + "'");
        if (file.contains("version") || file.contains("format_version")) {
            const int v = file.value("format_version", rdlearn::kFormatVersion);
            if (v > rdlearn::kFormatVersion) throw rdlearn::SchemaError("config format_version is newer than supported");
        }

        std::map<std::string, std::string> given;
        if (chosen)
            for (const auto& k : kKeys)
                if (applies(k, command) && chosen->count(flag_name(k.name)) > 0)
                    given[k.name] = flag_values[command][k.name].empty() && k.type == KeyType::boolean
                                        ? std::string("true")
                                        : flag_values[command][k.name];
        return run(resolve(command, file, given));
    } catch (const rdlearn::Error& e) {
        return report(e.kind(), e.what(), exit_code_for(e));
    } catch (const Json::exception& e) {
        return report("schema", e.what(), 1);
    } catch (const std::exception& e) {
        return report("internal", e.what(), 2);
    }
}
