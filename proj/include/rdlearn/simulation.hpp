#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "core.hpp"
#include "csv.hpp"
#include "estimators.hpp"
#include "nuisance.hpp"

namespace rdlearn {

// ---------------------------------------------------------------------------
// Data-generating processes
// ---------------------------------------------------------------------------

/// Built-in designs. `fig1_I` / `fig1_II` are the two toy designs used for the
/// STEPP comparison; `custom` takes user-supplied mean and propensity functions.
enum class CaseId { I, II, III, IV, fig1_I, fig1_II, custom };

inline std::string to_string(CaseId c) {
    switch (c) {
        case CaseId::I: return "I";
        case CaseId::II: return "II";
        case CaseId::III: return "III";
        case CaseId::IV: return "IV";
        case CaseId::fig1_I: return "fig1-I";
        case CaseId::fig1_II: return "fig1-II";
        case CaseId::custom: return "custom";
    }
    return "?";
}

inline CaseId parse_case(const std::string& s) {
    if (s == "I" || s == "1") return CaseId::I;
    if (s == "II" || s == "2") return CaseId::II;
    if (s == "III" || s == "3") return CaseId::III;
    if (s == "IV" || s == "4") return CaseId::IV;
    if (s == "fig1-I") return CaseId::fig1_I;
    if (s == "fig1-II") return CaseId::fig1_II;
    if (s == "custom") throw DomainError("case 'custom' needs programmatic mean and propensity functions");
    throw DomainError("unknown case id '" + s + "' (expected I, II, III, IV, fig1-I or fig1-II)");
}

/// How the "N(0, 3)" covariates are scaled: variance 3 (default) or standard deviation 3.
enum class NormalScale { variance3, sd3 };

using RowFunction = std::function<Vector(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

struct CustomDgp {
    int k = 2;
    RowFunction mu;          // conditional mean per arm
    RowFunction propensity;  // arm probabilities
};

struct DgpSpec {
    CaseId case_id = CaseId::I;
    Index n = 200;
    Index p = 100;
    double sigma = 1.0;
    NormalScale scale = NormalScale::variance3;
    RngSpec rng{};
    CustomDgp custom{};
};

inline int case_arms(const DgpSpec& s) {
    if (s.case_id == CaseId::IV) return 3;
    if (s.case_id == CaseId::custom) return s.custom.k;
    return 2;
}

inline Index case_min_p(CaseId c) {
    switch (c) {
        case CaseId::I:
        case CaseId::II:
        case CaseId::fig1_I:
        case CaseId::fig1_II: return 2;
        case CaseId::III:
        case CaseId::IV: return 3;
        case CaseId::custom: return 1;
    }
    return 1;
}

/// True mean, effect and propensity functions of a design. Read-only; safe to share.
class Oracle {
public:
    explicit Oracle(DgpSpec spec) : spec_(std::move(spec)), k_(case_arms(spec_)) {}

    int k() const { return k_; }
    const DgpSpec& spec() const { return spec_; }

    /// n x k conditional means.
    Matrix mu(const Eigen::Ref<const Matrix>& x) const {
        Matrix out(x.rows(), k_);
        for (Index i = 0; i < x.rows(); ++i) out.row(i) = mu_row(x.row(i)).transpose();
        return out;
    }

    Vector main_effect(const Eigen::Ref<const Matrix>& x) const { return mu(x).rowwise().mean(); }

    /// n x k effects delta_j = mu_j - m; rows sum to zero.
    Matrix delta(const Eigen::Ref<const Matrix>& x) const {
        Matrix m = mu(x);
        const Vector avg = m.rowwise().mean();
        m.colwise() -= avg;
        return m;
    }

    Matrix propensity(const Eigen::Ref<const Matrix>& x) const {
        Matrix out(x.rows(), k_);
        for (Index i = 0; i < x.rows(); ++i) out.row(i) = propensity_row(x.row(i)).transpose();
        return out;
    }

    Vector mu_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
        Vector m(k_);
        switch (spec_.case_id) {
            case CaseId::I: {
                const double base = 2.0 * std::cos(x(0) + std::numbers::pi / 4.0) - std::tanh(x(1));
                m << base + x(0), base + 2.0 * x(0);
                break;
            }
            case CaseId::II: {
                const double s = 4.0 / (1.0 + std::exp(x(1) - x(0)));
                m << std::tanh(x(0)) - s + 3.0, std::tanh(x(0)) + s;
                break;
            }
            case CaseId::III: m << x(0) - x(1) + x(2), 2.0 * x(0) - x(1); break;
            case CaseId::IV: {
                const double q = (x(0) * x(0) + x(1) * x(1) + x(2) * x(2)) / 3.0;
                m << q + x(0) - x(1), q + x(1) - x(2), q + x(2) - x(0);
                break;
            }
            case CaseId::fig1_I: {
                // (3 - j) x1 / 2 with j = +1 and j = -1
                const double base = 2.0 * std::cos(x(0) + std::numbers::pi / 4.0) - std::tanh(x(0));
                m << base + x(0), base + 2.0 * x(0);
                break;
            }
            case CaseId::fig1_II: m << x(0) + x(1), 2.0 * x(0) + x(1); break;
            case CaseId::custom: m = spec_.custom.mu(x); break;
        }
        return m;
    }

    Vector propensity_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
        Vector p(k_);
        switch (spec_.case_id) {
            case CaseId::I:
            case CaseId::fig1_I: {
                const double p1 = x(0) < 0.0 ? 0.8 : 0.2;
                p << p1, 1.0 - p1;
                break;
            }
            case CaseId::II: p << 0.2, 0.8; break;
            case CaseId::III: {
                const double p1 = 2.0 / (2.0 + std::exp(x(0)));
                p << p1, 1.0 - p1;
                break;
            }
            case CaseId::IV:
                if (x(0) >= x(1) && x(0) >= x(2)) p << 0.5, 0.25, 0.25;
                else if (x(1) > x(0) && x(1) >= x(2)) p << 0.25, 0.5, 0.25;
                else p << 0.25, 0.25, 0.5;
                break;
            case CaseId::fig1_II: p << 0.5, 0.5; break;
            case CaseId::custom: p = spec_.custom.propensity(x); break;
        }
        return p;
    }

    PropensityModel propensity_model(double clip = 0.05) const {
        const Oracle self = *this;
        return known_function_propensity(
            k_, [self](const Eigen::Ref<const Eigen::RowVectorXd>& x) { return self.propensity_row(x); },
            "case:" + to_string(spec_.case_id), clip);
    }

    /// Median of each covariate's marginal distribution.
    Eigen::RowVectorXd covariate_medians() const {
        Eigen::RowVectorXd m(spec_.p);
        for (Index j = 0; j < spec_.p; ++j) m(j) = j < 3 ? 0.0 : 0.5;
        return m;
    }

private:
    DgpSpec spec_;
    int k_;
};

inline void check_spec(const DgpSpec& s) {
    if (s.n < 1) throw DomainError("DgpSpec: n must be positive");
    if (s.p < case_min_p(s.case_id))
        throw DomainError("case " + to_string(s.case_id) + " needs p >= " + std::to_string(case_min_p(s.case_id)));
    if (!(s.sigma >= 0.0) || !std::isfinite(s.sigma)) throw DomainError("DgpSpec: sigma must be finite and >= 0");
    if (s.case_id == CaseId::custom && (s.custom.k < 2 || !s.custom.mu || !s.custom.propensity))
        throw DomainError("custom case needs k >= 2 and both mean and propensity functions");
}

/// Covariates: the first three i.i.d. normal with mean 0, the rest Uniform(0, 1).
inline Matrix draw_covariates(const DgpSpec& s, Index n, std::mt19937_64& eng) {
    const double sd = s.scale == NormalScale::variance3 ? std::sqrt(3.0) : 3.0;
    std::normal_distribution<double> normal(0.0, sd);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix x(n, s.p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < s.p; ++j) x(i, j) = j < 3 ? normal(eng) : unif(eng);
    return x;
}

struct Generated {
    Dataset data;
    Oracle oracle;
};

inline Generated generate(const DgpSpec& spec) {
    check_spec(spec);
    Oracle oracle(spec);
    auto eng = spec.rng.engine();
    const int k = oracle.k();

    Dataset d;
    d.k = k;
    d.x = draw_covariates(spec, spec.n, eng);
    d.a.resize(static_cast<std::size_t>(spec.n));
    d.y.resize(spec.n);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (Index i = 0; i < spec.n; ++i) {
        const Vector pr = oracle.propensity_row(d.x.row(i));
        const double u = unif(eng);
        int arm = k;
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            acc += pr(j);
            if (u < acc) {
                arm = j + 1;
                break;
            }
        }
        d.a[static_cast<std::size_t>(i)] = arm;
        const double eps = noise(eng);
        d.y(i) = oracle.mu_row(d.x.row(i))(arm - 1) + spec.sigma * eps;
    }
    if (k == 2) d.arm_labels = {"1", "-1"};
    else
        for (int j = 1; j <= k; ++j) d.arm_labels.push_back(std::to_string(j));
    for (Index j = 0; j < spec.p; ++j) d.covariate_names.push_back("x" + std::to_string(j + 1));
    return {std::move(d), std::move(oracle)};
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// (1/m) sum_i sum_j (dhat_ij - d_ij)^2
inline double prediction_error(const Eigen::Ref<const Matrix>& delta_hat, const Eigen::Ref<const Matrix>& delta) {
    if (delta_hat.rows() != delta.rows() || delta_hat.cols() != delta.cols())
        throw DomainError("prediction_error: shape mismatch");
    if (delta.rows() < 1) throw DomainError("prediction_error: empty test set");
    return (delta_hat - delta).squaredNorm() / static_cast<double>(delta.rows());
}

inline double prediction_error(const TreatmentEffectFit& fit, const Oracle& oracle, const Eigen::Ref<const Matrix>& x) {
    return prediction_error(fit.predict_effects(x), oracle.delta(x));
}

/// Inverse-propensity weighted mean outcome among rows whose arm matches the rule.
inline double empirical_value(const std::vector<int>& assigned, const Dataset& data, const PropensityModel& prop) {
    if (assigned.size() != data.a.size()) throw DomainError("empirical_value: assignment length mismatch");
    const Matrix pr = prop.predict_raw(data.x);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < assigned.size(); ++i) {
        if (assigned[i] != data.a[i]) continue;
        const double w = 1.0 / pr(static_cast<Index>(i), data.a[i] - 1);
        num += w * data.y(static_cast<Index>(i));
        den += w;
    }
    if (!(den > 0.0)) throw UndefinedValueError("empirical value undefined: no observation follows the rule");
    return num / den;
}

inline double empirical_value(const ItrRule& rule, const Dataset& data, const PropensityModel& prop) {
    return empirical_value(rule.apply(data.x), data, prop);
}

// ---------------------------------------------------------------------------
// Method presets
// ---------------------------------------------------------------------------

enum class PropensitySource { truth, uniform, logistic };

inline std::string to_string(PropensitySource s) {
    switch (s) {
        case PropensitySource::truth: return "truth";
        case PropensitySource::uniform: return "uniform";
        case PropensitySource::logistic: return "logistic";
    }
    return "?";
}

inline PropensitySource parse_propensity_source(const std::string& s) {
    if (s == "truth" || s == "known") return PropensitySource::truth;
    if (s == "uniform" || s == "half") return PropensitySource::uniform;
    if (s == "logistic") return PropensitySource::logistic;
    throw DomainError("unknown propensity source '" + s + "' (expected truth, uniform or logistic)");
}

struct MethodSpec {
    Method method = Method::rd;
    FunctionSpace effect_space = FunctionSpace::lasso;
    FunctionSpace main_space = FunctionSpace::kernel;  // rd only
    PropensitySource propensity = PropensitySource::truth;

    std::string label() const { return to_string(method); }
};

/// Per-case function spaces and propensity handling of the simulation study.
inline MethodSpec default_method_spec(CaseId c, Method m) {
    MethodSpec s;
    s.method = m;
    switch (c) {
        case CaseId::I:
        case CaseId::IV:
        case CaseId::fig1_I:
        case CaseId::custom:
            s.effect_space = m == Method::q ? FunctionSpace::kernel : FunctionSpace::lasso;
            s.main_space = FunctionSpace::kernel;
            break;
        case CaseId::II:
            s.effect_space = FunctionSpace::kernel;
            s.main_space = FunctionSpace::lasso;
            break;
        case CaseId::III:
            s.effect_space = FunctionSpace::lasso;
            s.main_space = FunctionSpace::lasso;
            s.propensity = PropensitySource::uniform;
            break;
        case CaseId::fig1_II:
            s.effect_space = FunctionSpace::lasso;
            s.main_space = FunctionSpace::lasso;
            break;
    }
    return s;
}

struct MethodOverrides {
    std::optional<FunctionSpace> effect_space;
    std::optional<FunctionSpace> main_space;
    std::optional<PropensitySource> propensity;
};

inline MethodSpec resolve_method(CaseId c, Method m, const MethodOverrides& o) {
    MethodSpec s = default_method_spec(c, m);
    if (o.effect_space) s.effect_space = *o.effect_space;
    if (o.main_space) s.main_space = *o.main_space;
    if (o.propensity) s.propensity = *o.propensity;
    return s;
}

inline PropensityModel make_propensity(PropensitySource src, const Dataset& data, const Oracle& oracle, double clip) {
    switch (src) {
        case PropensitySource::truth: return oracle.propensity_model(clip);
        case PropensitySource::uniform: return known_constant_propensity(Vector::Constant(data.k, 1.0 / data.k), clip);
        case PropensitySource::logistic: {
            LogisticOptions lo;
            lo.clip = clip;
            return fit_propensity_mlogit(data, lo);
        }
    }
    throw DomainError("unknown propensity source");
}

inline TreatmentEffectFit fit_method(const MethodSpec& spec, const Dataset& data, const Oracle& oracle,
                                     const RegressionOptions& reg, double clip = 0.05) {
    EstimatorOptions eo;
    eo.regression = reg;
    if (spec.method == Method::q) return fit_q(data, spec.effect_space, eo);
    const PropensityModel prop = make_propensity(spec.propensity, data, oracle, clip);
    if (spec.method == Method::d) return fit_d(data, prop, spec.effect_space, eo);
    MainEffectOptions mo;
    mo.regression = reg;
    mo.regression.cv.rng = reg.cv.rng.with_stream(reg.cv.rng.stream ^ 0x6d61696eULL);
    const auto main = fit_main_effect(data, prop, spec.main_space, mo);
    return fit_rd(data, prop, main, spec.effect_space, eo);
}

// ---------------------------------------------------------------------------
// Replication engine
// ---------------------------------------------------------------------------

/// Stream offsets keep training data, test data and CV folds on disjoint streams.
inline constexpr std::uint64_t kTestStreamOffset = 1ULL << 40;
inline constexpr std::uint64_t kCvStreamOffset = 2ULL << 40;

struct SimulationPlan {
    std::vector<CaseId> cases{CaseId::I};
    std::vector<Method> methods{Method::rd, Method::d, Method::q};
    std::vector<Index> n_grid{200};
    int replications = 10;
    int threads = 1;
    Index p = 100;
    double sigma = 1.0;
    NormalScale scale = NormalScale::variance3;
    std::uint64_t seed = 0;
    Index test_size = 400;
    double clip = 0.05;
    MethodOverrides overrides{};
    RegressionOptions regression{};
    CustomDgp custom{};
};

struct MetricsRow {
    std::string case_id;
    std::string method;
    Index n = 0;
    int replication = 0;
    double pe = std::numeric_limits<double>::quiet_NaN();
    double value = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
    std::string error;  // empty on success

    bool ok() const { return error.empty(); }
};

/// Run `jobs` independent work items on up to `threads` workers. Each job writes
/// only its own output slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t jobs, int threads, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min<std::size_t>(jobs, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t j = 0; j < jobs; ++j) body(j);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t j = next++; j < jobs; j = next++) body(j);
        });
    for (auto& th : pool) th.join();
}

inline DgpSpec plan_spec(const SimulationPlan& plan, CaseId c, Index n, std::uint64_t stream) {
    DgpSpec s;
    s.case_id = c;
    s.n = n;
    s.p = plan.p;
    s.sigma = plan.sigma;
    s.scale = plan.scale;
    s.rng = RngSpec{plan.seed, stream};
    s.custom = plan.custom;
    return s;
}

/// Rows are ordered by (case, method, n, replication).
inline std::vector<MetricsRow> run_replications(const SimulationPlan& plan) {
    if (plan.replications < 1) throw DomainError("replications must be >= 1");
    if (plan.cases.empty() || plan.methods.empty() || plan.n_grid.empty())
        throw DomainError("simulation plan needs at least one case, method and sample size");
    if (plan.test_size < 1) throw DomainError("test_size must be >= 1");
    for (CaseId c : plan.cases) check_spec(plan_spec(plan, c, 1, 0));

    const std::size_t nc = plan.cases.size(), nm = plan.methods.size(), nn = plan.n_grid.size();
    const auto nr = static_cast<std::size_t>(plan.replications);
    std::vector<MetricsRow> rows(nc * nm * nn * nr);

    parallel_for(nc * nn * nr, plan.threads, [&](std::size_t unit) {
        const std::size_t r = unit % nr;
        const std::size_t ni = (unit / nr) % nn;
        const std::size_t ci = unit / (nr * nn);
        const CaseId c = plan.cases[ci];
        const Index n = plan.n_grid[ni];
        auto slot = [&](std::size_t mi) -> MetricsRow& { return rows[((ci * nm + mi) * nn + ni) * nr + r]; };
        for (std::size_t mi = 0; mi < nm; ++mi) {
            MetricsRow& row = slot(mi);
            row.case_id = to_string(c);
            row.method = to_string(plan.methods[mi]);
            row.n = n;
            row.replication = static_cast<int>(r);
        }
        std::optional<Generated> train, test;
        try {
            train.emplace(generate(plan_spec(plan, c, n, r)));
            test.emplace(generate(plan_spec(plan, c, plan.test_size, kTestStreamOffset + r)));
        } catch (const std::exception& e) {
            for (std::size_t mi = 0; mi < nm; ++mi) slot(mi).error = e.what();
            return;
        }
        const Matrix delta_test = test->oracle.delta(test->data.x);
        const PropensityModel true_prop = test->oracle.propensity_model(plan.clip);
        for (std::size_t mi = 0; mi < nm; ++mi) {
            MetricsRow& row = slot(mi);
            const auto t0 = std::chrono::steady_clock::now();
            try {
                const MethodSpec spec = resolve_method(c, plan.methods[mi], plan.overrides);
                RegressionOptions reg = plan.regression;
                reg.cv.rng = RngSpec{plan.seed, kCvStreamOffset + r};
                const auto fit = fit_method(spec, train->data, train->oracle, reg, plan.clip);
                const Matrix eff = fit.predict_effects(test->data.x);
                row.pe = prediction_error(eff, delta_test);
                try {
                    row.value = empirical_value(argmax_arms(eff), test->data, true_prop);
                } catch (const UndefinedValueError&) {
                    row.value = std::numeric_limits<double>::quiet_NaN();
                }
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
    });
    return rows;
}

/// Metrics table as CSV. Wall time is omitted unless requested so repeated runs are byte-identical.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows, bool include_timing = false) {
    std::ostringstream out;
    out << "case,method,n,replication,pe,value,status";
    if (include_timing) out << ",wall_ms";
    out << "\n";
    auto num = [](double v) { return std::isnan(v) ? std::string() : csv::format_double(v); };
    for (const auto& r : rows) {
        out << r.case_id << ',' << r.method << ',' << r.n << ',' << r.replication << ',' << num(r.pe) << ','
            << num(r.value) << ',' << (r.ok() ? std::string("ok") : csv::quote("error: " + r.error));
        if (include_timing) out << ',' << csv::format_double(r.wall_ms);
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Summaries and quantiles
// ---------------------------------------------------------------------------

/// Sample quantile, linear interpolation between order statistics (Hyndman-Fan type 7).
inline double quantile7(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SummaryStats {
    std::size_t count = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double q1 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double q3 = std::numeric_limits<double>::quiet_NaN();
};

inline SummaryStats summarize(const std::vector<double>& raw) {
    std::vector<double> v;
    for (double x : raw)
        if (!std::isnan(x)) v.push_back(x);
    SummaryStats s;
    s.count = v.size();
    if (v.empty()) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    }
    s.q1 = quantile7(v, 0.25);
    s.median = quantile7(v, 0.5);
    s.q3 = quantile7(v, 0.75);
    return s;
}

struct SummaryGroup {
    std::string case_id;
    std::string method;
    Index n = 0;
    std::size_t failures = 0;
    SummaryStats pe;
    SummaryStats value;
};

/// One group per (case, method, n), in table order.
inline std::vector<SummaryGroup> summarize_metrics(const std::vector<MetricsRow>& rows) {
    std::vector<SummaryGroup> groups;
    std::size_t i = 0;
    while (i < rows.size()) {
        std::size_t j = i;
        std::vector<double> pe, val;
        std::size_t failures = 0;
        while (j < rows.size() && rows[j].case_id == rows[i].case_id && rows[j].method == rows[i].method &&
               rows[j].n == rows[i].n) {
            if (rows[j].ok()) {
                pe.push_back(rows[j].pe);
                val.push_back(rows[j].value);
            } else {
                ++failures;
            }
            ++j;
        }
        groups.push_back({rows[i].case_id, rows[i].method, rows[i].n, failures, summarize(pe), summarize(val)});
        i = j;
    }
    return groups;
}

// ---------------------------------------------------------------------------
// STEPP bands
// ---------------------------------------------------------------------------

using EffectEvaluator = std::function<Matrix(const Eigen::Ref<const Matrix>&)>;

/// Grid rows: x1 varies, every other covariate at its marginal median.
inline Matrix stepp_points(const Oracle& oracle, const std::vector<double>& grid) {
    Matrix x(static_cast<Index>(grid.size()), oracle.spec().p);
    const auto med = oracle.covariate_medians();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        x.row(static_cast<Index>(g)) = med;
        x(static_cast<Index>(g), 0) = grid[g];
    }
    return x;
}

/// CATE for the contrast (arm_a vs arm_b), i.e. delta_a - delta_b, along the grid.
inline Vector stepp_curve(const EffectEvaluator& eval, const Oracle& oracle, const std::vector<double>& grid,
                          int arm_a = 1, int arm_b = 2) {
    const Matrix eff = eval(stepp_points(oracle, grid));
    return eff.col(arm_a - 1) - eff.col(arm_b - 1);
}

inline Vector stepp_truth(const Oracle& oracle, const std::vector<double>& grid, int arm_a = 1, int arm_b = 2) {
    return stepp_curve([&](const Eigen::Ref<const Matrix>& x) { return oracle.delta(x); }, oracle, grid, arm_a, arm_b);
}

struct SteppBand {
    std::string method;
    std::vector<double> x1;
    std::vector<double> lo, mid, hi, truth;

    double width(std::size_t g) const { return hi[g] - lo[g]; }
};

/// Pointwise 2.5/50/97.5% quantiles over replications; `curves` is R x G.
inline SteppBand stepp_band(std::string method, const std::vector<double>& grid, const Matrix& curves,
                            const Vector& truth) {
    SteppBand b;
    b.method = std::move(method);
    b.x1 = grid;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::vector<double> col;
        for (Index r = 0; r < curves.rows(); ++r) {
            const double v = curves(r, static_cast<Index>(g));
            if (!std::isnan(v)) col.push_back(v);
        }
        b.lo.push_back(quantile7(col, 0.025));
        b.mid.push_back(quantile7(col, 0.5));
        b.hi.push_back(quantile7(col, 0.975));
        b.truth.push_back(truth(static_cast<Index>(g)));
    }
    return b;
}

inline std::vector<double> linspace(double a, double b, int count) {
    std::vector<double> g(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = count == 1 ? a : a + (b - a) * i / (count - 1);
    return g;
}

struct SteppPlan {
    CaseId case_id = CaseId::fig1_II;
    Index n = 200;
    int replications = 200;
    std::vector<Method> methods{Method::rd, Method::d, Method::q};
    std::vector<double> grid = linspace(-3.0, 3.0, 41);
    SimulationPlan base{};  // p, sigma, scale, seed, threads, clip, overrides, regression
    int arm_a = 1;
    int arm_b = 2;
};

/// Refit each method on R independent datasets and band its CATE curve. Failed fits leave NaN.
inline std::vector<SteppBand> run_stepp(const SteppPlan& plan) {
    if (plan.replications < 1) throw DomainError("replications must be >= 1");
    if (plan.grid.empty()) throw DomainError("STEPP grid is empty");
    const SimulationPlan& base = plan.base;
    const Oracle oracle(plan_spec(base, plan.case_id, plan.n, 0));
    check_spec(oracle.spec());
    if (plan.arm_a < 1 || plan.arm_b < 1 || plan.arm_a > oracle.k() || plan.arm_b > oracle.k() || plan.arm_a == plan.arm_b)
        throw DomainError("STEPP contrast arms out of range");
    const std::size_t nm = plan.methods.size();
    const auto g = static_cast<Index>(plan.grid.size());
    std::vector<Matrix> curves(nm, Matrix::Constant(plan.replications, g, std::numeric_limits<double>::quiet_NaN()));

    parallel_for(static_cast<std::size_t>(plan.replications), base.threads, [&](std::size_t r) {
        Generated train = generate(plan_spec(base, plan.case_id, plan.n, r));
        for (std::size_t mi = 0; mi < nm; ++mi) {
            try {
                const MethodSpec spec = resolve_method(plan.case_id, plan.methods[mi], base.overrides);
                RegressionOptions reg = base.regression;
                reg.cv.rng = RngSpec{base.seed, kCvStreamOffset + r};
                const auto fit = fit_method(spec, train.data, train.oracle, reg, base.clip);
                curves[mi].row(static_cast<Index>(r)) =
                    stepp_curve([&](const Eigen::Ref<const Matrix>& x) { return fit.predict_effects(x); }, oracle,
                                plan.grid, plan.arm_a, plan.arm_b)
                        .transpose();
            } catch (const std::exception&) {
            }
        }
    });

    const Vector truth = stepp_truth(oracle, plan.grid, plan.arm_a, plan.arm_b);
    std::vector<SteppBand> out;
    for (std::size_t mi = 0; mi < nm; ++mi) out.push_back(stepp_band(to_string(plan.methods[mi]), plan.grid, curves[mi], truth));
    return out;
}

inline std::string stepp_csv(const std::vector<SteppBand>& bands) {
    std::ostringstream out;
    out << "method,x1,q025,q500,q975,truth\n";
    auto num = [](double v) { return std::isnan(v) ? std::string() : csv::format_double(v); };
    for (const auto& b : bands)
        for (std::size_t g = 0; g < b.x1.size(); ++g)
            out << b.method << ',' << num(b.x1[g]) << ',' << num(b.lo[g]) << ',' << num(b.mid[g]) << ','
                << num(b.hi[g]) << ',' << num(b.truth[g]) << "\n";
    return out.str();
}

}  // namespace rdlearn
