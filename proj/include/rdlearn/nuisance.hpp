#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core.hpp"
#include "regressor.hpp"
#include "solvers.hpp"

namespace rdlearn {

// ---------------------------------------------------------------------------
// Propensity scores
// ---------------------------------------------------------------------------

enum class PropensityKind { known_constant, known_function, known_table, multinomial_logistic };

/// Maps one covariate row to the k arm probabilities.
using PropensityFunction = std::function<Vector(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

/// Projects a probability vector onto {p : sum p = 1, p_j >= floor}: entries below the
/// floor are raised to it and the others are rescaled to absorb the difference.
inline Vector clip_probabilities(const Eigen::Ref<const Vector>& p, double floor) {
    const Index k = p.size();
    if (floor * static_cast<double>(k) > 1.0 + 1e-12)
        throw DomainError("clip floor " + std::to_string(floor) + " is infeasible for " + std::to_string(k) + " arms");
    Vector q = p / p.sum();
    std::vector<bool> pinned(static_cast<std::size_t>(k), false);
    for (Index iter = 0; iter <= k; ++iter) {
        bool changed = false;
        for (Index j = 0; j < k; ++j)
            if (!pinned[static_cast<std::size_t>(j)] && q(j) < floor) {
                pinned[static_cast<std::size_t>(j)] = true;
                changed = true;
            }
        if (!changed) break;
        double free_mass = 0.0;
        Index n_pinned = 0;
        for (Index j = 0; j < k; ++j) {
            if (pinned[static_cast<std::size_t>(j)]) ++n_pinned;
            else free_mass += q(j);
        }
        const double target = 1.0 - floor * static_cast<double>(n_pinned);
        for (Index j = 0; j < k; ++j) {
            if (pinned[static_cast<std::size_t>(j)]) q(j) = floor;
            else q(j) = free_mass > 0.0 ? q(j) * target / free_mass : target / static_cast<double>(k - n_pinned);
        }
    }
    return q;
}

struct PropensityModel {
    PropensityKind kind = PropensityKind::known_constant;
    int k = 2;
    double clip = 0.05;
    std::string name;  // e.g. "constant", "case:I", "table", "logistic"

    Vector constant;             // known_constant
    PropensityFunction function;  // known_function
    Matrix table;                // known_table: probabilities of the training rows
    Matrix coefficients;         // logistic: (p+1) x (k-1), reference arm k

    // logistic diagnostics
    int iterations = 0;
    bool converged = true;
    bool separation_warning = false;

    bool is_known() const { return kind != PropensityKind::multinomial_logistic; }

    /// Unclipped probabilities, m x k; rows sum to one.
    Matrix predict_raw(const Eigen::Ref<const Matrix>& x) const {
        Matrix out(x.rows(), k);
        switch (kind) {
            case PropensityKind::known_constant:
                for (Index i = 0; i < x.rows(); ++i) out.row(i) = constant.transpose();
                break;
            case PropensityKind::known_function:
                for (Index i = 0; i < x.rows(); ++i) {
                    const Vector pr = function(x.row(i));
                    if (pr.size() != k) throw DomainError("propensity function returned wrong arm count");
                    out.row(i) = pr.transpose();
                }
                break;
            case PropensityKind::known_table:
                if (x.rows() != table.rows())
                    throw DomainError("propensity table covers " + std::to_string(table.rows()) +
                                      " rows; cannot evaluate at " + std::to_string(x.rows()) + " points");
                out = table;
                break;
            case PropensityKind::multinomial_logistic: {
                if (x.cols() + 1 != coefficients.rows()) throw DomainError("propensity: covariate dimension mismatch");
                const Matrix eta = augment(x).rows * coefficients;
                for (Index i = 0; i < x.rows(); ++i) {
                    const double mx = std::max(0.0, eta.row(i).maxCoeff());
                    double denom = std::exp(-mx);
                    for (Index j = 0; j < k - 1; ++j) denom += std::exp(eta(i, j) - mx);
                    for (Index j = 0; j < k - 1; ++j) out(i, j) = std::exp(eta(i, j) - mx) / denom;
                    out(i, k - 1) = std::exp(-mx) / denom;
                }
                break;
            }
        }
        return out;
    }

    /// Probabilities after the floor projection.
    Matrix predict(const Eigen::Ref<const Matrix>& x) const {
        Matrix raw = predict_raw(x);
        for (Index i = 0; i < raw.rows(); ++i) raw.row(i) = clip_probabilities(raw.row(i).transpose(), clip).transpose();
        return raw;
    }
};

inline PropensityModel known_constant_propensity(const Vector& probs, double clip = 0.05) {
    if (probs.size() < 2) throw DomainError("propensity needs at least two arms");
    if ((probs.array() <= 0.0).any() || std::abs(probs.sum() - 1.0) > 1e-10)
        throw DomainError("constant propensities must be positive and sum to one");
    PropensityModel m;
    m.kind = PropensityKind::known_constant;
    m.k = static_cast<int>(probs.size());
    m.constant = probs;
    m.clip = clip;
    m.name = "constant";
    return m;
}

inline PropensityModel known_function_propensity(int k, PropensityFunction fn, std::string name, double clip = 0.05) {
    PropensityModel m;
    m.kind = PropensityKind::known_function;
    m.k = k;
    m.function = std::move(fn);
    m.name = std::move(name);
    m.clip = clip;
    return m;
}

inline PropensityModel known_table_propensity(const Matrix& table, double clip = 0.05) {
    if (table.cols() < 2) throw DomainError("propensity table needs at least two arms");
    if ((table.array() <= 0.0).any()) throw DomainError("propensity table entries must be positive");
    PropensityModel m;
    m.kind = PropensityKind::known_table;
    m.k = static_cast<int>(table.cols());
    m.table = table;
    for (Index i = 0; i < m.table.rows(); ++i) m.table.row(i) /= m.table.row(i).sum();
    m.clip = clip;
    m.name = "table";
    return m;
}

struct LogisticOptions {
    double clip = 0.05;
    double ridge = 1e-8;
    double tol = 1e-8;
    int max_iter = 100;
    double separation_bound = 1e3;
};

/// Multinomial logistic regression by Newton/IRLS with step halving. Reference arm k.
inline PropensityModel fit_propensity_mlogit(const Dataset& data, const LogisticOptions& opts = {}) {
    data.validate();
    const int k = data.k;
    if (k < 2) throw DomainError("propensity model needs k >= 2 arms");
    for (auto c : data.arm_counts())
        if (c < 2) throw DomainError("every arm needs at least 2 observations to fit a propensity model");

    const Matrix x = augment(data.x).rows;
    const Index n = x.rows();
    const Index q = x.cols();
    const Index km1 = k - 1;
    const Index dim = q * km1;

    Matrix yind = Matrix::Zero(n, k);
    for (Index i = 0; i < n; ++i) yind(i, data.a[static_cast<std::size_t>(i)] - 1) = 1.0;

    PropensityModel model;
    model.kind = PropensityKind::multinomial_logistic;
    model.k = k;
    model.clip = opts.clip;
    model.name = "logistic";
    model.coefficients = Matrix::Zero(q, km1);

    auto loglik = [&](const Matrix& theta) {
        model.coefficients = theta;
        const Matrix pr = model.predict_raw(data.x);
        double ll = 0.0;
        for (Index i = 0; i < n; ++i) ll += std::log(std::max(pr(i, data.a[static_cast<std::size_t>(i)] - 1), 1e-300));
        return ll;
    };

    Matrix theta = Matrix::Zero(q, km1);
    double ll = loglik(theta);
    model.converged = false;
    for (int it = 0; it < opts.max_iter; ++it) {
        model.coefficients = theta;
        const Matrix pr = model.predict_raw(data.x);
        Vector grad(dim);
        Matrix hess(dim, dim);
        for (Index a = 0; a < km1; ++a) {
            grad.segment(a * q, q) = x.transpose() * (yind.col(a) - pr.col(a));
            for (Index b = a; b < km1; ++b) {
                Vector wdiag = -pr.col(a).cwiseProduct(pr.col(b));
                if (a == b) wdiag += pr.col(a);
                const Matrix blk = x.transpose() * wdiag.asDiagonal() * x;
                hess.block(a * q, b * q, q, q) = blk;
                if (b != a) hess.block(b * q, a * q, q, q) = blk.transpose();
            }
        }
        hess.diagonal().array() += opts.ridge;
        const auto f = factor_spd(hess, "logistic information matrix");
        const Vector step = f.llt.solve(grad);
        Matrix step_m = Eigen::Map<const Matrix>(step.data(), q, km1);

        double t = 1.0;
        Matrix cand = theta + step_m;
        double cand_ll = loglik(cand);
        for (int half = 0; half < 30 && !(cand_ll >= ll - 1e-12); ++half) {
            t *= 0.5;
            cand = theta + t * step_m;
            cand_ll = loglik(cand);
        }
        const double change = (t * step_m).cwiseAbs().maxCoeff();
        theta = cand;
        ll = cand_ll;
        model.iterations = it + 1;
        if (theta.cwiseAbs().maxCoeff() > opts.separation_bound) {
            model.separation_warning = true;
            break;
        }
        if (change < opts.tol) {
            model.converged = true;
            break;
        }
    }
    model.coefficients = theta;
    // The ridge term keeps separated coefficients far below the bound, so a stalled
    // fit that predicts some received arm with certainty is flagged as well.
    if (!model.converged && !model.separation_warning) {
        const Matrix pr = model.predict_raw(data.x);
        for (Index i = 0; i < n && !model.separation_warning; ++i)
            if (pr(i, data.a[static_cast<std::size_t>(i)] - 1) > 1.0 - 1e-8) model.separation_warning = true;
    }
    return model;
}

/// Inverse-propensity weights w_i = 1 / p_{a_i}(x_i) after the floor projection.
inline Vector clip_and_invert(const PropensityModel& model, const Eigen::Ref<const Matrix>& x, const std::vector<int>& a) {
    if (static_cast<Index>(a.size()) != x.rows()) throw DomainError("clip_and_invert: arms/covariates length mismatch");
    const Matrix pr = model.predict(x);
    Vector w(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        const int arm = a[static_cast<std::size_t>(i)];
        if (arm < 1 || arm > model.k) throw DomainError("clip_and_invert: arm out of range");
        w(i) = 1.0 / pr(i, arm - 1);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Main effect
// ---------------------------------------------------------------------------

enum class MainEffectKind { zero, direct, qlearning };

struct MainEffectModel {
    MainEffectKind kind = MainEffectKind::zero;
    FunctionSpace space = FunctionSpace::constant;
    /// direct: one component; qlearning: one per arm. Prediction averages them.
    std::vector<Regressor> parts;
    /// Out-of-fold predictions at the training rows when cross-fitting was used.
    Vector cross_fit_predictions;
    Index n_train = 0;

    Vector predict(const Eigen::Ref<const Matrix>& x) const {
        if (parts.empty()) return Vector::Zero(x.rows());
        Vector out = Vector::Zero(x.rows());
        for (const auto& r : parts) out += r.predict(x);
        return out / static_cast<double>(parts.size());
    }

    /// Values used to form training residuals y - m(x): out-of-fold when available.
    Vector predict_training(const Eigen::Ref<const Matrix>& x) const {
        if (cross_fit_predictions.size() == x.rows() && x.rows() == n_train) return cross_fit_predictions;
        return predict(x);
    }
};

inline MainEffectModel zero_main_effect() { return MainEffectModel{}; }

struct MainEffectOptions {
    RegressionOptions regression{};
    /// Number of cross-fitting folds; 0 disables cross-fitting.
    int cross_fit_folds = 0;
};

/// argmin_g sum_i (1/p_{a_i}(x_i)) (y_i - g(x_i))^2 over the chosen space.
inline MainEffectModel fit_main_effect(const Dataset& data, const PropensityModel& model, FunctionSpace space,
                                       const MainEffectOptions& opts = {}) {
    data.validate();
    if (model.k != data.k) throw DomainError("propensity model arm count does not match data");
    const Vector w = clip_and_invert(model, data.x, data.a);
    MainEffectModel m;
    m.kind = MainEffectKind::direct;
    m.space = space;
    m.n_train = data.n();
    m.parts.push_back(fit_regressor(data.x, data.y, w, space, opts.regression));

    if (opts.cross_fit_folds >= 2) {
        const auto fold = assign_folds(data.n(), opts.cross_fit_folds, opts.regression.cv.rng.with_stream(
                                                                            opts.regression.cv.rng.stream + 0x9e37));
        m.cross_fit_predictions.resize(data.n());
        for (int f = 0; f < opts.cross_fit_folds; ++f) {
            const auto tr = detail::rows_where(fold, f, false);
            const auto va = detail::rows_where(fold, f, true);
            if (va.empty()) continue;
            const Matrix xtr = detail::take_rows(data.x, tr);
            const auto reg = fit_regressor(xtr, detail::take(data.y, tr), detail::take(w, tr), space, opts.regression);
            const Vector pred = reg.predict(detail::take_rows(data.x, va));
            for (std::size_t r = 0; r < va.size(); ++r) m.cross_fit_predictions(va[r]) = pred(static_cast<Index>(r));
        }
    }
    return m;
}

/// Q-Learning style main effect: fit each arm's mean outcome separately (unit
/// weights) and average the k fitted functions.
inline MainEffectModel qlearning_main_effect(const Dataset& data, FunctionSpace space,
                                             const RegressionOptions& opts = {}) {
    data.validate();
    const auto counts = data.arm_counts();
    for (std::size_t j = 0; j < counts.size(); ++j)
        if (counts[j] < 2)
            throw DomainError("arm " + std::to_string(j + 1) + " has " + std::to_string(counts[j]) +
                              " observations; per-arm regression needs at least 2");
    MainEffectModel m;
    m.kind = MainEffectKind::qlearning;
    m.space = space;
    m.n_train = data.n();
    for (int arm = 1; arm <= data.k; ++arm) {
        std::vector<Index> rows;
        for (Index i = 0; i < data.n(); ++i)
            if (data.a[static_cast<std::size_t>(i)] == arm) rows.push_back(i);
        const Matrix xa = detail::take_rows(data.x, rows);
        const Vector ya = detail::take(data.y, rows);
        RegressionOptions o = opts;
        o.cv.rng = opts.cv.rng.with_stream(opts.cv.rng.stream * 31 + static_cast<std::uint64_t>(arm));
        m.parts.push_back(fit_regressor(xa, ya, Vector::Ones(xa.rows()), space, o));
    }
    return m;
}

}  // namespace rdlearn
