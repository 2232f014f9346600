#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core.hpp"
#include "nuisance.hpp"
#include "regressor.hpp"
#include "simplex.hpp"
#include "solvers.hpp"

namespace rdlearn {

enum class Method { rd, d, q };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::rd: return "rd";
        case Method::d: return "d";
        case Method::q: return "q";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "rd") return Method::rd;
    if (s == "d") return Method::d;
    if (s == "q") return Method::q;
    throw DomainError("unknown method '" + s + "' (expected rd, d or q)");
}

/// What the treatment-effect fit was conditioned on; kept for reporting and serialization.
struct NuisanceSnapshot {
    std::string propensity = "none";
    double clip = 0.0;
    std::string main_effect = "zero";
    std::string main_space;
};

/// Fitted decision function f: R^p -> R^{k-1} (or per-arm outcome models for Q-Learning),
/// with effects delta_j(x) = <W_j, f(x)>.
struct TreatmentEffectFit {
    Method method = Method::rd;
    FunctionSpace space = FunctionSpace::linear;
    int k = 2;
    Index p = 0;
    SimplexVertices simplex{2};
    double lambda = 0.0;

    /// constant / linear / lasso: (p+1) x (k-1), row 0 holds the intercepts.
    Matrix coef;

    /// kernel: f(x) = intercepts + K(x, train_x) kernel_weights.
    Matrix train_x;
    Matrix kernel_weights;  // n x (k-1)
    Vector kernel_intercepts;
    double bandwidth = 0.0;

    /// q: fitted mean outcome per arm.
    std::vector<Regressor> arm_models;

    NuisanceSnapshot nuisance;
    RngSpec rng{};

    /// Decision values, m x (k-1). Not defined for Q-Learning fits.
    Matrix predict_f(const Eigen::Ref<const Matrix>& x) const {
        if (x.cols() != p)
            throw DomainError("covariate dimension " + std::to_string(x.cols()) + " does not match training dimension " +
                              std::to_string(p));
        if (method == Method::q) throw DomainError("Q-Learning fits have no angle-based decision function");
        if (space == FunctionSpace::kernel) {
            Matrix f = gaussian_gram(train_x, x, bandwidth) * kernel_weights;
            f.rowwise() += kernel_intercepts.transpose();
            return f;
        }
        return augment(x).rows * coef;
    }

    /// Effects, m x k; rows sum to zero.
    Matrix predict_effects(const Eigen::Ref<const Matrix>& x) const {
        if (x.cols() != p)
            throw DomainError("covariate dimension " + std::to_string(x.cols()) + " does not match training dimension " +
                              std::to_string(p));
        if (method == Method::q) {
            Matrix mu(x.rows(), k);
            for (int j = 0; j < k; ++j) mu.col(j) = arm_models[static_cast<std::size_t>(j)].predict(x);
            const Vector avg = mu.rowwise().mean();
            mu.colwise() -= avg;
            return mu;
        }
        return simplex.effects_from_f_rows(predict_f(x));
    }
};

inline Matrix predict_effects(const TreatmentEffectFit& fit, const Eigen::Ref<const Matrix>& x) {
    return fit.predict_effects(x);
}

struct EstimatorOptions {
    RegressionOptions regression{};
};

namespace detail {

/// Row i = W_{a_i}.
inline Matrix vertex_rows(const SimplexVertices& s, const std::vector<int>& a) {
    Matrix out(static_cast<Index>(a.size()), s.dim());
    for (std::size_t i = 0; i < a.size(); ++i) out.row(static_cast<Index>(i)) = s.vertex(a[i]);
    return out;
}

/// Stacked design for the linear angle-based objective: block d holds W_{a_i,d} * (1, x_i).
inline Matrix stacked_design(const Matrix& wa, const Matrix& xa) {
    const Index n = xa.rows();
    const Index q = xa.cols();
    const Index dims = wa.cols();
    Matrix z(n, q * dims);
    for (Index d = 0; d < dims; ++d) z.middleCols(d * q, q) = xa.array().colwise() * wa.col(d).array();
    return z;
}

inline void check_effect_inputs(const Dataset& data, int model_k) {
    data.validate(true);
    if (data.k < 2) throw DomainError("treatment-effect estimation needs k >= 2 arms, got k=" + std::to_string(data.k));
    if (model_k != data.k) throw DomainError("propensity model arm count does not match data");
}

inline std::string describe(const MainEffectModel& m) {
    switch (m.kind) {
        case MainEffectKind::zero: return "zero";
        case MainEffectKind::direct: return "direct";
        case MainEffectKind::qlearning: return "qlearning";
    }
    return "?";
}

}  // namespace detail

/// Angle-based RD-Learning: minimizes
///   n^-1 sum_i (1/p_{a_i}(x_i)) (y_i - m(x_i) - <W_{a_i}, f(x_i)>)^2
/// over f in the chosen space. For k = 2 this is the binary sign-coded objective.
inline TreatmentEffectFit fit_rd(const Dataset& data, const PropensityModel& prop, const MainEffectModel& main,
                                 FunctionSpace space, const EstimatorOptions& opts = {}) {
    detail::check_effect_inputs(data, prop.k);
    const int k = data.k;
    const Index n = data.n();
    const Index p = data.p();

    TreatmentEffectFit fit;
    fit.method = main.kind == MainEffectKind::zero ? Method::d : Method::rd;
    fit.space = space;
    fit.k = k;
    fit.p = p;
    fit.simplex = SimplexVertices(k);
    fit.rng = opts.regression.cv.rng;
    fit.nuisance = {prop.name, prop.clip, detail::describe(main), to_string(main.space)};

    const Vector w = clip_and_invert(prop, data.x, data.a);
    const Vector r = data.y - main.predict_training(data.x);
    const Matrix wa = detail::vertex_rows(fit.simplex, data.a);
    const Index dims = k - 1;

    switch (space) {
        case FunctionSpace::constant: {
            const auto ls = weighted_ls(wa, r, w);
            fit.coef = Matrix::Zero(p + 1, dims);
            fit.coef.row(0) = ls.beta.transpose();
            break;
        }
        case FunctionSpace::linear: {
            const Matrix z = detail::stacked_design(wa, augment(data.x).rows);
            const auto ls = weighted_ls(z, r, w);
            fit.coef = Eigen::Map<const Matrix>(ls.beta.data(), p + 1, dims);
            break;
        }
        case FunctionSpace::lasso: {
            // Intercept columns W_{a_i,d} are unpenalized; there is no shared intercept.
            const Matrix z = detail::stacked_design(wa, augment(data.x).rows);
            LassoOptions lo = opts.regression.lasso;
            lo.fit_intercept = false;
            lo.penalty_factor.assign(static_cast<std::size_t>(z.cols()), 1.0);
            for (Index d = 0; d < dims; ++d) lo.penalty_factor[static_cast<std::size_t>(d * (p + 1))] = 0.0;
            LassoFit lf = opts.regression.lambda >= 0.0 ? weighted_lasso(z, r, w, opts.regression.lambda, lo)
                                                        : cv_weighted_lasso(z, r, w, lo, opts.regression.cv);
            fit.coef = Eigen::Map<const Matrix>(lf.beta.data(), p + 1, dims);
            fit.lambda = lf.lambda;
            break;
        }
        case FunctionSpace::kernel: {
            // f_d(x) = b_d + sum_l K(x_l, x) c_l W_{a_l,d}; stationarity gives a bordered
            // system in c with matrix K o (W_a W_a^T) and intercept block W_a.
            fit.bandwidth = opts.regression.bandwidth > 0.0 ? opts.regression.bandwidth : median_bandwidth(data.x);
            const Matrix kmat = gaussian_gram(data.x, data.x, fit.bandwidth);
            const Matrix m = kmat.cwiseProduct(wa * wa.transpose());
            double lambda = opts.regression.lambda;
            if (!(lambda > 0.0)) lambda = cv_bordered_ridge(m, wa, r, w, opts.regression.cv).best_lambda;
            const auto s = solve_bordered_ridge(m, wa, r, w, static_cast<double>(n) * lambda);
            fit.train_x = data.x;
            fit.kernel_weights = s.c.asDiagonal() * wa;
            fit.kernel_intercepts = s.b;
            fit.lambda = lambda;
            break;
        }
    }
    return fit;
}

/// D-Learning: RD-Learning with m = 0.
inline TreatmentEffectFit fit_d(const Dataset& data, const PropensityModel& prop, FunctionSpace space,
                                const EstimatorOptions& opts = {}) {
    return fit_rd(data, prop, zero_main_effect(), space, opts);
}

/// Closed-form binary RD estimate in the linear space with sign coding a_i in {+1,-1}:
///   beta = (X^T P^-1 X)^-1 X^T A P^-1 (y - m(X)).
/// Independent of the stacked angle-based path; used to cross-check it.
inline TreatmentEffectFit fit_rd_binary_linear(const Dataset& data, const PropensityModel& prop,
                                               const MainEffectModel& main) {
    detail::check_effect_inputs(data, prop.k);
    if (data.k != 2) throw DomainError("binary path requires exactly two arms");
    const Matrix xa = augment(data.x).rows;
    const Vector pinv = clip_and_invert(prop, data.x, data.a);
    Vector sign(data.n());
    for (Index i = 0; i < data.n(); ++i) sign(i) = data.a[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    const Vector resid = data.y - main.predict_training(data.x);
    const Matrix lhs = xa.transpose() * pinv.asDiagonal() * xa;
    const Vector rhs = xa.transpose() * (sign.cwiseProduct(pinv).cwiseProduct(resid));
    const auto f = factor_spd(lhs, "binary RD normal equations");

    TreatmentEffectFit fit;
    fit.method = main.kind == MainEffectKind::zero ? Method::d : Method::rd;
    fit.space = FunctionSpace::linear;
    fit.k = 2;
    fit.p = data.p();
    fit.simplex = SimplexVertices(2);
    fit.coef = f.llt.solve(rhs);
    fit.nuisance = {prop.name, prop.clip, detail::describe(main), to_string(main.space)};
    return fit;
}

/// Q-Learning: per-arm outcome regressions (unit weights); delta_j = mu_j - mean_l mu_l.
inline TreatmentEffectFit fit_q(const Dataset& data, FunctionSpace space, const EstimatorOptions& opts = {}) {
    data.validate(true);
    if (data.k < 2) throw DomainError("treatment-effect estimation needs k >= 2 arms, got k=" + std::to_string(data.k));
    const auto main = qlearning_main_effect(data, space, opts.regression);
    TreatmentEffectFit fit;
    fit.method = Method::q;
    fit.space = space;
    fit.k = data.k;
    fit.p = data.p();
    fit.simplex = SimplexVertices(data.k);
    fit.rng = opts.regression.cv.rng;
    fit.arm_models = main.parts;
    fit.nuisance = {"none", 0.0, "none", ""};
    return fit;
}

// ---------------------------------------------------------------------------
// Individualized treatment rules
// ---------------------------------------------------------------------------

/// argmax_j of each row; ties go to the lowest arm index. Arms are 1-based.
inline std::vector<int> argmax_arms(const Eigen::Ref<const Matrix>& effects) {
    std::vector<int> out(static_cast<std::size_t>(effects.rows()));
    for (Index i = 0; i < effects.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < effects.cols(); ++j)
            if (effects(i, j) > effects(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best + 1);
    }
    return out;
}

struct ItrRule {
    std::shared_ptr<const TreatmentEffectFit> fit;

    std::vector<int> apply(const Eigen::Ref<const Matrix>& x) const { return argmax_arms(fit->predict_effects(x)); }
};

inline ItrRule itr(TreatmentEffectFit fit) { return ItrRule{std::make_shared<const TreatmentEffectFit>(std::move(fit))}; }

inline std::vector<int> apply_itr(const ItrRule& rule, const Eigen::Ref<const Matrix>& x) { return rule.apply(x); }

}  // namespace rdlearn
