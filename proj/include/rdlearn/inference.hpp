#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/rational.hpp>

#include "core.hpp"
#include "nuisance.hpp"
#include "solvers.hpp"

namespace rdlearn {

/// Unbiased linear effect coefficients under a known propensity:
///   gamma_j = (X^T X)^-1 X^T diag(1{a_i = j} - 1/k) P_a^-1 (y - m(X)),
/// one row per arm. Rows sum to zero.
struct GammaEstimate {
    Matrix gamma;  // k x (p+1)
    /// Binary only: (1/2)(X^T X)^-1 X^T A P_a^-1 (y - m(X)) with A the +/-1 sign matrix.
    std::optional<Vector> beta_tilde;
    /// Whether column 0 of the design is the intercept; otherwise the design is x itself.
    bool intercept = true;

    int k() const { return static_cast<int>(gamma.rows()); }
    Index q() const { return gamma.cols(); }
    /// (gamma_1^T, ..., gamma_k^T)^T
    Vector stacked() const {
        Vector out(gamma.size());
        for (Index j = 0; j < gamma.rows(); ++j) out.segment(j * gamma.cols(), gamma.cols()) = gamma.row(j).transpose();
        return out;
    }
};

namespace detail {

/// Known-propensity probability of the received arm, without clipping.
inline Vector received_arm_probability(const PropensityModel& prop, const Dataset& data) {
    const Matrix pr = prop.predict_raw(data.x);
    Vector p(data.n());
    for (Index i = 0; i < data.n(); ++i) p(i) = pr(i, data.a[static_cast<std::size_t>(i)] - 1);
    if ((p.array() <= 0.0).any()) throw DomainError("known propensity must be positive for every observation");
    return p;
}

inline Matrix inference_design(const Dataset& data, bool intercept) {
    if (intercept) return augment(data.x).rows;
    if (!data.x.allFinite()) throw ValidationError("non-finite covariate");
    return data.x;
}

inline void require_known(const PropensityModel& prop) {
    if (!prop.is_known())
        throw ContractError("unbiased inference requires a known propensity; got an estimated model ('" + prop.name + "')");
}

}  // namespace detail

inline GammaEstimate estimate_gamma(const Dataset& data, const PropensityModel& prop, const MainEffectModel& main,
                                    bool intercept = true) {
    detail::require_known(prop);
    data.validate();
    if (data.k < 2) throw DomainError("inference needs k >= 2 arms");
    if (prop.k != data.k) throw DomainError("propensity model arm count does not match data");
    const int k = data.k;
    const Matrix xa = detail::inference_design(data, intercept);
    const auto f = factor_spd(xa.transpose() * xa, "X^T X");
    const Vector pa = detail::received_arm_probability(prop, data);
    const Vector scaled = (data.y - main.predict_training(data.x)).cwiseQuotient(pa);

    GammaEstimate est;
    est.intercept = intercept;
    est.gamma.resize(k, xa.cols());
    const double inv_k = 1.0 / static_cast<double>(k);
    for (int j = 1; j <= k; ++j) {
        Vector v(data.n());
        for (Index i = 0; i < data.n(); ++i)
            v(i) = ((data.a[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0) - inv_k) * scaled(i);
        est.gamma.row(j - 1) = f.llt.solve(xa.transpose() * v).transpose();
    }
    if (k == 2) {
        Vector sv(data.n());
        for (Index i = 0; i < data.n(); ++i) sv(i) = (data.a[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0) * scaled(i);
        est.beta_tilde = 0.5 * f.llt.solve(xa.transpose() * sv);
    }
    return est;
}

// ---------------------------------------------------------------------------
// Exact bias of the unmodified weighted estimator in the intercept-only toy
// ---------------------------------------------------------------------------

using Rational = boost::rational<std::int64_t>;

struct NaiveBiasScenario {
    int n = 3;
    Rational p1{2, 3};  // P(A = +1), constant in x
    Rational r{1};      // r(x) = m(x) - m_hat(x), constant in x
};

/// With X = 1_n the weighted estimator is (sum_i 1/p_{A_i})^-1 sum_i A_i (y_i - m_hat)/p_{A_i};
/// its bias is E[(sum 1/p_{A_i})^-1 sum A_i / p_{A_i}] r. The expectation is taken exactly
/// over all 2^n assignments.
inline Rational bias_of_naive_beta(const NaiveBiasScenario& s = {}) {
    if (s.n < 1 || s.n > 20) throw DomainError("bias enumeration supports 1 <= n <= 20");
    if (s.p1 <= Rational(0) || s.p1 >= Rational(1)) throw DomainError("p1 must lie in (0, 1)");
    const Rational p_plus = s.p1;
    const Rational p_minus = Rational(1) - s.p1;
    Rational total(0);
    for (std::uint32_t mask = 0; mask < (1u << s.n); ++mask) {
        Rational prob(1), inv_sum(0), signed_sum(0);
        for (int i = 0; i < s.n; ++i) {
            const bool plus = (mask >> i) & 1u;
            const Rational pa = plus ? p_plus : p_minus;
            prob *= pa;
            inv_sum += Rational(1) / pa;
            signed_sum += (plus ? Rational(1) : Rational(-1)) / pa;
        }
        total += prob * (signed_sum / inv_sum);
    }
    return total * s.r;
}

// ---------------------------------------------------------------------------
// Sandwich covariance
// ---------------------------------------------------------------------------

/// Outer factor of the sandwich. `identity_block` uses I_k (x) V^-1, the usual form for a
/// stacked estimator; `ones_block` uses J (x) V^-1 with J the all-ones matrix, as printed.
enum class CovarianceForm { identity_block, ones_block };

inline std::string to_string(CovarianceForm f) { return f == CovarianceForm::identity_block ? "identity-block" : "as-written-J"; }

inline CovarianceForm parse_covariance_form(const std::string& s) {
    if (s == "identity-block" || s == "identity") return CovarianceForm::identity_block;
    if (s == "as-written-J" || s == "J" || s == "ones") return CovarianceForm::ones_block;
    throw DomainError("unknown covariance form '" + s + "'");
}

struct InferenceReport {
    GammaEstimate gamma;
    Index n = 0;
    CovarianceForm form = CovarianceForm::identity_block;
    Matrix middle;      // k(p+1) square: plug-in M + Sigma
    Matrix covariance;  // of sqrt(n)(gamma_hat - gamma)
    Matrix se;          // k x (p+1)
    Matrix z;
    Matrix p_value;
};

inline double normal_two_sided_p(double z) {
    if (std::isinf(z)) return 0.0;
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

inline double normal_quantile(double prob) {
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), prob);
}

inline InferenceReport sandwich_covariance(const Dataset& data, const PropensityModel& prop,
                                           const MainEffectModel& main, const GammaEstimate& gamma,
                                           CovarianceForm form = CovarianceForm::identity_block) {
    detail::require_known(prop);
    data.validate();
    const int k = data.k;
    const Index n = data.n();
    const Matrix xa = detail::inference_design(data, gamma.intercept);
    const Index q = xa.cols();
    if (gamma.gamma.rows() != k || gamma.gamma.cols() != q) throw DomainError("gamma estimate does not match data");

    const Matrix v = xa.transpose() * xa / static_cast<double>(n);
    const auto fv = factor_spd(v, "V = X^T X / n");
    const Matrix vinv = fv.llt.solve(Matrix::Identity(q, q));

    const Matrix pr = prop.predict_raw(data.x);
    const Vector resid = data.y - main.predict_training(data.x);
    const Matrix delta = xa * gamma.gamma.transpose();  // n x k
    const Matrix c = Matrix::Identity(k, k) - Matrix::Constant(k, k, 1.0 / k);

    // Per-observation k x k middle factor, flattened so block (l, m) of the Kronecker
    // sum is X^T diag(coef_lm) X / n.
    Matrix coef(n, k * k);
    for (Index i = 0; i < n; ++i) {
        const int ai = data.a[static_cast<std::size_t>(i)] - 1;
        Vector dq(k);
        for (int j = 0; j < k; ++j) {
            const double e = resid(i) - delta(i, ai) + delta(i, j);
            dq(j) = e * e / pr(i, j);
        }
        const Matrix mid = c * dq.asDiagonal() * c - delta.row(i).transpose() * delta.row(i);
        for (int l = 0; l < k; ++l)
            for (int m = 0; m < k; ++m) coef(i, l * k + m) = mid(l, m);
    }

    InferenceReport rep;
    rep.gamma = gamma;
    rep.n = n;
    rep.form = form;
    rep.middle.resize(k * q, k * q);
    for (int l = 0; l < k; ++l)
        for (int m = l; m < k; ++m) {
            const Matrix blk = xa.transpose() * coef.col(l * k + m).asDiagonal() * xa / static_cast<double>(n);
            rep.middle.block(l * q, m * q, q, q) = blk;
            if (m != l) rep.middle.block(m * q, l * q, q, q) = blk.transpose();
        }

    Matrix outer = Matrix::Zero(k * q, k * q);
    for (int l = 0; l < k; ++l)
        for (int m = 0; m < k; ++m)
            if (form == CovarianceForm::ones_block || l == m) outer.block(l * q, m * q, q, q) = vinv;

    rep.covariance = outer * rep.middle * outer;
    rep.covariance = (0.5 * (rep.covariance + rep.covariance.transpose())).eval();

    rep.se.resize(k, q);
    rep.z.resize(k, q);
    rep.p_value.resize(k, q);
    for (int j = 0; j < k; ++j)
        for (Index b = 0; b < q; ++b) {
            const double var = std::max(0.0, rep.covariance(j * q + b, j * q + b));
            const double se = std::sqrt(var / static_cast<double>(n));
            const double est = gamma.gamma(j, b);
            rep.se(j, b) = se;
            const double z = se > 0.0 ? est / se : (est == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), est));
            rep.z(j, b) = z;
            rep.p_value(j, b) = normal_two_sided_p(z);
        }
    return rep;
}

// ---------------------------------------------------------------------------
// Wald tests
// ---------------------------------------------------------------------------

inline std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    if (p < 0.1) return ".";
    return "";
}

struct WaldRow {
    int arm = 1;
    Index coefficient = 0;  // design column; 0 is the intercept when present
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p_value = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::string stars;
};

struct WaldTable {
    double alpha = 0.05;
    double z_crit = 0.0;
    bool intercept = true;
    std::vector<WaldRow> rows;

    /// Display name of design column `b`.
    std::string coefficient_name(Index b, const std::vector<std::string>& names) const {
        if (intercept && b == 0) return "(intercept)";
        const auto idx = static_cast<std::size_t>(intercept ? b - 1 : b);
        return idx < names.size() ? names[idx] : "x" + std::to_string(idx + 1);
    }
};

inline WaldTable wald_tests(const InferenceReport& rep, double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    WaldTable t;
    t.alpha = alpha;
    t.intercept = rep.gamma.intercept;
    t.z_crit = normal_quantile(1.0 - alpha / 2.0);
    for (Index j = 0; j < rep.se.rows(); ++j)
        for (Index b = 0; b < rep.se.cols(); ++b) {
            WaldRow r;
            r.arm = static_cast<int>(j + 1);
            r.coefficient = b;
            r.estimate = rep.gamma.gamma(j, b);
            r.se = rep.se(j, b);
            r.z = rep.z(j, b);
            r.p_value = rep.p_value(j, b);
            r.ci_low = r.estimate - t.z_crit * r.se;
            r.ci_high = r.estimate + t.z_crit * r.se;
            r.stars = significance_stars(r.p_value);
            t.rows.push_back(r);
        }
    return t;
}

/// Aligned text table. `arm_labels` and `coef_names` (without the intercept) may be empty.
inline std::string format_wald_table(const WaldTable& t, const std::vector<std::string>& arm_labels,
                                     const std::vector<std::string>& coef_names) {
    std::ostringstream out;
    const int ci = static_cast<int>(std::lround((1.0 - t.alpha) * 1000.0));
    std::ostringstream lvl;
    lvl << ci / 10 << (ci % 10 ? "." + std::to_string(ci % 10) : std::string()) << "%";
    out << std::left << std::setw(12) << "arm" << std::setw(16) << "coefficient" << std::right << std::setw(12)
        << "estimate" << std::setw(12) << "se" << std::setw(10) << "z" << std::setw(12) << "p" << std::setw(26)
        << (lvl.str() + " CI") << "  sig\n";
    for (const auto& r : t.rows) {
        const std::string arm = static_cast<std::size_t>(r.arm - 1) < arm_labels.size()
                                    ? arm_labels[static_cast<std::size_t>(r.arm - 1)]
                                    : std::to_string(r.arm);
        const std::string coef = t.coefficient_name(r.coefficient, coef_names);
        std::ostringstream ci_s;
        ci_s << std::setprecision(4) << std::fixed << "[" << r.ci_low << ", " << r.ci_high << "]";
        out << std::left << std::setw(12) << arm << std::setw(16) << coef << std::right << std::fixed
            << std::setprecision(4) << std::setw(12) << r.estimate << std::setw(12) << r.se << std::setw(10)
            << std::setprecision(3) << r.z << std::setw(12) << std::setprecision(4) << r.p_value << std::setw(26)
            << ci_s.str() << "  " << r.stars << "\n";
    }
    out << "signif. codes: *** < 0.001, ** < 0.01, * < 0.05, . < 0.1\n";
    return out.str();
}

}  // namespace rdlearn
