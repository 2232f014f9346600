#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"

namespace rdlearn {

// ---------------------------------------------------------------------------
// SPD solves with diagonal jitter escalation
// ---------------------------------------------------------------------------

struct SpdFactor {
    Eigen::LLT<Matrix> llt;
    double jitter = 0.0;  // absolute amount added to the diagonal
};

/// Cholesky of a symmetric PSD matrix. Tries the matrix as given, then adds
/// relative jitter 1e-10, 1e-9, ..., 1e-6 (scaled by the mean diagonal).
/// Throws SingularityError when none of these is numerically positive definite.
inline SpdFactor factor_spd(const Eigen::Ref<const Matrix>& a, const char* what = "system") {
    const Index q = a.rows();
    if (q == 0 || !(a.diagonal().cwiseAbs().maxCoeff() > 0.0) || !a.allFinite())
        throw SingularityError(std::string(what) + " (" + std::to_string(q) + "x" + std::to_string(q) +
                                   ") has no positive diagonal entry or is non-finite",
                               std::numeric_limits<double>::infinity());
    const double diag_scale = a.diagonal().cwiseAbs().mean();
    constexpr double kMinRcond = 1e-14;
    double last_rcond = 0.0;
    for (int step = -1; step <= 4; ++step) {
        const double rel = step < 0 ? 0.0 : std::pow(10.0, -10 + step);
        SpdFactor f;
        f.jitter = rel * diag_scale;
        Matrix m = a;
        m.diagonal().array() += f.jitter;
        f.llt.compute(m);
        if (f.llt.info() == Eigen::Success) {
            last_rcond = f.llt.rcond();
            if (last_rcond > kMinRcond && std::isfinite(last_rcond)) return f;
        }
    }
    const double cond = last_rcond > 0.0 ? 1.0 / last_rcond : std::numeric_limits<double>::infinity();
    throw SingularityError(std::string(what) + " (" + std::to_string(q) + "x" + std::to_string(q) +
                               ") is singular after maximum jitter; condition estimate " + std::to_string(cond),
                           cond);
}

// ---------------------------------------------------------------------------
// Weighted least squares
// ---------------------------------------------------------------------------

struct WlsFit {
    Vector beta;       // one entry per design column
    Vector weights;
    Vector residuals;  // y - Z beta
    double jitter = 0.0;
};

/// beta = (Z^T W Z)^{-1} Z^T W y with W = diag(w), w > 0.
inline WlsFit weighted_ls(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Vector>& y,
                          const Eigen::Ref<const Vector>& w) {
    if (z.rows() != y.size() || y.size() != w.size()) throw DomainError("weighted_ls: dimension mismatch");
    if (z.rows() == 0) throw EmptyDataError("weighted_ls: no observations");
    if ((w.array() <= 0.0).any() || !w.allFinite()) throw DomainError("weighted_ls: weights must be positive");
    if (!z.allFinite() || !y.allFinite()) throw ValidationError("weighted_ls: non-finite input");
    const Matrix zw = z.transpose() * w.asDiagonal();
    Matrix gram = zw * z;
    const Vector rhs = zw * y;
    auto f = factor_spd(gram, "weighted normal equations");
    WlsFit fit;
    fit.beta = f.llt.solve(rhs);
    fit.weights = w;
    fit.residuals = y - z * fit.beta;
    fit.jitter = f.jitter;
    return fit;
}

// ---------------------------------------------------------------------------
// Weighted LASSO by cyclic coordinate descent
// ---------------------------------------------------------------------------

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

struct LassoOptions {
    double tol = 1e-7;  // max coefficient change per sweep, original scale
    int max_sweeps = 10000;
    bool fit_intercept = true;
    /// Per-column multipliers on lambda; 0 leaves a column unpenalized. Empty = all ones.
    std::vector<double> penalty_factor;
    bool track_objective = false;
};

struct LassoFit {
    Vector beta;
    double intercept = 0.0;
    double lambda = 0.0;
    int iterations = 0;  // coordinate sweeps, full and active-set
    bool converged = false;
    double kkt_gap = 0.0;
    std::vector<double> objective_trace;  // after each sweep when tracked

    Vector predict(const Eigen::Ref<const Matrix>& z) const {
        return (z * beta).array() + intercept;
    }
};

/// Minimizes n^-1 sum_i w_i (y_i - b0 - z_i^T beta)^2 + lambda sum_j pf_j |beta_j|
/// with an unpenalized intercept b0 (when fit_intercept). Columns are standardized
/// to unit weighted variance internally; coefficients are reported on the original
/// scale. Reusable across a lambda path with warm starts.
class WeightedLasso {
public:
    WeightedLasso(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Vector>& y,
                  const Eigen::Ref<const Vector>& w, LassoOptions opts = {})
        : opts_(std::move(opts)), n_(z.rows()), p_(z.cols()), w_(w) {
        if (z.rows() != y.size() || y.size() != w.size()) throw DomainError("weighted_lasso: dimension mismatch");
        if (n_ == 0) throw EmptyDataError("weighted_lasso: no observations");
        if ((w.array() <= 0.0).any() || !w.allFinite()) throw DomainError("weighted_lasso: weights must be positive");
        if (!z.allFinite() || !y.allFinite()) throw ValidationError("weighted_lasso: non-finite input");
        if (opts_.penalty_factor.empty()) opts_.penalty_factor.assign(static_cast<std::size_t>(p_), 1.0);
        if (static_cast<Index>(opts_.penalty_factor.size()) != p_)
            throw DomainError("weighted_lasso: penalty_factor length mismatch");
        sw_ = w.sum();
        mean_ = Vector::Zero(p_);
        y_mean_ = 0.0;
        if (opts_.fit_intercept) {
            mean_ = (z.transpose() * w) / sw_;
            y_mean_ = w.dot(y) / sw_;
        }
        scale_.resize(p_);
        u_.resize(n_, p_);
        for (Index j = 0; j < p_; ++j) {
            u_.col(j) = z.col(j).array() - mean_(j);
            const double s = std::sqrt(w.dot(u_.col(j).cwiseAbs2()) / sw_);
            if (s > 1e-12 * std::max(1.0, z.col(j).cwiseAbs().maxCoeff())) {
                scale_(j) = s;
                u_.col(j) /= s;
            } else {
                scale_(j) = 0.0;  // constant column: coefficient pinned at zero
                u_.col(j).setZero();
            }
        }
        yc_ = y.array() - y_mean_;
        wu_ = u_.array().colwise() * w_.array();
        coef_ = Vector::Zero(p_);
        resid_ = yc_;
    }

    Index n() const { return n_; }
    Index p() const { return p_; }

    /// Smallest lambda with an all-zero penalized solution, i.e.
    /// max_j (2/n) |z_j^T W r0| / pf_j where r0 is the unpenalized fit's residual.
    double lambda_max() const {
        Vector r0 = null_residual();
        double best = 0.0;
        for (Index j = 0; j < p_; ++j) {
            const double pf = opts_.penalty_factor[static_cast<std::size_t>(j)];
            if (pf <= 0.0 || scale_(j) == 0.0) continue;
            const double g = 2.0 / static_cast<double>(n_) * std::abs(wu_.col(j).dot(r0)) * scale_(j);
            best = std::max(best, g / pf);
        }
        return best;
    }

    /// Solves at `lambda`, warm-starting from the previous solution.
    LassoFit fit(double lambda) {
        if (!(lambda >= 0.0)) throw DomainError("weighted_lasso: lambda must be >= 0");
        LassoFit out;
        out.lambda = lambda;
        const double nd = static_cast<double>(n_);
        std::vector<double> thr(static_cast<std::size_t>(p_));
        for (Index j = 0; j < p_; ++j) {
            thr[static_cast<std::size_t>(j)] =
                scale_(j) == 0.0 ? 0.0 : nd * lambda * opts_.penalty_factor[static_cast<std::size_t>(j)] / (2.0 * scale_(j));
        }

        auto sweep = [&](bool active_only) {
            double max_change = 0.0;
            for (Index j = 0; j < p_; ++j) {
                if (scale_(j) == 0.0) continue;
                if (active_only && coef_(j) == 0.0) continue;
                const double old = coef_(j);
                const double rho = wu_.col(j).dot(resid_) + sw_ * old;
                const double updated = soft_threshold(rho, thr[static_cast<std::size_t>(j)]) / sw_;
                const double delta = updated - old;
                if (delta != 0.0) {
                    resid_.noalias() -= delta * u_.col(j);
                    coef_(j) = updated;
                    max_change = std::max(max_change, std::abs(delta) / scale_(j));
                }
            }
            ++out.iterations;
            if (opts_.track_objective) out.objective_trace.push_back(objective(lambda));
            return max_change;
        };

        while (out.iterations < opts_.max_sweeps) {
            const double full_change = sweep(false);
            if (full_change < opts_.tol) {
                out.converged = true;
                break;
            }
            while (out.iterations < opts_.max_sweeps) {
                if (sweep(true) < opts_.tol) break;
            }
        }
        // Drift guard: refresh residual from the coefficients.
        resid_ = yc_ - u_ * coef_;

        out.beta = Vector::Zero(p_);
        for (Index j = 0; j < p_; ++j)
            if (scale_(j) != 0.0) out.beta(j) = coef_(j) / scale_(j);
        out.intercept = opts_.fit_intercept ? y_mean_ - mean_.dot(out.beta) : 0.0;
        out.kkt_gap = kkt_gap(lambda);
        return out;
    }

    /// Objective value at the current coefficients (original-scale penalty).
    double objective(double lambda) const {
        double pen = 0.0;
        for (Index j = 0; j < p_; ++j)
            if (scale_(j) != 0.0)
                pen += opts_.penalty_factor[static_cast<std::size_t>(j)] * std::abs(coef_(j) / scale_(j));
        return w_.dot(resid_.cwiseAbs2()) / static_cast<double>(n_) + lambda * pen;
    }

    void reset() {
        coef_.setZero();
        resid_ = yc_;
    }

private:
    Vector null_residual() const {
        // Unpenalized columns are fit exactly (plus the intercept via centering).
        std::vector<Index> free_cols;
        for (Index j = 0; j < p_; ++j)
            if (opts_.penalty_factor[static_cast<std::size_t>(j)] <= 0.0 && scale_(j) != 0.0) free_cols.push_back(j);
        if (free_cols.empty()) return yc_;
        Matrix uf(n_, static_cast<Index>(free_cols.size()));
        for (std::size_t c = 0; c < free_cols.size(); ++c) uf.col(static_cast<Index>(c)) = u_.col(free_cols[c]);
        const auto fit = weighted_ls(uf, yc_, w_);
        return fit.residuals;
    }

    double kkt_gap(double lambda) const {
        double gap = 0.0;
        const double nd = static_cast<double>(n_);
        for (Index j = 0; j < p_; ++j) {
            if (scale_(j) == 0.0) continue;
            // gradient of the loss w.r.t. the original-scale coefficient
            const double g = -2.0 / nd * wu_.col(j).dot(resid_) * scale_(j);
            const double t = lambda * opts_.penalty_factor[static_cast<std::size_t>(j)];
            const double viol = coef_(j) != 0.0 ? std::abs(g + t * (coef_(j) > 0.0 ? 1.0 : -1.0))
                                                : std::max(0.0, std::abs(g) - t);
            gap = std::max(gap, viol);
        }
        return gap;
    }

    LassoOptions opts_;
    Index n_, p_;
    Vector w_;
    double sw_ = 0.0;
    Vector mean_;
    double y_mean_ = 0.0;
    Vector scale_;
    Matrix u_;   // standardized columns
    Matrix wu_;  // w .* u
    Vector yc_;
    Vector coef_;  // standardized-scale coefficients
    Vector resid_;
};

inline LassoFit weighted_lasso(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Vector>& y,
                               const Eigen::Ref<const Vector>& w, double lambda, const LassoOptions& opts = {}) {
    WeightedLasso solver(z, y, w, opts);
    return solver.fit(lambda);
}

// ---------------------------------------------------------------------------
// Gaussian kernel
// ---------------------------------------------------------------------------

/// Entry (i, j) = exp(-|x2_i - x_j|^2 / (2 h^2)); result is m x n.
inline Matrix gaussian_gram(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& x2, double bandwidth) {
    if (!(bandwidth > 0.0)) throw DomainError("gaussian_gram: bandwidth must be positive");
    if (x.cols() != x2.cols()) throw DomainError("gaussian_gram: dimension mismatch");
    const Vector xn = x.rowwise().squaredNorm();
    const Vector x2n = x2.rowwise().squaredNorm();
    Matrix d2 = -2.0 * (x2 * x.transpose());
    d2.colwise() += x2n;
    d2.rowwise() += xn.transpose();
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Matrix k = (-(d2.array().max(0.0)) * inv).exp().matrix();
    if (x.rows() == x2.rows() && x.data() == x2.data()) {
        k.diagonal().setOnes();
        k = 0.5 * (k + k.transpose()).eval();
    }
    return k;
}

/// Median pairwise Euclidean distance over an evenly spaced subsample of at most
/// `max_points` rows. Falls back to 1 when all sampled points coincide.
inline double median_bandwidth(const Eigen::Ref<const Matrix>& x, Index max_points = 500) {
    const Index n = x.rows();
    const Index m = std::min(n, max_points);
    if (m < 2) return 1.0;
    std::vector<Index> idx(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = (i * n) / m;
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
    for (Index i = 0; i < m; ++i)
        for (Index j = i + 1; j < m; ++j) d.push_back((x.row(idx[static_cast<std::size_t>(i)]) - x.row(idx[static_cast<std::size_t>(j)])).norm());
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0) {
        const double lower = *std::max_element(d.begin(), mid);
        med = 0.5 * (med + lower);
    }
    return med > 0.0 ? med : 1.0;
}

// ---------------------------------------------------------------------------
// Weighted kernel ridge
// ---------------------------------------------------------------------------

/// Solution of the bordered system
///   [ M + ridge W^{-1}  E ] [c]   [r]
///   [ E^T               0 ] [b] = [0]
/// which is the stationarity condition of
///   n^-1 sum_i w_i (r_i - E_i b - M_i c)^2 + lambda c^T M c,  ridge = n lambda,
/// for PSD M. Kernel ridge uses M = K, E = 1.
struct BorderedSolution {
    Vector c;
    Vector b;
    double jitter = 0.0;
};

inline BorderedSolution solve_bordered_ridge(const Eigen::Ref<const Matrix>& m, const Eigen::Ref<const Matrix>& e,
                                             const Eigen::Ref<const Vector>& r, const Eigen::Ref<const Vector>& w,
                                             double ridge) {
    const Index n = m.rows();
    if (m.cols() != n || e.rows() != n || r.size() != n || w.size() != n)
        throw DomainError("kernel ridge: dimension mismatch");
    if ((w.array() <= 0.0).any()) throw DomainError("kernel ridge: weights must be positive");
    if (!(ridge > 0.0)) throw DomainError("kernel ridge: lambda must be positive");
    Matrix a = m;
    a.diagonal().array() += ridge / w.array();
    auto f = factor_spd(a, "kernel ridge system");
    BorderedSolution s;
    s.jitter = f.jitter;
    const Vector ainv_r = f.llt.solve(r);
    if (e.cols() == 0) {
        s.c = ainv_r;
        s.b.resize(0);
        return s;
    }
    const Matrix ainv_e = f.llt.solve(e);
    const Matrix schur = e.transpose() * ainv_e;
    auto fs = factor_spd(schur, "kernel ridge intercept block");
    s.b = fs.llt.solve(e.transpose() * ainv_r);
    s.c = ainv_r - ainv_e * s.b;
    return s;
}

struct KernelFit {
    Vector alpha;  // kernel weights, one per training point
    double intercept = 0.0;
    double bandwidth = 1.0;
    double lambda = 0.0;
    Matrix train_x;

    Vector predict(const Eigen::Ref<const Matrix>& x) const {
        return (gaussian_gram(train_x, x, bandwidth) * alpha).array() + intercept;
    }
};

/// Minimizes n^-1 sum_i w_i (r_i - b0 - K_i^T alpha)^2 + lambda alpha^T K alpha.
inline KernelFit weighted_kernel_ridge(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& r,
                                       const Eigen::Ref<const Vector>& w, double lambda, double bandwidth) {
    if (x.rows() != r.size()) throw DomainError("weighted_kernel_ridge: dimension mismatch");
    if (!(lambda > 0.0)) throw DomainError("weighted_kernel_ridge: lambda must be positive");
    const Matrix k = gaussian_gram(x, x, bandwidth);
    const Matrix ones = Matrix::Ones(x.rows(), 1);
    const auto s = solve_bordered_ridge(k, ones, r, w, static_cast<double>(x.rows()) * lambda);
    KernelFit fit;
    fit.alpha = s.c;
    fit.intercept = s.b(0);
    fit.bandwidth = bandwidth;
    fit.lambda = lambda;
    fit.train_x = x;
    return fit;
}

// ---------------------------------------------------------------------------
// Cross-validation over a log-spaced lambda grid
// ---------------------------------------------------------------------------

struct CvOptions {
    int folds = 5;
    int grid_size = 50;
    double decades = 4.0;
    RngSpec rng{};
};

struct CvResult {
    std::vector<double> lambdas;
    std::vector<double> cv_error;  // weighted validation MSE, averaged over folds
    double best_lambda = 0.0;
    std::size_t best_index = 0;
};

inline std::vector<double> log_grid(double top, int size, double decades) {
    std::vector<double> g(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const double t = size == 1 ? 0.0 : static_cast<double>(i) / (size - 1);
        g[static_cast<std::size_t>(i)] = top * std::pow(10.0, -decades * t);
    }
    return g;
}

namespace detail {

inline int effective_folds(Index n, int folds) { return static_cast<int>(std::max<Index>(2, std::min<Index>(folds, n))); }

inline std::vector<Index> rows_where(const std::vector<int>& fold, int f, bool in) {
    std::vector<Index> out;
    for (std::size_t i = 0; i < fold.size(); ++i)
        if ((fold[i] == f) == in) out.push_back(static_cast<Index>(i));
    return out;
}

inline Matrix take_rows(const Eigen::Ref<const Matrix>& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
}

inline Vector take(const Eigen::Ref<const Vector>& v, const std::vector<Index>& rows) {
    Vector out(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
    return out;
}

inline Matrix take_block(const Eigen::Ref<const Matrix>& m, const std::vector<Index>& rows,
                         const std::vector<Index>& cols) {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r), static_cast<Index>(c)) = m(rows[r], cols[c]);
    return out;
}

inline std::size_t argmin_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[best]) best = i;
    return best;
}

}  // namespace detail

/// Lasso with lambda chosen by K-fold CV over log_grid(lambda_max, grid, decades).
/// Returns the full-data fit at the selected lambda.
inline LassoFit cv_weighted_lasso(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Vector>& y,
                                  const Eigen::Ref<const Vector>& w, const LassoOptions& opts, const CvOptions& cv,
                                  CvResult* report = nullptr) {
    WeightedLasso full(z, y, w, opts);
    double top = full.lambda_max();
    if (!(top > 0.0)) top = 1e-8;  // response already explained by unpenalized terms
    CvResult res;
    res.lambdas = log_grid(top, cv.grid_size, cv.decades);
    res.cv_error.assign(res.lambdas.size(), 0.0);

    const int folds = detail::effective_folds(z.rows(), cv.folds);
    const auto fold = assign_folds(z.rows(), folds, cv.rng);
    // Folds are independent; each writes its own slot so the reduction order is fixed.
    std::vector<std::vector<double>> per_fold(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        const auto tr = detail::rows_where(fold, f, false);
        const auto va = detail::rows_where(fold, f, true);
        auto& errs = per_fold[static_cast<std::size_t>(f)];
        errs.assign(res.lambdas.size(), 0.0);
        if (va.empty() || tr.empty()) continue;
        const Matrix ztr = detail::take_rows(z, tr);
        const Vector ytr = detail::take(y, tr);
        const Vector wtr = detail::take(w, tr);
        const Matrix zva = detail::take_rows(z, va);
        const Vector yva = detail::take(y, va);
        const Vector wva = detail::take(w, va);
        WeightedLasso solver(ztr, ytr, wtr, opts);
        for (std::size_t l = 0; l < res.lambdas.size(); ++l) {
            const auto fit = solver.fit(res.lambdas[l]);
            const Vector e = yva - fit.predict(zva);
            errs[l] = wva.dot(e.cwiseAbs2()) / wva.sum();
        }
    }
    for (int f = 0; f < folds; ++f)
        for (std::size_t l = 0; l < res.lambdas.size(); ++l) res.cv_error[l] += per_fold[static_cast<std::size_t>(f)][l] / folds;
    res.best_index = detail::argmin_first(res.cv_error);
    res.best_lambda = res.lambdas[res.best_index];

    LassoFit best;
    for (std::size_t l = 0; l <= res.best_index; ++l) best = full.fit(res.lambdas[l]);
    if (report) *report = std::move(res);
    return best;
}

/// Upper end of the kernel ridge lambda grid: ten times the mean weight. At that
/// level the ridge term n*lambda/w_i dominates every eigenvalue of an n x n Gaussian
/// gram matrix, so the fit is essentially the weighted mean.
inline double kernel_lambda_top(const Eigen::Ref<const Vector>& w) { return 10.0 * w.mean(); }

/// CV for the bordered ridge system with a precomputed PSD matrix `m` (n x n) and
/// unpenalized block `e` (n x q). Validation error is the weighted squared error of
/// predictions M_va,tr c + E_va b.
inline CvResult cv_bordered_ridge(const Eigen::Ref<const Matrix>& m, const Eigen::Ref<const Matrix>& e,
                                  const Eigen::Ref<const Vector>& r, const Eigen::Ref<const Vector>& w,
                                  const CvOptions& cv) {
    const Index n = m.rows();
    CvResult res;
    res.lambdas = log_grid(kernel_lambda_top(w), cv.grid_size, cv.decades);
    res.cv_error.assign(res.lambdas.size(), 0.0);
    const int folds = detail::effective_folds(n, cv.folds);
    const auto fold = assign_folds(n, folds, cv.rng);
    std::vector<std::vector<double>> per_fold(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        const auto tr = detail::rows_where(fold, f, false);
        const auto va = detail::rows_where(fold, f, true);
        auto& errs = per_fold[static_cast<std::size_t>(f)];
        errs.assign(res.lambdas.size(), 0.0);
        if (va.empty() || tr.empty()) continue;
        const Matrix mtr = detail::take_block(m, tr, tr);
        const Matrix mva = detail::take_block(m, va, tr);
        const Matrix etr = detail::take_rows(e, tr);
        const Matrix eva = detail::take_rows(e, va);
        const Vector rtr = detail::take(r, tr);
        const Vector wtr = detail::take(w, tr);
        const Vector rva = detail::take(r, va);
        const Vector wva = detail::take(w, va);
        const double ntr = static_cast<double>(tr.size());
        for (std::size_t l = 0; l < res.lambdas.size(); ++l) {
            double err = 0.0;
            try {
                const auto s = solve_bordered_ridge(mtr, etr, rtr, wtr, ntr * res.lambdas[l]);
                Vector pred = mva * s.c;
                if (eva.cols() > 0) pred += eva * s.b;
                err = wva.dot((rva - pred).cwiseAbs2()) / wva.sum();
            } catch (const SingularityError&) {
                err = std::numeric_limits<double>::infinity();
            }
            errs[l] = err;
        }
    }
    for (int f = 0; f < folds; ++f)
        for (std::size_t l = 0; l < res.lambdas.size(); ++l) res.cv_error[l] += per_fold[static_cast<std::size_t>(f)][l] / folds;
    res.best_index = detail::argmin_first(res.cv_error);
    res.best_lambda = res.lambdas[res.best_index];
    return res;
}

/// Kernel ridge with lambda chosen by CV and bandwidth from the median heuristic
/// unless `bandwidth` > 0 is given.
inline KernelFit cv_weighted_kernel_ridge(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& r,
                                          const Eigen::Ref<const Vector>& w, const CvOptions& cv,
                                          double bandwidth = 0.0, CvResult* report = nullptr) {
    const double h = bandwidth > 0.0 ? bandwidth : median_bandwidth(x);
    const Matrix k = gaussian_gram(x, x, h);
    const Matrix ones = Matrix::Ones(x.rows(), 1);
    auto res = cv_bordered_ridge(k, ones, r, w, cv);
    const auto s = solve_bordered_ridge(k, ones, r, w, static_cast<double>(x.rows()) * res.best_lambda);
    KernelFit fit;
    fit.alpha = s.c;
    fit.intercept = s.b(0);
    fit.bandwidth = h;
    fit.lambda = res.best_lambda;
    fit.train_x = x;
    if (report) *report = std::move(res);
    return fit;
}

}  // namespace rdlearn
