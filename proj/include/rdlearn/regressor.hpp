#pragma once

#include <optional>
#include <string>
#include <type_traits>
#include <variant>

#include "core.hpp"
#include "solvers.hpp"

namespace rdlearn {

/// Function spaces for regression steps. `constant` is the intercept-only space.
enum class FunctionSpace { constant, linear, lasso, kernel };

inline std::string to_string(FunctionSpace s) {
    switch (s) {
        case FunctionSpace::constant: return "constant";
        case FunctionSpace::linear: return "linear";
        case FunctionSpace::lasso: return "lasso";
        case FunctionSpace::kernel: return "kernel";
    }
    return "?";
}

inline FunctionSpace parse_space(const std::string& s) {
    if (s == "constant") return FunctionSpace::constant;
    if (s == "linear") return FunctionSpace::linear;
    if (s == "lasso" || s == "linear-lasso") return FunctionSpace::lasso;
    if (s == "kernel" || s == "kernel-ridge") return FunctionSpace::kernel;
    throw DomainError("unknown function space '" + s + "'");
}

/// Tuning for one regression fit. lambda < 0 selects by cross-validation;
/// bandwidth <= 0 uses the median heuristic.
struct RegressionOptions {
    double lambda = -1.0;
    double bandwidth = 0.0;
    CvOptions cv{};
    LassoOptions lasso{};
};

struct ConstantFunction {
    double value = 0.0;
};

struct LinearFunction {
    double intercept = 0.0;
    Vector beta;
};

/// A fitted scalar function of x.
struct Regressor {
    FunctionSpace space = FunctionSpace::constant;
    std::variant<ConstantFunction, LinearFunction, KernelFit> fn = ConstantFunction{};
    double lambda = 0.0;  // selected or supplied penalty (0 when unpenalized)

    Vector predict(const Eigen::Ref<const Matrix>& x) const {
        return std::visit(
            [&](const auto& f) -> Vector {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, ConstantFunction>) {
                    return Vector::Constant(x.rows(), f.value);
                } else if constexpr (std::is_same_v<T, LinearFunction>) {
                    if (x.cols() != f.beta.size()) throw DomainError("regressor: covariate dimension mismatch");
                    return (x * f.beta).array() + f.intercept;
                } else {
                    if (x.cols() != f.train_x.cols()) throw DomainError("regressor: covariate dimension mismatch");
                    return f.predict(x);
                }
            },
            fn);
    }
};

/// Weighted regression of y on x in the requested space.
inline Regressor fit_regressor(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Vector>& y,
                               const Eigen::Ref<const Vector>& w, FunctionSpace space,
                               const RegressionOptions& opts = {}) {
    if (x.rows() != y.size() || y.size() != w.size()) throw DomainError("fit_regressor: dimension mismatch");
    if (x.rows() == 0) throw EmptyDataError("fit_regressor: no observations");
    Regressor r;
    r.space = space;
    switch (space) {
        case FunctionSpace::constant:
            r.fn = ConstantFunction{w.dot(y) / w.sum()};
            break;
        case FunctionSpace::linear: {
            const auto fit = weighted_ls(augment(x).rows, y, w);
            r.fn = LinearFunction{fit.beta(0), fit.beta.tail(x.cols())};
            break;
        }
        case FunctionSpace::lasso: {
            LassoFit fit;
            if (opts.lambda >= 0.0) fit = weighted_lasso(x, y, w, opts.lambda, opts.lasso);
            else fit = cv_weighted_lasso(x, y, w, opts.lasso, opts.cv);
            r.fn = LinearFunction{fit.intercept, fit.beta};
            r.lambda = fit.lambda;
            break;
        }
        case FunctionSpace::kernel: {
            KernelFit fit;
            if (opts.lambda > 0.0) {
                const double h = opts.bandwidth > 0.0 ? opts.bandwidth : median_bandwidth(x);
                fit = weighted_kernel_ridge(x, y, w, opts.lambda, h);
            } else {
                fit = cv_weighted_kernel_ridge(x, y, w, opts.cv, opts.bandwidth);
            }
            r.lambda = fit.lambda;
            r.fn = std::move(fit);
            break;
        }
    }
    return r;
}

}  // namespace rdlearn
