#pragma once

#include <cmath>
#include <string>

#include "core.hpp"

namespace rdlearn {

/// Vertices W_1..W_k of a regular simplex in R^{k-1}, one row per arm.
///
/// Row 1 is (k-1)^{-1/2} 1; row j >= 2 is
///   -(1 + sqrt(k)) (k-1)^{-3/2} 1 + sqrt(k/(k-1)) e_{j-1}.
/// Every row has unit norm, distinct rows have inner product -1/(k-1) and the
/// rows sum to zero, so <W_j, f> is a sum-to-zero effect vector for any f.
class SimplexVertices {
public:
    explicit SimplexVertices(int k) : k_(k) {
        if (k < 2) throw DomainError("simplex needs k >= 2 arms, got " + std::to_string(k));
        const double km1 = static_cast<double>(k - 1);
        const double kd = static_cast<double>(k);
        w_.resize(k, k - 1);
        w_.row(0).setConstant(1.0 / std::sqrt(km1));
        const double shift = -(1.0 + std::sqrt(kd)) / std::pow(km1, 1.5);
        // shift + sqrt(k/(k-1)) simplified, so k = 2 gives exactly -1
        const double diagonal = (std::sqrt(kd) * (kd - 2.0) - 1.0) / std::pow(km1, 1.5);
        for (int j = 1; j < k; ++j) {
            w_.row(j).setConstant(shift);
            w_(j, j - 1) = diagonal;
        }
    }

    int k() const { return k_; }
    int dim() const { return k_ - 1; }
    const Matrix& matrix() const { return w_; }
    auto vertex(int arm) const { return w_.row(arm - 1); }

    /// (<W_1, f>, ..., <W_k, f>).
    Vector effects_from_f(const Eigen::Ref<const Vector>& f) const {
        if (f.size() != dim())
            throw DomainError("effects_from_f: f has length " + std::to_string(f.size()) + ", expected " +
                              std::to_string(dim()));
        return w_ * f;
    }

    /// Row-wise effects for an m x (k-1) matrix of decision values.
    Matrix effects_from_f_rows(const Eigen::Ref<const Matrix>& f) const {
        if (f.cols() != dim()) throw DomainError("effects_from_f_rows: column count mismatch");
        return f * w_.transpose();
    }

    /// Inverse of effects_from_f on zero-sum vectors. W has orthogonal columns of
    /// squared norm k/(k-1), so the least-squares inverse is ((k-1)/k) W^T d.
    Vector f_from_effects(const Eigen::Ref<const Vector>& d, double tol = 1e-9) const {
        if (d.size() != k_) throw DomainError("f_from_effects: expected " + std::to_string(k_) + " effects");
        const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
        if (std::abs(d.sum()) > tol * scale)
            throw DomainError("f_from_effects: effects must sum to zero (sum = " + std::to_string(d.sum()) + ")");
        return (static_cast<double>(k_ - 1) / k_) * (w_.transpose() * d);
    }

private:
    int k_;
    Matrix w_;
};

inline SimplexVertices build_vertices(int k) { return SimplexVertices(k); }

}  // namespace rdlearn
