#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rdlearn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors. Every failure raised by the library derives from rdlearn::Error so
// callers (the CLI in particular) can map categories onto exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

/// Input violates a documented precondition (bad k, length mismatch, ...).
class DomainError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "domain"; }
};

/// Non-finite or otherwise malformed numeric input.
class ValidationError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation"; }
};

/// CSV schema does not match the file (missing column, ...).
class SchemaError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "schema"; }
};

/// A cell could not be parsed. Row is 1-based over data rows (header excluded).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t row, std::size_t column)
        : Error(msg), row_(row), column_(column) {}
    const char* kind() const noexcept override { return "parse"; }
    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

class EmptyDataError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "empty-data"; }
};

/// Operation requires a known propensity (e.g. unbiased inference) but got an estimated one.
class ContractError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "contract"; }
};

/// Numerical failure: a system stayed singular after the full jitter schedule.
class SingularityError : public Error {
public:
    SingularityError(const std::string& msg, double condition_estimate)
        : Error(msg), condition_(condition_estimate) {}
    const char* kind() const noexcept override { return "singular"; }
    double condition_estimate() const noexcept { return condition_; }

private:
    double condition_;
};

/// No observation follows the rule, so the value estimator has a zero denominator.
class UndefinedValueError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "undefined-value"; }
};

// ---------------------------------------------------------------------------
// Data model
// ---------------------------------------------------------------------------

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// Observed triplets (x_i, a_i, y_i). Arms are stored as contiguous labels 1..k;
/// `arm_labels[j-1]` is the original label of arm j.
struct Dataset {
    Matrix x;                           // n x p covariates
    std::vector<int> a;                 // arm of each observation, in 1..k
    Vector y;                           // outcomes
    int k = 0;
    std::vector<std::string> arm_labels;
    std::vector<std::string> covariate_names;
    /// Optional per-observation propensity table (n x k), columns in arm order.
    Matrix propensity;
    /// Set when the treatment column has a single level.
    bool single_arm = false;

    Index n() const { return x.rows(); }
    Index p() const { return x.cols(); }
    bool has_propensity_table() const { return propensity.size() > 0; }

    std::vector<Index> arm_counts() const {
        std::vector<Index> counts(static_cast<std::size_t>(k), 0);
        for (int arm : a) ++counts[static_cast<std::size_t>(arm - 1)];
        return counts;
    }

    /// Checks all invariants. When `require_all_arms` every label 1..k must occur.
    void validate(bool require_all_arms = false) const {
        if (x.rows() == 0) throw EmptyDataError("dataset has no observations");
        if (x.cols() < 1) throw DomainError("dataset needs at least one covariate");
        if (k < 1) throw DomainError("dataset has no arms");
        if (static_cast<Index>(a.size()) != x.rows() || y.size() != x.rows())
            throw DomainError("x, a and y have inconsistent lengths");
        if (!x.allFinite()) throw ValidationError("non-finite covariate value");
        if (!y.allFinite()) throw ValidationError("non-finite outcome value");
        for (int arm : a)
            if (arm < 1 || arm > k)
                throw DomainError("arm label " + std::to_string(arm) + " outside 1.." + std::to_string(k));
        if (has_propensity_table()) {
            if (propensity.rows() != x.rows() || propensity.cols() != k)
                throw DomainError("propensity table must be n x k");
            if (!propensity.allFinite() || propensity.minCoeff() <= 0.0)
                throw ValidationError("propensity table entries must be finite and positive");
        }
        if (require_all_arms && k > 1) {
            const auto counts = arm_counts();
            for (std::size_t j = 0; j < counts.size(); ++j)
                if (counts[j] == 0) throw DomainError("arm " + std::to_string(j + 1) + " has no observations");
        }
    }

    /// Rows restricted to `rows`, preserving arm coding.
    Dataset subset(const std::vector<Index>& rows) const {
        Dataset out;
        out.k = k;
        out.arm_labels = arm_labels;
        out.covariate_names = covariate_names;
        out.single_arm = single_arm;
        out.x.resize(static_cast<Index>(rows.size()), x.cols());
        out.y.resize(static_cast<Index>(rows.size()));
        out.a.resize(rows.size());
        if (has_propensity_table()) out.propensity.resize(static_cast<Index>(rows.size()), k);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const auto i = rows[r];
            const auto ri = static_cast<Index>(r);
            out.x.row(ri) = x.row(i);
            out.y(ri) = y(i);
            out.a[r] = a[static_cast<std::size_t>(i)];
            if (has_propensity_table()) out.propensity.row(ri) = propensity.row(i);
        }
        return out;
    }
};

/// x augmented with a leading column of ones.
struct DesignMatrix {
    Matrix rows;
    Index n() const { return rows.rows(); }
    Index cols() const { return rows.cols(); }
};

inline DesignMatrix augment(const Eigen::Ref<const Matrix>& x) {
    if (!x.allFinite()) throw ValidationError("augment: non-finite covariate");
    DesignMatrix d;
    d.rows.resize(x.rows(), x.cols() + 1);
    d.rows.col(0).setOnes();
    d.rows.rightCols(x.cols()) = x;
    return d;
}

// ---------------------------------------------------------------------------
// Random numbers: (seed, stream) fully determines the engine state.
// ---------------------------------------------------------------------------

struct RngSpec {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    std::mt19937_64 engine() const {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x5244u /* "RD" */};
        return std::mt19937_64(seq);
    }

    RngSpec with_stream(std::uint64_t s) const { return RngSpec{seed, s}; }
};

/// Deterministic shuffle into `folds` groups; fold[i] in 0..folds-1, sizes differ by at most one.
inline std::vector<int> assign_folds(Index n, int folds, const RngSpec& rng) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    auto eng = rng.engine();
    // Fisher-Yates with an explicit bounded draw so the permutation does not
    // depend on std::shuffle's unspecified algorithm.
    for (Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Index>(eng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = static_cast<int>(r % folds);
    return fold;
}

}  // namespace rdlearn
