#pragma once

// The -1/+h Bonus-Malus chain. Levels are 1..z in the public API; matrices
// and vectors are 0-based internally (row l-1 holds level l).

#include "bmsdep/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace bmsdep {

class TransitionRule {
public:
    TransitionRule(int levels, int penalty) : levels_(levels), penalty_(penalty) {
        if (levels < 2) throw ValidationError("transition rule: need at least 2 levels (z >= 2)");
        if (penalty < 1 || penalty > levels - 1) {
            std::ostringstream os;
            os << "transition rule: penalty h must satisfy 1 <= h <= z-1 (z=" << levels << ", h=" << penalty << ")";
            throw ValidationError(os.str());
        }
    }

    /// Parses "z:h", e.g. "10:2".
    static TransitionRule parse(std::string_view text) {
        const auto colon = text.find(':');
        if (colon == std::string_view::npos)
            throw ValidationError("transition rule '" + std::string(text) + "' must have the form z:h");
        auto to_int = [&](std::string_view part) {
            int v = 0;
            const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
            if (ec != std::errc{} || ptr != part.data() + part.size())
                throw ValidationError("transition rule '" + std::string(text) + "' must have the form z:h");
            return v;
        };
        return TransitionRule(to_int(text.substr(0, colon)), to_int(text.substr(colon + 1)));
    }

    int levels() const noexcept { return levels_; }
    int penalty() const noexcept { return penalty_; }

    std::string to_string() const { return std::to_string(levels_) + ":" + std::to_string(penalty_); }
    /// "-1/+h" label used in reports.
    std::string label() const { return "-1/+" + std::to_string(penalty_); }

    bool operator==(const TransitionRule&) const = default;

private:
    int levels_;
    int penalty_;
};

/// Level reached next year from `level` after `claims` claims.
inline int next_level(const TransitionRule& rule, int level, long long claims) {
    const int z = rule.levels();
    if (level < 1 || level > z) {
        std::ostringstream os;
        os << "next_level: level " << level << " outside 1.." << z;
        throw ValidationError(os.str());
    }
    if (claims < 0) throw ValidationError("next_level: negative claim count");
    if (claims == 0) return std::max(level - 1, 1);
    const long long up = static_cast<long long>(level) + claims * rule.penalty();
    return static_cast<int>(std::min<long long>(up, z));
}

/// Smallest claim count that sends `level` to the top level.
inline int claims_to_cap(const TransitionRule& rule, int level) {
    const int gap = rule.levels() - level;
    return std::max(1, (gap + rule.penalty() - 1) / rule.penalty());
}

namespace detail {

inline double log_poisson_pmf(long long n, double mean) {
    if (n == 0) return -mean;
    return static_cast<double>(n) * std::log(mean) - mean - std::lgamma(static_cast<double>(n) + 1.0);
}

inline void require_mean(double mean, const char* what) {
    if (!std::isfinite(mean) || !(mean > 0.0)) {
        std::ostringstream os;
        os << what << ": Poisson mean must be positive and finite (got " << mean << ")";
        throw ValidationError(os.str());
    }
}

} // namespace detail

/// Transition matrix under Poisson(mean) annual claim counts. Claim counts
/// that reach the top level are folded into the capped column, so each row is
/// exact (no tail truncation).
inline Eigen::MatrixXd transition_matrix(const TransitionRule& rule, double mean) {
    detail::require_mean(mean, "transition_matrix");
    const int z = rule.levels();
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(z, z);
    for (int level = 1; level <= z; ++level) {
        const int row = level - 1;
        const int cap = claims_to_cap(rule, level);
        double below_cap = 0.0;
        for (int n = 0; n < cap; ++n) {
            const double mass = std::exp(detail::log_poisson_pmf(n, mean));
            p(row, next_level(rule, level, n) - 1) += mass;
            below_cap += mass;
        }
        p(row, z - 1) += std::max(0.0, 1.0 - below_cap);
    }
    return p;
}

class StationaryDist {
public:
    StationaryDist() = default;
    explicit StationaryDist(Eigen::VectorXd pi) : pi_(std::move(pi)) {}

    int levels() const noexcept { return static_cast<int>(pi_.size()); }
    /// Probability of `level` (1-based).
    double operator()(int level) const { return pi_(level - 1); }
    const Eigen::VectorXd& vector() const noexcept { return pi_; }

private:
    Eigen::VectorXd pi_;
};

/// max |pi P - pi|
inline double stationary_residual(const Eigen::MatrixXd& p, const Eigen::VectorXd& pi) {
    return (p.transpose() * pi - pi).cwiseAbs().maxCoeff();
}

namespace detail {

// Grassmann-Taksar-Heyman elimination. Subtraction-free, so entries that are
// tiny relative to the top of the vector keep full relative accuracy.
// Returns false if a pivot underflows (chain numerically reducible).
inline bool gth_solve(Eigen::MatrixXd a, Eigen::VectorXd& pi) {
    const Eigen::Index n = a.rows();
    for (Eigen::Index k = n - 1; k > 0; --k) {
        const double s = a.row(k).head(k).sum();
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        a.col(k).head(k) /= s;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double akj = a(k, j);
            if (akj == 0.0) continue;
            a.col(j).head(k) += a.col(k).head(k) * akj;
        }
    }
    pi.resize(n);
    pi(0) = 1.0;
    for (Eigen::Index k = 1; k < n; ++k) pi(k) = pi.head(k).dot(a.col(k).head(k));
    pi /= pi.sum();
    return pi.allFinite();
}

inline bool power_iterate(const Eigen::MatrixXd& p, Eigen::VectorXd& pi, double tol, long max_iter) {
    const Eigen::Index n = p.rows();
    pi = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    const Eigen::MatrixXd pt = p.transpose();
    for (long it = 0; it < max_iter; ++it) {
        Eigen::VectorXd next = pt * pi;
        next /= next.sum();
        const double delta = (next - pi).cwiseAbs().maxCoeff();
        pi.swap(next);
        if (delta < tol) return true;
    }
    return false;
}

} // namespace detail

inline constexpr double kStationaryTolerance = 1e-12;

/// Stationary distribution of the chain with Poisson(mean) claim counts.
inline StationaryDist stationary(const TransitionRule& rule, double mean) {
    const Eigen::MatrixXd p = transition_matrix(rule, mean);
    Eigen::VectorXd pi;
    if (detail::gth_solve(p, pi) && stationary_residual(p, pi) < kStationaryTolerance)
        return StationaryDist(std::move(pi));

    const bool converged = detail::power_iterate(p, pi, 1e-14, 1'000'000);
    const double residual = stationary_residual(p, pi);
    if (!converged || !(residual < kStationaryTolerance)) {
        std::ostringstream os;
        os << "stationary: solver did not converge for rule " << rule.to_string() << ", mean " << mean
           << " (residual " << residual << ")";
        throw NumericalError(os.str());
    }
    return StationaryDist(std::move(pi));
}

} // namespace bmsdep
