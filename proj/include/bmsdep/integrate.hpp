#pragma once

// Expectations over the latent effects by Gauss-Hermite quadrature in normal
// scale. Integrands may return double or an Eigen vector (e.g. a whole
// stationary distribution per node).

#include "bmsdep/error.hpp"
#include "bmsdep/random_effects.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <algorithm>
#include <sstream>
#include <type_traits>
#include <vector>

namespace bmsdep {

enum class Scheme { tensor2d, conditional };

struct QuadratureSpec {
    int order = 512;
    Scheme scheme = Scheme::conditional;

    void validate() const {
        if (order < 8) throw ValidationError("quadrature: order must be at least 8");
    }
};

/// Gauss-Hermite rule for E[f(X)], X ~ N(0, 1). Weights sum to one.
class GaussHermiteRule {
public:
    explicit GaussHermiteRule(int order) {
        if (order < 1) throw ValidationError("Gauss-Hermite order must be positive");
        const int n = order;
        Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
        for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
        nodes_.resize(n);
        weights_.resize(n);
        // Golub-Welsch gives starting nodes; Newton on the orthonormal
        // recurrence polishes them and yields accurate tail weights.
        for (int i = 0; i < n; ++i) {
            double x = eig.eigenvalues()(i);
            for (int iter = 0; iter < 8; ++iter) {
                const auto r = evaluate(n, x);
                const double step = r.pn / (std::sqrt(static_cast<double>(n)) * r.pn1);
                x -= step;
                if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
            }
            const auto r = evaluate(n, x);
            nodes_[i] = x;
            weights_[i] = std::exp(-std::log(r.sum_sq) - 2.0 * r.log_scale);
        }
        for (int i = 0; i < n / 2; ++i) {
            const double x = 0.5 * (nodes_[n - 1 - i] - nodes_[i]);
            nodes_[i] = -x;
            nodes_[n - 1 - i] = x;
            const double w = 0.5 * (weights_[i] + weights_[n - 1 - i]);
            weights_[i] = weights_[n - 1 - i] = w;
        }
        if (n % 2 == 1) nodes_[n / 2] = 0.0;
        double total = 0.0;
        for (double w : weights_) total += w;
        for (double& w : weights_) w /= total;
    }

    /// Shared, lazily built rule of the given order.
    static const GaussHermiteRule& get(int order) {
        static std::mutex mutex;
        static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
        std::lock_guard lock(mutex);
        auto& slot = cache[order];
        if (!slot) slot = std::make_unique<GaussHermiteRule>(order);
        return *slot;
    }

    int order() const noexcept { return static_cast<int>(nodes_.size()); }
    const std::vector<double>& nodes() const noexcept { return nodes_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

private:
    struct Recurrence {
        double pn, pn1, sum_sq, log_scale;
    };

    // Orthonormal He_n(x), He_{n-1}(x) and sum_{k<n} He_k(x)^2, all divided
    // by exp(log_scale) (squared for the sum) to stay finite at high order.
    static Recurrence evaluate(int n, double x) {
        constexpr double kBig = 1e150;
        double prev = 0.0;
        double cur = 1.0;
        double sum_sq = 0.0;
        double log_scale = 0.0;
        for (int k = 0; k < n; ++k) {
            sum_sq += cur * cur;
            const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(static_cast<double>(k + 1));
            prev = cur;
            cur = next;
            if (std::abs(cur) > kBig) {
                cur /= kBig;
                prev /= kBig;
                sum_sq /= kBig * kBig;
                log_scale += std::log(kBig);
            }
        }
        return {cur, prev, sum_sq, log_scale};
    }

    std::vector<double> nodes_;
    std::vector<double> weights_;
};

/// Marks an integrand of the form theta2^power * u(theta1), which admits the
/// exact one-dimensional reduction through E[Theta2^b | X1 = x].
struct SeverityPower {
    double power = 1.0;
};

namespace detail {

inline bool all_finite(double v) { return std::isfinite(v); }
template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
    return v.allFinite();
}

[[noreturn]] inline void non_finite_node(double x, double theta1, double theta2, bool two_d) {
    std::ostringstream os;
    os.precision(17);
    os << "quadrature: integrand is not finite at node x=" << x << " (theta1=" << theta1;
    if (two_d) os << ", theta2=" << theta2;
    os << ")";
    throw NumericalError(os.str());
}

template <class R>
void accumulate(R& acc, bool& started, double w, R&& value) {
    if (!started) {
        acc = w * value;
        started = true;
    } else {
        acc += w * value;
    }
}

} // namespace detail

/// E[Theta2^b | X1 = x] for the bivariate lognormal.
inline double conditional_severity_moment(const EffectsSpec& effects, double power, double x1) {
    const double s2 = effects.sigma2();
    const double rho = effects.rho();
    return std::exp(power * rho * s2 * x1 - 0.5 * power * s2 * s2 + 0.5 * power * power * s2 * s2 * (1.0 - rho * rho));
}

/// E[f(Theta)] for Theta = Theta1 or Theta2.
template <class F>
auto expect1(const QuadratureSpec& spec, const EffectsSpec& effects, Component which, F&& f) {
    spec.validate();
    using R = std::decay_t<std::invoke_result_t<F&, double>>;
    const auto& rule = GaussHermiteRule::get(spec.order);
    R acc{};
    bool started = false;
    for (int i = 0; i < rule.order(); ++i) {
        const double x = rule.nodes()[i];
        const double theta = effects.theta_from_normal(which, x);
        R value = f(theta);
        if (!detail::all_finite(value)) detail::non_finite_node(x, theta, 0.0, false);
        detail::accumulate(acc, started, rule.weights()[i], std::move(value));
    }
    return acc;
}

/// E[f(Theta1, Theta2)] by a tensor rule over the correlated normals.
template <class F>
auto expect2(const QuadratureSpec& spec, const EffectsSpec& effects, F&& f) {
    spec.validate();
    using R = std::decay_t<std::invoke_result_t<F&, double, double>>;
    const auto& rule = GaussHermiteRule::get(spec.order);
    const double rho = effects.rho();
    const double tail = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    R acc{};
    bool started = false;
    for (int i = 0; i < rule.order(); ++i) {
        const double x1 = rule.nodes()[i];
        const double theta1 = effects.theta_from_normal(Component::frequency, x1);
        for (int j = 0; j < rule.order(); ++j) {
            const double x2 = rho * x1 + tail * rule.nodes()[j];
            const double theta2 = effects.theta_from_normal(Component::severity, x2);
            R value = f(theta1, theta2);
            if (!detail::all_finite(value)) detail::non_finite_node(x1, theta1, theta2, true);
            detail::accumulate(acc, started, rule.weights()[i] * rule.weights()[j], std::move(value));
        }
    }
    return acc;
}

/// E[Theta2^b u(Theta1)]. With the conditional scheme this is a 1-D rule;
/// with tensor2d it falls back to the full tensor product.
template <class U>
auto expect2(const QuadratureSpec& spec, const EffectsSpec& effects, SeverityPower severity, U&& u) {
    spec.validate();
    using R = std::decay_t<std::invoke_result_t<U&, double>>;
    if (spec.scheme == Scheme::tensor2d) {
        return expect2(spec, effects, [&](double t1, double t2) -> R {
            return std::pow(t2, severity.power) * u(t1);
        });
    }
    const auto& rule = GaussHermiteRule::get(spec.order);
    R acc{};
    bool started = false;
    for (int i = 0; i < rule.order(); ++i) {
        const double x1 = rule.nodes()[i];
        const double theta1 = effects.theta_from_normal(Component::frequency, x1);
        R value = conditional_severity_moment(effects, severity.power, x1) * u(theta1);
        if (!detail::all_finite(value)) detail::non_finite_node(x1, theta1, 0.0, false);
        detail::accumulate(acc, started, rule.weights()[i], std::move(value));
    }
    return acc;
}

} // namespace bmsdep
