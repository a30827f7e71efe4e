#pragma once

// Bivariate latent risk (Theta1, Theta2): Gaussian copula joining two
// lognormal marginals with unit mean. The pair is handled in normal scale,
// where it is an ordinary bivariate normal:
//
//   x_i = (log theta_i + sigma_i^2 / 2) / sigma_i,   corr(x_1, x_2) = rho.

#include "bmsdep/error.hpp"
#include "bmsdep/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <vector>

namespace bmsdep {

enum class Component { frequency = 1, severity = 2 };

inline constexpr double kRhoDensityLimit = 1.0 - 1e-12;

class EffectsSpec {
public:
    EffectsSpec(double sigma1, double sigma2, double rho) : sigma1_(sigma1), sigma2_(sigma2), rho_(rho) {
        if (!(sigma1 > 0.0) || !(sigma2 > 0.0) || !std::isfinite(sigma1) || !std::isfinite(sigma2)) {
            std::ostringstream os;
            os << "effects: sigma1 and sigma2 must be positive and finite (got " << sigma1 << ", " << sigma2 << ")";
            throw ValidationError(os.str());
        }
        if (!(rho >= -1.0 && rho <= 1.0)) {
            std::ostringstream os;
            os << "effects: rho must lie in [-1, 1] (got " << rho << ")";
            throw ValidationError(os.str());
        }
    }

    /// Construct from the log-scale variances sigma_1^2, sigma_2^2.
    static EffectsSpec from_variances(double var1, double var2, double rho) {
        if (!(var1 > 0.0) || !(var2 > 0.0))
            throw ValidationError("effects: variances must be positive");
        return EffectsSpec(std::sqrt(var1), std::sqrt(var2), rho);
    }

    double sigma1() const noexcept { return sigma1_; }
    double sigma2() const noexcept { return sigma2_; }
    double rho() const noexcept { return rho_; }
    double sigma(Component c) const noexcept { return c == Component::frequency ? sigma1_ : sigma2_; }

    /// Lognormal location; fixed at -sigma^2/2 so that E[Theta] = 1.
    double location(Component c) const noexcept {
        const double s = sigma(c);
        return -0.5 * s * s;
    }

    EffectsSpec with_rho(double rho) const { return EffectsSpec(sigma1_, sigma2_, rho); }

    /// theta = exp(sigma x - sigma^2/2)
    double theta_from_normal(Component c, double x) const noexcept {
        const double s = sigma(c);
        return std::exp(s * x - 0.5 * s * s);
    }
    double normal_from_theta(Component c, double theta) const noexcept {
        const double s = sigma(c);
        return (std::log(theta) + 0.5 * s * s) / s;
    }

    bool operator==(const EffectsSpec&) const = default;

private:
    double sigma1_;
    double sigma2_;
    double rho_;
};

struct EffectPair {
    double theta1;
    double theta2;
};

namespace detail {

inline void require_positive_theta(double theta, const char* what) {
    if (!(theta > 0.0) || !std::isfinite(theta)) {
        std::ostringstream os;
        os << what << ": theta must be positive and finite (got " << theta << ")";
        throw std::domain_error(os.str());
    }
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

} // namespace detail

/// Log of g_1 or g_2, the LogNormal(-sigma^2/2, sigma^2) density.
inline double log_marginal_density(const EffectsSpec& spec, Component which, double theta) {
    detail::require_positive_theta(theta, "marginal_density");
    const double s = spec.sigma(which);
    const double x = spec.normal_from_theta(which, theta);
    return -0.5 * x * x - detail::kLogSqrt2Pi - std::log(s) - std::log(theta);
}

inline double marginal_density(const EffectsSpec& spec, Component which, double theta) {
    return std::exp(log_marginal_density(spec, which, theta));
}

/// G_1 or G_2.
inline double marginal_cdf(const EffectsSpec& spec, Component which, double theta) {
    if (theta <= 0.0) return 0.0;
    return boost::math::cdf(boost::math::normal_distribution<>(), spec.normal_from_theta(which, theta));
}

/// Density c_rho(u1, u2) of the bivariate Gaussian copula.
inline double gaussian_copula_density(double rho, double u1, double u2) {
    if (std::abs(rho) >= kRhoDensityLimit)
        throw std::domain_error("gaussian_copula_density: |rho| must be below 1 - 1e-12");
    if (!(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0))
        throw std::domain_error("gaussian_copula_density: arguments must lie in (0, 1)");
    const boost::math::normal_distribution<> std_normal;
    const double a = boost::math::quantile(std_normal, u1);
    const double b = boost::math::quantile(std_normal, u2);
    const double one_m = 1.0 - rho * rho;
    const double q = (rho * rho * (a * a + b * b) - 2.0 * rho * a * b) / (2.0 * one_m);
    return std::exp(-q) / std::sqrt(one_m);
}

/// log h(theta1, theta2). Evaluated as a bivariate lognormal, which is what the
/// Gaussian copula with these marginals reduces to.
inline double log_joint_density(const EffectsSpec& spec, double theta1, double theta2) {
    detail::require_positive_theta(theta1, "joint_density");
    detail::require_positive_theta(theta2, "joint_density");
    const double rho = spec.rho();
    if (std::abs(rho) >= kRhoDensityLimit)
        throw std::domain_error("joint_density: |rho| >= 1 - 1e-12 has no density");
    const double x1 = spec.normal_from_theta(Component::frequency, theta1);
    const double x2 = spec.normal_from_theta(Component::severity, theta2);
    const double one_m = 1.0 - rho * rho;
    const double quad = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / one_m;
    return -0.5 * quad - 2.0 * detail::kLogSqrt2Pi - 0.5 * std::log(one_m) - std::log(spec.sigma1()) -
           std::log(spec.sigma2()) - std::log(theta1) - std::log(theta2);
}

inline double joint_density(const EffectsSpec& spec, double theta1, double theta2) {
    if (spec.rho() == 0.0) {
        // Exact product, so independence factorizes bit-for-bit.
        return marginal_density(spec, Component::frequency, theta1) *
               marginal_density(spec, Component::severity, theta2);
    }
    return std::exp(log_joint_density(spec, theta1, theta2));
}

/// One draw of (Theta1, Theta2). rho = +-1 gives the comonotone/countermonotone pair.
template <class Engine>
EffectPair draw_effects(const EffectsSpec& spec, Engine& engine) {
    const double z1 = engine.normal();
    const double rho = spec.rho();
    double x2 = 0.0;
    if (rho == 1.0) {
        x2 = z1;
    } else if (rho == -1.0) {
        x2 = -z1;
    } else {
        x2 = rho * z1 + std::sqrt(1.0 - rho * rho) * engine.normal();
    }
    return {spec.theta_from_normal(Component::frequency, z1), spec.theta_from_normal(Component::severity, x2)};
}

inline std::vector<EffectPair> sample_effects(const EffectsSpec& spec, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ValidationError("sample_effects: count must be at least 1");
    Xoshiro256pp engine(seed);
    std::vector<EffectPair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(draw_effects(spec, engine));
    return out;
}

/// E[Theta1^a Theta2^b] = exp((a^2-a) s1^2/2 + (b^2-b) s2^2/2 + a b rho s1 s2).
/// Real exponents are accepted; they arise from power variance functions.
inline double product_moment(const EffectsSpec& spec, double a, double b) {
    if (!(a >= 0.0) || !(b >= 0.0)) throw ValidationError("product_moment: exponents must be non-negative");
    const double s1 = spec.sigma1();
    const double s2 = spec.sigma2();
    return std::exp(0.5 * (a * a - a) * s1 * s1 + 0.5 * (b * b - b) * s2 * s2 + a * b * spec.rho() * s1 * s2);
}

} // namespace bmsdep
