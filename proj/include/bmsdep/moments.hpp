#pragma once

// A-priori moments, covariances and correlations of frequency N, aggregate
// severity S and individual severities Y within one risk class.
//
// The general forms take power variance functions V(mu) = mu^p and an oracle
// for E[T1^a T2^b]; with lognormal effects the oracle is product_moment, so
// nothing here integrates numerically. The Poisson-Gamma-lognormal case is
// also available in explicit exponential form.

#include "bmsdep/error.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/text.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace bmsdep {

struct ModelParams {
    CoefficientSet coeffs;
    EffectsSpec effects{1.0, 1.0, 0.0};
    double psi2 = 1.0;
    double psi1 = 1.0;

    void validate() const {
        if (!(psi2 > 0.0) || !std::isfinite(psi2)) throw ValidationError("model: psi2 must be positive");
        if (!(psi1 > 0.0) || !std::isfinite(psi1)) throw ValidationError("model: psi1 must be positive");
    }
};

/// V(mu) = mu^power. Poisson: 1, Gamma: 2.
struct VarianceFunction {
    double power = 1.0;
    double operator()(double mu) const { return std::pow(mu, power); }
};

struct EdfPair {
    VarianceFunction v1{1.0};
    VarianceFunction v2{2.0};
    double psi1 = 1.0;
    double psi2 = 1.0;

    static EdfPair poisson_gamma(double psi2) { return {{1.0}, {2.0}, 1.0, psi2}; }
};

/// E[T1^a T2^b]
using EffectMoments = std::function<double(double a, double b)>;

inline EffectMoments lognormal_moments(const EffectsSpec& effects) {
    return [effects](double a, double b) { return product_moment(effects, a, b); };
}

struct AggregateMoments {
    double mean_n = 0.0;
    double var_n = 0.0;
    double mean_s = 0.0;
    double var_s = 0.0;
    double cov_n_n = 0.0;        // t1 != t2
    double cov_s_s = 0.0;        // t1 != t2
    double cov_n_s_cross = 0.0;  // t1 != t2
    double cov_n_s_same = 0.0;
};

struct AggregateCorrelations {
    double n_n = 0.0;
    double s_s = 0.0;
    double n_s_cross = 0.0;
    double n_s_same = 0.0;
};

struct IndividualMoments {
    double mean_y = 0.0;
    double var_y = 0.0;
    double cov_y_y = 0.0;  // distinct claims, any periods
    double cov_n_y = 0.0;  // same or different period
};

struct IndividualCorrelations {
    double n_n = 0.0;
    double n_y = 0.0;
    double y_y = 0.0;
};

/// Moments of (N, S) for a class with a-priori means (lambda1, lambda2).
inline AggregateMoments moment_set_general(double lambda1, double lambda2, const EdfPair& edf, const EffectMoments& m) {
    const double p1 = edf.v1.power;
    const double p2 = edf.v2.power;
    const double l1 = lambda1;
    const double l2 = lambda2;
    const double m11 = m(1, 1);
    const double var_t1t2 = m(2, 2) - m11 * m11;
    const double cross = l1 * l1 * l2 * (m(2, 1) - m11 * m(1, 0));

    AggregateMoments out;
    out.mean_n = l1 * m(1, 0);
    out.cov_n_n = l1 * l1 * (m(2, 0) - m(1, 0) * m(1, 0));
    out.var_n = edf.psi1 * std::pow(l1, p1) * m(p1, 0) + out.cov_n_n;
    out.mean_s = l1 * l2 * m11;
    out.var_s = edf.psi2 * l1 * std::pow(l2, p2) * m(1, p2) + (l1 * l2) * (l1 * l2) * var_t1t2 +
                l2 * l2 * edf.psi1 * std::pow(l1, p1) * m(p1, 2);
    out.cov_s_s = (l1 * l2) * (l1 * l2) * var_t1t2;
    out.cov_n_s_cross = cross;
    out.cov_n_s_same = l2 * edf.psi1 * std::pow(l1, p1) * m(p1, 1) + cross;
    return out;
}

inline AggregateCorrelations correlations_from(const AggregateMoments& a) {
    const double sn = std::sqrt(a.var_n);
    const double ss = std::sqrt(a.var_s);
    return {a.cov_n_n / a.var_n, a.cov_s_s / a.var_s, a.cov_n_s_cross / (sn * ss), a.cov_n_s_same / (sn * ss)};
}

/// Moments of (N, Y) with individual severities Y ~ F2(lambda2 T2, psi2).
inline IndividualMoments individual_moments_general(double lambda1, double lambda2, const EdfPair& edf,
                                                    const EffectMoments& m) {
    IndividualMoments out;
    out.mean_y = lambda2 * m(0, 1);
    out.cov_y_y = lambda2 * lambda2 * (m(0, 2) - m(0, 1) * m(0, 1));
    out.var_y = edf.psi2 * std::pow(lambda2, edf.v2.power) * m(0, edf.v2.power) + out.cov_y_y;
    out.cov_n_y = lambda1 * lambda2 * (m(1, 1) - m(1, 0) * m(0, 1));
    return out;
}

inline IndividualCorrelations correlations_from(const AggregateMoments& a, const IndividualMoments& y) {
    return {a.cov_n_n / a.var_n, y.cov_n_y / std::sqrt(a.var_n * y.var_y), y.cov_y_y / y.var_y};
}

// ---------------------------------------------------------------------------
// Poisson-Gamma with lognormal effects, explicit forms. The aggregate
// variance carries the factor (1 + psi2): psi2 from the Gamma dispersion and
// 1 from the Poisson variance of the claim count.

namespace poisson_gamma {

inline AggregateMoments aggregate(double l1, double l2, double psi2, const EffectsSpec& e) {
    const double s1 = e.sigma1();
    const double s2 = e.sigma2();
    const double r = e.rho() * s1 * s2;
    AggregateMoments out;
    out.mean_n = l1;
    out.cov_n_n = l1 * l1 * (std::exp(s1 * s1) - 1.0);
    out.var_n = out.cov_n_n + l1;
    out.mean_s = l1 * l2 * std::exp(r);
    out.cov_s_s = (l1 * l2) * (l1 * l2) * (std::exp(s1 * s1 + s2 * s2 + 4.0 * r) - std::exp(2.0 * r));
    out.var_s = l1 * l2 * l2 * (1.0 + psi2) * std::exp(s2 * s2 + 2.0 * r) + out.cov_s_s;
    out.cov_n_s_cross = l1 * l1 * l2 * (std::exp(s1 * s1 + 2.0 * r) - std::exp(r));
    out.cov_n_s_same = l1 * l2 * std::exp(r) + out.cov_n_s_cross;
    return out;
}

inline AggregateCorrelations correlations(double l1, double psi2, const EffectsSpec& e) {
    const double s1 = e.sigma1();
    const double s2 = e.sigma2();
    const double r = e.rho() * s1 * s2;
    const double a = l1 * (std::exp(s1 * s1) - 1.0);
    const double vs_core = std::exp(s1 * s1 + s2 * s2 + 4.0 * r) - std::exp(2.0 * r);
    const double vs = (1.0 + psi2) * std::exp(s2 * s2 + 2.0 * r) + l1 * vs_core;
    const double ns = l1 * (std::exp(s1 * s1 + 2.0 * r) - std::exp(r));
    const double denom = std::sqrt(1.0 + a) * std::sqrt(vs);
    return {a / (1.0 + a), l1 * vs_core / vs, ns / denom, (std::exp(r) + ns) / denom};
}

inline IndividualMoments individual(double l1, double l2, double psi2, const EffectsSpec& e) {
    const double s1 = e.sigma1();
    const double s2 = e.sigma2();
    IndividualMoments out;
    out.mean_y = l2;
    out.cov_y_y = l2 * l2 * (std::exp(s2 * s2) - 1.0);
    out.var_y = l2 * l2 * ((1.0 + psi2) * std::exp(s2 * s2) - 1.0);
    out.cov_n_y = l1 * l2 * (std::exp(e.rho() * s1 * s2) - 1.0);
    return out;
}

inline IndividualCorrelations individual_correlations(double l1, double psi2, const EffectsSpec& e) {
    const double s1 = e.sigma1();
    const double s2 = e.sigma2();
    const double a = l1 * (std::exp(s1 * s1) - 1.0);
    const double vy = (1.0 + psi2) * std::exp(s2 * s2) - 1.0;
    return {a / (1.0 + a), l1 * (std::exp(e.rho() * s1 * s2) - 1.0) / (std::sqrt(l1 * (1.0 + a)) * std::sqrt(vy)),
            (std::exp(s2 * s2) - 1.0) / vy};
}

} // namespace poisson_gamma

inline AggregateCorrelations correlations_aggregate(const ModelParams& params, const RiskClass& c) {
    params.validate();
    return poisson_gamma::correlations(c.lambda1, params.psi2, params.effects);
}

inline IndividualCorrelations correlations_individual(const ModelParams& params, const RiskClass& c) {
    params.validate();
    return poisson_gamma::individual_correlations(c.lambda1, params.psi2, params.effects);
}

/// Named statistics of one class, in a fixed order.
inline std::vector<std::pair<std::string, double>> moment_rows(const ModelParams& params, const RiskClass& c) {
    params.validate();
    const auto edf = EdfPair::poisson_gamma(params.psi2);
    const auto m = lognormal_moments(params.effects);
    const auto a = moment_set_general(c.lambda1, c.lambda2, edf, m);
    const auto y = individual_moments_general(c.lambda1, c.lambda2, edf, m);
    const auto ca = correlations_from(a);
    const auto cy = correlations_from(a, y);
    return {{"mean_n", a.mean_n},
            {"var_n", a.var_n},
            {"mean_s", a.mean_s},
            {"var_s", a.var_s},
            {"cov_n_n", a.cov_n_n},
            {"cov_s_s", a.cov_s_s},
            {"cov_n_s_cross", a.cov_n_s_cross},
            {"cov_n_s_same", a.cov_n_s_same},
            {"corr_n_n", ca.n_n},
            {"corr_s_s", ca.s_s},
            {"corr_n_s_cross", ca.n_s_cross},
            {"corr_n_s_same", ca.n_s_same},
            {"mean_y", y.mean_y},
            {"var_y", y.var_y},
            {"cov_y_y", y.cov_y_y},
            {"cov_n_y", y.cov_n_y},
            {"corr_n_y", cy.n_y},
            {"corr_y_y", cy.y_y}};
}

/// CSV with columns class,statistic,value; one row per (class, statistic).
inline void write_moments_csv(std::ostream& out, const ModelParams& params, const Portfolio& portfolio) {
    out << "class,statistic,value\n";
    for (const auto& c : portfolio)
        for (const auto& [name, value] : moment_rows(params, c))
            out << c.label << ',' << name << ',' << text::format(value) << '\n';
}

} // namespace bmsdep
