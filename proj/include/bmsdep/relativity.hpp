#pragma once

// Optimal Bonus-Malus relativities and their hypothetical mean square error.
//
// For class k and level l the engine integrates, over the latent effects,
//   I0 = E[pi_l],  I1 = E[T1 pi_l],  I11 = E[T1 T2 pi_l],  I22 = E[(T1 T2)^2 pi_l]
// where pi_l = pi_l(lambda1_k T1) is the conditional stationary probability.
// Every relativity is a quotient of class-weighted sums of these.

#include "bmsdep/bms_chain.hpp"
#include "bmsdep/error.hpp"
#include "bmsdep/integrate.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/text.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace bmsdep {

struct BalanceResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;

    double relative_gap() const { return rhs != 0.0 ? gap / std::abs(rhs) : gap; }
};

struct HmseResult {
    double raw = 0.0;
    double normalized = 0.0;
};

struct RelativityTable {
    TransitionRule rule{2, 1};
    std::vector<double> p_level;
    std::vector<double> r_dep;
    std::vector<double> r_indep;
    std::vector<double> r_tan;
    HmseResult hmse_dep;
    HmseResult hmse_indep;
    HmseResult hmse_tan;

    int levels() const noexcept { return static_cast<int>(p_level.size()); }
};

class RelativityEngine {
public:
    struct ClassIntegrals {
        Eigen::VectorXd i0, i1, i11, i22;
    };

    RelativityEngine(Portfolio portfolio, EffectsSpec effects, TransitionRule rule, QuadratureSpec quad = {})
        : portfolio_(std::move(portfolio)), effects_(effects), rule_(rule), quad_(quad) {
        quad_.validate();
        if (portfolio_.size() == 0) throw ValidationError("relativities: empty portfolio");
        for (const auto& c : portfolio_) integrals_.push_back(integrate_class(c.lambda1));
        assemble();
    }

    const Portfolio& portfolio() const noexcept { return portfolio_; }
    const EffectsSpec& effects() const noexcept { return effects_; }
    const TransitionRule& rule() const noexcept { return rule_; }
    const std::vector<ClassIntegrals>& integrals() const noexcept { return integrals_; }

    /// P(L = l), l = 1..z at positions 0..z-1.
    const Eigen::VectorXd& level_distribution() const noexcept { return p_; }
    const Eigen::VectorXd& r_dep() const noexcept { return r_dep_; }
    const Eigen::VectorXd& r_indep() const noexcept { return r_indep_; }
    const Eigen::VectorXd& r_tan() const noexcept { return r_tan_; }

    HmseResult hmse(std::span<const double> r) const {
        check_length(r, "hmse");
        double raw = 0.0;
        for (std::size_t k = 0; k < portfolio_.size(); ++k) {
            const auto& c = portfolio_[k];
            const auto& in = integrals_[k];
            const double ll = c.lambda1 * c.lambda2;
            double inner = 0.0;
            for (int l = 0; l < rule_.levels(); ++l)
                inner += in.i22(l) - 2.0 * r[l] * in.i11(l) + r[l] * r[l] * in.i0(l);
            raw += c.weight * ll * ll * inner;
        }
        raw = std::max(raw, 0.0);
        double premium = 0.0;
        for (const auto& c : portfolio_) premium += c.weight * c.lambda1 * c.lambda2;
        return {raw, raw / (premium * premium)};
    }
    HmseResult hmse(const Eigen::VectorXd& r) const { return hmse(std::span<const double>(r.data(), r.size())); }

    /// Normal-equation check: sum_l r_l E[(L1 L2)^2 ; L=l] against E[(L1 L2)^2 T1 T2].
    BalanceResult balance_check(std::span<const double> r) const {
        check_length(r, "balance_check");
        BalanceResult out;
        for (int l = 0; l < rule_.levels(); ++l) out.lhs += r[l] * den_dep_(l);
        const double m11 = product_moment(effects_, 1.0, 1.0);
        for (const auto& c : portfolio_) {
            const double ll = c.lambda1 * c.lambda2;
            out.rhs += c.weight * ll * ll * m11;
        }
        out.gap = std::abs(out.lhs - out.rhs);
        return out;
    }
    BalanceResult balance_check(const Eigen::VectorXd& r) const {
        return balance_check(std::span<const double>(r.data(), r.size()));
    }

    RelativityTable table() const {
        RelativityTable t;
        t.rule = rule_;
        t.p_level.assign(p_.data(), p_.data() + p_.size());
        t.r_dep.assign(r_dep_.data(), r_dep_.data() + r_dep_.size());
        t.r_indep.assign(r_indep_.data(), r_indep_.data() + r_indep_.size());
        t.r_tan.assign(r_tan_.data(), r_tan_.data() + r_tan_.size());
        t.hmse_dep = hmse(r_dep_);
        t.hmse_indep = hmse(r_indep_);
        t.hmse_tan = hmse(r_tan_);
        return t;
    }

private:
    static constexpr double kMinLevelMass = 1e-300;

    void check_length(std::span<const double> r, const char* what) const {
        if (static_cast<int>(r.size()) != rule_.levels()) {
            std::ostringstream os;
            os << what << ": relativity vector has length " << r.size() << ", expected z = " << rule_.levels();
            throw ValidationError(os.str());
        }
    }

    const Eigen::VectorXd& stationary_at(double mean) {
        auto it = pi_cache_.find(mean);
        if (it == pi_cache_.end()) it = pi_cache_.emplace(mean, stationary(rule_, mean).vector()).first;
        return it->second;
    }

    ClassIntegrals integrate_class(double lambda1) {
        ClassIntegrals out;
        auto pi = [&](double theta1) -> Eigen::VectorXd { return stationary_at(lambda1 * theta1); };
        out.i0 = expect1(quad_, effects_, Component::frequency, pi);
        out.i1 = expect1(quad_, effects_, Component::frequency,
                         [&](double t1) -> Eigen::VectorXd { return t1 * pi(t1); });
        out.i11 = expect2(quad_, effects_, SeverityPower{1.0}, [&](double t1) -> Eigen::VectorXd { return t1 * pi(t1); });
        out.i22 = expect2(quad_, effects_, SeverityPower{2.0},
                          [&](double t1) -> Eigen::VectorXd { return t1 * t1 * pi(t1); });
        return out;
    }

    void assemble() {
        const int z = rule_.levels();
        p_ = Eigen::VectorXd::Zero(z);
        den_dep_ = Eigen::VectorXd::Zero(z);
        Eigen::VectorXd num_dep = Eigen::VectorXd::Zero(z);
        Eigen::VectorXd num_indep = Eigen::VectorXd::Zero(z);
        Eigen::VectorXd num_tan = Eigen::VectorXd::Zero(z);
        Eigen::VectorXd den_tan = Eigen::VectorXd::Zero(z);
        for (std::size_t k = 0; k < portfolio_.size(); ++k) {
            const auto& c = portfolio_[k];
            const auto& in = integrals_[k];
            const double ll2 = c.weight * (c.lambda1 * c.lambda2) * (c.lambda1 * c.lambda2);
            const double l12 = c.weight * c.lambda1 * c.lambda1;
            p_ += c.weight * in.i0;
            den_dep_ += ll2 * in.i0;
            num_dep += ll2 * in.i11;
            num_indep += ll2 * in.i1;
            num_tan += l12 * in.i1;
            den_tan += l12 * in.i0;
        }
        for (int l = 0; l < z; ++l) {
            if (!(den_dep_(l) > kMinLevelMass) || !(den_tan(l) > kMinLevelMass)) {
                std::ostringstream os;
                os << "relativities: level " << l + 1 << " has vanishing probability under rule " << rule_.to_string();
                throw NumericalError(os.str());
            }
        }
        r_dep_ = num_dep.cwiseQuotient(den_dep_);
        r_indep_ = num_indep.cwiseQuotient(den_dep_);
        r_tan_ = num_tan.cwiseQuotient(den_tan);
    }

    Portfolio portfolio_;
    EffectsSpec effects_;
    TransitionRule rule_;
    QuadratureSpec quad_;
    std::map<double, Eigen::VectorXd> pi_cache_;
    std::vector<ClassIntegrals> integrals_;
    Eigen::VectorXd p_, den_dep_, r_dep_, r_indep_, r_tan_;
};

inline Eigen::VectorXd level_distribution(const Portfolio& portfolio, const EffectsSpec& effects,
                                          const TransitionRule& rule, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).level_distribution();
}

inline Eigen::VectorXd relativities_dep(const Portfolio& portfolio, const EffectsSpec& effects,
                                        const TransitionRule& rule, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).r_dep();
}

inline Eigen::VectorXd relativities_indep(const Portfolio& portfolio, const EffectsSpec& effects,
                                          const TransitionRule& rule, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).r_indep();
}

inline Eigen::VectorXd relativities_tan(const Portfolio& portfolio, const EffectsSpec& effects,
                                        const TransitionRule& rule, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).r_tan();
}

inline HmseResult hmse(const Portfolio& portfolio, const EffectsSpec& effects, const TransitionRule& rule,
                       std::span<const double> r, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).hmse(r);
}

inline BalanceResult balance_check(const Portfolio& portfolio, const EffectsSpec& effects, const TransitionRule& rule,
                                   std::span<const double> r, const QuadratureSpec& quad = {}) {
    return RelativityEngine(portfolio, effects, rule, quad).balance_check(r);
}

/// CSV with columns level,p,r_dep,r_indep,r_tan; levels ascending.
inline void write_relativity_csv(std::ostream& out, const RelativityTable& t) {
    out << "level,p,r_dep,r_indep,r_tan\n";
    for (int l = 0; l < t.levels(); ++l)
        out << l + 1 << ',' << text::format(t.p_level[l]) << ',' << text::format(t.r_dep[l]) << ','
            << text::format(t.r_indep[l]) << ',' << text::format(t.r_tan[l]) << '\n';
}

/// CSV with columns variant,hmse_raw,hmse_normalized.
inline void write_hmse_csv(std::ostream& out, const RelativityTable& t) {
    out << "variant,hmse_raw,hmse_normalized\n";
    out << "dep," << text::format(t.hmse_dep.raw) << ',' << text::format(t.hmse_dep.normalized) << '\n';
    out << "indep," << text::format(t.hmse_indep.raw) << ',' << text::format(t.hmse_indep.normalized) << '\n';
    out << "tan," << text::format(t.hmse_tan.raw) << ',' << text::format(t.hmse_tan.normalized) << '\n';
}

} // namespace bmsdep
