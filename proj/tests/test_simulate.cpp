#include "bmsdep/config.hpp"
#include "bmsdep/relativity.hpp"
#include "bmsdep/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace bmsdep;

namespace {

AppConfig fitted_config() {
    return load_config(std::filesystem::path(BMSDEP_SOURCE_DIR) / "configs" / "dependent.ini");
}

Portfolio single_class(double lambda1, double lambda2) {
    DesignSpec design{{{"group", {"only"}}}};
    const CoefficientSet coeffs({"Intercept"}, {std::log(lambda1)}, {std::log(lambda2)});
    const std::vector<ClassDef> defs{{"only"}};
    const std::vector<double> w{1.0};
    return build_classes(coeffs, design, defs, w);
}

ModelParams params_of(const EffectsSpec& e, double psi2) {
    ModelParams m;
    m.effects = e;
    m.psi2 = psi2;
    return m;
}

const EffectsSpec kFitted = EffectsSpec::from_variances(0.992, 0.293, -0.447);

} // namespace

TEST(SimulatePanel, DeterministicAndThreadIndependent) {
    const auto cfg = fitted_config();
    SimConfig sc;
    sc.subjects = 40000;
    sc.years = 3;
    sc.seed = 5;
    sc.threads = 1;
    const auto a = simulate_panel(cfg.model(), cfg.portfolio(), sc);
    sc.threads = 4;
    const auto b = simulate_panel(cfg.model(), cfg.portfolio(), sc);
    EXPECT_TRUE(a == b);
    sc.seed = 6;
    EXPECT_FALSE(a == simulate_panel(cfg.model(), cfg.portfolio(), sc));
}

TEST(SimulatePanel, ZeroClaimsIffZeroCost) {
    const auto cfg = fitted_config();
    SimConfig sc;
    sc.subjects = 20000;
    const auto panel = simulate_panel(cfg.model(), cfg.portfolio(), sc);
    EXPECT_EQ(panel.subject_count(), 20000u);
    for (const auto& s : panel.subjects()) {
        EXPECT_EQ(s.history.size(), 5u);
        for (const auto& o : s.history) {
            if (o.n == 0) EXPECT_EQ(o.s, 0.0);
            else EXPECT_GT(o.s, 0.0);
        }
    }
}

TEST(SimulatePanel, TinyFrequencyGivesNoClaims) {
    SimConfig sc;
    sc.subjects = 5000;
    const auto panel = simulate_panel(params_of(EffectsSpec(0.1, 0.1, 0.0), 1.0), single_class(1e-12, 100.0), sc);
    for (const auto& s : panel.subjects())
        for (const auto& o : s.history) EXPECT_EQ(o.n, 0);
}

TEST(SimulatePanel, MeanCostMatchesClosedForm) {
    const double l1 = 0.5, l2 = 200.0;
    const auto e = EffectsSpec(0.6, 0.5, -0.4);
    SimConfig sc;
    sc.subjects = 400000;
    sc.years = 1;
    sc.seed = 12;
    const auto panel = simulate_panel(params_of(e, 1.5), single_class(l1, l2), sc);
    double s = 0, ss = 0;
    for (const auto& subj : panel.subjects()) {
        s += subj.history[0].s;
        ss += subj.history[0].s * subj.history[0].s;
    }
    const double n = static_cast<double>(sc.subjects);
    const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
    EXPECT_NEAR(mean, l1 * l2 * product_moment(e, 1, 1), 4 * se);
}

TEST(DrawGamma, AverageSeverityVarianceScalesWithCount) {
    const double mu = 3.0, psi = 0.8;
    for (int n : {1, 2, 4}) {
        Xoshiro256pp rng(40 + n);
        const int draws = 1'000'000;
        double s = 0, ss = 0;
        for (int i = 0; i < draws; ++i) {
            const double m = detail::draw_gamma(mu, psi / n, rng);
            s += m;
            ss += m * m;
        }
        const double mean = s / draws, var = ss / draws - mean * mean;
        EXPECT_NEAR(mean, mu, 4 * std::sqrt(var / draws));
        EXPECT_NEAR(var, psi * mu * mu / n, 0.01 * psi * mu * mu / n) << n;
    }
}

TEST(SimulateLevels, TinyFrequencyStaysAtBottom) {
    SimConfig sc;
    sc.subjects = 5000;
    sc.rule = TransitionRule(10, 1);
    sc.burn_in = 50;
    sc.initial_level = 10;
    const auto r = simulate_levels(params_of(EffectsSpec(0.1, 0.1, 0.0), 1.0), single_class(1e-12, 1.0), sc);
    EXPECT_EQ(r.p[0].value, 1.0);
}

TEST(SimulateLevels, RequiresRule) {
    SimConfig sc;
    EXPECT_THROW(simulate_levels(params_of(kFitted, 1.0), single_class(0.1, 1.0), sc), ValidationError);
}

TEST(SimulateLevels, MatchQuadrature) {
    const auto cfg = fitted_config();
    const auto params = cfg.model();
    const auto portfolio = cfg.portfolio();
    for (const auto& rule : {TransitionRule(10, 1), TransitionRule(10, 3)}) {
        SimConfig sc;
        sc.subjects = 500000;
        sc.rule = rule;
        sc.burn_in = 200;
        sc.seed = 77;
        const auto sim = simulate_levels(params, portfolio, sc);
        const RelativityEngine eng(portfolio, params.effects, rule, {});
        for (int l = 0; l < 10; ++l) {
            EXPECT_NEAR(sim.p[l].value, eng.level_distribution()(l), 4 * sim.p[l].se) << rule.label() << " l=" << l + 1;
            EXPECT_NEAR(sim.r_dep[l].value, eng.r_dep()(l), 4 * sim.r_dep[l].se) << rule.label() << " l=" << l + 1;
            EXPECT_NEAR(sim.r_indep[l].value, eng.r_indep()(l), 4 * sim.r_indep[l].se) << rule.label() << " l=" << l + 1;
            EXPECT_NEAR(sim.r_tan[l].value, eng.r_tan()(l), 4 * sim.r_tan[l].se) << rule.label() << " l=" << l + 1;
        }
        std::vector<double> r(eng.r_dep().data(), eng.r_dep().data() + 10);
        EXPECT_NEAR(sim.hmse(r) / eng.hmse(eng.r_dep()).raw, 1.0, 0.05);
    }
}

TEST(SimulateLevels, InitialLevelForgotten) {
    const auto cfg = fitted_config();
    SimConfig sc;
    sc.subjects = 200000;
    sc.rule = TransitionRule(10, 2);
    sc.burn_in = 200;
    sc.initial_level = 1;
    const auto a = simulate_levels(cfg.model(), cfg.portfolio(), sc);
    sc.initial_level = 10;
    const auto b = simulate_levels(cfg.model(), cfg.portfolio(), sc);
    for (int l = 0; l < 10; ++l) {
        const double se = std::hypot(a.p[l].se, b.p[l].se);
        EXPECT_NEAR(a.p[l].value, b.p[l].value, 4 * se + 1e-12) << l + 1;
    }
}

TEST(SimulateLevels, ThreadCountDoesNotChangeResult) {
    const auto cfg = fitted_config();
    SimConfig sc;
    sc.subjects = 60000;
    sc.rule = TransitionRule(10, 1);
    sc.burn_in = 100;
    sc.threads = 1;
    const auto a = simulate_levels(cfg.model(), cfg.portfolio(), sc);
    sc.threads = 3;
    const auto b = simulate_levels(cfg.model(), cfg.portfolio(), sc);
    for (int l = 0; l < 10; ++l) {
        EXPECT_EQ(a.p[l].value, b.p[l].value);
        EXPECT_EQ(a.stats[l].dep_a, b.stats[l].dep_a);
    }
}

TEST(SimulateMoments, RejectsTooFewSubjects) {
    const auto p = single_class(0.5, 10.0);
    EXPECT_THROW(simulate_moments(params_of(kFitted, 1.0), p[0], 100, 1), ValidationError);
}

TEST(PosteriorPredictive, OneTotalPerDraw) {
    const auto p = single_class(0.5, 10.0);
    std::vector<ModelParams> draws(7, params_of(kFitted, 1.0));
    SimConfig sc;
    sc.subjects = 100;
    const auto t = posterior_predictive_total(draws, p, sc);
    EXPECT_EQ(t.size(), 7u);
    for (double v : t) EXPECT_GE(v, 0.0);
    EXPECT_THROW(posterior_predictive_total(std::span<const ModelParams>{}, p, sc), ValidationError);
}

TEST(PosteriorPredictive, DegenerateMean) {
    const double l1 = 0.4, l2 = 25.0;
    const auto p = single_class(l1, l2);
    std::vector<ModelParams> draws(400, params_of(EffectsSpec(1e-6, 1e-6, 0.0), 0.5));
    SimConfig sc;
    sc.subjects = 2000;
    const auto t = posterior_predictive_total(draws, p, sc);
    double s = 0, ss = 0;
    for (double v : t) {
        s += v / sc.subjects;
        ss += v * v / (sc.subjects * sc.subjects);
    }
    const double n = static_cast<double>(t.size());
    const double mean = s / n, se = std::sqrt((ss / n - mean * mean) / n);
    EXPECT_NEAR(mean, l1 * l2, 4 * se);
}

TEST(PosteriorPredictive, NegativeRhoChangesSkewness) {
    const auto p = single_class(0.3, 10.0);
    auto skew = [&](double rho) {
        std::vector<ModelParams> draws(3000, params_of(EffectsSpec(1.0, 0.8, rho), 0.5));
        SimConfig sc;
        sc.subjects = 50;
        sc.seed = 3;
        const auto t = posterior_predictive_total(draws, p, sc);
        double m = 0;
        for (double v : t) m += v;
        m /= t.size();
        double m2 = 0, m3 = 0;
        for (double v : t) {
            m2 += (v - m) * (v - m);
            m3 += (v - m) * (v - m) * (v - m);
        }
        m2 /= t.size();
        m3 /= t.size();
        return m3 / std::pow(m2, 1.5);
    };
    EXPECT_LT(skew(-0.8), skew(0.0));
}
