#include "bmsdep/config.hpp"
#include "bmsdep/relativity.hpp"
#include "bmsdep/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

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

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

const std::vector<TransitionRule> kRules{{10, 1}, {10, 2}, {10, 3}};

} // namespace

TEST(LevelDistribution, SumsToOne) {
    const auto cfg = fitted_config();
    for (const auto& rule : kRules) {
        const auto p = level_distribution(cfg.portfolio(), cfg.require_effects(), rule);
        EXPECT_NEAR(p.sum(), 1.0, 1e-10);
        EXPECT_GT(p.minCoeff(), 0.0);
    }
}

TEST(LevelDistribution, DegenerateEffectsMatchChain) {
    const auto p = single_class(0.2, 1000.0);
    const EffectsSpec tiny(0.01, 0.01, 0.0);
    for (const auto& rule : kRules) {
        const auto mix = level_distribution(p, tiny, rule);
        const auto pi = stationary(rule, 0.2).vector();
        EXPECT_LT((mix - pi).cwiseAbs().maxCoeff(), 2e-3);
    }
}

TEST(Relativities, ZeroRhoCollapse) {
    const auto cfg = fitted_config();
    const auto e = cfg.require_effects().with_rho(0.0);
    for (const auto& rule : kRules) {
        const auto dep = relativities_dep(cfg.portfolio(), e, rule);
        const auto ind = relativities_indep(cfg.portfolio(), e, rule);
        EXPECT_LT((dep - ind).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Relativities, NoHeterogeneityGivesUnitRelativities) {
    const auto p = single_class(0.3, 50.0);
    const EffectsSpec tiny(1e-4, 1e-4, 0.3);
    const auto r = relativities_dep(p, tiny, {10, 1});
    for (int l = 0; l < 10; ++l) EXPECT_NEAR(r(l), 1.0, 1e-3);
}

TEST(Relativities, SingleClassIndepEqualsTan) {
    const auto p = single_class(0.4, 123.0);
    const auto e = EffectsSpec::from_variances(0.992, 0.293, -0.447);
    for (const auto& rule : kRules) {
        const auto a = relativities_indep(p, e, rule);
        const auto b = relativities_tan(p, e, rule);
        EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Relativities, IndepAndTanIgnoreRho) {
    const auto cfg = fitted_config();
    const auto e = cfg.require_effects();
    const auto a = relativities_indep(cfg.portfolio(), e, {10, 1});
    const auto b = relativities_indep(cfg.portfolio(), e.with_rho(0.6), {10, 1});
    EXPECT_EQ(as_vector(a), as_vector(b));
    const auto c = relativities_tan(cfg.portfolio(), e, {10, 1});
    const auto d = relativities_tan(cfg.portfolio(), e.with_rho(-0.9), {10, 1});
    EXPECT_EQ(as_vector(c), as_vector(d));
}

TEST(Relativities, TanIgnoresSeverityMeans) {
    const auto cfg = fitted_config();
    const auto p = cfg.portfolio();
    const auto a = relativities_tan(p, cfg.require_effects(), {10, 2});
    const auto b = relativities_tan(p.scaled_severity(10.0), cfg.require_effects(), {10, 2});
    EXPECT_EQ(as_vector(a), as_vector(b));
}

TEST(Relativities, ScaleEquivariance) {
    const auto cfg = fitted_config();
    const auto e = cfg.require_effects();
    const auto p = cfg.portfolio();
    const RelativityEngine a(p, e, {10, 1}, {});
    const RelativityEngine b(p.scaled_severity(3.0), e, {10, 1}, {});
    EXPECT_LT((a.r_dep() - b.r_dep()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.r_indep() - b.r_indep()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.r_tan() - b.r_tan()).cwiseAbs().maxCoeff(), 1e-12);
    const double ha = a.hmse(a.r_dep()).raw, hb = b.hmse(b.r_dep()).raw;
    EXPECT_NEAR(hb / ha, 9.0, 1e-9);
}

TEST(Relativities, PositiveOnFittedConfiguration) {
    const auto cfg = fitted_config();
    for (const auto& rule : kRules) {
        const auto t = RelativityEngine(cfg.portfolio(), cfg.require_effects(), rule, {}).table();
        for (int l = 0; l < t.levels(); ++l) {
            EXPECT_GT(t.r_dep[l], 0.0);
            EXPECT_GT(t.r_indep[l], 0.0);
            EXPECT_GT(t.r_tan[l], 0.0);
        }
    }
}

TEST(Relativities, NegativeRhoTiltsTowardLowerLevels) {
    // E[theta2 | theta1] falls with theta1 when rho < 0, so r_dep / r_indep
    // falls with the level, starting above 1 and ending below it.
    const auto cfg = fitted_config();
    for (const auto& rule : kRules) {
        const RelativityEngine eng(cfg.portfolio(), cfg.require_effects(), rule, {});
        const Eigen::VectorXd ratio = eng.r_dep().cwiseQuotient(eng.r_indep());
        EXPECT_GT(ratio(0), 1.0);
        EXPECT_LT(ratio(9), 1.0);
        for (int l = 1; l < 10; ++l) EXPECT_LT(ratio(l), ratio(l - 1)) << rule.label() << " level " << l + 1;
    }
}

TEST(Hmse, ZeroWithoutResidualRisk) {
    const auto p = single_class(0.3, 50.0);
    const EffectsSpec tiny(1e-9, 1e-9, 0.0);
    const std::vector<double> ones(10, 1.0);
    EXPECT_NEAR(hmse(p, tiny, {10, 1}, ones).raw, 0.0, 1e-8);
}

TEST(Hmse, DepMinimizesOnFittedConfiguration) {
    const auto cfg = fitted_config();
    for (const auto& rule : kRules) {
        const RelativityEngine eng(cfg.portfolio(), cfg.require_effects(), rule, {});
        const double dep = eng.hmse(eng.r_dep()).raw;
        EXPECT_LE(dep, eng.hmse(eng.r_indep()).raw);
        EXPECT_LE(dep, eng.hmse(eng.r_tan()).raw);
        Xoshiro256pp rng(5);
        for (int k = 0; k < 100; ++k) {
            Eigen::VectorXd r = eng.r_dep();
            for (int l = 0; l < r.size(); ++l) r(l) += 0.1 * rng.uniform() - 0.05;
            EXPECT_LE(dep, eng.hmse(r).raw);
        }
        for (int k = 0; k < 20; ++k) {
            Eigen::VectorXd r(rule.levels());
            for (int l = 0; l < r.size(); ++l) r(l) = 2.0 * rng.uniform();
            EXPECT_LE(dep, eng.hmse(r).raw);
        }
    }
}

TEST(Hmse, NormalizedIsRawOverSquaredMeanPremium) {
    const auto cfg = fitted_config();
    const auto p = cfg.portfolio();
    const RelativityEngine eng(p, cfg.require_effects(), {10, 1}, {});
    double m = 0;
    for (const auto& c : p) m += c.weight * c.lambda1 * c.lambda2;
    const auto h = eng.hmse(eng.r_dep());
    EXPECT_NEAR(h.normalized, h.raw / (m * m), 1e-12 * h.normalized);
}

TEST(Hmse, RejectsWrongLength) {
    const auto cfg = fitted_config();
    const std::vector<double> r(9, 1.0);
    try {
        hmse(cfg.portfolio(), cfg.require_effects(), {10, 1}, r);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("expected z = 10"), std::string::npos) << e.what();
    }
}

TEST(BalanceCheck, HoldsForDep) {
    const auto cfg = fitted_config();
    for (const auto& rule : kRules) {
        const RelativityEngine eng(cfg.portfolio(), cfg.require_effects(), rule, {});
        EXPECT_LT(eng.balance_check(eng.r_dep()).relative_gap(), 1e-8);
    }
}

TEST(BalanceCheck, ZeroVectorAndTan) {
    const auto cfg = fitted_config();
    const RelativityEngine eng(cfg.portfolio(), cfg.require_effects(), {10, 1}, {});
    const auto zero = eng.balance_check(Eigen::VectorXd::Zero(10));
    EXPECT_EQ(zero.lhs, 0.0);
    EXPECT_GT(zero.rhs, 0.0);
    EXPECT_GT(eng.balance_check(eng.r_tan()).relative_gap(), 1e-4);
}

TEST(RelativityEngine, SchemesAndOrdersAgree) {
    const auto cfg = fitted_config();
    QuadratureSpec tensor;
    tensor.scheme = Scheme::tensor2d;
    QuadratureSpec high;
    high.order = 1024;
    const RelativityEngine a(cfg.portfolio(), cfg.require_effects(), {10, 2}, {});
    const RelativityEngine b(cfg.portfolio(), cfg.require_effects(), {10, 2}, tensor);
    const RelativityEngine c(cfg.portfolio(), cfg.require_effects(), {10, 2}, high);
    EXPECT_LT((a.r_dep() - b.r_dep()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.r_dep() - c.r_dep()).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((a.level_distribution() - c.level_distribution()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(RelativityCsv, ColumnsAndRows) {
    const auto cfg = fitted_config();
    const auto t = RelativityEngine(cfg.portfolio(), cfg.require_effects(), {10, 1}, {}).table();
    std::stringstream out;
    write_relativity_csv(out, t);
    std::string line;
    std::getline(out, line);
    EXPECT_EQ(line, "level,p,r_dep,r_indep,r_tan");
    int rows = 0;
    while (std::getline(out, line)) ++rows;
    EXPECT_EQ(rows, 10);
}
