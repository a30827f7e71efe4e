#include "bmsdep/estimate.hpp"
#include "bmsdep/integrate.hpp"
#include "bmsdep/simulate.hpp"

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace bmsdep;

namespace {

const DesignSpec kDesign{{{"group", {"a", "b"}}}};
const std::vector<std::string> kLabels{"Intercept", "b"};

ModelParams truth(double rho = -0.5) {
    ModelParams m;
    m.coeffs = CoefficientSet(kLabels, {std::log(0.4), 0.5}, {std::log(300.0), -0.3});
    m.effects = EffectsSpec(0.7, 0.5, rho);
    m.psi2 = 0.8;
    return m;
}

ClaimsPanel small_panel(long long subjects, std::uint64_t seed, double rho = -0.5) {
    const std::vector<ClassDef> defs{{"a"}, {"b"}};
    const std::vector<double> w{0.5, 0.5};
    const auto portfolio = build_classes(truth(rho).coeffs, kDesign, defs, w);
    SimConfig sc;
    sc.subjects = subjects;
    sc.years = 4;
    sc.seed = seed;
    return simulate_panel(truth(rho), portfolio, sc);
}

std::vector<EffectPair> unit_latents(int n) { return std::vector<EffectPair>(n, EffectPair{1.0, 1.0}); }

Subject subject(std::string id, std::string level, std::vector<Observation> h) {
    return Subject{std::move(id), {std::move(level)}, std::move(h)};
}

McmcConfig short_run(std::uint64_t seed) {
    McmcConfig c;
    c.iterations = 3000;
    c.burn_in = 1000;
    c.thin = 2;
    c.seed = seed;
    return c;
}

} // namespace

TEST(PrepareData, RejectsMismatchAndZeroAmount) {
    ClaimsPanel wrong({"other"});
    EXPECT_THROW(prepare_data(wrong, kDesign), ValidationError);
    ClaimsPanel bad({"group"});
    bad.add_subject(subject("7", "a", {{1, 2, 0.0}}));
    try {
        prepare_data(bad, kDesign);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'7'"), std::string::npos);
    }
}

TEST(LogLikelihood, MatchesReferenceDistributions) {
    ClaimsPanel panel({"group"});
    panel.add_subject(subject("1", "b", {{1, 0, 0.0}, {2, 3, 950.0}, {3, 1, 120.0}}));
    const auto d = prepare_data(panel, kDesign, kLabels);
    const auto m = truth();
    const EffectPair th{1.3, 0.7};
    const double l1 = 0.4 * std::exp(0.5) * th.theta1;
    const double l2 = 300.0 * std::exp(-0.3) * th.theta2;
    double expected = 0.0;
    const boost::math::poisson_distribution<double> pois(l1);
    for (auto [n, s] : std::vector<std::pair<int, double>>{{0, 0.0}, {3, 950.0}, {1, 120.0}}) {
        expected += std::log(boost::math::pdf(pois, n));
        if (n > 0) {
            // S = n M with M ~ Gamma(mean l2, dispersion psi/n): shape n/psi, scale psi l2.
            const boost::math::gamma_distribution<double> g(n / m.psi2, m.psi2 * l2);
            expected += std::log(boost::math::pdf(g, s));
        }
    }
    const std::vector<EffectPair> lat{th};
    EXPECT_NEAR(log_likelihood(m, lat, d), expected, 1e-10 * std::abs(expected));
}

TEST(LogLikelihood, AdditiveAndLabelInvariant) {
    const auto panel = small_panel(200, 3);
    ClaimsPanel first({"group"}), second({"group"}), reversed({"group"});
    for (std::size_t i = 0; i < panel.subject_count(); ++i)
        (i < 80 ? first : second).add_subject(panel.subjects()[i]);
    for (auto it = panel.subjects().rbegin(); it != panel.subjects().rend(); ++it) reversed.add_subject(*it);
    const auto m = truth();
    const auto lat = sample_effects(m.effects, 200, 9);
    const std::vector<EffectPair> rev(lat.rbegin(), lat.rend());
    const double all = log_likelihood(m, lat, prepare_data(panel, kDesign));
    const double a = log_likelihood(m, std::span(lat).first(80), prepare_data(first, kDesign));
    const double b = log_likelihood(m, std::span(lat).subspan(80), prepare_data(second, kDesign));
    EXPECT_NEAR(all, a + b, 1e-9 * std::abs(all));
    EXPECT_NEAR(all, log_likelihood(m, rev, prepare_data(reversed, kDesign)), 1e-9 * std::abs(all));
}

TEST(LogPrior, MatchesReferenceDistributions) {
    auto priors = PriorSpec::defaults(2);
    priors.e0 = 0.1;
    priors.f0 = 2.0;
    const auto m = truth();
    double expected = 0.0;
    const boost::math::gamma_distribution<double> tau(priors.c0, 1.0 / priors.d0);
    expected += std::log(boost::math::pdf(tau, 1.0 / m.psi2));
    const boost::math::normal_distribution<double> beta(0.0, 10.0);
    for (double b : m.coeffs.beta1()) expected += std::log(boost::math::pdf(beta, b));
    for (double b : m.coeffs.beta2()) expected += std::log(boost::math::pdf(beta, b));
    expected -= std::log(1.9) + std::log(5.0) + std::log(2.0);
    EXPECT_NEAR(log_prior(m, priors), expected, 1e-10 * std::abs(expected));
    auto out = m;
    out.effects = EffectsSpec(2.5, 0.5, 0.0);
    EXPECT_EQ(log_prior(out, priors), -std::numeric_limits<double>::infinity());
}

TEST(LogPosterior, EmptyPanelIsPriorOnly) {
    const ClaimsPanel empty({"group"});
    const auto d = prepare_data(empty, kDesign);
    const auto priors = PriorSpec::defaults(2);
    const auto m = truth();
    EXPECT_NEAR(log_posterior(m, {}, d, priors), log_prior(m, priors), 1e-12);
}

TEST(LogPosterior, AddsEffectsDensity) {
    const auto panel = small_panel(30, 4);
    const auto d = prepare_data(panel, kDesign);
    const auto priors = PriorSpec::defaults(2);
    const auto m = truth();
    const auto lat = sample_effects(m.effects, 30, 2);
    double h = 0.0;
    for (const auto& t : lat) h += log_joint_density(m.effects, t.theta1, t.theta2);
    EXPECT_NEAR(log_posterior(m, lat, d, priors), log_likelihood(m, lat, d) + h + log_prior(m, priors), 1e-9);
}

TEST(LogLikelihood, FiniteDifferenceInIntercept) {
    // d/d beta0 of the frequency part is sum(n - mu1).
    const auto panel = small_panel(50, 8);
    const auto d = prepare_data(panel, kDesign);
    const auto m = truth();
    const auto lat = unit_latents(50);
    const double h = 1e-6;
    auto at = [&](double shift) {
        auto p = m;
        auto b1 = p.coeffs.beta1();
        b1[0] += shift;
        p.coeffs = CoefficientSet(kLabels, b1, p.coeffs.beta2());
        return log_likelihood(p, lat, d);
    };
    const double fd = (at(h) - at(-h)) / (2 * h);
    double analytic = 0.0;
    for (int i = 0; i < d.subjects(); ++i) {
        const double mu = std::exp(std::log(0.4) + 0.5 * d.x(i, 1));
        analytic += d.nsum(i) - d.years(i) * mu;
    }
    EXPECT_NEAR(fd, analytic, 1e-5 * (1 + std::abs(analytic)));
}

TEST(MarginalLikelihood, MatchesBruteForceQuadrature) {
    ClaimsPanel panel({"group"});
    panel.add_subject(subject("1", "a", {{1, 0, 0.0}, {2, 2, 700.0}, {3, 0, 0.0}}));
    panel.add_subject(subject("2", "b", {{1, 0, 0.0}, {2, 0, 0.0}}));
    const auto d = prepare_data(panel, kDesign);
    const auto m = truth();
    QuadratureSpec q;
    q.order = 96;
    q.scheme = Scheme::tensor2d;
    double brute = 0.0;
    for (int i = 0; i < 2; ++i) {
        ClaimsPanel one({"group"});
        one.add_subject(panel.subjects()[i]);
        const auto di = prepare_data(one, kDesign);
        brute += std::log(expect2(q, m.effects, [&](double a, double b) {
            const std::vector<EffectPair> lat{{a, b}};
            return std::exp(log_likelihood(m, lat, di));
        }));
    }
    EXPECT_NEAR(log_marginal_likelihood(m, d), brute, 1e-6 * std::abs(brute));
}

TEST(MarginalLikelihood, OrderConverged) {
    const auto panel = small_panel(150, 21);
    const auto d = prepare_data(panel, kDesign);
    const auto m = truth();
    const double a = log_marginal_likelihood(m, d, 12);
    const double b = log_marginal_likelihood(m, d, 24);
    EXPECT_NEAR(a, b, 1e-4);
}

TEST(Mcmc, DeterministicForSeed) {
    const auto d = prepare_data(small_panel(100, 5), kDesign);
    const auto priors = PriorSpec::defaults(2);
    const auto a = run_mcmc(d, priors, short_run(11));
    const auto b = run_mcmc(d, priors, short_run(11));
    ASSERT_EQ(a.draws.size(), 1000u);
    ASSERT_EQ(a.draws.size(), b.draws.size());
    for (std::size_t k = 0; k < a.draws.size(); ++k) {
        EXPECT_EQ(posterior_row(a.draws[k].params), posterior_row(b.draws[k].params));
        EXPECT_EQ(a.draws[k].log_posterior, b.draws[k].log_posterior);
    }
    const auto c = run_mcmc(d, priors, short_run(12));
    EXPECT_NE(posterior_row(a.draws.back().params), posterior_row(c.draws.back().params));
}

TEST(Mcmc, RejectsBadConfig) {
    auto c = short_run(1);
    c.burn_in = c.iterations;
    EXPECT_THROW(c.validate(), ValidationError);
    c = short_run(1);
    c.fixed_rho = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Mcmc, PriorOnlyRecoversUniformSigma) {
    const auto d = prepare_data(small_panel(10, 6), kDesign);
    auto priors = PriorSpec::defaults(2);
    priors.e0 = 0.5;
    priors.f0 = 1.5;
    McmcConfig c;
    c.iterations = 220000;
    c.burn_in = 20000;
    c.thin = 50;
    c.seed = 4;
    c.use_likelihood = false;
    const auto s = run_mcmc(d, priors, c);
    std::vector<double> sig;
    for (const auto& draw : s.draws) sig.push_back(draw.params.effects.sigma1());
    std::sort(sig.begin(), sig.end());
    double ks = 0.0;
    const double n = static_cast<double>(sig.size());
    for (std::size_t i = 0; i < sig.size(); ++i) {
        const double f = sig[i] - 0.5;
        ks = std::max({ks, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    // Thinned draws are close to independent; 1.95 / sqrt(n) is the 0.1% point.
    EXPECT_LT(ks, 1.95 / std::sqrt(n));
    EXPECT_GT(sig.front(), 0.5);
    EXPECT_LT(sig.back(), 1.5);
}

TEST(Mcmc, AllZeroPanelKeepsFrequencyNearPriorSide) {
    ClaimsPanel panel({"group"});
    for (int i = 0; i < 200; ++i) panel.add_subject(subject(std::to_string(i), i % 2 ? "a" : "b", {{1, 0, 0.0}, {2, 0, 0.0}}));
    const auto d = prepare_data(panel, kDesign);
    auto c = short_run(3);
    c.iterations = 6000;
    c.burn_in = 2000;
    const auto s = run_mcmc(d, PriorSpec::defaults(2), c);
    // No claims: severity coefficients see only their N(0, 100) prior.
    double mean = 0.0, sq = 0.0;
    for (const auto& draw : s.draws) {
        mean += draw.params.coeffs.beta2()[1];
        sq += draw.params.coeffs.beta2()[1] * draw.params.coeffs.beta2()[1];
    }
    mean /= s.draws.size();
    const double sd = std::sqrt(sq / s.draws.size() - mean * mean);
    EXPECT_GT(sd, 2.0);
    double freq = 0.0;
    for (const auto& draw : s.draws) freq += draw.params.coeffs.beta1()[0];
    EXPECT_LT(freq / s.draws.size(), -3.0);
}

TEST(Mcmc, RestrictedModelFixesRho) {
    const auto d = prepare_data(small_panel(100, 5), kDesign);
    auto c = short_run(2);
    c.fixed_rho = 0.0;
    const auto s = run_mcmc(d, PriorSpec::defaults(2), c);
    EXPECT_TRUE(s.restricted);
    for (const auto& draw : s.draws) EXPECT_EQ(draw.params.effects.rho(), 0.0);
    const auto rows = summarize_posterior(s);
    EXPECT_EQ(rows.size(), 2u * 2 + 3);
    for (const auto& r : rows) EXPECT_NE(r.name, "rho");
}

TEST(Dic, DeterministicAndConsistent) {
    const auto d = prepare_data(small_panel(100, 5), kDesign);
    const auto s = run_mcmc(d, PriorSpec::defaults(2), short_run(7));
    const auto a = dic(s, d), b = dic(s, d);
    EXPECT_EQ(a.dic, b.dic);
    EXPECT_NEAR(a.dic, a.mean_deviance + a.effective_parameters, 1e-9 * std::abs(a.dic));
    EXPECT_NEAR(a.effective_parameters, a.mean_deviance - a.deviance_at_mean, 1e-9 * std::abs(a.dic));
    const auto m = dic_marginal(s, d, 200);
    EXPECT_EQ(m.dic, dic_marginal(s, d, 200).dic);
    EXPECT_TRUE(std::isfinite(m.dic));
    EXPECT_GT(m.effective_parameters, 0.0);
}

TEST(Summaries, ConstantChain) {
    const std::vector<double> v(50, 2.5);
    const auto s = summarize_column("c", v);
    EXPECT_EQ(s.mean, 2.5);
    EXPECT_EQ(s.median, 2.5);
    EXPECT_EQ(s.std_error, 0.0);
    EXPECT_EQ(s.lower, 2.5);
    EXPECT_EQ(s.hpd_upper, 2.5);
}

TEST(Summaries, SymmetricChainHpdMatchesEqualTailed) {
    const boost::math::normal_distribution<double> z;
    std::vector<double> v;
    for (int i = 1; i <= 20000; ++i) v.push_back(boost::math::quantile(z, (i - 0.5) / 20000.0));
    const auto s = summarize_column("z", v);
    EXPECT_NEAR(s.mean, 0.0, 1e-10);
    EXPECT_NEAR(s.median, 0.0, 1e-10);
    EXPECT_NEAR(s.lower, -1.96, 2e-3);
    EXPECT_NEAR(s.upper, 1.96, 2e-3);
    EXPECT_NEAR(s.hpd_lower, s.lower, 2e-3);
    EXPECT_NEAR(s.hpd_upper, s.upper, 2e-3);
    EXPECT_THROW(summarize_column("e", std::vector<double>{}), ValidationError);
}

TEST(PosteriorCsv, RoundTrip) {
    const auto d = prepare_data(small_panel(50, 5), kDesign);
    const auto s = run_mcmc(d, PriorSpec::defaults(2), short_run(9));
    std::stringstream io;
    write_posterior_csv(io, s);
    const auto back = read_posterior_csv(io);
    ASSERT_EQ(back.size(), s.draws.size());
    const auto a = posterior_row(s.draws[5].params), b = posterior_row(back[5]);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12 * std::abs(a[j]) + 1e-15);
}
