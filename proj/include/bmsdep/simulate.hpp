#pragma once

// Monte Carlo twin of the quadrature and closed-form modules: claim panels,
// stationary BMS levels and moment samples.
//
// Subject i always draws from Xoshiro256pp(seed, i), and work is cut into
// fixed chunks reduced in chunk order, so output does not depend on the
// thread count.
//
// Gamma convention: mean mu with dispersion phi is shape 1/phi, scale mu*phi,
// so Var = phi * mu^2.

#include "bmsdep/bms_chain.hpp"
#include "bmsdep/error.hpp"
#include "bmsdep/moments.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/rng.hpp"
#include "bmsdep/text.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace bmsdep {

struct SimConfig {
    long long subjects = 1000;
    int years = 5;
    std::uint64_t seed = 1;
    std::optional<TransitionRule> rule;
    int burn_in = 1000;
    int initial_level = 1;
    int first_year = 1;
    unsigned threads = 0;  // 0: hardware concurrency

    void validate() const {
        if (subjects < 1) throw ValidationError("simulate: subjects must be at least 1");
        if (years < 1) throw ValidationError("simulate: years must be at least 1");
        if (burn_in < 0) throw ValidationError("simulate: burn_in must be non-negative");
        if (rule && (initial_level < 1 || initial_level > rule->levels()))
            throw ValidationError("simulate: initial_level outside 1..z");
    }
};

namespace detail {

inline constexpr long long kChunk = 1 << 14;

/// Runs fn(begin, end) over [0, total) in fixed chunks; results come back in
/// chunk order.
template <class Fn>
auto run_chunks(long long total, unsigned threads, Fn fn, long long chunk = kChunk) {
    using R = decltype(fn(0LL, 0LL));
    const long long chunks = (total + chunk - 1) / chunk;
    std::vector<R> results(static_cast<std::size_t>(chunks));
    std::atomic<long long> next{0};
    auto worker = [&] {
        for (long long c = next++; c < chunks; c = next++)
            results[c] = fn(c * chunk, std::min(total, (c + 1) * chunk));
    };
    unsigned n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<long long>(n, chunks));
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    return results;
}

class ClassSampler {
public:
    explicit ClassSampler(const Portfolio& portfolio) {
        double acc = 0.0;
        for (const auto& c : portfolio) cumulative_.push_back(acc += c.weight);
    }
    std::size_t draw(double u) const {
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u * cumulative_.back());
        return std::min<std::size_t>(it - cumulative_.begin(), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

template <class Engine>
long long draw_poisson(double mean, Engine& engine) {
    return std::poisson_distribution<long long>(mean)(engine);
}

template <class Engine>
double draw_gamma(double mean, double dispersion, Engine& engine) {
    return std::gamma_distribution<double>(1.0 / dispersion, mean * dispersion)(engine);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Panels

/// Subjects get a class by weight, a time-constant effect pair, and per year
/// n ~ Poisson(lambda1 T1); when n > 0 the average severity is
/// Gamma(mean lambda2 T2, dispersion psi2 / n) and s = n m.
inline ClaimsPanel simulate_panel(const ModelParams& params, const Portfolio& portfolio, const SimConfig& config) {
    params.validate();
    config.validate();
    const detail::ClassSampler sampler(portfolio);
    auto chunks = detail::run_chunks(config.subjects, config.threads, [&](long long begin, long long end) {
        std::vector<Subject> out;
        out.reserve(static_cast<std::size_t>(end - begin));
        for (long long i = begin; i < end; ++i) {
            Xoshiro256pp rng(config.seed, static_cast<std::uint64_t>(i));
            const auto& c = portfolio[sampler.draw(rng.uniform())];
            const auto th = draw_effects(params.effects, rng);
            Subject s;
            s.id = std::to_string(i + 1);
            s.covariates = c.levels;
            for (int t = 0; t < config.years; ++t) {
                Observation o;
                o.year = config.first_year + t;
                o.n = detail::draw_poisson(c.lambda1 * th.theta1, rng);
                if (o.n > 0) {
                    const double n = static_cast<double>(o.n);
                    o.s = n * detail::draw_gamma(c.lambda2 * th.theta2, params.psi2 / n, rng);
                }
                s.history.push_back(o);
            }
            out.push_back(std::move(s));
        }
        return out;
    });
    ClaimsPanel panel(portfolio.design().factor_names());
    for (auto& chunk : chunks)
        for (auto& s : chunk) panel.add_subject(std::move(s));
    return panel;
}

// ---------------------------------------------------------------------------
// Stationary levels

/// Per-level sums over subjects found at that level. With LL = lambda1 lambda2:
///   dep:   a = LL^2 T1 T2,  b = LL^2
///   indep: a = LL^2 T1,     b = LL^2
///   tan:   a = lambda1^2 T1, b = lambda1^2
struct LevelStats {
    double count = 0;
    double dep_a = 0, indep_a = 0, b = 0, tan_a = 0, tan_b = 0;
    double dep_aa = 0, dep_ab = 0, indep_aa = 0, indep_ab = 0, bb = 0;
    double tan_aa = 0, tan_ab = 0, tan_bb = 0;
    double q = 0;  // (LL T1 T2)^2
    double theta1 = 0, theta1_sq = 0;

    void add(const LevelStats& o) {
        count += o.count;
        dep_a += o.dep_a;
        indep_a += o.indep_a;
        b += o.b;
        tan_a += o.tan_a;
        tan_b += o.tan_b;
        dep_aa += o.dep_aa;
        dep_ab += o.dep_ab;
        indep_aa += o.indep_aa;
        indep_ab += o.indep_ab;
        bb += o.bb;
        tan_aa += o.tan_aa;
        tan_ab += o.tan_ab;
        tan_bb += o.tan_bb;
        q += o.q;
        theta1 += o.theta1;
        theta1_sq += o.theta1_sq;
    }
};

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

struct LevelSimResult {
    long long subjects = 0;
    std::vector<LevelStats> stats;  // index l-1
    std::vector<Estimate> p, r_dep, r_indep, r_tan, mean_theta1;

    int levels() const noexcept { return static_cast<int>(stats.size()); }

    /// Empirical raw HMSE of a relativity vector.
    double hmse(std::span<const double> r) const {
        if (static_cast<int>(r.size()) != levels()) throw ValidationError("hmse: relativity vector has the wrong length");
        double total = 0.0;
        for (int l = 0; l < levels(); ++l) {
            const auto& s = stats[l];
            total += s.q - 2.0 * r[l] * s.dep_a + r[l] * r[l] * s.b;
        }
        return total / static_cast<double>(subjects);
    }
};

namespace detail {

// Delta-method standard error of the ratio sum(a)/sum(b) over all n subjects
// (a, b zero off the level).
inline Estimate ratio_estimate(double sa, double sb, double saa, double sab, double sbb, double n) {
    Estimate e;
    if (!(sb > 0.0)) return {std::nan(""), std::nan("")};
    e.value = sa / sb;
    const double r = e.value;
    const double resid = std::max(0.0, saa - 2.0 * r * sab + r * r * sbb);
    const double bbar = sb / n;
    e.se = std::sqrt(resid / n) / (std::sqrt(n) * bbar);
    return e;
}

} // namespace detail

/// Runs each subject's BMS trajectory for burn_in years from initial_level and
/// records the level it ends in, one stationary draw per subject.
inline LevelSimResult simulate_levels(const ModelParams& params, const Portfolio& portfolio, const SimConfig& config) {
    params.validate();
    config.validate();
    if (!config.rule) throw ValidationError("simulate_levels: a transition rule is required");
    const TransitionRule rule = *config.rule;
    const int z = rule.levels();
    const int h = rule.penalty();
    const int max_claims = claims_to_cap(rule, 1);
    const detail::ClassSampler sampler(portfolio);

    auto chunks = detail::run_chunks(config.subjects, config.threads, [&](long long begin, long long end) {
        std::vector<LevelStats> acc(static_cast<std::size_t>(z));
        std::vector<double> cdf(static_cast<std::size_t>(max_claims));
        for (long long i = begin; i < end; ++i) {
            Xoshiro256pp rng(config.seed, static_cast<std::uint64_t>(i));
            const auto& c = portfolio[sampler.draw(rng.uniform())];
            const auto th = draw_effects(params.effects, rng);
            const double mean = c.lambda1 * th.theta1;
            // P(N <= k | N >= 1) for 1 <= k < max_claims; larger counts all reach the top.
            const double any = -std::expm1(-mean);
            double pmf = std::exp(-mean) * mean;
            double cum = 0.0;
            for (int k = 1; k < max_claims; ++k) {
                cum += pmf / any;
                cdf[k] = cum;
                pmf *= mean / static_cast<double>(k + 1);
            }
            // Claim-free runs are geometric, floor(E / mean) with E ~ Exp(1),
            // so they are skipped in one draw.
            int level = config.initial_level;
            long long remaining = config.burn_in;
            while (remaining > 0) {
                const double run = -std::log(1.0 - rng.uniform()) / mean;
                if (!(run < static_cast<double>(remaining))) {
                    level = static_cast<int>(std::max<long long>(level - remaining, 1));
                    break;
                }
                const auto quiet = static_cast<long long>(run);
                level = static_cast<int>(std::max<long long>(level - quiet, 1));
                remaining -= quiet + 1;
                const double u = rng.uniform();
                int n = 1;
                while (n < max_claims && u >= cdf[n]) ++n;
                level = std::min(level + n * h, z);
            }
            const double ll = c.lambda1 * c.lambda2;
            const double b = ll * ll;
            const double a_dep = b * th.theta1 * th.theta2;
            const double a_ind = b * th.theta1;
            const double tb = c.lambda1 * c.lambda1;
            const double ta = tb * th.theta1;
            auto& s = acc[level - 1];
            s.count += 1;
            s.dep_a += a_dep;
            s.indep_a += a_ind;
            s.b += b;
            s.tan_a += ta;
            s.tan_b += tb;
            s.dep_aa += a_dep * a_dep;
            s.dep_ab += a_dep * b;
            s.indep_aa += a_ind * a_ind;
            s.indep_ab += a_ind * b;
            s.bb += b * b;
            s.tan_aa += ta * ta;
            s.tan_ab += ta * tb;
            s.tan_bb += tb * tb;
            s.q += a_dep * a_dep / b;
            s.theta1 += th.theta1;
            s.theta1_sq += th.theta1 * th.theta1;
        }
        return acc;
    });

    LevelSimResult out;
    out.subjects = config.subjects;
    out.stats.assign(static_cast<std::size_t>(z), LevelStats{});
    for (const auto& chunk : chunks)
        for (int l = 0; l < z; ++l) out.stats[l].add(chunk[l]);
    const double n = static_cast<double>(config.subjects);
    for (const auto& s : out.stats) {
        const double p = s.count / n;
        out.p.push_back({p, std::sqrt(p * (1.0 - p) / n)});
        out.r_dep.push_back(detail::ratio_estimate(s.dep_a, s.b, s.dep_aa, s.dep_ab, s.bb, n));
        out.r_indep.push_back(detail::ratio_estimate(s.indep_a, s.b, s.indep_aa, s.indep_ab, s.bb, n));
        out.r_tan.push_back(detail::ratio_estimate(s.tan_a, s.tan_b, s.tan_aa, s.tan_ab, s.tan_bb, n));
        out.mean_theta1.push_back(detail::ratio_estimate(s.theta1, s.count, s.theta1_sq, s.theta1, s.count, n));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Moment samples

namespace detail {

// Per subject: N1, N2, S1, S2, Y11, Y12, Y21 (Y_tj is claim j of year t).
inline constexpr int kMomentVars = 7;

struct MomentSums {
    double n = 0;
    double sum[kMomentVars]{};
    double cross[kMomentVars][kMomentVars]{};

    void add(const double (&v)[kMomentVars]) {
        n += 1;
        for (int i = 0; i < kMomentVars; ++i) {
            sum[i] += v[i];
            for (int j = i; j < kMomentVars; ++j) cross[i][j] += v[i] * v[j];
        }
    }
    void add(const MomentSums& o) {
        n += o.n;
        for (int i = 0; i < kMomentVars; ++i) {
            sum[i] += o.sum[i];
            for (int j = i; j < kMomentVars; ++j) cross[i][j] += o.cross[i][j];
        }
    }
    double mean(int i) const { return sum[i] / n; }
    double cov(int i, int j) const {
        if (i > j) std::swap(i, j);
        return (cross[i][j] - sum[i] * sum[j] / n) / (n - 1.0);
    }
};

enum MomentVar { N1, N2, S1, S2, Y11, Y12, Y21 };

inline std::vector<double> moment_statistics(const MomentSums& m) {
    const double mean_n = 0.5 * (m.mean(N1) + m.mean(N2));
    const double var_n = 0.5 * (m.cov(N1, N1) + m.cov(N2, N2));
    const double mean_s = 0.5 * (m.mean(S1) + m.mean(S2));
    const double var_s = 0.5 * (m.cov(S1, S1) + m.cov(S2, S2));
    const double cov_nn = m.cov(N1, N2);
    const double cov_ss = m.cov(S1, S2);
    const double cov_ns_cross = 0.5 * (m.cov(N1, S2) + m.cov(N2, S1));
    const double cov_ns_same = 0.5 * (m.cov(N1, S1) + m.cov(N2, S2));
    const double mean_y = (m.mean(Y11) + m.mean(Y12) + m.mean(Y21)) / 3.0;
    const double var_y = (m.cov(Y11, Y11) + m.cov(Y12, Y12) + m.cov(Y21, Y21)) / 3.0;
    const double cov_yy = 0.5 * (m.cov(Y11, Y12) + m.cov(Y11, Y21));
    const double cov_ny = 0.25 * (m.cov(N1, Y11) + m.cov(N1, Y12) + m.cov(N2, Y11) + m.cov(N1, Y21));
    return {mean_n,
            var_n,
            mean_s,
            var_s,
            cov_nn,
            cov_ss,
            cov_ns_cross,
            cov_ns_same,
            cov_nn / var_n,
            cov_ss / var_s,
            cov_ns_cross / std::sqrt(var_n * var_s),
            cov_ns_same / std::sqrt(var_n * var_s),
            mean_y,
            var_y,
            cov_yy,
            cov_ny,
            cov_ny / std::sqrt(var_n * var_y),
            cov_yy / var_y};
}

} // namespace detail

/// Empirical counterparts of moment_rows, same names and order, with
/// batch-means standard errors.
struct MomentSimResult {
    std::vector<std::string> names;
    std::vector<Estimate> values;
};

/// Two years per subject, all in class `c`. Individual severities
/// Y ~ Gamma(mean lambda2 T2, dispersion psi2) are drawn for every claim and
/// at least two per year, and S_t sums the first N_t of them.
inline MomentSimResult simulate_moments(const ModelParams& params, const RiskClass& c, long long subjects,
                                        std::uint64_t seed, int batches = 100, unsigned threads = 0) {
    params.validate();
    if (subjects < 2L * batches || batches < 2) throw ValidationError("simulate_moments: too few subjects for the batch count");
    const long long per_batch = subjects / batches;
    auto parts = detail::run_chunks(static_cast<long long>(batches), threads, [&](long long begin, long long end) {
        std::vector<detail::MomentSums> out;
        for (long long bidx = begin; bidx < end; ++bidx) {
            detail::MomentSums sums;
            for (long long i = bidx * per_batch; i < (bidx + 1) * per_batch; ++i) {
                Xoshiro256pp rng(seed, static_cast<std::uint64_t>(i));
                const auto th = draw_effects(params.effects, rng);
                const double mu = c.lambda2 * th.theta2;
                double v[detail::kMomentVars]{};
                for (int t = 0; t < 2; ++t) {
                    const long long n = detail::draw_poisson(c.lambda1 * th.theta1, rng);
                    double s = 0.0;
                    double y_first[2]{};
                    const long long draws = std::max<long long>(n, 2);
                    for (long long j = 0; j < draws; ++j) {
                        const double y = detail::draw_gamma(mu, params.psi2, rng);
                        if (j < n) s += y;
                        if (j < 2) y_first[j] = y;
                    }
                    v[detail::N1 + t] = static_cast<double>(n);
                    v[detail::S1 + t] = s;
                    if (t == 0) {
                        v[detail::Y11] = y_first[0];
                        v[detail::Y12] = y_first[1];
                    } else {
                        v[detail::Y21] = y_first[0];
                    }
                }
                sums.add(v);
            }
            out.push_back(sums);
        }
        return out;
    }, 1);
    std::vector<detail::MomentSums> batch;
    for (auto& p : parts)
        for (auto& b : p) batch.push_back(b);

    detail::MomentSums total;
    for (const auto& b : batch) total.add(b);
    const auto overall = detail::moment_statistics(total);
    std::vector<std::vector<double>> per_batch_stats;
    for (const auto& b : batch) per_batch_stats.push_back(detail::moment_statistics(b));

    MomentSimResult out;
    for (const auto& [name, value] : moment_rows(params, c)) out.names.push_back(name);
    const double nb = static_cast<double>(batch.size());
    for (std::size_t k = 0; k < overall.size(); ++k) {
        double mean = 0.0;
        for (const auto& s : per_batch_stats) mean += s[k];
        mean /= nb;
        double ss = 0.0;
        for (const auto& s : per_batch_stats) ss += (s[k] - mean) * (s[k] - mean);
        out.values.push_back({overall[k], std::sqrt(ss / (nb - 1.0) / nb)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Posterior predictive totals

/// One simulated portfolio-year per parameter draw; each draw rebuilds the
/// class means from its coefficients and sums S over config.subjects subjects.
inline std::vector<double> posterior_predictive_total(std::span<const ModelParams> draws, const Portfolio& portfolio,
                                                      const SimConfig& config) {
    config.validate();
    if (draws.empty()) throw ValidationError("posterior_predictive_total: no parameter draws");
    auto chunks = detail::run_chunks(static_cast<long long>(draws.size()), config.threads,
                                     [&](long long begin, long long end) {
        std::vector<double> out;
        for (long long d = begin; d < end; ++d) {
            const auto& params = draws[d];
            params.validate();
            const Portfolio p = params.coeffs.size() ? portfolio.rebuild(params.coeffs) : portfolio;
            const detail::ClassSampler sampler(p);
            Xoshiro256pp rng(config.seed, static_cast<std::uint64_t>(d));
            double total = 0.0;
            for (long long i = 0; i < config.subjects; ++i) {
                const auto& c = p[sampler.draw(rng.uniform())];
                const auto th = draw_effects(params.effects, rng);
                const long long n = detail::draw_poisson(c.lambda1 * th.theta1, rng);
                if (n > 0) {
                    const double nn = static_cast<double>(n);
                    total += nn * detail::draw_gamma(c.lambda2 * th.theta2, params.psi2 / nn, rng);
                }
            }
            out.push_back(total);
        }
        return out;
    }, 1);
    std::vector<double> totals;
    for (auto& c : chunks) totals.insert(totals.end(), c.begin(), c.end());
    return totals;
}

/// CSV with a single column `total`, one value per row.
inline void write_totals_csv(std::ostream& out, std::span<const double> totals) {
    out << "total\n";
    for (double t : totals) out << text::format(t) << '\n';
}

} // namespace bmsdep
