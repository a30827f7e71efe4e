#pragma once

// Bayesian fit of the frequency-severity random-effects model by
// Metropolis-within-Gibbs over parameters and per-subject latent effects.
//
// Likelihood per subject-year: Poisson(n; lambda1 T1), and for n > 0 the
// aggregate S ~ Gamma(mean n lambda2 T2, dispersion psi2 / n), i.e. shape
// n / psi2 and scale lambda2 T2 psi2.
//
// Priors: beta ~ N(a0, A0) per component, 1/psi2 ~ Gamma(c0, rate d0),
// sigma1 ~ U(e0, f0), sigma2 ~ U(g0, h0), rho ~ U(-1, 1).
//
// The chain state keeps eta = log theta. Besides the block updates, each
// sweep re-proposes sigma and rho with the standardized effects held fixed
// and shifts each intercept against its latent effects; both moves leave the
// posterior invariant and cut the autocorrelation of the variance parameters.

#include "bmsdep/error.hpp"
#include "bmsdep/integrate.hpp"
#include "bmsdep/moments.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/rng.hpp"
#include "bmsdep/text.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace bmsdep {

// ---------------------------------------------------------------------------
// Priors and data

struct PriorSpec {
    Eigen::VectorXd a1, a2;
    Eigen::MatrixXd A1, A2;
    double c0 = 0.01, d0 = 0.01;
    double e0 = 0.0, f0 = 5.0;
    double g0 = 0.0, h0 = 5.0;

    /// a0 = 0, A0 = 100 I, c0 = d0 = 0.01, sigma bounds (0, 5).
    static PriorSpec defaults(int p) {
        PriorSpec s;
        s.a1 = s.a2 = Eigen::VectorXd::Zero(p);
        s.A1 = s.A2 = 100.0 * Eigen::MatrixXd::Identity(p, p);
        return s;
    }

    void validate(int p) const {
        auto check_normal = [&](const Eigen::VectorXd& a, const Eigen::MatrixXd& A, const char* which) {
            if (a.size() != p || A.rows() != p || A.cols() != p) {
                std::ostringstream os;
                os << "priors: " << which << " mean/covariance must have dimension " << p;
                throw ValidationError(os.str());
            }
            if (!A.isApprox(A.transpose(), 1e-12) || Eigen::LLT<Eigen::MatrixXd>(A).info() != Eigen::Success)
                throw ValidationError(std::string("priors: ") + which + " covariance must be symmetric positive definite");
        };
        check_normal(a1, A1, "frequency");
        check_normal(a2, A2, "severity");
        if (!(c0 > 0.0) || !(d0 > 0.0)) throw ValidationError("priors: c0 and d0 must be positive");
        if (!(e0 >= 0.0) || !(e0 < f0)) throw ValidationError("priors: need 0 <= e0 < f0");
        if (!(g0 >= 0.0) || !(g0 < h0)) throw ValidationError("priors: need 0 <= g0 < h0");
    }
};

/// Intercept followed by the non-baseline level of every factor.
inline std::vector<std::string> design_labels(const DesignSpec& design) {
    std::vector<std::string> out{CoefficientSet::kIntercept};
    for (const auto& f : design.factors)
        for (std::size_t i = 1; i < f.levels.size(); ++i) out.push_back(f.levels[i]);
    return out;
}

struct EstimationData {
    struct Record {
        int subject = 0;
        int year = 0;
        long long n = 0;
        double s = 0.0;
        double log_s = 0.0;
        double lgamma_n1 = 0.0;
    };

    DesignSpec design;
    std::vector<std::string> labels;
    std::vector<std::string> subject_ids;
    Eigen::MatrixXd x;  // subjects x coefficients
    Eigen::VectorXd years, nsum, ssum;
    std::vector<Record> records;

    int subjects() const noexcept { return static_cast<int>(subject_ids.size()); }
    int dimension() const noexcept { return static_cast<int>(labels.size()); }
};

inline EstimationData prepare_data(const ClaimsPanel& panel, const DesignSpec& design,
                                   std::vector<std::string> labels = {}) {
    if (labels.empty()) labels = design_labels(design);
    const int p = static_cast<int>(labels.size());
    const CoefficientSet shape(labels, std::vector<double>(p, 0.0), std::vector<double>(p, 0.0));
    if (panel.covariate_names() != design.factor_names())
        throw ValidationError("estimate: panel covariates do not match the design factors");
    EstimationData d;
    d.design = design;
    d.labels = labels;
    const int n = static_cast<int>(panel.subject_count());
    d.x.resize(n, p);
    d.years = d.nsum = d.ssum = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        const auto& subject = panel.subjects()[i];
        d.subject_ids.push_back(subject.id);
        const auto row = design.row(shape, subject.covariates);
        for (int j = 0; j < p; ++j) d.x(i, j) = row[j];
        for (const auto& o : subject.history) {
            if (o.n > 0 && !(o.s > 0.0))
                throw ValidationError("estimate: subject '" + subject.id + "', year " + std::to_string(o.year) +
                                      " has claims but a zero amount");
            EstimationData::Record r;
            r.subject = i;
            r.year = o.year;
            r.n = o.n;
            r.s = o.s;
            r.log_s = o.n > 0 ? std::log(o.s) : 0.0;
            r.lgamma_n1 = std::lgamma(static_cast<double>(o.n) + 1.0);
            d.records.push_back(r);
            d.years(i) += 1.0;
            d.nsum(i) += static_cast<double>(o.n);
            d.ssum(i) += o.s;
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Densities

namespace detail {

inline double freq_part(double nsum, double years, double mu1) { return nsum * mu1 - years * std::exp(mu1); }

// Gamma terms that depend on the subject's mean; zero without claims.
inline double sev_part(double nsum, double ssum, double mu2, double psi) {
    if (nsum == 0.0) return 0.0;
    return -ssum / (psi * std::exp(mu2)) - (nsum / psi) * (mu2 + std::log(psi));
}

// Gamma terms that depend on psi alone.
inline double psi_constant(const EstimationData& d, double psi) {
    double out = 0.0;
    for (const auto& r : d.records) {
        if (r.n == 0) continue;
        const double k = static_cast<double>(r.n) / psi;
        out += (k - 1.0) * r.log_s - std::lgamma(k);
    }
    return out;
}

inline double lgamma_total(const EstimationData& d) {
    double out = 0.0;
    for (const auto& r : d.records) out += r.lgamma_n1;
    return out;
}

// Bivariate normal log density of (eta1, eta2) = (log T1, log T2).
inline double log_eta_density(double eta1, double eta2, double s1, double s2, double rho) {
    const double z1 = (eta1 + 0.5 * s1 * s1) / s1;
    const double z2 = (eta2 + 0.5 * s2 * s2) / s2;
    const double one_m = 1.0 - rho * rho;
    return -(z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * one_m) - std::log(2.0 * std::numbers::pi) -
           0.5 * std::log(one_m) - std::log(s1) - std::log(s2);
}

inline double log_normal_prior(const Eigen::VectorXd& b, const Eigen::VectorXd& a, const Eigen::MatrixXd& A) {
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    const Eigen::VectorXd r = llt.matrixL().solve(b - a);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * r.squaredNorm() - 0.5 * log_det - 0.5 * static_cast<double>(b.size()) * std::log(2.0 * std::numbers::pi);
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void check_params(const ModelParams& params, const EstimationData& d, std::size_t latents) {
    params.validate();
    if (params.coeffs.labels() != d.labels) throw ValidationError("estimate: coefficient labels do not match the data");
    if (latents != static_cast<std::size_t>(d.subjects())) {
        std::ostringstream os;
        os << "estimate: " << latents << " latent pairs for " << d.subjects() << " subjects";
        throw ValidationError(os.str());
    }
}

} // namespace detail

/// log p(1/psi2) + log p(beta1) + log p(beta2) + log p(sigma1, sigma2, rho).
inline double log_prior(const ModelParams& params, const PriorSpec& priors) {
    const auto& e = params.effects;
    if (e.sigma1() <= priors.e0 || e.sigma1() >= priors.f0 || e.sigma2() <= priors.g0 || e.sigma2() >= priors.h0 ||
        std::abs(e.rho()) >= 1.0)
        return -std::numeric_limits<double>::infinity();
    const double tau = 1.0 / params.psi2;
    double lp = priors.c0 * std::log(priors.d0) - std::lgamma(priors.c0) + (priors.c0 - 1.0) * std::log(tau) -
                priors.d0 * tau;
    lp += detail::log_normal_prior(detail::to_vector(params.coeffs.beta1()), priors.a1, priors.A1);
    lp += detail::log_normal_prior(detail::to_vector(params.coeffs.beta2()), priors.a2, priors.A2);
    lp -= std::log(priors.f0 - priors.e0) + std::log(priors.h0 - priors.g0) + std::log(2.0);
    return lp;
}

/// Observed-data log likelihood given the latent effects. Errors name the
/// first record whose contribution is not finite.
inline double log_likelihood(const ModelParams& params, std::span<const EffectPair> latents, const EstimationData& d) {
    detail::check_params(params, d, latents.size());
    const Eigen::VectorXd lin1 = d.x * detail::to_vector(params.coeffs.beta1());
    const Eigen::VectorXd lin2 = d.x * detail::to_vector(params.coeffs.beta2());
    const double psi = params.psi2;
    double ll = 0.0;
    for (const auto& r : d.records) {
        const auto& th = latents[r.subject];
        const double mu1 = lin1(r.subject) + std::log(th.theta1);
        double term = static_cast<double>(r.n) * mu1 - std::exp(mu1) - r.lgamma_n1;
        if (r.n > 0) {
            const double k = static_cast<double>(r.n) / psi;
            const double mu2 = lin2(r.subject) + std::log(th.theta2);
            term += (k - 1.0) * r.log_s - r.s / (psi * std::exp(mu2)) - k * (mu2 + std::log(psi)) - std::lgamma(k);
        }
        if (!std::isfinite(term)) {
            std::ostringstream os;
            os << "log_likelihood: non-finite contribution from subject '" << d.subject_ids[r.subject] << "', year "
               << r.year;
            throw NumericalError(os.str());
        }
        ll += term;
    }
    return ll;
}

/// log likelihood + sum_i log h(theta_i) + log prior.
inline double log_posterior(const ModelParams& params, std::span<const EffectPair> latents, const EstimationData& d,
                            const PriorSpec& priors) {
    double lp = log_likelihood(params, latents, d);
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const double term = log_joint_density(params.effects, latents[i].theta1, latents[i].theta2);
        if (!std::isfinite(term)) {
            std::ostringstream os;
            os << "log_posterior: effects density not finite for subject '" << d.subject_ids[i] << "'";
            throw NumericalError(os.str());
        }
        lp += term;
    }
    return lp + log_prior(params, priors);
}

// ---------------------------------------------------------------------------
// Sampler

struct McmcConfig {
    long iterations = 60000;  // total, burn-in included
    long burn_in = 20000;
    long thin = 5;
    std::uint64_t seed = 1;
    double beta_step = 0.05;
    double psi_step = 0.1;
    double sigma_step = 0.05;
    double rho_step = 0.1;
    double latent_step = 0.5;
    std::optional<double> fixed_rho;  // restricted model, e.g. rho = 0
    bool use_likelihood = true;
    bool keep_latents = false;

    void validate() const {
        if (iterations < 1 || burn_in < 0 || burn_in >= iterations)
            throw ValidationError("mcmc: need 0 <= burn_in < iterations");
        if (thin < 1) throw ValidationError("mcmc: thin must be at least 1");
        for (double s : {beta_step, psi_step, sigma_step, rho_step, latent_step})
            if (!(s > 0.0)) throw ValidationError("mcmc: step sizes must be positive");
        if (fixed_rho && !(std::abs(*fixed_rho) < 1.0)) throw ValidationError("mcmc: fixed rho must lie in (-1, 1)");
    }
};

struct PosteriorDraw {
    ModelParams params;
    double log_posterior = 0.0;
    double deviance = 0.0;
};

struct PosteriorSample {
    std::vector<std::string> labels;
    std::vector<PosteriorDraw> draws;
    std::vector<EffectPair> latent_mean;
    std::vector<std::vector<EffectPair>> latents;  // only with keep_latents
    long iterations = 0, burn_in = 0, thin = 1;
    bool restricted = false;
    std::map<std::string, double> acceptance;
    std::vector<std::string> warnings;
};

namespace detail {

// Batch-wise Robbins-Monro scaling on the log step (adapts during burn-in only).
struct AdaptiveStep {
    double log_step = 0.0;
    int batch_tried = 0, batch_accepted = 0, batches = 0;
    long tried = 0, accepted = 0;

    explicit AdaptiveStep(double step = 1.0) : log_step(std::log(step)) {}
    double step() const { return std::exp(log_step); }
    void record(bool ok, bool adapting, double target) {
        ++tried;
        accepted += ok;
        if (!adapting) return;
        ++batch_tried;
        batch_accepted += ok;
        if (batch_tried == 50) {
            ++batches;
            const double delta = std::min(0.05, 1.0 / std::sqrt(static_cast<double>(batches)));
            log_step += static_cast<double>(batch_accepted) / 50.0 > target ? delta : -delta;
            batch_tried = batch_accepted = 0;
        }
    }
    void reset_counts() { tried = accepted = 0; }
    double rate() const { return tried ? static_cast<double>(accepted) / static_cast<double>(tried) : 0.0; }
};

// Random walk for a coefficient vector with a proposal covariance learned
// from the burn-in draws.
struct AdaptiveBlock {
    AdaptiveStep scale;
    Eigen::MatrixXd chol;
    Eigen::VectorXd mean;
    Eigen::MatrixXd m2;
    long count = 0;

    AdaptiveBlock(int p, double step) : scale(1.0), chol(step * Eigen::MatrixXd::Identity(p, p)),
                                        mean(Eigen::VectorXd::Zero(p)), m2(Eigen::MatrixXd::Zero(p, p)) {}

    void observe(const Eigen::VectorXd& b) {
        ++count;
        const Eigen::VectorXd delta = b - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (b - mean).transpose();
    }
    void refresh() {
        const auto p = mean.size();
        if (count < 2L * p + 100) return;
        Eigen::MatrixXd cov = m2 / static_cast<double>(count - 1);
        cov *= 2.38 * 2.38 / static_cast<double>(p);
        cov += 1e-10 * Eigen::MatrixXd::Identity(p, p);
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success) chol = llt.matrixL();
    }
};

struct GlmResult {
    Eigen::VectorXd beta;
    bool ok = false;
};

// Log-link IRLS for Poisson (variance mu) or Gamma (variance mu^2) responses.
inline GlmResult glm_log_link(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                              const Eigen::VectorXd& offset, bool gamma) {
    const auto p = x.cols();
    GlmResult out;
    out.beta = Eigen::VectorXd::Zero(p);
    const double ybar = std::max(1e-8, (w.array() * y.array()).sum() / std::max(1e-300, (w.array() * offset.array().exp()).sum()));
    out.beta(0) = std::log(ybar);
    for (int it = 0; it < 50; ++it) {
        const Eigen::VectorXd eta = x * out.beta + offset;
        const Eigen::ArrayXd mu = eta.array().exp();
        const Eigen::ArrayXd wk = gamma ? Eigen::ArrayXd(w.array()) : Eigen::ArrayXd(w.array() * mu);
        const Eigen::VectorXd z = (eta - offset).array() + (y.array() - mu) / mu;
        Eigen::MatrixXd xtwx = x.transpose() * wk.matrix().asDiagonal() * x;
        xtwx += 1e-6 * Eigen::MatrixXd::Identity(p, p);
        const Eigen::VectorXd next = xtwx.ldlt().solve(x.transpose() * (wk * z.array()).matrix());
        if (!next.allFinite()) return out;
        const double change = (next - out.beta).cwiseAbs().maxCoeff();
        out.beta = next;
        if (change < 1e-10) break;
    }
    out.ok = out.beta.allFinite();
    return out;
}

class Sampler {
public:
    Sampler(const EstimationData& d, const PriorSpec& priors, const McmcConfig& cfg)
        : d_(d), priors_(priors), cfg_(cfg), rng_(cfg.seed, 0), p_(d.dimension()), n_(d.subjects()),
          block1_(p_, cfg.beta_step), block2_(p_, cfg.beta_step), psi_step_(cfg.psi_step),
          sigma1_step_(cfg.sigma_step), sigma2_step_(cfg.sigma_step), rho_step_(cfg.rho_step),
          nc_sigma1_step_(cfg.sigma_step), nc_sigma2_step_(cfg.sigma_step), nc_rho_step_(cfg.rho_step),
          shift1_step_(0.1), shift2_step_(0.1) {
        intercept_ = -1;
        for (int j = 0; j < p_; ++j)
            if (d.labels[j] == CoefficientSet::kIntercept) intercept_ = j;
        for (int i = 0; i < n_; ++i) {
            lat1_steps_.emplace_back(cfg.latent_step);
            lat2_steps_.emplace_back(cfg.latent_step);
        }
        initialize();
        lgamma_total_ = lgamma_total(d_);
    }

    PosteriorSample run() {
        PosteriorSample out;
        out.labels = d_.labels;
        out.iterations = cfg_.iterations;
        out.burn_in = cfg_.burn_in;
        out.thin = cfg_.thin;
        out.restricted = cfg_.fixed_rho.has_value();
        std::vector<double> theta1_sum(n_, 0.0), theta2_sum(n_, 0.0);
        for (long it = 0; it < cfg_.iterations; ++it) {
            const bool adapting = it < cfg_.burn_in;
            if (it == cfg_.burn_in) reset_counts();
            sweep(adapting);
            if (adapting && it >= 200) {
                block1_.observe(b1_);
                block2_.observe(b2_);
                if (it % 100 == 0) {
                    block1_.refresh();
                    block2_.refresh();
                }
            }
            if (!adapting && (it - cfg_.burn_in + 1) % cfg_.thin == 0) {
                auto draw = current_draw();
                out.draws.push_back(std::move(draw));
                for (int i = 0; i < n_; ++i) {
                    theta1_sum[i] += std::exp(eta1_(i));
                    theta2_sum[i] += std::exp(eta2_(i));
                }
                if (cfg_.keep_latents) out.latents.push_back(latents());
            }
        }
        const double m = static_cast<double>(out.draws.size());
        for (int i = 0; i < n_; ++i) out.latent_mean.push_back({theta1_sum[i] / m, theta2_sum[i] / m});
        auto rate = [&](const std::string& name, double r) {
            out.acceptance[name] = r;
            if (r < 0.01) {
                std::ostringstream os;
                os << "block '" << name << "' accepted " << r * 100.0 << "% of proposals after adaptation";
                out.warnings.push_back(os.str());
            }
        };
        rate("beta1", block1_.scale.rate());
        rate("beta2", block2_.scale.rate());
        rate("log_psi2", psi_step_.rate());
        rate("sigma1", sigma1_step_.rate());
        rate("sigma2", sigma2_step_.rate());
        rate("sigma1_noncentered", nc_sigma1_step_.rate());
        rate("sigma2_noncentered", nc_sigma2_step_.rate());
        if (!cfg_.fixed_rho) {
            rate("atanh_rho", rho_step_.rate());
            rate("atanh_rho_noncentered", nc_rho_step_.rate());
        }
        if (intercept_ >= 0) {
            rate("intercept_shift1", shift1_step_.rate());
            rate("intercept_shift2", shift2_step_.rate());
        }
        long tried = 0, accepted = 0;
        for (int i = 0; i < n_; ++i) {
            tried += lat1_steps_[i].tried + lat2_steps_[i].tried;
            accepted += lat1_steps_[i].accepted + lat2_steps_[i].accepted;
        }
        rate("latents", tried ? static_cast<double>(accepted) / static_cast<double>(tried) : 0.0);
        return out;
    }

private:
    void initialize() {
        b1_ = priors_.a1;
        b2_ = priors_.a2;
        if (cfg_.use_likelihood && n_ > 0) {
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n_);
            const auto f = glm_log_link(d_.x, d_.nsum, ones, d_.years.array().log().matrix(), false);
            if (f.ok) b1_ = f.beta;
            std::vector<int> rows;
            for (int i = 0; i < n_; ++i)
                if (d_.nsum(i) > 0) rows.push_back(i);
            if (!rows.empty()) {
                const auto m = static_cast<Eigen::Index>(rows.size());
                Eigen::MatrixXd xs(m, p_);
                Eigen::VectorXd y(m), w(m);
                for (Eigen::Index k = 0; k < m; ++k) {
                    xs.row(k) = d_.x.row(rows[k]);
                    y(k) = d_.ssum(rows[k]) / d_.nsum(rows[k]);
                    w(k) = d_.nsum(rows[k]);
                }
                const auto g = glm_log_link(xs, y, w, Eigen::VectorXd::Zero(m), true);
                if (g.ok) b2_ = g.beta;
            }
        }
        psi_ = 1.0;
        s1_ = std::clamp(0.5, priors_.e0 + 1e-3, priors_.f0 - 1e-3);
        s2_ = std::clamp(0.5, priors_.g0 + 1e-3, priors_.h0 - 1e-3);
        rho_ = cfg_.fixed_rho.value_or(0.0);
        lin1_ = d_.x * b1_;
        lin2_ = d_.x * b2_;
        eta1_ = Eigen::VectorXd::Constant(n_, -0.5 * s1_ * s1_);
        eta2_ = Eigen::VectorXd::Constant(n_, -0.5 * s2_ * s2_);
    }

    bool accept(double log_ratio) {
        if (!(log_ratio == log_ratio)) return false;
        return log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio;
    }

    double freq(int i, double eta1, double lin1) const {
        return cfg_.use_likelihood ? freq_part(d_.nsum(i), d_.years(i), lin1 + eta1) : 0.0;
    }
    double sev(int i, double eta2, double lin2, double psi) const {
        return cfg_.use_likelihood ? sev_part(d_.nsum(i), d_.ssum(i), lin2 + eta2, psi) : 0.0;
    }
    double eta_density(double e1, double e2, double s1, double s2, double rho) const {
        return log_eta_density(e1, e2, s1, s2, rho);
    }

    // Reflect x into (lo, hi).
    static double reflect(double x, double lo, double hi) {
        const double width = hi - lo;
        double y = std::fmod(x - lo, 2.0 * width);
        if (y < 0) y += 2.0 * width;
        return y > width ? hi - (y - width) : lo + y;
    }

    void sweep(bool adapting) {
        update_latents(adapting);
        update_beta(adapting, true);
        update_beta(adapting, false);
        if (intercept_ >= 0) {
            shift_intercept(adapting, true);
            shift_intercept(adapting, false);
        }
        update_psi(adapting);
        update_sigma_centered(adapting, true);
        update_sigma_centered(adapting, false);
        update_sigma_noncentered(adapting, true);
        update_sigma_noncentered(adapting, false);
        if (!cfg_.fixed_rho) {
            update_rho_centered(adapting);
            update_rho_noncentered(adapting);
        }
    }

    void update_latents(bool adapting) {
        for (int i = 0; i < n_; ++i) {
            {
                const double cur = eta1_(i);
                const double prop = cur + lat1_steps_[i].step() * rng_.normal();
                const double lr = freq(i, prop, lin1_(i)) - freq(i, cur, lin1_(i)) +
                                  eta_density(prop, eta2_(i), s1_, s2_, rho_) - eta_density(cur, eta2_(i), s1_, s2_, rho_);
                const bool ok = accept(lr);
                if (ok) eta1_(i) = prop;
                lat1_steps_[i].record(ok, adapting, 0.44);
            }
            {
                const double cur = eta2_(i);
                const double prop = cur + lat2_steps_[i].step() * rng_.normal();
                const double lr = sev(i, prop, lin2_(i), psi_) - sev(i, cur, lin2_(i), psi_) +
                                  eta_density(eta1_(i), prop, s1_, s2_, rho_) - eta_density(eta1_(i), cur, s1_, s2_, rho_);
                const bool ok = accept(lr);
                if (ok) eta2_(i) = prop;
                lat2_steps_[i].record(ok, adapting, 0.44);
            }
        }
    }

    void update_beta(bool adapting, bool frequency) {
        auto& block = frequency ? block1_ : block2_;
        Eigen::VectorXd& b = frequency ? b1_ : b2_;
        Eigen::VectorXd& lin = frequency ? lin1_ : lin2_;
        const auto& a = frequency ? priors_.a1 : priors_.a2;
        const auto& A = frequency ? priors_.A1 : priors_.A2;
        Eigen::VectorXd z(p_);
        for (int j = 0; j < p_; ++j) z(j) = rng_.normal();
        const Eigen::VectorXd prop = b + block.scale.step() * (block.chol * z);
        const Eigen::VectorXd lin_prop = d_.x * prop;
        double lr = log_normal_prior(prop, a, A) - log_normal_prior(b, a, A);
        for (int i = 0; i < n_; ++i)
            lr += frequency ? freq(i, eta1_(i), lin_prop(i)) - freq(i, eta1_(i), lin(i))
                            : sev(i, eta2_(i), lin_prop(i), psi_) - sev(i, eta2_(i), lin(i), psi_);
        const bool ok = accept(lr);
        if (ok) {
            b = prop;
            lin = lin_prop;
        }
        block.scale.record(ok, adapting, 0.234);
    }

    // beta_0 += delta and eta -= delta for every subject: the linear
    // predictors are unchanged, so only the prior and effects density move.
    void shift_intercept(bool adapting, bool frequency) {
        auto& step = frequency ? shift1_step_ : shift2_step_;
        Eigen::VectorXd& b = frequency ? b1_ : b2_;
        Eigen::VectorXd& eta = frequency ? eta1_ : eta2_;
        const auto& a = frequency ? priors_.a1 : priors_.a2;
        const auto& A = frequency ? priors_.A1 : priors_.A2;
        const double delta = step.step() * rng_.normal();
        Eigen::VectorXd prop = b;
        prop(intercept_) += delta;
        double lr = log_normal_prior(prop, a, A) - log_normal_prior(b, a, A);
        for (int i = 0; i < n_; ++i) {
            const double e1 = eta1_(i), e2 = eta2_(i);
            lr += frequency ? eta_density(e1 - delta, e2, s1_, s2_, rho_) - eta_density(e1, e2, s1_, s2_, rho_)
                            : eta_density(e1, e2 - delta, s1_, s2_, rho_) - eta_density(e1, e2, s1_, s2_, rho_);
        }
        const bool ok = accept(lr);
        if (ok) {
            b = prop;
            eta.array() -= delta;
            (frequency ? lin1_ : lin2_).array() += delta;
        }
        step.record(ok, adapting, 0.44);
    }

    double severity_loglik(double psi) const {
        if (!cfg_.use_likelihood) return 0.0;
        double ll = psi_constant(d_, psi);
        for (int i = 0; i < n_; ++i) ll += sev(i, eta2_(i), lin2_(i), psi);
        return ll;
    }

    void update_psi(bool adapting) {
        const double prop = psi_ * std::exp(psi_step_.step() * rng_.normal());
        // Prior on log psi: c0 log tau - d0 tau with tau = 1 / psi.
        auto prior = [&](double psi) { return -priors_.c0 * std::log(psi) - priors_.d0 / psi; };
        const double lr = severity_loglik(prop) - severity_loglik(psi_) + prior(prop) - prior(psi_);
        const bool ok = accept(lr);
        if (ok) psi_ = prop;
        psi_step_.record(ok, adapting, 0.44);
    }

    double effects_total(double s1, double s2, double rho) const {
        double out = 0.0;
        for (int i = 0; i < n_; ++i) out += eta_density(eta1_(i), eta2_(i), s1, s2, rho);
        return out;
    }

    void update_sigma_centered(bool adapting, bool first) {
        auto& step = first ? sigma1_step_ : sigma2_step_;
        const double lo = first ? priors_.e0 : priors_.g0;
        const double hi = first ? priors_.f0 : priors_.h0;
        double& s = first ? s1_ : s2_;
        const double prop = reflect(s + step.step() * rng_.normal(), lo, hi);
        if (!(prop > lo && prop < hi)) {
            step.record(false, adapting, 0.44);
            return;
        }
        const double lr = first ? effects_total(prop, s2_, rho_) - effects_total(s1_, s2_, rho_)
                                : effects_total(s1_, prop, rho_) - effects_total(s1_, s2_, rho_);
        const bool ok = accept(lr);
        if (ok) s = prop;
        step.record(ok, adapting, 0.44);
    }

    // Standardized effects: x1 = u1, x2 = rho u1 + sqrt(1 - rho^2) u2.
    void standardized(Eigen::VectorXd& u1, Eigen::VectorXd& u2) const {
        const Eigen::ArrayXd x1 = (eta1_.array() + 0.5 * s1_ * s1_) / s1_;
        const Eigen::ArrayXd x2 = (eta2_.array() + 0.5 * s2_ * s2_) / s2_;
        u1 = x1.matrix();
        u2 = ((x2 - rho_ * x1) / std::sqrt(1.0 - rho_ * rho_)).matrix();
    }

    void update_sigma_noncentered(bool adapting, bool first) {
        auto& step = first ? nc_sigma1_step_ : nc_sigma2_step_;
        const double lo = first ? priors_.e0 : priors_.g0;
        const double hi = first ? priors_.f0 : priors_.h0;
        const double cur = first ? s1_ : s2_;
        const double prop = reflect(cur + step.step() * rng_.normal(), lo, hi);
        if (!(prop > lo && prop < hi)) {
            step.record(false, adapting, 0.44);
            return;
        }
        // With u fixed, eta_k = sigma_k x_k - sigma_k^2 / 2 and x_k does not move.
        const Eigen::VectorXd& eta = first ? eta1_ : eta2_;
        const Eigen::ArrayXd x = (eta.array() + 0.5 * cur * cur) / cur;
        const Eigen::VectorXd eta_prop = (prop * x - 0.5 * prop * prop).matrix();
        double lr = 0.0;
        for (int i = 0; i < n_; ++i)
            lr += first ? freq(i, eta_prop(i), lin1_(i)) - freq(i, eta(i), lin1_(i))
                        : sev(i, eta_prop(i), lin2_(i), psi_) - sev(i, eta(i), lin2_(i), psi_);
        const bool ok = accept(lr);
        if (ok) {
            (first ? eta1_ : eta2_) = eta_prop;
            (first ? s1_ : s2_) = prop;
        }
        step.record(ok, adapting, 0.44);
    }

    bool propose_rho(const AdaptiveStep& step, double& prop, double& log_jacobian) {
        prop = std::tanh(std::atanh(rho_) + step.step() * rng_.normal());
        if (!(std::abs(prop) < kRhoDensityLimit)) return false;
        log_jacobian = std::log(1.0 - prop * prop) - std::log(1.0 - rho_ * rho_);
        return true;
    }

    void update_rho_centered(bool adapting) {
        double prop = 0.0, jac = 0.0;
        if (!propose_rho(rho_step_, prop, jac)) {
            rho_step_.record(false, adapting, 0.44);
            return;
        }
        const double lr = effects_total(s1_, s2_, prop) - effects_total(s1_, s2_, rho_) + jac;
        const bool ok = accept(lr);
        if (ok) rho_ = prop;
        rho_step_.record(ok, adapting, 0.44);
    }

    void update_rho_noncentered(bool adapting) {
        double prop = 0.0, jac = 0.0;
        if (!propose_rho(nc_rho_step_, prop, jac)) {
            nc_rho_step_.record(false, adapting, 0.44);
            return;
        }
        Eigen::VectorXd u1, u2;
        standardized(u1, u2);
        const Eigen::VectorXd x2 = prop * u1 + std::sqrt(1.0 - prop * prop) * u2;
        const Eigen::VectorXd eta_prop = (s2_ * x2.array() - 0.5 * s2_ * s2_).matrix();
        double lr = jac;
        for (int i = 0; i < n_; ++i) lr += sev(i, eta_prop(i), lin2_(i), psi_) - sev(i, eta2_(i), lin2_(i), psi_);
        const bool ok = accept(lr);
        if (ok) {
            rho_ = prop;
            eta2_ = eta_prop;
        }
        nc_rho_step_.record(ok, adapting, 0.44);
    }

    void reset_counts() {
        for (auto* s : {&block1_.scale, &block2_.scale, &psi_step_, &sigma1_step_, &sigma2_step_, &rho_step_,
                        &nc_sigma1_step_, &nc_sigma2_step_, &nc_rho_step_, &shift1_step_, &shift2_step_})
            s->reset_counts();
        for (auto& s : lat1_steps_) s.reset_counts();
        for (auto& s : lat2_steps_) s.reset_counts();
    }

    std::vector<EffectPair> latents() const {
        std::vector<EffectPair> out;
        out.reserve(n_);
        for (int i = 0; i < n_; ++i) out.push_back({std::exp(eta1_(i)), std::exp(eta2_(i))});
        return out;
    }

    ModelParams params() const {
        ModelParams m;
        m.coeffs = CoefficientSet(d_.labels, std::vector<double>(b1_.data(), b1_.data() + p_),
                                  std::vector<double>(b2_.data(), b2_.data() + p_));
        m.effects = EffectsSpec(s1_, s2_, rho_);
        m.psi2 = psi_;
        return m;
    }

    PosteriorDraw current_draw() const {
        PosteriorDraw draw;
        draw.params = params();
        double ll = 0.0;
        double eff = 0.0;
        for (int i = 0; i < n_; ++i) {
            ll += freq_part(d_.nsum(i), d_.years(i), lin1_(i) + eta1_(i)) +
                  sev_part(d_.nsum(i), d_.ssum(i), lin2_(i) + eta2_(i), psi_);
            // Density of theta, not eta: subtract the log Jacobian.
            eff += eta_density(eta1_(i), eta2_(i), s1_, s2_, rho_) - eta1_(i) - eta2_(i);
        }
        ll += psi_constant(d_, psi_) - lgamma_total_;
        draw.deviance = -2.0 * ll;
        draw.log_posterior = (cfg_.use_likelihood ? ll : 0.0) + eff + log_prior(draw.params, priors_);
        return draw;
    }

    const EstimationData& d_;
    const PriorSpec& priors_;
    const McmcConfig& cfg_;
    Xoshiro256pp rng_;
    int p_, n_;
    int intercept_ = -1;
    double lgamma_total_ = 0.0;
    Eigen::VectorXd b1_, b2_, lin1_, lin2_, eta1_, eta2_;
    double psi_ = 1.0, s1_ = 0.5, s2_ = 0.5, rho_ = 0.0;
    AdaptiveBlock block1_, block2_;
    AdaptiveStep psi_step_, sigma1_step_, sigma2_step_, rho_step_;
    AdaptiveStep nc_sigma1_step_, nc_sigma2_step_, nc_rho_step_;
    AdaptiveStep shift1_step_, shift2_step_;
    std::vector<AdaptiveStep> lat1_steps_, lat2_steps_;
};

} // namespace detail

/// Metropolis-within-Gibbs. `iterations` counts every sweep, burn-in
/// included; draws are kept every `thin` sweeps after burn-in.
inline PosteriorSample run_mcmc(const EstimationData& data, const PriorSpec& priors, const McmcConfig& config) {
    config.validate();
    priors.validate(data.dimension());
    if (data.subjects() == 0) throw ValidationError("run_mcmc: empty panel");
    detail::Sampler sampler(data, priors, config);
    return sampler.run();
}

// ---------------------------------------------------------------------------
// DIC and summaries

struct DicResult {
    double dic = 0.0;
    double mean_deviance = 0.0;
    double deviance_at_mean = 0.0;
    double effective_parameters = 0.0;
};

/// DIC = 2 mean(D) - D(posterior means of beta, psi2 and the latent effects),
/// with D = -2 log likelihood conditional on the latent effects.
inline DicResult dic(const PosteriorSample& sample, const EstimationData& data) {
    if (sample.draws.empty()) throw ValidationError("dic: empty posterior sample");
    const int p = data.dimension();
    std::vector<double> b1(p, 0.0), b2(p, 0.0);
    double psi = 0.0, mean_dev = 0.0;
    for (const auto& d : sample.draws) {
        for (int j = 0; j < p; ++j) {
            b1[j] += d.params.coeffs.beta1()[j];
            b2[j] += d.params.coeffs.beta2()[j];
        }
        psi += d.params.psi2;
        mean_dev += d.deviance;
    }
    const double m = static_cast<double>(sample.draws.size());
    for (int j = 0; j < p; ++j) {
        b1[j] /= m;
        b2[j] /= m;
    }
    ModelParams at_mean = sample.draws.front().params;
    at_mean.coeffs = CoefficientSet(data.labels, b1, b2);
    at_mean.psi2 = psi / m;
    DicResult out;
    out.mean_deviance = mean_dev / m;
    out.deviance_at_mean = -2.0 * log_likelihood(at_mean, sample.latent_mean, data);
    out.effective_parameters = out.mean_deviance - out.deviance_at_mean;
    out.dic = out.mean_deviance + out.effective_parameters;
    return out;
}

namespace detail {

// log of the integral over (x1, x2) ~ N(0, [[1, rho], [rho, 1]]) of one
// subject's likelihood, without the psi-only and lgamma constants. Laplace
// centering and scaling followed by a tensor Gauss-Hermite rule.
inline double log_subject_marginal(double nsum, double ssum, double years, double lin1, double lin2,
                                   const ModelParams& params, const GaussHermiteRule& rule) {
    const double s1 = params.effects.sigma1();
    const double s2 = params.effects.sigma2();
    const double rho = params.effects.rho();
    const double psi = params.psi2;
    const double one_m = 1.0 - rho * rho;
    const double log_norm = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(one_m);
    auto g = [&](double x1, double x2) {
        const double q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / one_m;
        return freq_part(nsum, years, lin1 + s1 * x1 - 0.5 * s1 * s1) +
               sev_part(nsum, ssum, lin2 + s2 * x2 - 0.5 * s2 * s2, psi) - 0.5 * q + log_norm;
    };
    Eigen::Vector2d x = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess;
    for (int it = 0; it < 100; ++it) {
        const double e1 = years * std::exp(lin1 + s1 * x(0) - 0.5 * s1 * s1);
        Eigen::Vector2d grad(s1 * (nsum - e1) - (x(0) - rho * x(1)) / one_m, -(x(1) - rho * x(0)) / one_m);
        hess << -s1 * s1 * e1 - 1.0 / one_m, rho / one_m, rho / one_m, -1.0 / one_m;
        if (nsum > 0.0) {
            const double e2 = ssum / (psi * std::exp(lin2 + s2 * x(1) - 0.5 * s2 * s2));
            grad(1) += s2 * (e2 - nsum / psi);
            hess(1, 1) -= s2 * s2 * e2;
        }
        Eigen::Vector2d step = -hess.ldlt().solve(grad);
        const double base = g(x(0), x(1));
        double t = 1.0;
        while (t > 1e-8 && !(g(x(0) + t * step(0), x(1) + t * step(1)) >= base)) t *= 0.5;
        x += t * step;
        if ((t * step).cwiseAbs().maxCoeff() < 1e-10) break;
    }
    const Eigen::Matrix2d cov = (-hess).inverse();
    const Eigen::Matrix2d chol = Eigen::LLT<Eigen::Matrix2d>(cov).matrixL();
    const double log_det = std::log(chol(0, 0)) + std::log(chol(1, 1));
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(rule.order() * rule.order()));
    for (int i = 0; i < rule.order(); ++i) {
        for (int j = 0; j < rule.order(); ++j) {
            const double u1 = rule.nodes()[i];
            const double u2 = rule.nodes()[j];
            const Eigen::Vector2d at = x + chol * Eigen::Vector2d(u1, u2);
            const double v = std::log(rule.weights()[i] * rule.weights()[j]) + g(at(0), at(1)) +
                             0.5 * (u1 * u1 + u2 * u2);
            terms.push_back(v);
            top = std::max(top, v);
        }
    }
    double sum = 0.0;
    for (double v : terms) sum += std::exp(v - top);
    return top + std::log(sum) + std::log(2.0 * std::numbers::pi) + log_det;
}

} // namespace detail

/// Observed-data log likelihood with the latent effects integrated out.
inline double log_marginal_likelihood(const ModelParams& params, const EstimationData& d, int order = 12) {
    params.validate();
    if (params.coeffs.labels() != d.labels) throw ValidationError("estimate: coefficient labels do not match the data");
    const auto& rule = GaussHermiteRule::get(order);
    const Eigen::VectorXd lin1 = d.x * detail::to_vector(params.coeffs.beta1());
    const Eigen::VectorXd lin2 = d.x * detail::to_vector(params.coeffs.beta2());
    double ll = detail::psi_constant(d, params.psi2) - detail::lgamma_total(d);
    for (int i = 0; i < d.subjects(); ++i) {
        const double term =
            detail::log_subject_marginal(d.nsum(i), d.ssum(i), d.years(i), lin1(i), lin2(i), params, rule);
        if (!std::isfinite(term)) {
            std::ostringstream os;
            os << "log_marginal_likelihood: non-finite contribution from subject '" << d.subject_ids[i] << "'";
            throw NumericalError(os.str());
        }
        ll += term;
    }
    return ll;
}

/// DIC with D = -2 log marginal likelihood. Plugs in the posterior means of
/// beta, psi2, sigma1, sigma2 and rho; at most `max_draws` evenly spaced
/// draws enter the mean deviance.
inline DicResult dic_marginal(const PosteriorSample& sample, const EstimationData& data, std::size_t max_draws = 1000,
                              int order = 12) {
    if (sample.draws.empty()) throw ValidationError("dic: empty posterior sample");
    const int p = data.dimension();
    std::vector<double> b1(p, 0.0), b2(p, 0.0);
    double psi = 0.0, s1 = 0.0, s2 = 0.0, rho = 0.0;
    for (const auto& d : sample.draws) {
        for (int j = 0; j < p; ++j) {
            b1[j] += d.params.coeffs.beta1()[j];
            b2[j] += d.params.coeffs.beta2()[j];
        }
        psi += d.params.psi2;
        s1 += d.params.effects.sigma1();
        s2 += d.params.effects.sigma2();
        rho += d.params.effects.rho();
    }
    const double m = static_cast<double>(sample.draws.size());
    for (int j = 0; j < p; ++j) {
        b1[j] /= m;
        b2[j] /= m;
    }
    ModelParams at_mean = sample.draws.front().params;
    at_mean.coeffs = CoefficientSet(data.labels, b1, b2);
    at_mean.psi2 = psi / m;
    at_mean.effects = EffectsSpec(s1 / m, s2 / m, rho / m);

    const std::size_t stride = std::max<std::size_t>(1, (sample.draws.size() + max_draws - 1) / max_draws);
    double mean_dev = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < sample.draws.size(); k += stride, ++used)
        mean_dev += -2.0 * log_marginal_likelihood(sample.draws[k].params, data, order);
    DicResult out;
    out.mean_deviance = mean_dev / static_cast<double>(used);
    out.deviance_at_mean = -2.0 * log_marginal_likelihood(at_mean, data, order);
    out.effective_parameters = out.mean_deviance - out.deviance_at_mean;
    out.dic = out.mean_deviance + out.effective_parameters;
    return out;
}

struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double median = 0.0;
    double std_error = 0.0;
    double lower = 0.0;  // equal-tailed
    double upper = 0.0;
    double hpd_lower = 0.0;
    double hpd_upper = 0.0;
};

/// Type-7 quantile of sorted data.
inline double sorted_quantile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw ValidationError("quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ParameterSummary summarize_column(std::string name, std::span<const double> values, double level = 0.95) {
    if (values.empty()) throw ValidationError("summarize: empty column '" + name + "'");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    ParameterSummary s;
    s.name = std::move(name);
    const double n = static_cast<double>(v.size());
    for (double x : v) s.mean += x;
    s.mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std_error = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.median = sorted_quantile(v, 0.5);
    s.lower = sorted_quantile(v, 0.5 * (1.0 - level));
    s.upper = sorted_quantile(v, 1.0 - 0.5 * (1.0 - level));
    // Shortest window holding ceil(level n) sorted draws.
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(level * n)));
    std::size_t best = 0;
    for (std::size_t i = 0; i + w <= v.size(); ++i)
        if (v[i + w - 1] - v[i] < v[best + w - 1] - v[best]) best = i;
    s.hpd_lower = v[best];
    s.hpd_upper = v[best + w - 1];
    return s;
}

/// Column names and per-draw values in export order:
/// freq_<label>..., sev_<label>..., inv_psi2, sigma1_sq, sigma2_sq, rho.
inline std::vector<std::string> posterior_columns(const std::vector<std::string>& labels) {
    std::vector<std::string> out;
    for (const auto& l : labels) out.push_back("freq_" + l);
    for (const auto& l : labels) out.push_back("sev_" + l);
    for (const char* c : {"inv_psi2", "sigma1_sq", "sigma2_sq", "rho"}) out.emplace_back(c);
    return out;
}

inline std::vector<double> posterior_row(const ModelParams& m) {
    std::vector<double> out(m.coeffs.beta1().begin(), m.coeffs.beta1().end());
    out.insert(out.end(), m.coeffs.beta2().begin(), m.coeffs.beta2().end());
    out.push_back(1.0 / m.psi2);
    out.push_back(m.effects.sigma1() * m.effects.sigma1());
    out.push_back(m.effects.sigma2() * m.effects.sigma2());
    out.push_back(m.effects.rho());
    return out;
}

inline std::vector<ParameterSummary> summarize_posterior(const PosteriorSample& sample, double level = 0.95) {
    if (sample.draws.empty()) throw ValidationError("summarize_posterior: empty sample");
    const auto names = posterior_columns(sample.labels);
    std::vector<std::vector<double>> cols(names.size());
    for (const auto& d : sample.draws) {
        const auto row = posterior_row(d.params);
        for (std::size_t j = 0; j < row.size(); ++j) cols[j].push_back(row[j]);
    }
    std::vector<ParameterSummary> out;
    for (std::size_t j = 0; j < names.size(); ++j) {
        if (sample.restricted && names[j] == "rho") continue;
        out.push_back(summarize_column(names[j], cols[j], level));
    }
    return out;
}

inline void write_posterior_csv(std::ostream& out, const PosteriorSample& sample) {
    const auto names = posterior_columns(sample.labels);
    for (const auto& n : names) out << n << ',';
    out << "log_posterior\n";
    for (const auto& d : sample.draws) {
        for (double v : posterior_row(d.params)) out << text::format(v) << ',';
        out << text::format(d.log_posterior) << '\n';
    }
}

inline void write_summary_csv(std::ostream& out, const std::vector<ParameterSummary>& rows) {
    out << "parameter,mean,median,std_error,lower95,upper95,hpd_lower95,hpd_upper95\n";
    for (const auto& s : rows)
        out << s.name << ',' << text::format(s.mean) << ',' << text::format(s.median) << ',' << text::format(s.std_error)
            << ',' << text::format(s.lower) << ',' << text::format(s.upper) << ',' << text::format(s.hpd_lower) << ','
            << text::format(s.hpd_upper) << '\n';
}

/// Parses a file written by write_posterior_csv back into parameter draws.
inline std::vector<ModelParams> read_posterior_csv(std::istream& in, const std::string& source = "<posterior>") {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
    const auto header = text::split(line, ',');
    std::vector<std::string> labels;
    for (const auto& h : header)
        if (h.rfind("freq_", 0) == 0) labels.push_back(h.substr(5));
    const auto expected = posterior_columns(labels);
    if (header.size() < expected.size() || !std::equal(expected.begin(), expected.end(), header.begin()))
        throw ValidationError(source + ": header does not match the posterior export layout");
    const std::size_t p = labels.size();
    std::vector<ModelParams> out;
    std::size_t ln = 1;
    while (std::getline(in, line)) {
        ++ln;
        if (text::trim(line).empty()) continue;
        const auto f = text::split(line, ',');
        if (f.size() != header.size())
            throw ValidationError(source + ":" + std::to_string(ln) + ": wrong number of fields");
        std::vector<double> v;
        for (std::size_t j = 0; j < expected.size(); ++j)
            v.push_back(text::parse_double(f[j], source + ":" + std::to_string(ln)));
        ModelParams m;
        m.coeffs = CoefficientSet(labels, std::vector<double>(v.begin(), v.begin() + p),
                                  std::vector<double>(v.begin() + p, v.begin() + 2 * p));
        m.psi2 = 1.0 / v[2 * p];
        m.effects = EffectsSpec::from_variances(v[2 * p + 1], v[2 * p + 2], v[2 * p + 3]);
        m.validate();
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace bmsdep
