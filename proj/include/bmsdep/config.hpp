#pragma once

// INI run configuration. Sections and keys:
//
//   [coefficients] labels, beta1, beta2 (comma lists), inv_psi2 or psi2
//   [effects]      sigma1_sq or sigma1, sigma2_sq or sigma2, rho
//   [portfolio]    factors (default entity,coverage), <factor> = levels with the
//                  baseline first, <factor>_weights = marginal proportions, or
//                  joint_weights = one weight per level combination
//   [bms]          rules (z:h list), quadrature_order, scheme (conditional|tensor2d)
//   [mcmc]         iterations, burn_in, thin, seed, *_step, fixed_rho,
//                  prior_mean, prior_variance, c0, d0, e0, f0, g0, h0
//   [simulate]     subjects, years, seed, burn_in, initial_level, first_year, threads
//
// Unknown sections or keys are rejected.

#include "bmsdep/bms_chain.hpp"
#include "bmsdep/error.hpp"
#include "bmsdep/estimate.hpp"
#include "bmsdep/integrate.hpp"
#include "bmsdep/moments.hpp"
#include "bmsdep/portfolio.hpp"
#include "bmsdep/random_effects.hpp"
#include "bmsdep/simulate.hpp"
#include "bmsdep/text.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bmsdep {

struct AppConfig {
    std::optional<CoefficientSet> coeffs;
    std::optional<double> psi2;
    std::optional<EffectsSpec> effects;
    DesignSpec design = DesignSpec::entity_coverage();
    std::optional<std::vector<double>> joint_weights;
    std::vector<TransitionRule> rules{{10, 1}, {10, 2}, {10, 3}};
    QuadratureSpec quad;
    McmcConfig mcmc;
    double prior_mean = 0.0;
    double prior_variance = 100.0;
    PriorSpec prior_scalars;  // c0..h0 only; normal blocks sized later
    SimConfig sim;
    std::uint64_t hash = 0;

    const CoefficientSet& require_coefficients() const {
        if (!coeffs) throw ConfigError("coefficients", "config: missing [coefficients] section");
        return *coeffs;
    }
    const EffectsSpec& require_effects() const {
        if (!effects) throw ConfigError("effects", "config: missing [effects] section");
        return *effects;
    }

    ModelParams model() const {
        ModelParams m;
        m.coeffs = require_coefficients();
        m.effects = require_effects();
        if (!psi2) throw ConfigError("coefficients", "config: [coefficients] needs inv_psi2 or psi2");
        m.psi2 = *psi2;
        return m;
    }

    Portfolio portfolio() const {
        if (!joint_weights) throw ConfigError("portfolio", "config: missing [portfolio] section");
        return build_classes(require_coefficients(), design, all_class_defs(design), *joint_weights);
    }

    PriorSpec priors(int p) const {
        PriorSpec s = prior_scalars;
        s.a1 = s.a2 = Eigen::VectorXd::Constant(p, prior_mean);
        s.A1 = s.A2 = prior_variance * Eigen::MatrixXd::Identity(p, p);
        return s;
    }
};

namespace detail {

using Section = boost::property_tree::ptree;

class SectionReader {
public:
    SectionReader(const Section& s, std::string name) : s_(s), name_(std::move(name)) {}

    bool has(const std::string& key) const { return s_.find(key) != s_.not_found(); }

    std::string raw(const std::string& key) const {
        const auto it = s_.find(key);
        if (it == s_.not_found()) throw ConfigError(name_, "config: [" + name_ + "] lacks key '" + key + "'");
        used_.insert(key);
        return it->second.data();
    }
    double number(const std::string& key) const { return text::parse_double(raw(key), where(key)); }
    long long integer(const std::string& key) const { return text::parse_int(raw(key), where(key)); }
    std::vector<double> numbers(const std::string& key) const { return text::parse_double_list(raw(key), where(key)); }
    std::vector<std::string> words(const std::string& key) const {
        std::vector<std::string> out;
        for (auto& w : text::split(raw(key), ','))
            if (!w.empty()) out.push_back(w);
        return out;
    }

    void reject_unused() const {
        for (const auto& [key, value] : s_)
            if (!used_.count(key)) throw ValidationError("config: unknown key '" + key + "' in [" + name_ + "]");
    }

private:
    std::string where(const std::string& key) const { return "config [" + name_ + "] " + key; }

    const Section& s_;
    std::string name_;
    mutable std::set<std::string> used_;
};

} // namespace detail

inline AppConfig parse_config(const std::string& content, const std::string& source = "<config>") {
    boost::property_tree::ptree tree;
    try {
        std::istringstream in(content);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ValidationError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    static const std::set<std::string> known{"coefficients", "effects", "portfolio", "bms", "mcmc", "simulate"};
    for (const auto& [name, body] : tree) {
        if (!known.count(name)) throw ValidationError(source + ": unknown section [" + name + "]");
        if (!body.data().empty()) throw ValidationError(source + ": key '" + name + "' outside any section");
    }
    auto section = [&](const char* name) -> std::optional<detail::SectionReader> {
        const auto it = tree.find(name);
        if (it == tree.not_found()) return std::nullopt;
        return detail::SectionReader(it->second, name);
    };

    AppConfig cfg;
    cfg.hash = text::fnv1a(content);

    if (auto s = section("coefficients")) {
        const auto labels = s->words("labels");
        cfg.coeffs = CoefficientSet(labels, s->numbers("beta1"), s->numbers("beta2"));
        if (s->has("inv_psi2") && s->has("psi2")) throw ValidationError("config: give inv_psi2 or psi2, not both");
        if (s->has("inv_psi2")) cfg.psi2 = 1.0 / s->number("inv_psi2");
        if (s->has("psi2")) cfg.psi2 = s->number("psi2");
        if (cfg.psi2 && !(*cfg.psi2 > 0.0 && std::isfinite(*cfg.psi2)))
            throw ValidationError("config: psi2 must be positive");
        s->reject_unused();
    }

    if (auto s = section("effects")) {
        auto sd = [&](const std::string& k) {
            if (s->has(k + "_sq")) {
                const double v = s->number(k + "_sq");
                if (!(v > 0.0)) throw ValidationError("config: [effects] " + k + "_sq must be positive");
                return std::sqrt(v);
            }
            return s->number(k);
        };
        const double s1 = sd("sigma1");
        const double s2 = sd("sigma2");
        cfg.effects = EffectsSpec(s1, s2, s->number("rho"));
        s->reject_unused();
    }

    if (auto s = section("portfolio")) {
        if (s->has("factors")) {
            DesignSpec d;
            for (const auto& f : s->words("factors")) d.factors.push_back({f, s->words(f)});
            cfg.design = std::move(d);
        } else {
            for (auto& f : cfg.design.factors)
                if (s->has(f.name)) f.levels = s->words(f.name);
        }
        for (const auto& f : cfg.design.factors)
            if (f.levels.empty()) throw ValidationError("config: factor '" + f.name + "' has no levels");
        if (s->has("joint_weights")) {
            cfg.joint_weights = s->numbers("joint_weights");
            const auto expected = all_class_defs(cfg.design).size();
            if (cfg.joint_weights->size() != expected) {
                std::ostringstream os;
                os << "config: joint_weights needs " << expected << " entries, got " << cfg.joint_weights->size();
                throw ValidationError(os.str());
            }
            // Accept percentages as well as proportions.
            double total = 0.0;
            for (double w : *cfg.joint_weights) total += w;
            if (total > 0.0)
                for (double& w : *cfg.joint_weights) w /= total;
        } else {
            std::vector<std::vector<double>> marginals;
            for (const auto& f : cfg.design.factors) {
                const auto m = s->numbers(f.name + "_weights");
                if (m.size() != f.levels.size())
                    throw ValidationError("config: " + f.name + "_weights needs one entry per level");
                marginals.push_back(m);
            }
            cfg.joint_weights = product_weights(marginals);
        }
        s->reject_unused();
    }

    if (auto s = section("bms")) {
        if (s->has("rules")) {
            cfg.rules.clear();
            for (const auto& r : s->words("rules")) cfg.rules.push_back(TransitionRule::parse(r));
        }
        if (s->has("quadrature_order")) cfg.quad.order = static_cast<int>(s->integer("quadrature_order"));
        if (s->has("scheme")) {
            const auto v = s->raw("scheme");
            if (v == "conditional") cfg.quad.scheme = Scheme::conditional;
            else if (v == "tensor2d") cfg.quad.scheme = Scheme::tensor2d;
            else throw ValidationError("config: [bms] scheme must be conditional or tensor2d");
        }
        cfg.quad.validate();
        s->reject_unused();
    }

    if (auto s = section("mcmc")) {
        auto& m = cfg.mcmc;
        if (s->has("iterations")) m.iterations = static_cast<long>(s->integer("iterations"));
        if (s->has("burn_in")) m.burn_in = static_cast<long>(s->integer("burn_in"));
        if (s->has("thin")) m.thin = static_cast<long>(s->integer("thin"));
        if (s->has("seed")) m.seed = static_cast<std::uint64_t>(s->integer("seed"));
        if (s->has("beta_step")) m.beta_step = s->number("beta_step");
        if (s->has("psi_step")) m.psi_step = s->number("psi_step");
        if (s->has("sigma_step")) m.sigma_step = s->number("sigma_step");
        if (s->has("rho_step")) m.rho_step = s->number("rho_step");
        if (s->has("latent_step")) m.latent_step = s->number("latent_step");
        if (s->has("fixed_rho")) m.fixed_rho = s->number("fixed_rho");
        if (s->has("prior_mean")) cfg.prior_mean = s->number("prior_mean");
        if (s->has("prior_variance")) cfg.prior_variance = s->number("prior_variance");
        auto& p = cfg.prior_scalars;
        for (auto [key, dst] : {std::pair{"c0", &p.c0}, {"d0", &p.d0}, {"e0", &p.e0}, {"f0", &p.f0}, {"g0", &p.g0},
                                {"h0", &p.h0}})
            if (s->has(key)) *dst = s->number(key);
        if (!(cfg.prior_variance > 0.0)) throw ValidationError("config: [mcmc] prior_variance must be positive");
        m.validate();
        s->reject_unused();
    }

    if (auto s = section("simulate")) {
        auto& c = cfg.sim;
        if (s->has("subjects")) c.subjects = s->integer("subjects");
        if (s->has("years")) c.years = static_cast<int>(s->integer("years"));
        if (s->has("seed")) c.seed = static_cast<std::uint64_t>(s->integer("seed"));
        if (s->has("burn_in")) c.burn_in = static_cast<int>(s->integer("burn_in"));
        if (s->has("initial_level")) c.initial_level = static_cast<int>(s->integer("initial_level"));
        if (s->has("first_year")) c.first_year = static_cast<int>(s->integer("first_year"));
        if (s->has("threads")) c.threads = static_cast<unsigned>(s->integer("threads"));
        c.validate();
        s->reject_unused();
    }
    return cfg;
}

inline AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(content, path.string());
}

} // namespace bmsdep
