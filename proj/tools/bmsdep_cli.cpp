// bmsdep command-line driver. Exit codes: 0 success, 1 runtime or numerical
// failure, 2 configuration or validation failure.

#include "bmsdep/bmsdep.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bmsdep;

namespace {

struct Options {
    std::string command;
    std::string config;
    std::string panel;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> rules;
    std::string rho_sweep;
    std::string r_vector;
    std::string posterior;
    bool levels = false;
    bool independent = false;
    std::optional<long> iterations, burn_in, thin;
    std::optional<long long> subjects;
    std::vector<std::string> argv;
};

std::ofstream open_out(const Options& o, const std::string& name) {
    fs::create_directories(o.out);
    const auto path = fs::path(o.out) / name;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    return out;
}

AppConfig config_of(const Options& o) {
    if (o.config.empty()) throw ValidationError("--config is required for '" + o.command + "'");
    return load_config(o.config);
}

std::vector<TransitionRule> rules_of(const Options& o, const AppConfig& cfg) {
    if (o.rules.empty()) return cfg.rules;
    std::vector<TransitionRule> out;
    for (const auto& r : o.rules) out.push_back(TransitionRule::parse(r));
    return out;
}

std::string rule_tag(const TransitionRule& r) {
    return std::to_string(r.levels()) + "_" + std::to_string(r.penalty());
}

void write_manifest(const Options& o, std::uint64_t seed, std::uint64_t config_hash) {
    nlohmann::ordered_json m;
    m["command"] = o.command;
    m["versions"] = {{"bmsdep", BMSDEP_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", BOOST_LIB_VERSION}};
    m["seed"] = seed;
    m["config"] = o.config;
    m["config_hash"] = config_hash;
    m["panel"] = o.panel;
    m["arguments"] = o.argv;
    auto out = open_out(o, "manifest.json");
    out << m.dump(2) << '\n';
}

int cmd_relativities(const Options& o) {
    const auto cfg = config_of(o);
    const auto effects = cfg.require_effects();
    const auto portfolio = cfg.portfolio();
    std::vector<double> sweep;
    if (!o.rho_sweep.empty()) sweep = text::parse_double_list(o.rho_sweep, "--rho-sweep");
    for (const auto& rule : rules_of(o, cfg)) {
        auto emit = [&](const EffectsSpec& e, const std::string& suffix) {
            const auto table = RelativityEngine(portfolio, e, rule, cfg.quad).table();
            auto csv = open_out(o, "relativities_" + rule_tag(rule) + suffix + ".csv");
            write_relativity_csv(csv, table);
            auto h = open_out(o, "hmse_" + rule_tag(rule) + suffix + ".csv");
            write_hmse_csv(h, table);
            std::cout << "rule " << rule.label() << " (z=" << rule.levels() << ")" << (suffix.empty() ? "" : " " + suffix)
                      << ": r_dep[z]=" << table.r_dep.back() << " r_indep[z]=" << table.r_indep.back()
                      << " r_tan[z]=" << table.r_tan.back() << " P(L=1)=" << table.p_level.front() << '\n';
        };
        if (sweep.empty()) {
            emit(effects, "");
        } else {
            for (double rho : sweep) emit(effects.with_rho(rho), "_rho" + text::format(rho));
        }
    }
    write_manifest(o, o.seed.value_or(0), cfg.hash);
    return 0;
}

int cmd_hmse(const Options& o) {
    const auto cfg = config_of(o);
    const auto rules = rules_of(o, cfg);
    if (rules.size() != 1) throw ValidationError("hmse: give exactly one --rule");
    if (o.r_vector.empty()) throw ValidationError("hmse: --r is required");
    const auto r = text::parse_double_list(o.r_vector, "--r");
    const RelativityEngine engine(cfg.portfolio(), cfg.require_effects(), rules.front(), cfg.quad);
    const auto h = engine.hmse(r);
    auto out = open_out(o, "hmse.csv");
    out << "hmse_raw,hmse_normalized\n" << text::format(h.raw) << ',' << text::format(h.normalized) << '\n';
    std::cout << "hmse raw=" << h.raw << " normalized=" << h.normalized << '\n';
    write_manifest(o, o.seed.value_or(0), cfg.hash);
    return 0;
}

int cmd_simulate(const Options& o) {
    const auto cfg = config_of(o);
    auto sim = cfg.sim;
    if (o.seed) sim.seed = *o.seed;
    if (o.subjects) sim.subjects = *o.subjects;
    const auto portfolio = cfg.portfolio();
    if (!o.posterior.empty()) {
        std::ifstream in(o.posterior);
        if (!in) throw ValidationError("cannot open posterior file '" + o.posterior + "'");
        const auto draws = read_posterior_csv(in, o.posterior);
        const auto totals = posterior_predictive_total(draws, portfolio, sim);
        auto out = open_out(o, "totals.csv");
        write_totals_csv(out, totals);
        std::cout << "wrote " << totals.size() << " predictive totals\n";
    } else if (o.levels) {
        const auto params = cfg.model();
        for (const auto& rule : rules_of(o, cfg)) {
            auto c = sim;
            c.rule = rule;
            c.validate();
            const auto res = simulate_levels(params, portfolio, c);
            auto out = open_out(o, "levels_" + rule_tag(rule) + ".csv");
            out << "level,p,p_se,r_dep,r_dep_se,r_indep,r_indep_se,r_tan,r_tan_se\n";
            for (int l = 0; l < res.levels(); ++l)
                out << l + 1 << ',' << text::format(res.p[l].value) << ',' << text::format(res.p[l].se) << ','
                    << text::format(res.r_dep[l].value) << ',' << text::format(res.r_dep[l].se) << ','
                    << text::format(res.r_indep[l].value) << ',' << text::format(res.r_indep[l].se) << ','
                    << text::format(res.r_tan[l].value) << ',' << text::format(res.r_tan[l].se) << '\n';
        }
        std::cout << "simulated " << sim.subjects << " stationary subjects per rule\n";
    } else {
        const auto panel = simulate_panel(cfg.model(), portfolio, sim);
        auto out = open_out(o, "panel.csv");
        write_panel(out, panel);
        std::cout << "simulated " << panel.subject_count() << " subjects x " << sim.years << " years\n";
    }
    write_manifest(o, sim.seed, cfg.hash);
    return 0;
}

int cmd_estimate(const Options& o) {
    const auto cfg = config_of(o);
    if (o.panel.empty()) throw ValidationError("estimate: --panel is required");
    const auto panel = ingest_panel(o.panel);
    const auto data = prepare_data(panel, cfg.design, cfg.coeffs ? cfg.coeffs->labels() : std::vector<std::string>{});
    auto mcmc = cfg.mcmc;
    if (o.seed) mcmc.seed = *o.seed;
    if (o.iterations) mcmc.iterations = *o.iterations;
    if (o.burn_in) mcmc.burn_in = *o.burn_in;
    if (o.thin) mcmc.thin = *o.thin;
    if (o.independent) mcmc.fixed_rho = 0.0;
    const auto priors = cfg.priors(data.dimension());
    const auto sample = run_mcmc(data, priors, mcmc);
    for (const auto& w : sample.warnings) std::cerr << "warning: " << w << '\n';
    {
        auto out = open_out(o, "posterior.csv");
        write_posterior_csv(out, sample);
    }
    const auto summary = summarize_posterior(sample);
    {
        auto out = open_out(o, "posterior_summary.csv");
        write_summary_csv(out, summary);
    }
    const auto d = dic(sample, data);
    const auto dm = dic_marginal(sample, data);
    {
        auto out = open_out(o, "dic.csv");
        out << "variant,dic,mean_deviance,deviance_at_mean,effective_parameters\n";
        for (const auto& [name, r] : {std::pair{"conditional", d}, std::pair{"marginal", dm}})
            out << name << ',' << text::format(r.dic) << ',' << text::format(r.mean_deviance) << ','
                << text::format(r.deviance_at_mean) << ',' << text::format(r.effective_parameters) << '\n';
    }
    {
        auto out = open_out(o, "acceptance.csv");
        out << "block,rate\n";
        for (const auto& [name, rate] : sample.acceptance) out << name << ',' << text::format(rate) << '\n';
    }
    std::cout << "kept " << sample.draws.size() << " draws; DIC conditional " << d.dic << " marginal " << dm.dic << '\n';
    for (const auto& s : summary) std::cout << "  " << s.name << " median " << s.median << " se " << s.std_error << '\n';
    write_manifest(o, mcmc.seed, cfg.hash);
    return 0;
}

int cmd_moments(const Options& o) {
    const auto cfg = config_of(o);
    const auto portfolio = cfg.portfolio();
    if (!o.posterior.empty()) {
        std::ifstream in(o.posterior);
        if (!in) throw ValidationError("cannot open posterior file '" + o.posterior + "'");
        const auto draws = read_posterior_csv(in, o.posterior);
        auto out = open_out(o, "moments_draws.csv");
        out << "draw,class,statistic,value\n";
        for (std::size_t d = 0; d < draws.size(); ++d) {
            const auto p = portfolio.rebuild(draws[d].coeffs);
            for (const auto& c : p)
                for (const auto& [name, value] : moment_rows(draws[d], c))
                    out << d + 1 << ',' << c.label << ',' << name << ',' << text::format(value) << '\n';
        }
    } else {
        auto out = open_out(o, "moments.csv");
        write_moments_csv(out, cfg.model(), portfolio);
    }
    std::cout << "wrote moments for " << portfolio.size() << " classes\n";
    write_manifest(o, o.seed.value_or(0), cfg.hash);
    return 0;
}

int cmd_summarize(const Options& o) {
    if (o.panel.empty()) throw ValidationError("summarize: --panel is required");
    const auto panel = ingest_panel(o.panel);
    write_summary(summarize_panel(panel), o.out);
    std::cout << "summarized " << panel.subject_count() << " subjects, " << panel.record_count() << " records\n";
    std::uint64_t hash = 0;
    if (!o.config.empty()) hash = load_config(o.config).hash;
    write_manifest(o, o.seed.value_or(0), hash);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bonus-Malus relativities under frequency-severity dependence"};
    app.set_version_flag("--version", std::string(BMSDEP_VERSION));
    app.require_subcommand(1);
    Options o;
    for (int i = 0; i < argc; ++i) o.argv.emplace_back(argv[i]);

    auto common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", o.config, "INI run configuration");
        if (needs_config) c->required();
        sub->add_option("--out", o.out, "output directory")->capture_default_str();
        sub->add_option("--seed", o.seed, "random seed (overrides the config)");
        return sub;
    };
    auto* rel = common(app.add_subcommand("relativities", "P(L=l) and the three relativity vectors per rule"), true);
    rel->add_option("--rule", o.rules, "transition rule z:h (repeatable)");
    rel->add_option("--rho-sweep", o.rho_sweep, "comma list of rho values");

    auto* hm = common(app.add_subcommand("hmse", "HMSE of a user relativity vector"), true);
    hm->add_option("--rule", o.rules, "transition rule z:h");
    hm->add_option("--r", o.r_vector, "comma list of z relativities, level 1 first")->required();

    auto* sim = common(app.add_subcommand("simulate", "simulate a panel, stationary levels or predictive totals"), true);
    sim->add_option("--rule", o.rules, "transition rule z:h (repeatable, with --levels)");
    sim->add_flag("--levels", o.levels, "simulate stationary BMS levels instead of a panel");
    sim->add_option("--posterior", o.posterior, "posterior CSV; emit predictive totals");
    sim->add_option("--subjects", o.subjects, "number of subjects (overrides the config)");

    auto* est = common(app.add_subcommand("estimate", "MCMC fit of a claims panel"), true);
    est->add_option("--panel", o.panel, "panel CSV")->required();
    est->add_option("--iterations", o.iterations, "total sweeps, burn-in included");
    est->add_option("--burn-in", o.burn_in, "burn-in sweeps");
    est->add_option("--thin", o.thin, "keep every n-th sweep");
    est->add_flag("--independent", o.independent, "fix rho at 0");

    auto* mom = common(app.add_subcommand("moments", "closed-form moments and correlations per class"), true);
    mom->add_option("--posterior", o.posterior, "posterior CSV; one block per draw");

    auto* sum = common(app.add_subcommand("summarize", "descriptive tables of a claims panel"), false);
    sum->add_option("--panel", o.panel, "panel CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*rel) {
            o.command = "relativities";
            return cmd_relativities(o);
        }
        if (*hm) {
            o.command = "hmse";
            return cmd_hmse(o);
        }
        if (*sim) {
            o.command = "simulate";
            return cmd_simulate(o);
        }
        if (*est) {
            o.command = "estimate";
            return cmd_estimate(o);
        }
        if (*mom) {
            o.command = "moments";
            return cmd_moments(o);
        }
        if (*sum) {
            o.command = "summarize";
            return cmd_summarize(o);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << " (section [" << e.section() << "])\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
