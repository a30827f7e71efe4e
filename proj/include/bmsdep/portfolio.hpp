#pragma once

// A-priori risk classes and longitudinal claims panels.

#include "bmsdep/error.hpp"
#include "bmsdep/text.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace bmsdep {

// ---------------------------------------------------------------------------
// Design and coefficients

/// A categorical covariate. The first level is the baseline (no dummy).
struct Factor {
    std::string name;
    std::vector<std::string> levels;

    bool has_level(const std::string& level) const {
        return std::find(levels.begin(), levels.end(), level) != levels.end();
    }
    bool operator==(const Factor&) const = default;
};

/// Regression coefficients for the log-linked frequency and severity means.
/// labels[i] names position i of both vectors; a non-baseline covariate level
/// uses the coefficient whose label equals the level name.
class CoefficientSet {
public:
    static constexpr const char* kIntercept = "Intercept";

    CoefficientSet() = default;
    CoefficientSet(std::vector<std::string> labels, std::vector<double> beta1, std::vector<double> beta2)
        : labels_(std::move(labels)), beta1_(std::move(beta1)), beta2_(std::move(beta2)) {
        if (beta1_.size() != labels_.size() || beta2_.size() != labels_.size())
            throw ValidationError("coefficients: beta1, beta2 and labels must have equal length");
        std::set<std::string> seen;
        for (const auto& l : labels_) {
            if (l.empty()) throw ValidationError("coefficients: empty label");
            if (!seen.insert(l).second) throw ValidationError("coefficients: duplicate label '" + l + "'");
        }
    }

    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<double>& beta1() const noexcept { return beta1_; }
    const std::vector<double>& beta2() const noexcept { return beta2_; }
    std::vector<double>& beta1() noexcept { return beta1_; }
    std::vector<double>& beta2() noexcept { return beta2_; }
    std::size_t size() const noexcept { return labels_.size(); }

    /// Position of `label`, or -1.
    int index_of(const std::string& label) const {
        const auto it = std::find(labels_.begin(), labels_.end(), label);
        return it == labels_.end() ? -1 : static_cast<int>(it - labels_.begin());
    }

    bool operator==(const CoefficientSet&) const = default;

private:
    std::vector<std::string> labels_;
    std::vector<double> beta1_;
    std::vector<double> beta2_;
};

struct DesignSpec {
    std::vector<Factor> factors;

    /// Entity type x coverage layout: Intercept + 5 entity dummies + 2 coverage
    /// dummies, baselines Miscellaneous and Coverage1.
    static DesignSpec entity_coverage() {
        return DesignSpec{{{"entity", {"Miscellaneous", "City", "County", "School", "Town", "Village"}},
                           {"coverage", {"Coverage1", "Coverage2", "Coverage3"}}}};
    }

    std::vector<std::string> factor_names() const {
        std::vector<std::string> out;
        for (const auto& f : factors) out.push_back(f.name);
        return out;
    }

    /// Dummy-coded design row for one combination of levels (one per factor).
    std::vector<double> row(const CoefficientSet& coeffs, std::span<const std::string> levels) const {
        if (levels.size() != factors.size()) {
            std::ostringstream os;
            os << "design: expected " << factors.size() << " covariate levels, got " << levels.size();
            throw ValidationError(os.str());
        }
        std::vector<double> x(coeffs.size(), 0.0);
        const int intercept = coeffs.index_of(CoefficientSet::kIntercept);
        if (intercept < 0) throw ValidationError("design: coefficients lack an 'Intercept' entry");
        x[intercept] = 1.0;
        for (std::size_t f = 0; f < factors.size(); ++f) {
            const auto& factor = factors[f];
            const auto& level = levels[f];
            if (!factor.has_level(level))
                throw ValidationError("design: unknown level '" + level + "' for covariate '" + factor.name + "'");
            if (level == factor.levels.front()) continue;
            const int idx = coeffs.index_of(level);
            if (idx < 0) throw ValidationError("design: no coefficient for covariate level '" + level + "'");
            x[idx] = 1.0;
        }
        return x;
    }

    bool operator==(const DesignSpec&) const = default;
};

inline double linear_predictor(std::span<const double> x, std::span<const double> beta) {
    return std::inner_product(x.begin(), x.end(), beta.begin(), 0.0);
}

// ---------------------------------------------------------------------------
// Risk classes

struct RiskClass {
    std::string label;
    std::vector<std::string> levels;
    double lambda1 = 1.0;  // a-priori frequency mean
    double lambda2 = 1.0;  // a-priori severity mean
    double weight = 0.0;
};

using ClassDef = std::vector<std::string>;

class Portfolio {
public:
    Portfolio() = default;
    Portfolio(DesignSpec design, std::vector<RiskClass> classes)
        : design_(std::move(design)), classes_(std::move(classes)) {}

    const DesignSpec& design() const noexcept { return design_; }
    const std::vector<RiskClass>& classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return classes_.size(); }
    const RiskClass& operator[](std::size_t k) const { return classes_[k]; }
    auto begin() const noexcept { return classes_.begin(); }
    auto end() const noexcept { return classes_.end(); }

    const RiskClass& find(const std::string& label) const {
        for (const auto& c : classes_)
            if (c.label == label) return c;
        throw ValidationError("portfolio: no class labelled '" + label + "'");
    }

    std::vector<double> weights() const {
        std::vector<double> w;
        for (const auto& c : classes_) w.push_back(c.weight);
        return w;
    }

    /// Copy with every lambda2 multiplied by `factor`.
    Portfolio scaled_severity(double factor) const {
        Portfolio out = *this;
        for (auto& c : out.classes_) c.lambda2 *= factor;
        return out;
    }

    /// Copy with the same classes and weights but replaced weights.
    Portfolio reweighted(std::span<const double> weights) const;

    /// Same classes and weights, lambdas recomputed from `coeffs`.
    Portfolio rebuild(const CoefficientSet& coeffs) const;

private:
    DesignSpec design_;
    std::vector<RiskClass> classes_;
};

namespace detail {

inline std::vector<double> normalize_weights(std::span<const double> weights, double tolerance) {
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("portfolio: weights must be non-negative and finite");
        sum += w;
    }
    if (!(std::abs(sum - 1.0) <= tolerance)) {
        std::ostringstream os;
        os.precision(17);
        os << "portfolio: weights sum to " << sum << ", expected 1 within " << tolerance;
        throw ValidationError(os.str());
    }
    std::vector<double> out(weights.begin(), weights.end());
    for (double& w : out) w /= sum;
    // Push the rounding residue into the largest weight so the sum is exactly 1.
    if (!out.empty()) {
        const auto largest = std::max_element(out.begin(), out.end()) - out.begin();
        for (int pass = 0; pass < 4; ++pass) {
            const double total = std::accumulate(out.begin(), out.end(), 0.0);
            if (total == 1.0) break;
            out[largest] += 1.0 - total;
        }
    }
    return out;
}

inline std::string class_label(std::span<const std::string> levels) {
    std::string label;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (i) label += ':';
        label += levels[i];
    }
    return label;
}

} // namespace detail

/// Risk classes with lambda = exp(x beta) under dummy coding. Weights must
/// sum to 1 within 1e-9 and are then renormalized.
inline Portfolio build_classes(const CoefficientSet& coeffs, const DesignSpec& design,
                               std::span<const ClassDef> class_defs, std::span<const double> weights) {
    if (class_defs.size() != weights.size()) throw ValidationError("portfolio: one weight per class is required");
    if (class_defs.empty()) throw ValidationError("portfolio: no classes");
    const auto w = detail::normalize_weights(weights, 1e-9);
    std::vector<RiskClass> classes;
    classes.reserve(class_defs.size());
    for (std::size_t k = 0; k < class_defs.size(); ++k) {
        const auto x = design.row(coeffs, class_defs[k]);
        RiskClass rc;
        rc.levels = class_defs[k];
        rc.label = detail::class_label(rc.levels);
        rc.lambda1 = std::exp(linear_predictor(x, coeffs.beta1()));
        rc.lambda2 = std::exp(linear_predictor(x, coeffs.beta2()));
        rc.weight = w[k];
        if (!(rc.lambda1 > 0.0) || !(rc.lambda2 > 0.0) || !std::isfinite(rc.lambda1) || !std::isfinite(rc.lambda2))
            throw ValidationError("portfolio: class '" + rc.label + "' has a non-positive or overflowing mean");
        classes.push_back(std::move(rc));
    }
    return Portfolio(design, std::move(classes));
}

inline Portfolio Portfolio::rebuild(const CoefficientSet& coeffs) const {
    std::vector<ClassDef> defs;
    for (const auto& c : classes_) defs.push_back(c.levels);
    return build_classes(coeffs, design_, defs, weights());
}

inline Portfolio Portfolio::reweighted(std::span<const double> weights) const {
    if (weights.size() != classes_.size()) throw ValidationError("portfolio: one weight per class is required");
    const auto w = detail::normalize_weights(weights, 1e-9);
    Portfolio out = *this;
    for (std::size_t k = 0; k < w.size(); ++k) out.classes_[k].weight = w[k];
    return out;
}

/// Every combination of factor levels, first factor varying slowest.
inline std::vector<ClassDef> all_class_defs(const DesignSpec& design) {
    std::vector<ClassDef> out{{}};
    for (const auto& factor : design.factors) {
        std::vector<ClassDef> next;
        for (const auto& prefix : out)
            for (const auto& level : factor.levels) {
                auto def = prefix;
                def.push_back(level);
                next.push_back(std::move(def));
            }
        out = std::move(next);
    }
    return out;
}

/// Joint weights as the product of per-factor marginal proportions, in
/// all_class_defs order. Each marginal is normalized first, so percentages work.
inline std::vector<double> product_weights(const std::vector<std::vector<double>>& marginals) {
    std::vector<double> out{1.0};
    for (const auto& m : marginals) {
        const double total = std::accumulate(m.begin(), m.end(), 0.0);
        if (m.empty() || !(total > 0.0)) throw ValidationError("portfolio: marginal proportions must have a positive sum");
        std::vector<double> next;
        for (double prefix : out)
            for (double p : m) {
                if (!(p >= 0.0)) throw ValidationError("portfolio: marginal proportions must be non-negative");
                next.push_back(prefix * p / total);
            }
        out = std::move(next);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Claims panel

struct Observation {
    int year = 0;
    long long n = 0;
    double s = 0.0;

    /// m = s / n, and 0 when there are no claims.
    double average_severity() const { return n > 0 ? s / static_cast<double>(n) : 0.0; }
    bool operator==(const Observation&) const = default;
};

struct Subject {
    std::string id;
    std::vector<std::string> covariates;
    std::vector<Observation> history;  // strictly increasing years
    bool operator==(const Subject&) const = default;
};

class ClaimsPanel {
public:
    ClaimsPanel() = default;
    explicit ClaimsPanel(std::vector<std::string> covariate_names) : covariate_names_(std::move(covariate_names)) {}

    const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
    const std::vector<Subject>& subjects() const noexcept { return subjects_; }
    std::size_t subject_count() const noexcept { return subjects_.size(); }
    std::size_t record_count() const noexcept {
        std::size_t n = 0;
        for (const auto& s : subjects_) n += s.history.size();
        return n;
    }
    bool empty() const noexcept { return subjects_.empty(); }

    /// Appends a validated subject.
    void add_subject(Subject subject) {
        if (subject.covariates.size() != covariate_names_.size())
            throw ValidationError("panel: subject '" + subject.id + "' has the wrong number of covariates");
        for (std::size_t i = 0; i < subject.history.size(); ++i) {
            const auto& o = subject.history[i];
            if (o.n < 0 || !(o.s >= 0.0) || !std::isfinite(o.s))
                throw ValidationError("panel: subject '" + subject.id + "' has a negative count or amount");
            if (o.n == 0 && o.s != 0.0)
                throw ValidationError("panel: subject '" + subject.id + "' has s > 0 with n = 0");
            if (i > 0 && !(subject.history[i - 1].year < o.year))
                throw ValidationError("panel: years of subject '" + subject.id + "' are not strictly increasing");
        }
        subjects_.push_back(std::move(subject));
    }

    bool operator==(const ClaimsPanel&) const = default;

private:
    std::vector<std::string> covariate_names_;
    std::vector<Subject> subjects_;
};

/// Column mapping for panel CSV files.
struct PanelSchema {
    std::string subject = "subject";
    std::string year = "year";
    std::string count = "n";
    std::string amount = "s";
    std::vector<std::string> covariates{"entity", "coverage"};
};

/// Reads a panel CSV. All invalid rows are collected and reported together,
/// each with its line number.
inline ClaimsPanel read_panel(std::istream& in, const PanelSchema& schema = {}, const std::string& source = "<panel>") {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(source + ": empty file (missing header)");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    const auto header = text::split(line, ',');
    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ValidationError(source + ": header lacks column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_subject = column(schema.subject);
    const std::size_t c_year = column(schema.year);
    const std::size_t c_n = column(schema.count);
    const std::size_t c_s = column(schema.amount);
    std::vector<std::size_t> c_cov;
    for (const auto& name : schema.covariates) c_cov.push_back(column(name));

    struct Row {
        std::size_t line;
        Observation obs;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, Subject> subjects;
    std::unordered_map<std::string, std::vector<std::size_t>> lines_of;
    std::vector<std::string> problems;
    auto problem = [&](std::size_t ln, const std::string& msg) {
        problems.push_back(source + ":" + std::to_string(ln) + ": " + msg);
    };

    std::size_t ln = 1;
    while (std::getline(in, line)) {
        ++ln;
        if (text::trim(line).empty()) continue;
        const auto fields = text::split(line, ',');
        if (fields.size() != header.size()) {
            problem(ln, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
            continue;
        }
        long long year = 0;
        long long n = 0;
        double s = 0.0;
        if (fields[c_subject].empty()) { problem(ln, "empty subject id"); continue; }
        if (!text::try_parse_int(fields[c_year], year)) { problem(ln, "year '" + fields[c_year] + "' is not an integer"); continue; }
        if (!text::try_parse_int(fields[c_n], n) || n < 0) { problem(ln, "count '" + fields[c_n] + "' is not a non-negative integer"); continue; }
        if (!text::try_parse_double(fields[c_s], s) || !(s >= 0.0) || !std::isfinite(s)) { problem(ln, "amount '" + fields[c_s] + "' is not a non-negative number"); continue; }
        if (n == 0 && s > 0.0) { problem(ln, "amount s > 0 with zero claims"); continue; }

        std::vector<std::string> cov;
        for (auto c : c_cov) cov.push_back(fields[c]);
        const auto& id = fields[c_subject];
        auto [it, inserted] = subjects.try_emplace(id);
        if (inserted) {
            order.push_back(id);
            it->second.id = id;
            it->second.covariates = cov;
        } else if (it->second.covariates != cov) {
            problem(ln, "covariates of subject '" + id + "' change over time");
            continue;
        }
        auto& hist = it->second.history;
        const bool duplicate = std::any_of(hist.begin(), hist.end(), [&](const Observation& o) { return o.year == year; });
        if (duplicate) {
            problem(ln, "duplicate (subject, year) = (" + id + ", " + std::to_string(year) + ")");
            continue;
        }
        hist.push_back({static_cast<int>(year), n, s});
    }
    if (!problems.empty()) {
        std::string msg = "panel has " + std::to_string(problems.size()) + " invalid row(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ValidationError(msg);
    }
    ClaimsPanel panel(schema.covariates);
    for (const auto& id : order) {
        auto& subject = subjects[id];
        std::sort(subject.history.begin(), subject.history.end(),
                  [](const Observation& a, const Observation& b) { return a.year < b.year; });
        panel.add_subject(std::move(subject));
    }
    return panel;
}

inline ClaimsPanel ingest_panel(const std::filesystem::path& path, const PanelSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open panel file '" + path.string() + "'");
    return read_panel(in, schema, path.string());
}

/// Writes the panel in the ingestion format (subject,year,n,s,<covariates>).
inline void write_panel(std::ostream& out, const ClaimsPanel& panel) {
    out << "subject,year,n,s";
    for (const auto& c : panel.covariate_names()) out << ',' << c;
    out << '\n';
    for (const auto& subject : panel.subjects())
        for (const auto& o : subject.history) {
            out << subject.id << ',' << o.year << ',' << o.n << ',' << text::format(o.s);
            for (const auto& c : subject.covariates) out << ',' << c;
            out << '\n';
        }
}

// ---------------------------------------------------------------------------
// Descriptive summaries

struct SummaryCell {
    long long records = 0;
    long long claims = 0;
    double amount = 0.0;

    double average_frequency() const {
        return records > 0 ? static_cast<double>(claims) / static_cast<double>(records)
                           : std::numeric_limits<double>::quiet_NaN();
    }
    /// Claim-weighted average severity; NaN without claims.
    double average_severity() const {
        return claims > 0 ? amount / static_cast<double>(claims) : std::numeric_limits<double>::quiet_NaN();
    }
    void add(const Observation& o) {
        ++records;
        claims += o.n;
        amount += o.s;
    }
    bool operator==(const SummaryCell&) const = default;
};

struct PanelSummary {
    std::vector<int> years;
    /// frequency n -> year -> number of subject-years with N = n
    std::map<long long, std::map<int, long long>> frequency_by_year;
    /// (covariate, level) -> year -> cell
    std::map<std::pair<std::string, std::string>, std::map<int, SummaryCell>> by_level;
    /// frequency n -> year -> cell (average severity per claim for N = n)
    std::map<long long, std::map<int, SummaryCell>> severity_by_frequency;
    std::map<int, SummaryCell> by_year;
    SummaryCell overall;

    bool operator==(const PanelSummary&) const = default;
};

inline PanelSummary summarize_panel(const ClaimsPanel& panel) {
    if (panel.empty()) throw ValidationError("summarize_panel: empty panel");
    PanelSummary out;
    std::set<int> years;
    for (const auto& subject : panel.subjects()) {
        for (const auto& o : subject.history) {
            years.insert(o.year);
            ++out.frequency_by_year[o.n][o.year];
            for (std::size_t c = 0; c < subject.covariates.size(); ++c)
                out.by_level[{panel.covariate_names()[c], subject.covariates[c]}][o.year].add(o);
            if (o.n > 0) out.severity_by_frequency[o.n][o.year].add(o);
            out.by_year[o.year].add(o);
            out.overall.add(o);
        }
    }
    out.years.assign(years.begin(), years.end());
    return out;
}

namespace detail {

inline std::string format_or_nan(double v) { return std::isnan(v) ? std::string("NaN") : text::format(v); }

inline void open_csv(std::ofstream& out, const std::filesystem::path& path) {
    out.open(path);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
}

} // namespace detail

/// Writes frequency_by_year.csv, level_by_year.csv, severity_by_frequency.csv
/// and totals.csv into `dir`.
inline void write_summary(const PanelSummary& summary, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const double total_records = static_cast<double>(summary.overall.records);
    {
        std::ofstream out;
        detail::open_csv(out, dir / "frequency_by_year.csv");
        out << "frequency";
        for (int y : summary.years) out << ',' << y;
        out << ",count,percent\n";
        for (const auto& [n, by_year] : summary.frequency_by_year) {
            long long count = 0;
            out << n;
            for (int y : summary.years) {
                const auto it = by_year.find(y);
                const long long c = it == by_year.end() ? 0 : it->second;
                count += c;
                out << ',' << c;
            }
            out << ',' << count << ',' << text::format(100.0 * static_cast<double>(count) / total_records) << '\n';
        }
    }
    {
        std::ofstream out;
        detail::open_csv(out, dir / "level_by_year.csv");
        out << "covariate,level,year,records,claims,amount,average_frequency,average_severity\n";
        for (const auto& [key, by_year] : summary.by_level)
            for (const auto& [y, cell] : by_year)
                out << key.first << ',' << key.second << ',' << y << ',' << cell.records << ',' << cell.claims << ','
                    << text::format(cell.amount) << ',' << detail::format_or_nan(cell.average_frequency()) << ','
                    << detail::format_or_nan(cell.average_severity()) << '\n';
    }
    {
        std::ofstream out;
        detail::open_csv(out, dir / "severity_by_frequency.csv");
        out << "frequency,year,records,average_severity\n";
        for (const auto& [n, by_year] : summary.severity_by_frequency) {
            SummaryCell all;
            for (const auto& [y, cell] : by_year) {
                out << n << ',' << y << ',' << cell.records << ',' << detail::format_or_nan(cell.average_severity()) << '\n';
                all.records += cell.records;
                all.claims += cell.claims;
                all.amount += cell.amount;
            }
            out << n << ",all," << all.records << ',' << detail::format_or_nan(all.average_severity()) << '\n';
        }
    }
    {
        std::ofstream out;
        detail::open_csv(out, dir / "totals.csv");
        out << "year,records,claims,amount,average_frequency,average_severity\n";
        auto row = [&](const std::string& label, const SummaryCell& cell) {
            out << label << ',' << cell.records << ',' << cell.claims << ',' << text::format(cell.amount) << ','
                << detail::format_or_nan(cell.average_frequency()) << ',' << detail::format_or_nan(cell.average_severity())
                << '\n';
        };
        for (const auto& [y, cell] : summary.by_year) row(std::to_string(y), cell);
        row("all", summary.overall);
    }
}

} // namespace bmsdep
