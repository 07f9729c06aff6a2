#pragma once

// Term breakdowns, aggregated verification reports and their JSON/CSV forms.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "iwl/stats.hpp"

namespace iwl {

using Json = nlohmann::ordered_json;

/// Labelled right-hand-side terms of one formula instance. The residual is
/// lhs minus the sum of the terms in their listed order.
struct TermBreakdown {
    std::string formula;
    std::vector<std::pair<std::string, double>> terms;
    double lhs = 0.0;
    double residual = 0.0;
    /// Quantities reported alongside the terms but not part of the sum.
    std::vector<std::pair<std::string, double>> diagnostics;

    void add(std::string label, double v) { terms.emplace_back(std::move(label), v); }
    void diagnose(std::string label, double v) { diagnostics.emplace_back(std::move(label), v); }

    double rhs() const {
        double s = 0.0;
        for (const auto& t : terms) s += t.second;
        return s;
    }
    void finalize() { residual = lhs - rhs(); }

    std::optional<double> find(const std::string& label) const {
        for (const auto& t : terms)
            if (t.first == label) return t.second;
        for (const auto& t : diagnostics)
            if (t.first == label) return t.second;
        return std::nullopt;
    }
    double term(const std::string& label) const {
        if (auto v = find(label)) return *v;
        throw std::out_of_range("no term '" + label + "' in " + formula);
    }
};

/// Cumulative term values after each grid step for one sample.
struct TermSeries {
    std::vector<std::string> labels;
    std::vector<double> times;
    std::vector<std::vector<double>> rows;  ///< per time: terms..., lhs, residual
};

struct Aggregate {
    std::size_t samples = 0;
    double mean_residual = 0.0;
    double standard_error = 0.0;
    double max_abs_residual = 0.0;
    double rms_residual = 0.0;
    double mean_lhs = 0.0;
    double rms_lhs = 0.0;
    std::vector<std::pair<std::string, double>> term_means;
};

inline Aggregate aggregate(const std::vector<TermBreakdown>& samples) {
    Aggregate a;
    a.samples = samples.size();
    if (samples.empty()) return a;
    std::vector<double> r, l;
    for (const auto& s : samples) {
        r.push_back(s.residual);
        l.push_back(s.lhs);
    }
    a.mean_residual = stats::mean(r);
    a.standard_error = stats::standard_error(r);
    a.max_abs_residual = stats::max_abs(r);
    a.rms_residual = stats::rms(r);
    a.mean_lhs = stats::mean(l);
    a.rms_lhs = stats::rms(l);
    for (std::size_t j = 0; j < samples.front().terms.size(); ++j) {
        double s = 0.0;
        for (const auto& b : samples) s += b.terms.at(j).second;
        a.term_means.emplace_back(samples.front().terms[j].first, s / static_cast<double>(samples.size()));
    }
    return a;
}

struct VerificationReport {
    std::string formula;
    std::string mode;
    std::uint64_t seed = 0;
    Json config = Json::object();
    std::vector<TermBreakdown> samples;
    Aggregate summary;
    /// Named scalar checks, e.g. the gap between two assemblies.
    std::vector<std::pair<std::string, double>> checks;
    std::vector<std::string> violations;
    std::optional<TermSeries> series;

    bool passed() const { return violations.empty(); }
    void summarize() { summary = aggregate(samples); }
    std::vector<double> residuals() const {
        std::vector<double> r;
        r.reserve(samples.size());
        for (const auto& s : samples) r.push_back(s.residual);
        return r;
    }
    std::optional<double> check(const std::string& name) const {
        for (const auto& c : checks)
            if (c.first == name) return c.second;
        return std::nullopt;
    }
};

inline Json to_json(const TermBreakdown& b) {
    Json j;
    j["formula"] = b.formula;
    j["lhs"] = b.lhs;
    j["residual"] = b.residual;
    Json t = Json::object();
    for (const auto& [k, v] : b.terms) t[k] = v;
    j["terms"] = t;
    if (!b.diagnostics.empty()) {
        Json d = Json::object();
        for (const auto& [k, v] : b.diagnostics) d[k] = v;
        j["diagnostics"] = d;
    }
    return j;
}

inline Json to_json(const Aggregate& a) {
    Json j;
    j["samples"] = a.samples;
    j["mean_residual"] = a.mean_residual;
    j["standard_error"] = a.standard_error;
    j["max_abs_residual"] = a.max_abs_residual;
    j["rms_residual"] = a.rms_residual;
    j["mean_lhs"] = a.mean_lhs;
    j["rms_lhs"] = a.rms_lhs;
    Json t = Json::object();
    for (const auto& [k, v] : a.term_means) t[k] = v;
    j["term_means"] = t;
    return j;
}

/// JSON form of a report. At most `max_samples` breakdowns are listed; the
/// summary always covers all of them.
inline Json to_json(const VerificationReport& r, std::size_t max_samples = 200) {
    Json j;
    j["formula"] = r.formula;
    j["mode"] = r.mode;
    j["seed"] = r.seed;
    j["passed"] = r.passed();
    j["violations"] = r.violations;
    j["summary"] = to_json(r.summary);
    Json c = Json::object();
    for (const auto& [k, v] : r.checks) c[k] = v;
    j["checks"] = c;
    j["config"] = r.config;
    Json s = Json::array();
    for (std::size_t i = 0; i < r.samples.size() && i < max_samples; ++i) s.push_back(to_json(r.samples[i]));
    j["samples"] = s;
    return j;
}

/// Doubles are written with 17 significant digits so reruns can be compared
/// byte for byte.
inline void write_terms_csv(const VerificationReport& r, std::ostream& os) {
    os << std::setprecision(17);
    if (r.series) {
        const TermSeries& s = *r.series;
        os << "time";
        for (const auto& l : s.labels) os << "," << l;
        os << ",lhs,residual\n";
        for (std::size_t i = 0; i < s.times.size(); ++i) {
            os << s.times[i];
            for (double v : s.rows[i]) os << "," << v;
            os << "\n";
        }
        return;
    }
    // no time series: one row per sample
    os << "sample";
    if (!r.samples.empty())
        for (const auto& t : r.samples.front().terms) os << "," << t.first;
    os << ",lhs,residual\n";
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        os << i;
        for (const auto& t : r.samples[i].terms) os << "," << t.second;
        os << "," << r.samples[i].lhs << "," << r.samples[i].residual << "\n";
    }
}

}  // namespace iwl
