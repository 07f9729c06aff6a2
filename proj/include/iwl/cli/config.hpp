#pragma once

// Scenario configuration: a JSON document of nested tables. `parse_config`
// validates it against the catalog and fills every default; `to_json` echoes
// the normalized form, which parses back to the same configuration.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "iwl/cli/catalog.hpp"

namespace iwl::cli {

inline const std::vector<std::string>& formulas() {
    static const std::vector<std::string> f{"thm1",  "thm2",  "thm3",  "thm4",    "coro1",     "coro1-alt",
                                            "coro2", "coro3", "coro4", "leibniz", "lift-check"};
    return f;
}

inline const std::vector<std::string>& sweep_parameters() {
    static const std::vector<std::string> p{"dt", "steps", "n_law", "n_copy", "worlds", "paths"};
    return p;
}

inline const std::vector<std::string>& sweep_statistics() {
    static const std::vector<std::string> s{"rms_residual",   "mean_abs_residual", "max_abs_residual",
                                            "standard_error", "abs_mean_residual"};
    return s;
}

struct SweepConfig {
    std::string parameter = "dt";
    std::vector<double> levels;
    std::string statistic = "rms_residual";
    std::optional<std::pair<double, double>> expect_slope;
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::string formula;
    std::string mode = "mc-law";  ///< thm3 only: mc-law or pathwise-empirical
    std::uint64_t seed = 1;
    double t_start = 0.0, t_end = 1.0;
    std::size_t steps = 100;
    std::optional<double> window_s, window_t;
    std::size_t paths = 200, n_law = 100, n_copy = 100, worlds = 100;
    std::string covariation = "generator-exact";
    std::size_t workers = 1;

    /// {template, params, x0, x0_sd, common_brownian (null if unset), jumps}
    Json state;
    /// null, "state", or {template, params, y0, shared_brownian, jumps}
    Json driver;
    Json field;          ///< normalized field spec or null
    Json test_function;  ///< normalized test-function spec or null

    bool corrections = true;
    bool force_indicator = false;
    double delta_shift = 0.0;
    bool record_series = false;
    std::size_t cases = 50;    ///< leibniz / lift-check instances
    std::size_t atoms = 10;    ///< atoms of the random measures
    double fd_step = 1e-4;     ///< finite-difference step
    double tolerance = 1e-5;   ///< lift-check pass threshold; leibniz defaults to 1e-6

    double se_mult = 3.0, c_sqrt_dt = 5.0, scale = 1.0, abs_tol = 0.0, oracle_gap = 1e-10;

    std::optional<SweepConfig> sweep;
    std::string output_dir;
    std::string registry;  ///< custom preset file, as given

    double dt() const { return (t_end - t_start) / static_cast<double>(steps); }
};

namespace detail {

/// Reads `j[key]` with type checks; records the key as consumed.
class Reader {
public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key) && !j_[key].is_null(); }
    const Json& raw(const std::string& key) {
        seen_.push_back(key);
        static const Json null_value;
        return j_.contains(key) ? j_[key] : null_value;
    }

    double number(const std::string& key, double fallback) {
        seen_.push_back(key);
        if (!has(key)) return fallback;
        if (!j_[key].is_number()) throw ConfigError(at(key), "expected a number");
        const double v = j_[key].get<double>();
        if (!std::isfinite(v)) throw ConfigError(at(key), "must be finite");
        return v;
    }
    std::size_t count(const std::string& key, std::size_t fallback) {
        seen_.push_back(key);
        if (!has(key)) return fallback;
        if (!j_[key].is_number_integer() || j_[key].get<long long>() < 0)
            throw ConfigError(at(key), "expected a non-negative integer");
        return j_[key].get<std::size_t>();
    }
    bool flag(const std::string& key, bool fallback) {
        seen_.push_back(key);
        if (!has(key)) return fallback;
        if (!j_[key].is_boolean()) throw ConfigError(at(key), "expected true or false");
        return j_[key].get<bool>();
    }
    std::string text(const std::string& key, const std::string& fallback) {
        seen_.push_back(key);
        if (!has(key)) return fallback;
        if (!j_[key].is_string()) throw ConfigError(at(key), "expected a string");
        return j_[key].get<std::string>();
    }
    std::string choice(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed) {
        const std::string v = text(key, fallback);
        for (const auto& a : allowed)
            if (a == v) return v;
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw ConfigError(at(key), "'" + v + "' is not one of: " + list);
    }
    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        seen_.push_back(key);
        if (!has(key)) return fallback;
        const Json& a = j_[key];
        if (!a.is_array()) throw ConfigError(at(key), "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(a[i].get<double>());
        }
        return out;
    }
    /// Rejects keys that were never read.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) throw ConfigError(at(k), "unknown key");
    }

private:
    const Json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline Json normalize_jumps(const Catalog& cat, const Json& j, const std::string& path) {
    if (j.is_null()) return Json::array();
    if (!j.is_array()) throw ConfigError(path, "expected an array of jump sources");
    Json out = Json::array();
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        Reader r(j[i], p);
        Json s;
        s["rate"] = r.number("rate", 1.0);
        if (s["rate"].get<double>() < 0.0) throw ConfigError(p + ".rate", "must be non-negative");
        s["marks"] = cat.normalize(Category::Marks, r.has("marks") ? r.raw("marks") : Json("constant"), p + ".marks");
        s["direction"] = r.numbers("direction", {1.0});
        s["common"] = r.flag("common", false);
        s["label"] = r.text("label", "jump" + std::to_string(i));
        r.finish();
        out.push_back(s);
    }
    return out;
}

/// Coefficient spec plus the process-level keys around it.
inline Json normalize_process(const Catalog& cat, const Json& j, const std::string& path, bool is_driver) {
    Reader r(j, path);
    Json spec = Json::object();
    if (r.has("template")) spec["template"] = r.raw("template");
    if (j.contains("params")) spec["params"] = r.raw("params");
    if (!spec.contains("template")) throw ConfigError(path + ".template", "missing coefficient template");
    Json out = cat.normalize(Category::Coefficients, spec, path);
    const char* start = is_driver ? "y0" : "x0";
    if (r.has(start)) out[start] = r.numbers(start, {});
    else out[start] = r.raw(start);  // null: zeros of the template's dimension
    if (!is_driver) {
        out["x0_sd"] = r.number("x0_sd", 0.0);
        if (out["x0_sd"].get<double>() < 0.0) throw ConfigError(path + ".x0_sd", "must be non-negative");
        if (r.has("common_brownian")) out["common_brownian"] = r.count("common_brownian", 0);
        else {
            r.raw("common_brownian");
            out["common_brownian"] = nullptr;
        }
    } else {
        out["shared_brownian"] = r.count("shared_brownian", 0);
    }
    out["jumps"] = normalize_jumps(cat, j.contains("jumps") ? r.raw("jumps") : Json(), path + ".jumps");
    r.finish();
    return out;
}

inline std::string location(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Validates a parsed document; throws ConfigError naming the field.
inline ScenarioConfig parse_config(const Json& doc, const Catalog& cat) {
    using detail::Reader;
    ScenarioConfig c;
    Reader r(doc, "");
    c.registry = r.text("registry", "");  // loaded by load_config
    c.name = r.text("name", c.name);
    if (!r.has("formula")) throw ConfigError("formula", "missing; one of thm1..thm4, coro1..coro4, leibniz, lift-check");
    c.formula = r.choice("formula", "", formulas());
    c.mode = r.choice("mode", c.mode, {"mc-law", "pathwise-empirical"});
    c.seed = r.count("seed", 1);
    c.covariation = r.choice("covariation", c.covariation, {"generator-exact", "realized"});
    c.workers = r.count("workers", c.workers);

    if (r.has("time")) {
        Reader t(r.raw("time"), "time");
        c.t_start = t.number("t_start", c.t_start);
        c.t_end = t.number("t_end", c.t_end);
        if (!(c.t_end > c.t_start)) throw ConfigError("time.t_end", "must exceed t_start");
        if (t.has("steps") && t.has("dt")) throw ConfigError("time.dt", "give steps or dt, not both");
        if (t.has("dt")) {
            const double dt = t.number("dt", 0.0);
            if (!(dt > 0.0)) throw ConfigError("time.dt", "must be positive");
            const double n = (c.t_end - c.t_start) / dt;
            if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n))
                throw ConfigError("time.dt", "must divide t_end - t_start");
            c.steps = static_cast<std::size_t>(std::llround(n));
        } else {
            c.steps = t.count("steps", c.steps);
            t.number("dt", 0.0);
        }
        if (c.steps == 0) throw ConfigError("time.steps", "must be at least 1");
        if (t.has("window")) {
            const auto w = t.numbers("window", {});
            if (w.size() != 2 || !(w[0] < w[1]) || w[0] < c.t_start || w[1] > c.t_end)
                throw ConfigError("time.window", "expected [s, t] with t_start <= s < t <= t_end");
            c.window_s = w[0];
            c.window_t = w[1];
        } else {
            t.raw("window");
        }
        t.finish();
    }
    if (r.has("sizes")) {
        Reader s(r.raw("sizes"), "sizes");
        c.paths = s.count("paths", c.paths);
        c.n_law = s.count("n_law", c.n_law);
        c.n_copy = s.count("n_copy", c.n_copy);
        c.worlds = s.count("worlds", c.worlds);
        s.finish();
    }

    if (r.has("state")) c.state = detail::normalize_process(cat, r.raw("state"), "state", false);
    else r.raw("state");
    if (r.has("driver")) {
        const Json& d = r.raw("driver");
        if (d.is_string()) {
            if (d != "state") throw ConfigError("driver", "expected \"state\" or a coefficient spec");
            c.driver = "state";
        } else {
            c.driver = detail::normalize_process(cat, d, "driver", true);
        }
    } else {
        r.raw("driver");
    }
    if (r.has("field")) c.field = cat.normalize(Category::Field, r.raw("field"), "field");
    else r.raw("field");
    if (r.has("test_function")) c.test_function = cat.normalize(Category::TestFunction, r.raw("test_function"), "test_function");
    else r.raw("test_function");

    if (c.formula == "leibniz") c.tolerance = 1e-6;
    if (r.has("options")) {
        Reader o(r.raw("options"), "options");
        c.corrections = o.flag("corrections", c.corrections);
        c.force_indicator = o.flag("force_indicator", c.force_indicator);
        c.delta_shift = o.number("delta_shift", c.delta_shift);
        c.record_series = o.flag("record_series", c.record_series);
        c.cases = o.count("cases", c.cases);
        c.atoms = o.count("atoms", c.atoms);
        c.fd_step = o.number("fd_step", c.fd_step);
        c.tolerance = o.number("tolerance", c.tolerance);
        if (!(c.fd_step > 0.0)) throw ConfigError("options.fd_step", "must be positive");
        if (!(c.tolerance > 0.0)) throw ConfigError("options.tolerance", "must be positive");
        o.finish();
    }
    if (r.has("thresholds")) {
        Reader t(r.raw("thresholds"), "thresholds");
        c.se_mult = t.number("se_mult", c.se_mult);
        c.c_sqrt_dt = t.number("c_sqrt_dt", c.c_sqrt_dt);
        c.scale = t.number("scale", c.scale);
        c.abs_tol = t.number("abs_tol", c.abs_tol);
        c.oracle_gap = t.number("oracle_gap", c.oracle_gap);
        for (const char* k : {"se_mult", "c_sqrt_dt", "scale", "abs_tol", "oracle_gap"})
            if (t.number(k, 0.0) < 0.0) throw ConfigError(std::string("thresholds.") + k, "must be non-negative");
        t.finish();
    }
    if (r.has("sweep")) {
        Reader s(r.raw("sweep"), "sweep");
        SweepConfig sw;
        sw.parameter = s.choice("parameter", sw.parameter, sweep_parameters());
        sw.levels = s.numbers("levels", {});
        if (sw.levels.size() < 3) throw ConfigError("sweep.levels", "needs at least 3 levels");
        for (double l : sw.levels)
            if (!(l > 0.0)) throw ConfigError("sweep.levels", "levels must be positive");
        sw.statistic = s.choice("statistic", sw.statistic, sweep_statistics());
        if (s.has("expect_slope")) {
            const auto e = s.numbers("expect_slope", {});
            if (e.size() != 2 || !(e[0] <= e[1])) throw ConfigError("sweep.expect_slope", "expected [lo, hi]");
            sw.expect_slope = std::make_pair(e[0], e[1]);
        } else {
            s.raw("expect_slope");
        }
        s.finish();
        c.sweep = sw;
    } else {
        r.raw("sweep");
    }
    if (r.has("output")) {
        Reader o(r.raw("output"), "output");
        c.output_dir = o.text("dir", "");
        o.finish();
    }
    r.finish();
    if (c.output_dir.empty()) c.output_dir = "runs/" + c.name;

    // formula-specific requirements
    const std::string& f = c.formula;
    const bool needs_state = f != "lift-check" && f != "leibniz";
    if (needs_state && c.state.is_null()) throw ConfigError("state", "missing; formula " + f + " needs a state process");
    if (f == "thm1" && c.test_function.is_null()) throw ConfigError("test_function", "missing; thm1 needs g");
    if (f != "thm1" && c.field.is_null()) throw ConfigError("field", "missing; formula " + f + " needs a field");
    if (f == "thm4" || f == "coro2" || f == "coro4") {
        bool common_jump = false;
        for (const auto& j : c.state["jumps"]) common_jump = common_jump || j["common"].get<bool>();
        if (c.state["params"].contains("common")) common_jump = common_jump || c.state["params"]["common"].get<bool>();
        if (c.state["common_brownian"].is_null() && !common_jump)
            throw ConfigError("state.common_brownian",
                              "missing; formula " + f +
                                  " needs the common/idiosyncratic split (number of common Brownian coordinates, "
                                  "or a jump source with common = true)");
    }
    if (c.sweep && c.formula == "leibniz") throw ConfigError("sweep", "leibniz has no convergence parameter");
    return c;
}

inline Json to_json(const ScenarioConfig& c) {
    Json j;
    j["name"] = c.name;
    j["formula"] = c.formula;
    j["mode"] = c.mode;
    j["seed"] = c.seed;
    Json t;
    t["t_start"] = c.t_start;
    t["t_end"] = c.t_end;
    t["steps"] = c.steps;
    if (c.window_s) t["window"] = {*c.window_s, *c.window_t};
    j["time"] = t;
    j["sizes"] = {{"paths", c.paths}, {"n_law", c.n_law}, {"n_copy", c.n_copy}, {"worlds", c.worlds}};
    j["covariation"] = c.covariation;
    j["workers"] = c.workers;
    j["state"] = c.state;
    j["driver"] = c.driver;
    j["field"] = c.field;
    j["test_function"] = c.test_function;
    j["options"] = {{"corrections", c.corrections}, {"force_indicator", c.force_indicator},
                    {"delta_shift", c.delta_shift}, {"record_series", c.record_series},
                    {"cases", c.cases},             {"atoms", c.atoms},
                    {"fd_step", c.fd_step},         {"tolerance", c.tolerance}};
    j["thresholds"] = {{"se_mult", c.se_mult}, {"c_sqrt_dt", c.c_sqrt_dt}, {"scale", c.scale},
                       {"abs_tol", c.abs_tol}, {"oracle_gap", c.oracle_gap}};
    if (c.sweep) {
        Json s;
        s["parameter"] = c.sweep->parameter;
        s["levels"] = c.sweep->levels;
        s["statistic"] = c.sweep->statistic;
        if (c.sweep->expect_slope) s["expect_slope"] = {c.sweep->expect_slope->first, c.sweep->expect_slope->second};
        j["sweep"] = s;
    } else {
        j["sweep"] = nullptr;
    }
    j["output"] = {{"dir", c.output_dir}};
    if (!c.registry.empty()) j["registry"] = c.registry;
    return j;
}

/// Parses JSON text; syntax errors carry line and column.
inline Json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        std::string msg = e.what();
        const auto pos = msg.find("parse error");
        if (pos != std::string::npos) msg = msg.substr(pos);
        throw ConfigError(source, "syntax error at " + detail::location(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + msg);
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Reads a config file. A "registry" key (path relative to the config)
/// loads custom presets into `cat` before validation.
inline ScenarioConfig load_config(const std::string& path, Catalog& cat) {
    const Json doc = parse_json_text(read_file(path), path);
    if (doc.is_object() && doc.contains("registry") && !doc["registry"].is_null()) {
        if (!doc["registry"].is_string()) throw ConfigError("registry", "expected a file path");
        std::string reg = doc["registry"].get<std::string>();
        const auto slash = path.find_last_of('/');
        if (!reg.empty() && reg.front() != '/' && slash != std::string::npos) reg = path.substr(0, slash + 1) + reg;
        cat.load_registry(parse_json_text(read_file(reg), reg), reg);
    }
    return parse_config(doc, cat);
}

}  // namespace iwl::cli
