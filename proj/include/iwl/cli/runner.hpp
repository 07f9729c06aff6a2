#pragma once

// Turns a ScenarioConfig into verifier calls and run-directory artifacts:
// report.json, terms.csv and manifest.json.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "iwl/cli/config.hpp"
#include "iwl/fields.hpp"
#include "iwl/verifier/flows.hpp"
#include "iwl/verifier/pathwise.hpp"

#ifndef IWL_VERSION
#define IWL_VERSION "unknown"
#endif

namespace iwl::cli {

struct Process {
    Coefficients coeffs;
    std::vector<double> start;
};

/// Coefficients of a normalized state or driver block, with extra jump
/// sources and the common/shared Brownian count applied.
inline Process build_process(const Catalog& cat, const Json& p, const std::string& path, bool is_driver) {
    Process out;
    out.coeffs = cat.coefficients(Json{{"template", p["template"]}, {"params", p["params"]}}, path);
    Coefficients& c = out.coeffs;
    for (std::size_t i = 0; i < p["jumps"].size(); ++i) {
        const Json& j = p["jumps"][i];
        const std::string jp = path + ".jumps[" + std::to_string(i) + "]";
        auto dir = j["direction"].get<std::vector<double>>();
        if (dir.size() != c.dim) throw ConfigError(jp + ".direction", "length must equal the process dimension");
        JumpSource s;
        s.nu = cat.marks(j["marks"], jp + ".marks");
        s.nu.mass = j["rate"].get<double>();
        s.beta = additive_jump(dir);
        s.common = j["common"].get<bool>();
        s.label = j["label"].get<std::string>();
        c.jumps.push_back(std::move(s));
    }
    const char* key = is_driver ? "shared_brownian" : "common_brownian";
    if (!p[key].is_null()) {
        const std::size_t k = p[key].get<std::size_t>();
        if (k > c.brownian_dim)
            throw ConfigError(path + "." + key, "exceeds the Brownian dimension " + std::to_string(c.brownian_dim));
        c.common_brownian = k;
    }
    const char* start = is_driver ? "y0" : "x0";
    if (p[start].is_null()) {
        out.start.assign(c.dim, 0.0);
    } else {
        out.start = p[start].get<std::vector<double>>();
        if (out.start.size() != c.dim)
            throw ConfigError(path + "." + start, "length must equal the process dimension " + std::to_string(c.dim));
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return out;
}

inline Thresholds thresholds_of(const ScenarioConfig& c) {
    Thresholds t;
    t.se_mult = c.se_mult;
    t.c_sqrt_dt = c.c_sqrt_dt;
    t.scale = c.scale;
    t.abs_tol = c.abs_tol;
    t.oracle_gap = c.oracle_gap;
    return t;
}

inline Window window_of(const ScenarioConfig& c) {
    Window w;
    w.s = c.window_s;
    w.t = c.window_t;
    return w;
}

inline CovariationMode covariation_of(const ScenarioConfig& c) {
    return c.covariation == "realized" ? CovariationMode::Realized : CovariationMode::GeneratorExact;
}

namespace detail {

inline VerificationReport run_thm1(const Catalog& cat, const ScenarioConfig& c) {
    const Process x = build_process(cat, c.state, "state", false);
    const SmoothFnPtr g = cat.test_function(c.test_function, "test_function");
    if (g->dim() != x.coeffs.dim) throw ConfigError("test_function", "dimension differs from the state dimension");
    PathwiseOptions o;
    o.paths = c.paths;
    o.seed = c.seed;
    o.covariation = covariation_of(c);
    o.window = window_of(c);
    o.workers = worker_count(c.workers);
    o.record_series = c.record_series;
    const TimeGrid grid = build_time_grid(c.t_start, c.t_end, c.steps);
    VerificationReport r = verify_ito_pathwise(*g, x.coeffs, x.start, grid, o);
    iwl::detail::pathwise_rule(r.samples, thresholds_of(c), c.dt(), r.violations);
    return r;
}

inline VerificationReport run_thm2(const Catalog& cat, const ScenarioConfig& c) {
    const Process x = build_process(cat, c.state, "state", false);
    PathPair pp;
    pp.x = x.coeffs;
    pp.x0 = x.start;
    std::size_t ydim = x.coeffs.dim;
    if (c.driver.is_object()) {
        const Process y = build_process(cat, c.driver, "driver", true);
        pp.y = y.coeffs;
        pp.y0 = y.start;
        pp.shared_brownian = y.coeffs.common_brownian;
        pp.y->common_brownian = 0;
        ydim = y.coeffs.dim;
    }
    const RandomField F = cat.field(c.field, "field", {x.coeffs.dim, ydim});
    PathwiseOptions o;
    o.paths = c.paths;
    o.seed = c.seed;
    o.covariation = covariation_of(c);
    o.window = window_of(c);
    o.workers = worker_count(c.workers);
    o.record_series = c.record_series;
    const TimeGrid grid = build_time_grid(c.t_start, c.t_end, c.steps);
    VerificationReport r = verify_ito_wentzell_pathwise(F, pp, grid, o);
    iwl::detail::pathwise_rule(r.samples, thresholds_of(c), c.dt(), r.violations);
    return r;
}

inline FlowScenario flow_scenario(const Catalog& cat, const ScenarioConfig& c) {
    FlowScenario sc;
    sc.label = c.name;
    const Process x = build_process(cat, c.state, "state", false);
    sc.model.particle = x.coeffs;
    sc.model.x0 = x.start;
    sc.model.x0_sd = c.state["x0_sd"].get<double>();
    std::size_t ydim = 0;
    if (c.driver.is_string()) {
        sc.model.driver_is_reference = true;
        ydim = x.coeffs.dim;
    } else if (c.driver.is_object()) {
        const Process y = build_process(cat, c.driver, "driver", true);
        sc.model.driver = y.coeffs;
        sc.model.y0 = y.start;
        ydim = y.coeffs.dim;
    }
    sc.field = cat.field(c.field, "field", {x.coeffs.dim, ydim});
    return sc;
}

inline FlowOptions flow_options(const ScenarioConfig& c) {
    FlowOptions o;
    o.t_start = c.t_start;
    o.t_end = c.t_end;
    o.steps = c.steps;
    o.n_law = c.n_law;
    o.n_copy = c.n_copy;
    o.worlds = c.worlds;
    o.seed = c.seed;
    o.covariation = covariation_of(c);
    o.window = window_of(c);
    o.workers = c.workers;
    o.corrections = c.corrections;
    o.force_indicator = c.force_indicator;
    o.delta_shift = c.delta_shift;
    o.record_series = c.record_series;
    o.thresholds = thresholds_of(c);
    return o;
}

inline std::vector<double> normal_vector(Engine& rng, std::size_t n) {
    Normal nd(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

inline VerificationReport run_leibniz(const Catalog& cat, const ScenarioConfig& c) {
    const RandomField F = cat.field(c.field, "field", {1, 1});
    bool any = false;
    for (const auto& t : F.terms) any = any || (t.layer == Layer::Diffusion && t.coord == 0 && t.measure);
    if (!any) throw ConfigError("field", "leibniz needs a diffusion term with a measure factor on driver coordinate 0");
    if (c.atoms == 0) throw ConfigError("options.atoms", "must be at least 1");
    const TimeGrid grid = build_time_grid(c.t_start, c.t_end, c.steps);
    const Coefficients bm = constant_coefficients({0.0}, {1.0}, 1);
    VerificationReport r;
    r.formula = "leibniz";
    r.mode = "pathwise";
    r.seed = c.seed;
    r.samples.resize(c.cases);
    parallel_for(c.cases, worker_count(c.workers), [&](std::size_t i) {
        auto [drv, g2] = sample_drivers(grid, 1, {}, derive_seed(c.seed, {stream::kDriver, i}));
        const auto W = simulate_semimartingale(bm, std::vector<double>{0.0}, drv, g2);
        Engine rng = make_engine(c.seed, {stream::kScenario, i});
        const auto x = normal_vector(rng, c.atoms * F.measure_dim);
        const auto h = normal_vector(rng, x.size());
        const LeibnizResult L = leibniz_check(F, W, x, h, c.fd_step);
        TermBreakdown b;
        b.formula = "leibniz";
        b.lhs = L.finite_difference;
        b.add("int Df dW", L.analytic);
        b.finalize();
        r.samples[i] = std::move(b);
    });
    r.summarize();
    r.checks.emplace_back("max_abs_discrepancy", r.summary.max_abs_residual);
    if (!(r.summary.max_abs_residual <= c.tolerance))
        r.violations.push_back("max discrepancy " + iwl::detail::fmt(r.summary.max_abs_residual) + " exceeds " +
                               iwl::detail::fmt(c.tolerance));
    return r;
}

inline VerificationReport run_lift_check(const Catalog& cat, const ScenarioConfig& c) {
    const RandomField F = cat.field(c.field, "field", {1, 1});
    if (!F.has_measure()) throw ConfigError("field", "lift-check needs a term with a measure factor");
    if (c.atoms == 0) throw ConfigError("options.atoms", "must be at least 1");
    std::vector<const CylindricalFn*> fns;
    for (const auto& t : F.terms)
        if (t.measure) fns.push_back(&*t.measure);
    VerificationReport r;
    r.formula = "lift-check";
    r.mode = "deterministic";
    r.seed = c.seed;
    r.samples.resize(c.cases * fns.size());
    parallel_for(r.samples.size(), worker_count(c.workers), [&](std::size_t i) {
        const std::size_t p = i % fns.size(), k = i / fns.size();
        Engine rng = make_engine(c.seed, {stream::kScenario, k});
        const auto atoms = normal_vector(rng, c.atoms * F.measure_dim);
        const LiftCheck L = fd_lift_check(*fns[p], empirical_measure(atoms, F.measure_dim), c.fd_step);
        TermBreakdown b;
        b.formula = "lift-check";
        b.lhs = L.max_abs_error;
        b.diagnose("term", static_cast<double>(p));
        b.diagnose("worst_atom", static_cast<double>(L.worst_atom));
        b.finalize();
        r.samples[i] = std::move(b);
    });
    r.summarize();
    r.checks.emplace_back("max_abs_error", r.summary.max_abs_residual);
    if (!(r.summary.max_abs_residual <= c.tolerance))
        r.violations.push_back("max lift error " + iwl::detail::fmt(r.summary.max_abs_residual) + " exceeds " +
                               iwl::detail::fmt(c.tolerance));
    return r;
}

}  // namespace detail

/// Runs the configured formula. Configuration problems surface as
/// ConfigError (or std::invalid_argument from the verifiers).
inline VerificationReport verify(const Catalog& cat, const ScenarioConfig& c) {
    const std::string& f = c.formula;
    if (f == "thm1") return detail::run_thm1(cat, c);
    if (f == "thm2") return detail::run_thm2(cat, c);
    if (f == "leibniz") return detail::run_leibniz(cat, c);
    if (f == "lift-check") return detail::run_lift_check(cat, c);
    const FlowScenario sc = detail::flow_scenario(cat, c);
    const FlowOptions o = detail::flow_options(c);
    if (f == "thm3")
        return verify_full_measure(sc, c.mode == "mc-law" ? LawMode::MCLaw : LawMode::PathwiseEmpirical, o);
    if (f == "thm4") return verify_conditional(sc, o);
    if (f == "coro1") return verify_time_space_measure(sc, flow::Form::Coro1, o);
    if (f == "coro1-alt") return verify_time_space_measure(sc, flow::Form::Coro1Alt, o);
    if (f == "coro2") return verify_time_space_measure(sc, flow::Form::Coro2, o);
    if (f == "coro3") return verify_poisson(sc, flow::Form::Coro3, o);
    if (f == "coro4") return verify_poisson(sc, flow::Form::Coro4, o);
    throw ConfigError("formula", "unsupported formula '" + f + "'");
}

inline double statistic(const VerificationReport& r, const std::string& name) {
    const Aggregate& a = r.summary;
    if (name == "rms_residual") return a.rms_residual;
    if (name == "max_abs_residual") return a.max_abs_residual;
    if (name == "standard_error") return a.standard_error;
    if (name == "abs_mean_residual") return std::abs(a.mean_residual);
    if (name == "mean_abs_residual") {
        double s = 0.0;
        for (const auto& b : r.samples) s += std::abs(b.residual);
        return r.samples.empty() ? 0.0 : s / static_cast<double>(r.samples.size());
    }
    throw ConfigError("sweep.statistic", "unknown statistic '" + name + "'");
}

/// Copy of `c` with the sweep parameter set to `level`.
inline ScenarioConfig at_level(const ScenarioConfig& c, const std::string& parameter, double level) {
    ScenarioConfig out = c;
    auto count = [&](const char* what) {
        const double r = std::round(level);
        if (std::abs(level - r) > 1e-9 || r < 1.0)
            throw ConfigError("sweep.levels", std::string(what) + " levels must be positive integers");
        return static_cast<std::size_t>(r);
    };
    if (parameter == "dt") {
        const double n = (c.t_end - c.t_start) / level;
        if (std::abs(n - std::round(n)) > 1e-6 * std::max(1.0, n))
            throw ConfigError("sweep.levels", "dt levels must divide t_end - t_start");
        out.steps = static_cast<std::size_t>(std::llround(n));
    } else if (parameter == "steps") {
        out.steps = count("steps");
    } else if (parameter == "n_law") {
        out.n_law = count("n_law");
    } else if (parameter == "n_copy") {
        out.n_copy = count("n_copy");
    } else if (parameter == "worlds") {
        out.worlds = count("worlds");
    } else if (parameter == "paths") {
        out.paths = count("paths");
    } else {
        throw ConfigError("sweep.parameter", "unknown parameter '" + parameter + "'");
    }
    out.sweep.reset();
    return out;
}

struct RunResult {
    Json report;
    std::string terms_csv;
    Json manifest;
    bool passed = false;
};

inline Json versions() {
    Json v;
    v["iwl"] = IWL_VERSION;
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#else
    v["compiler"] = "unknown";
#endif
    v["cxx_standard"] = static_cast<long>(__cplusplus);
    v["boost"] = BOOST_LIB_VERSION;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                         "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    return v;
}

inline Json manifest(const ScenarioConfig& c, const std::vector<std::string>& files) {
    Json m;
    m["config"] = to_json(c);
    m["seed"] = c.seed;
    m["formula"] = c.formula;
    m["versions"] = versions();
    m["files"] = files;
    return m;
}

/// Single run of the configured formula.
inline RunResult run(const Catalog& cat, const ScenarioConfig& c) {
    const VerificationReport rep = verify(cat, c);
    RunResult out;
    out.report = to_json(rep);
    out.report["scenario"] = c.name;
    std::ostringstream csv;
    write_terms_csv(rep, csv);
    out.terms_csv = csv.str();
    out.passed = rep.passed();
    out.manifest = manifest(c, {"report.json", "terms.csv", "manifest.json"});
    return out;
}

/// Convergence sweep: one run per level, then a log-log slope fit of the
/// chosen statistic. With `expect_slope` the verdict is the slope check;
/// otherwise every level must pass.
inline RunResult run_sweep(const Catalog& cat, const ScenarioConfig& c) {
    if (!c.sweep) throw ConfigError("sweep", "missing; the sweep command needs a sweep table");
    const SweepConfig& s = *c.sweep;
    Json per_level = Json::array();
    bool all_pass = true;
    const ConvergenceStudy study = convergence_study(s.parameter, s.levels, [&](double level) {
        const VerificationReport r = verify(cat, at_level(c, s.parameter, level));
        const double v = statistic(r, s.statistic);
        all_pass = all_pass && r.passed();
        Json j;
        j["level"] = level;
        j["value"] = v;
        j["passed"] = r.passed();
        j["violations"] = r.violations;
        j["summary"] = to_json(r.summary);
        Json checks = Json::object();
        for (const auto& [k, x] : r.checks) checks[k] = x;
        j["checks"] = checks;
        per_level.push_back(j);
        return v;
    });
    RunResult out;
    Json rep;
    rep["formula"] = c.formula;
    rep["scenario"] = c.name;
    rep["mode"] = c.formula == "thm3" ? c.mode : "";
    rep["seed"] = c.seed;
    rep["statistic"] = s.statistic;
    rep["convergence"] = to_json(study);
    std::vector<std::string> violations;
    if (s.expect_slope) {
        rep["expect_slope"] = {s.expect_slope->first, s.expect_slope->second};
        const double slope = study.fit.slope;
        if (!(slope >= s.expect_slope->first && slope <= s.expect_slope->second))
            violations.push_back("slope " + iwl::detail::fmt(slope) + " outside [" +
                                 iwl::detail::fmt(s.expect_slope->first) + ", " +
                                 iwl::detail::fmt(s.expect_slope->second) + "]");
    } else if (!all_pass) {
        violations.push_back("some levels violate their thresholds");
    }
    out.passed = violations.empty();
    rep["passed"] = out.passed;
    rep["violations"] = violations;
    rep["levels"] = per_level;
    out.report = rep;
    std::ostringstream csv;
    csv << std::setprecision(17) << "level," << s.statistic << "\n";
    for (std::size_t i = 0; i < study.levels.size(); ++i) csv << study.levels[i] << "," << study.values[i] << "\n";
    out.terms_csv = csv.str();
    out.manifest = manifest(c, {"report.json", "terms.csv", "manifest.json"});
    return out;
}

inline void write_run(const RunResult& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto put = [&](const char* name, const std::string& text) {
        std::ofstream os(fs::path(dir) / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
        os << text;
    };
    put("report.json", r.report.dump(2) + "\n");
    put("terms.csv", r.terms_csv);
    put("manifest.json", r.manifest.dump(2) + "\n");
}

}  // namespace iwl::cli
