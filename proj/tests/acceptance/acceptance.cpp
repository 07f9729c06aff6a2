// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "../support.hpp"
#include "iwl/cli/runner.hpp"
#include "iwl/stats.hpp"

using namespace iwl;
using Json = nlohmann::ordered_json;
using iwl::testing::normals;
using iwl::testing::random_cylindrical;
using iwl::testing::random_measure;
using iwl::testing::uniform;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string num(double v) { return fmt("%.4g", v); }

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

cli::ScenarioConfig config(const std::string& text) {
    return cli::parse_config(Json::parse(text), cli::Catalog::builtin());
}

VerificationReport verify(const cli::ScenarioConfig& c) { return cli::verify(cli::Catalog::builtin(), c); }

struct Built {
    FlowScenario sc;
    FlowOptions o;
};

Built build(const std::string& text) {
    const auto cat = cli::Catalog::builtin();
    const auto c = cli::parse_config(Json::parse(text), cat);
    return {cli::detail::flow_scenario(cat, c), cli::detail::flow_options(c)};
}

std::string slope_text(const ConvergenceStudy& s) {
    std::string out = "slope " + num(s.fit.slope) + " (";
    for (std::size_t i = 0; i < s.levels.size(); ++i)
        out += (i ? ", " : "") + num(s.levels[i]) + ": " + num(s.values[i]);
    return out + ")";
}

// thm1, g = x^2, X = W
Outcome c1() {
    const auto base = config(R"({
      "name": "c1", "formula": "thm1", "seed": 101,
      "time": {"t_end": 1.0, "steps": 100}, "sizes": {"paths": 200},
      "state": {"template": "bm", "x0": [0.0]}, "test_function": "square"
    })");
    const auto s = convergence_study("dt", {1e-2, 1e-3, 1e-4}, [&](double dt) {
        return verify(cli::at_level(base, "dt", dt)).summary.rms_residual;
    });
    return {within(s.fit.slope, 0.35, 0.65), "rms residual dt-" + slope_text(s) + " in [0.35, 0.65]"};
}

// thm2, F(t, x) = x * W_t with X = W
Outcome c2() {
    const auto base = config(R"({
      "name": "c2", "formula": "thm2", "seed": 102,
      "time": {"t_end": 1.0, "steps": 100}, "sizes": {"paths": 200},
      "state": {"template": "bm", "x0": [0.5]},
      "driver": {"template": "bm", "shared_brownian": 1, "y0": [0.0]},
      "field": "x-times-driver"
    })");
    double rms_mid = 0.0;
    const auto s = convergence_study("dt", {1e-2, 1e-3, 1e-4}, [&](double dt) {
        const double r = verify(cli::at_level(base, "dt", dt)).summary.rms_residual;
        if (dt == 1e-3) rms_mid = r;
        return r;
    });
    return {rms_mid <= 0.05 && within(s.fit.slope, 0.35, 0.65),
            "rms " + num(rms_mid) + " at dt=1e-3 (<= 0.05), " + slope_text(s) + " in [0.35, 0.65]"};
}

FieldTerm term(Layer layer, Modulation mod, CylindricalFn measure) {
    FieldTerm t;
    t.layer = layer;
    t.mod = std::move(mod);
    t.measure = std::move(measure);
    return t;
}

// empirical term set with I2/I3 against the lift to moment space
Outcome c3() {
    Engine rng = make_engine(103, {0});
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 100; ++k) {
        FlowScenario sc;
        sc.label = "c3-" + std::to_string(k);
        Coefficients x = constant_coefficients({uniform(rng, -0.3, 0.3)}, {uniform(rng, 0.2, 0.8)}, 1);
        x.jumps.push_back({normal_marks(uniform(rng, 0.5, 3.0), uniform(rng, -0.3, 0.3), uniform(rng, 0.1, 0.5)),
                           additive_jump({1.0}), false, "x"});
        Coefficients y = constant_coefficients({uniform(rng, -0.2, 0.2)}, {uniform(rng, 0.2, 1.0)}, 1);
        y.jumps.push_back({normal_marks(uniform(rng, 0.5, 2.0), 0.0, uniform(rng, 0.1, 0.5)), additive_jump({1.0}), false, "y"});
        sc.model.particle = x;
        sc.model.x0 = {uniform(rng, -0.5, 0.5)};
        sc.model.x0_sd = uniform(rng, 0.1, 0.6);
        sc.model.driver = y;
        sc.model.y0 = {0.0};
        sc.field.measure_dim = 1;
        sc.field.driver_dim = 1;
        sc.field.terms.push_back(term(Layer::Base, {}, random_cylindrical(rng, 1)));
        sc.field.terms.push_back(term(Layer::Drift, Modulation::cos_time(uniform(rng, 0.2, 1.0), uniform(rng, 0.5, 3.0)),
                                      random_cylindrical(rng, 1)));
        sc.field.terms.push_back(term(Layer::Diffusion, Modulation::driver_linear(uniform(rng, -1, 1), uniform(rng, -1, 1), 0),
                                      random_cylindrical(rng, 1)));
        FlowOptions o;
        o.steps = 20;
        o.n_law = 50;
        o.worlds = 2;
        o.seed = derive_seed(103, {k});
        const auto r = verify_full_measure(sc, LawMode::PathwiseEmpirical, o);
        const auto gap = r.check("oracle_gap");
        if (!gap) return {false, "scenario " + std::to_string(k) + " reported no oracle_gap"};
        worst = std::max(worst, *gap);
    }
    return {worst <= 1e-10, "max gap " + num(worst) + " over 100 scenarios (<= 1e-10)"};
}

// corrections off: the missing I2/I3 mean is O(1/N)
Outcome c4() {
    const auto base = config(R"({
      "name": "c4", "formula": "thm3", "mode": "pathwise-empirical", "seed": 104,
      "time": {"t_end": 1.0, "steps": 100}, "sizes": {"worlds": 50},
      "state": {"template": "bm"}, "field": "mean-squared",
      "options": {"corrections": false}
    })");
    const auto s = convergence_study("n_law", {10, 100, 1000}, [&](double n) {
        return std::abs(verify(cli::at_level(base, "n_law", n)).summary.mean_residual);
    });
    return {within(s.fit.slope, -1.4, -0.6), "|mean residual| N-" + slope_text(s) + " in [-1.4, -0.6]"};
}

Outcome c5() {
    // X_t = b t: lhs (bt)^2, left-point quadrature leaves b^2 t dt
    const auto a = verify(config(R"({
      "name": "c5a", "formula": "thm3", "mode": "pathwise-empirical", "seed": 105,
      "time": {"t_end": 1.0, "dt": 0.001}, "sizes": {"n_law": 10, "worlds": 20},
      "state": {"template": "constant", "params": {"b": [0.5], "sigma": [], "brownian_dim": 0}, "x0": [0.0]},
      "field": "mean-squared"
    })"));
    const double ta = std::max(3.0 * a.summary.standard_error, 1e-3);
    const bool pa = std::abs(a.summary.mean_residual) <= ta;
    const auto b = verify(config(R"({
      "name": "c5b", "formula": "thm3", "mode": "mc-law", "seed": 205,
      "time": {"t_end": 1.0, "dt": 0.05}, "sizes": {"n_law": 10000, "n_copy": 1000, "worlds": 1000},
      "state": {"template": "bm"}, "field": "second-moment"
    })"));
    const bool pb = std::abs(b.summary.mean_residual) <= 3.0 * b.summary.standard_error;
    return {pa && pb, "(bt)^2 residual " + num(a.summary.mean_residual) + " <= " + num(ta) + "; <mu,x^2> residual " +
                          num(b.summary.mean_residual) + " <= 3SE " + num(3.0 * b.summary.standard_error)};
}

Outcome c6() {
    // no common noise: conditional and full formulas see the same law
    const std::string trivial = R"({
      "name": "c6a", "formula": "thm4", "mode": "mc-law", "seed": 106,
      "time": {"t_end": 1.0, "steps": 50}, "sizes": {"n_law": 50, "n_copy": 50, "worlds": 300},
      "state": {"template": "constant", "params": {"b": [0.1], "sigma": [0.6], "brownian_dim": 1},
                "x0": [0.2], "x0_sd": 0.5, "common_brownian": 0,
                "jumps": [{"rate": 1.5, "marks": {"template": "normal", "params": {"mean": 0.2, "sd": 0.3}}}]},
      "field": "mean-squared"
    })";
    auto cond = config(trivial);
    auto full = config(trivial);
    full.formula = "thm3";
    full.seed = 206;
    const auto rc = verify(cond), rf = verify(full);
    const double p = stats::ks_two_sample(rc.residuals(), rf.residuals()).p_value;

    // X = B common to all particles: mu is a point mass and F = B^2
    const auto b = verify(config(R"({
      "name": "c6b", "formula": "thm4", "seed": 306,
      "time": {"t_end": 1.0, "steps": 400}, "sizes": {"n_law": 10, "n_copy": 10, "worlds": 100},
      "state": {"template": "bm", "common_brownian": 1}, "field": "second-moment"
    })"));
    const double tol = 5.0 * std::sqrt(1.0 / 400.0);
    return {p > 0.01 && b.summary.rms_residual <= tol,
            "KS p " + num(p) + " (> 0.01); common B^2 rms residual " + num(b.summary.rms_residual) + " <= " + num(tol)};
}

Outcome c7() {
    const std::string jumps = R"({
      "name": "c7", "formula": "coro1", "seed": 107,
      "time": {"t_end": 1.0, "steps": 50}, "sizes": {"n_law": 200, "n_copy": 200, "worlds": 200},
      "state": {"template": "jump-diffusion", "params": {"mu": 0.1, "sigma": [0.5], "rate": 1.5,
                "marks": {"template": "normal", "params": {"mean": 0.2, "sd": 0.3}}}, "x0": [0.3]},
      "driver": "state",
      "field": {"template": "custom", "params": {"terms": [
        {"layer": "base", "space": {"template": "polynomial", "params": {"coeffs": [0.0, 1.0, 0.5]}},
         "measure": {"outer": "square", "inner": ["identity"]}},
        {"layer": "diffusion", "coord": 0, "space": {"template": "polynomial", "params": {"coeffs": [1.0, 0.3]}},
         "measure": {"outer": "identity", "inner": ["square"]}, "mod": {"template": "constant", "params": {"value": 0.4}}}]}}
    })";
    auto c = config(jumps);
    const auto r1 = verify(c);
    c.formula = "coro1-alt";
    const auto r2 = verify(c);
    const bool p1 = std::abs(r1.summary.mean_residual) <= 3.0 * r1.summary.standard_error;
    const bool p2 = std::abs(r2.summary.mean_residual) <= 3.0 * r2.summary.standard_error;

    auto ou = build(R"({
      "name": "c7-ou", "formula": "coro1", "seed": 207,
      "time": {"t_end": 1.0, "steps": 50}, "sizes": {"n_law": 50, "n_copy": 50, "worlds": 20},
      "state": {"template": "ou", "x0": [0.5]},
      "driver": "state",
      "field": {"template": "custom", "params": {"terms": [
        {"layer": "base", "space": "square", "measure": {"outer": "square", "inner": ["identity"]}},
        {"layer": "diffusion", "coord": 0, "space": "identity", "measure": {"outer": "identity", "inner": ["square"]},
         "mod": {"template": "constant", "params": {"value": 0.4}}}]}}
    })");
    const auto gap = verify_time_space_measure(ou.sc, flow::Form::Coro1, ou.o).check("max_term_gap");
    const bool pg = gap && *gap <= 1e-12;
    return {p1 && p2 && pg, "coro1 " + num(r1.summary.mean_residual) + " (3SE " + num(3 * r1.summary.standard_error) +
                                "), alt " + num(r2.summary.mean_residual) + " (3SE " +
                                num(3 * r2.summary.standard_error) + "), continuous term gap " +
                                (gap ? num(*gap) : std::string("missing")) + " (<= 1e-12)"};
}

Outcome c8() {
    auto b = build(R"({
      "name": "c8", "formula": "coro3", "seed": 108,
      "time": {"t_end": 1.0, "steps": 20}, "sizes": {"n_law": 100, "n_copy": 100, "worlds": 1000},
      "state": {"template": "compound-poisson", "params": {"rate": 2.0}}, "field": "mean"
    })");
    const auto r = verify_poisson(b.sc, flow::Form::Coro3, b.o);
    const bool pr = std::abs(r.summary.mean_residual) <= 3.0 * r.summary.standard_error;
    const double gm = r.check("compensator_gap_mean").value_or(NAN), gs = r.check("compensator_gap_se").value_or(NAN);
    const bool pc = std::abs(gm) <= 3.0 * gs;
    b.o.force_indicator = true;
    const auto f = verify_poisson(b.sc, flow::Form::Coro3, b.o);
    bool same = f.samples.size() == r.samples.size();
    for (std::size_t w = 0; same && w < r.samples.size(); ++w) same = r.samples[w].terms == f.samples[w].terms;
    return {pr && pc && same, "residual " + num(r.summary.mean_residual) + " (3SE " +
                                  num(3 * r.summary.standard_error) + "), compensator gap " + num(gm) + " (3SE " +
                                  num(3 * gs) + "), indicator forcing " + (same ? "identical" : "differs")};
}

Outcome c9() {
    Engine rng = make_engine(109, {0});
    double lift = 0.0, norm = 0.0, lions = 0.0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t d = c % 3 == 0 ? 2 : 1;
        const auto F = random_cylindrical(rng, d);
        const auto mu = random_measure(rng, 8, d);
        lift = std::max(lift, fd_lift_check(F, mu, 1e-4).max_abs_error);
        norm = std::max(norm, std::abs(mu.integrate([&](auto y) { return linear_derivative(F, mu, y); })));
        const auto y = normals(rng, d);
        const auto l = lions_derivative(F, mu, y);
        const double h = 1e-4;
        for (std::size_t i = 0; i < d; ++i) {
            auto yp = y, ym = y;
            yp[i] += h;
            ym[i] -= h;
            const double fd = (linear_derivative(F, mu, yp) - linear_derivative(F, mu, ym)) / (2 * h);
            lions = std::max(lions, std::abs(fd - l[i]));
        }
    }
    // F(mu) = <mu, g>: derivatives are g's own, second derivatives vanish
    bool exact = true;
    for (int c = 0; c < 20; ++c) {
        const auto g = iwl::testing::random_test_function(rng, 2);
        const auto F = cylindrical(polynomial({0.0, 1.0}), {g});
        const auto mu = random_measure(rng, 5, 2);
        const auto y = normals(rng, 2);
        const double mean = mu.integrate([&](auto x) { return g->value(x); });
        std::vector<double> grad(2), hess(4);
        g->gradient(y, grad);
        g->hessian(y, hess);
        const auto s = second_derivatives(F, mu, y, y);
        exact = exact && linear_derivative(F, mu, y) == g->value(y) - mean && lions_derivative(F, mu, y) == grad &&
                lions_space_derivative(F, mu, y) == hess && s.linear == 0.0;
        for (double v : s.lions) exact = exact && v == 0.0;
    }
    return {lift <= 1e-5 && norm <= 1e-12 && lions <= 1e-6 && exact,
            "lift " + num(lift) + " (<= 1e-5), normalization " + num(norm) + " (<= 1e-12), lions vs d/dy " +
                num(lions) + " (<= 1e-6), linear forms " + (exact ? "exact" : "inexact")};
}

Outcome c10() {
    Engine rng = make_engine(110, {0});
    const TimeGrid grid = build_time_grid(0.0, 1.0, 200);
    auto [drv, aug] = sample_drivers(grid, 1, {}, derive_seed(110, {1}));
    const auto W = simulate_semimartingale(constant_coefficients({0.0}, {1.0}, 1), std::vector<double>{0.0}, drv, aug);
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
        RandomField F;
        F.measure_dim = 1;
        F.driver_dim = 1;
        F.terms.push_back(term(Layer::Diffusion, Modulation::driver_linear(1.0, uniform(rng, -1, 1), 0), random_cylindrical(rng, 1)));
        F.terms.push_back(term(Layer::Diffusion, Modulation::cos_time(uniform(rng, 0.2, 1.0), uniform(rng, 0.5, 3.0)),
                               random_cylindrical(rng, 1)));
        F.validate();
        const auto x = normals(rng, 8), h = normals(rng, 8);
        worst = std::max(worst, leibniz_check(F, W, x, h, 1e-4).discrepancy);
    }
    return {worst <= 1e-6, "max discrepancy " + num(worst) + " over 50 functionals (<= 1e-6)"};
}

Outcome c11() {
    const char* docs[] = {R"({
      "name": "c11-thm3", "formula": "thm3", "mode": "pathwise-empirical", "seed": 111,
      "time": {"t_end": 1.0, "steps": 40}, "sizes": {"n_law": 40, "worlds": 20},
      "state": {"template": "jump-diffusion", "params": {"sigma": [0.4], "rate": 2.0}, "x0_sd": 0.3},
      "driver": {"template": "compound-poisson", "params": {"rate": 1.0}},
      "field": "mean-squared"
    })",
                          R"({
      "name": "c11-coro4", "formula": "coro4", "seed": 211,
      "time": {"t_end": 1.0, "steps": 20}, "sizes": {"n_law": 30, "n_copy": 30, "worlds": 40},
      "state": {"template": "constant", "params": {"b": [0.0], "sigma": [0.3, 0.3], "brownian_dim": 2},
                "common_brownian": 1,
                "jumps": [{"rate": 1.0, "marks": {"template": "constant", "params": {"value": 0.5}}, "common": true},
                          {"rate": 2.0, "marks": {"template": "constant", "params": {"value": 0.2}}}]},
      "field": "mean-squared"
    })",
                          R"({
      "name": "c11-sweep", "formula": "thm1", "seed": 311,
      "time": {"t_end": 1.0, "steps": 100}, "sizes": {"paths": 50},
      "state": {"template": "jump-diffusion", "params": {"sigma": [0.5], "rate": 1.0}},
      "test_function": "sin",
      "sweep": {"parameter": "steps", "levels": [50, 100, 200], "statistic": "rms_residual"}
    })"};
    const auto cat = cli::Catalog::builtin();
    std::string bad;
    for (const char* d : docs) {
        auto c = cli::parse_config(Json::parse(d), cat);
        auto once = [&](std::size_t workers) {
            c.workers = workers;
            const auto r = c.sweep ? cli::run_sweep(cat, c) : cli::run(cat, c);
            return r.report.dump(2) + r.terms_csv;
        };
        const std::string a = once(1);
        if (a != once(1) || a != once(3)) bad += (bad.empty() ? "" : ", ") + c.name;
    }
    return {bad.empty(), bad.empty() ? "reports byte-identical at 1, 1 and 3 workers" : "differs: " + bad};
}

struct Criterion {
    const char* id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> all{
        {"C1", "thm1 classical oracle", 30, c1},
        {"C2", "thm2 x*W oracle", 60, c2},
        {"C3", "thm3 exact regrouping", 60, c3},
        {"C4", "thm3 finite-N law", 120, c4},
        {"C5", "thm3 closed forms", 120, c5},
        {"C6", "thm4 degenerations", 180, c6},
        {"C7", "time-space forms", 120, c7},
        {"C8", "poisson compensator", 120, c8},
        {"C9", "calculus suite", 30, c9},
        {"C10", "leibniz check", 30, c10},
        {"C11", "determinism", 10, c11},
    };
    int failures = 0;
    for (const auto& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs <= c.budget_s;
        failures += !pass;
        std::printf("%-4s %-4s %s: %s; %.1f s (budget %.0f s)\n", c.id, pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                    secs, c.budget_s);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(all.size()) - failures, all.size());
    return failures == 0 ? 0 : 1;
}
