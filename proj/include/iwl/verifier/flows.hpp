#pragma once

// Verifiers for measure-flow formulas: full law, conditional law, time-space
// measure fields and Poisson-driven flows, plus stored-flow assembly and
// convergence studies.

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/measures.hpp"
#include "iwl/parallel.hpp"
#include "iwl/stats.hpp"
#include "iwl/verifier/assembly.hpp"
#include "iwl/verifier/report.hpp"

namespace iwl {

/// Pass/fail rule. Monte Carlo modes compare |mean residual| with
/// max(se_mult * SE, c_sqrt_dt * sqrt(dt) * scale, abs_tol); pathwise modes
/// compare every |residual| with max(c_sqrt_dt * sqrt(dt) * scale, abs_tol).
struct Thresholds {
    double se_mult = 3.0;
    double c_sqrt_dt = 5.0;
    double scale = 1.0;
    double abs_tol = 0.0;
    double oracle_gap = 1e-10;  ///< empirical term set against the lift to moment space
};

struct FlowScenario {
    RandomField field;
    flow::FlowModel model;
    std::string label = "scenario";
};

enum class LawMode { PathwiseEmpirical, MCLaw };

inline const char* to_string(LawMode m) { return m == LawMode::PathwiseEmpirical ? "pathwise-empirical" : "mc-law"; }

struct FlowOptions {
    double t_start = 0.0, t_end = 1.0;
    std::size_t steps = 100;
    std::size_t n_law = 100;   ///< N: particles of the law cloud
    std::size_t n_copy = 100;  ///< copies per world (mc-law)
    std::size_t worlds = 100;  ///< M
    std::uint64_t seed = 1;
    CovariationMode covariation = CovariationMode::GeneratorExact;
    Window window;
    std::size_t workers = 1;
    bool corrections = true;  ///< I2, I3 in pathwise-empirical mode
    bool force_indicator = false;
    double delta_shift = 0.0;
    bool record_series = false;
    Thresholds thresholds;

    TimeGrid grid() const { return build_time_grid(t_start, t_end, steps); }
    double dt() const { return (t_end - t_start) / static_cast<double>(steps); }
};

namespace detail {

inline Json flow_config(const FlowScenario& sc, const FlowOptions& o, const char* mode) {
    Json j;
    j["scenario"] = sc.label;
    j["mode"] = mode;
    j["t_start"] = o.t_start;
    j["t_end"] = o.t_end;
    j["steps"] = o.steps;
    j["n_law"] = o.n_law;
    j["n_copy"] = o.n_copy;
    j["worlds"] = o.worlds;
    j["covariation"] = to_string(o.covariation);
    j["corrections"] = o.corrections;
    j["force_indicator"] = o.force_indicator;
    return j;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

/// Appends violations for the Monte Carlo rule on `samples`.
inline void mc_rule(const std::vector<TermBreakdown>& samples, const Thresholds& th, double dt, const std::string& what,
                    std::vector<std::string>& out) {
    const Aggregate a = aggregate(samples);
    const double tol = std::max({th.se_mult * a.standard_error, th.c_sqrt_dt * std::sqrt(dt) * th.scale, th.abs_tol});
    if (!(std::abs(a.mean_residual) <= tol))
        out.push_back(what + ": |mean residual| " + fmt(std::abs(a.mean_residual)) + " exceeds " + fmt(tol));
}

inline void pathwise_rule(const std::vector<TermBreakdown>& samples, const Thresholds& th, double dt,
                          std::vector<std::string>& out) {
    const double tol = std::max(th.c_sqrt_dt * std::sqrt(dt) * th.scale, th.abs_tol);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (!(std::abs(samples[i].residual) <= tol) && bad++ < 5)
            out.push_back("sample " + std::to_string(i) + ": |residual| " + fmt(std::abs(samples[i].residual)) +
                          " exceeds " + fmt(tol));
    if (bad > 5) out.push_back(std::to_string(bad - 5) + " further samples exceed " + fmt(tol));
}

/// Runs every world and hands it to `assemble(result, w, record)`, which
/// returns one breakdown per variant.
template <class Assemble>
std::vector<std::vector<TermBreakdown>> run_worlds(const FlowScenario& sc, const flow::EngineOptions& eo,
                                                   const FlowOptions& o, std::size_t variants, TermSeries* series,
                                                   Assemble&& assemble) {
    const flow::InnerIndex ix = flow::InnerIndex::of(sc.field);
    std::vector<std::vector<TermBreakdown>> out(variants, std::vector<TermBreakdown>(o.worlds));
    parallel_for(o.worlds, worker_count(o.workers), [&](std::size_t w) {
        const flow::WorldResult R = flow::run_world(sc.model, ix, eo, o.seed, w);
        auto v = assemble(ix, R, w == 0 ? series : nullptr);
        for (std::size_t i = 0; i < variants; ++i) out[i][w] = std::move(v[i]);
    });
    return out;
}

inline void check_common(const FlowScenario& sc, const FlowOptions& o) {
    sc.field.validate();
    sc.model.validate();
    if (o.worlds == 0) throw std::invalid_argument("flow verifier: M (worlds) must be at least 1");
    if (o.steps == 0) throw std::invalid_argument("flow verifier: steps must be at least 1");
    if (sc.field.driver_dim != 0) {
        const std::size_t ydim = sc.model.driver_is_reference ? sc.model.particle.dim
                                 : sc.model.driver             ? sc.model.driver->dim
                                                               : 0;
        if (ydim != sc.field.driver_dim)
            throw std::invalid_argument("flow verifier: field driver dimension differs from the driver model");
    }
}

inline flow::AssemblyOptions assembly(flow::Form f, const FlowOptions& o, TermSeries* rec) {
    flow::AssemblyOptions a;
    a.form = f;
    a.force_indicator = o.force_indicator;
    a.delta_shift = o.delta_shift;
    a.covariation = o.covariation;
    a.window = o.window;
    a.record = rec;
    return a;
}

}  // namespace detail

/// F(t, mu_t) for the full law of X. In pathwise-empirical mode mu_t is the
/// empirical measure of N particles and the check is pathwise; the term set
/// is also compared with the classical expansion of f(t, Z^N). In mc-law
/// mode the law is approximated by N particles per world and the copies by
/// fresh particles; the mean residual over M worlds is tested.
inline VerificationReport verify_full_measure(const FlowScenario& sc, LawMode mode, const FlowOptions& o) {
    detail::check_common(sc, o);
    if (o.n_law < 1) throw std::invalid_argument("verify_full_measure: N must be at least 1");
    if (mode == LawMode::MCLaw && o.worlds < 2) throw std::invalid_argument("verify_full_measure: mc-law needs M >= 2");
    if (sc.field.has_space()) throw std::invalid_argument("verify_full_measure: field depends on x");
    const bool emp = mode == LawMode::PathwiseEmpirical;
    const auto eo = flow::engine_options(flow::Form::Thm3, emp, o.grid(), o.n_law, o.n_copy, o.covariation);
    TermSeries series;
    const bool corr = emp && o.corrections;
    auto out = detail::run_worlds(sc, eo, o, emp ? 2 : 1, o.record_series ? &series : nullptr,
                                  [&](const flow::InnerIndex& ix, const flow::WorldResult& R, TermSeries* rec) {
                                      auto a = detail::assembly(flow::Form::Thm3, o, rec);
                                      a.corrections = corr;
                                      std::vector<TermBreakdown> v{flow::assemble(sc.field, ix, R, a)};
                                      if (emp)
                                          v.push_back(flow::assemble_moment_lift(sc.field, ix, R, o.covariation,
                                                                                 o.window));
                                      return v;
                                  });
    VerificationReport r;
    r.formula = "thm3";
    r.mode = to_string(mode);
    r.seed = o.seed;
    r.config = detail::flow_config(sc, o, to_string(mode));
    r.samples = std::move(out[0]);
    if (o.record_series) r.series = std::move(series);
    r.summarize();
    if (emp) {
        std::vector<double> lift;
        double gap = 0.0;
        for (std::size_t w = 0; w < o.worlds; ++w) {
            lift.push_back(out[1][w].residual);
            gap = std::max(gap, std::abs(r.samples[w].residual - out[1][w].residual));
        }
        r.checks.emplace_back("lift_max_abs_residual", stats::max_abs(lift));
        if (corr) {
            r.checks.emplace_back("oracle_gap", gap);
            if (!(gap <= o.thresholds.oracle_gap))
                r.violations.push_back("term set differs from the expansion of f(t, Z^N) by " + detail::fmt(gap));
        } else {
            r.checks.emplace_back("finite_n_gap", gap);
        }
        if (corr) detail::pathwise_rule(r.samples, o.thresholds, o.dt(), r.violations);
    } else {
        detail::mc_rule(r.samples, o.thresholds, o.dt(), "thm3", r.violations);
    }
    return r;
}

/// F(t, mu_t) for the conditional law given the common noise. Copy
/// expectations are averages over n_copy inner particles and pair terms over
/// distinct inner pairs.
inline VerificationReport verify_conditional(const FlowScenario& sc, const FlowOptions& o) {
    detail::check_common(sc, o);
    if (o.n_copy < 3 || o.n_law < 3) throw std::invalid_argument("verify_conditional: N_inner must be at least 3");
    if (o.worlds < 2) throw std::invalid_argument("verify_conditional: needs M >= 2");
    if (sc.field.has_space()) throw std::invalid_argument("verify_conditional: field depends on x");
    FlowScenario s = sc;
    s.model.conditional = true;
    const auto eo = flow::engine_options(flow::Form::Thm4, false, o.grid(), o.n_law, o.n_copy, o.covariation);
    TermSeries series;
    auto out = detail::run_worlds(s, eo, o, 1, o.record_series ? &series : nullptr,
                                  [&](const flow::InnerIndex& ix, const flow::WorldResult& R, TermSeries* rec) {
                                      return std::vector<TermBreakdown>{
                                          flow::assemble(s.field, ix, R, detail::assembly(flow::Form::Thm4, o, rec))};
                                  });
    VerificationReport r;
    r.formula = "thm4";
    r.mode = "mc-law";
    r.seed = o.seed;
    r.config = detail::flow_config(sc, o, "mc-law");
    r.samples = std::move(out[0]);
    if (o.record_series) r.series = std::move(series);
    r.summarize();
    detail::mc_rule(r.samples, o.thresholds, o.dt(), "thm4", r.violations);
    return r;
}

/// F(t, X_t, mu_t) for a product field along a reference state path. For
/// coro1 and coro1-alt both forms are assembled on the same worlds and both
/// must pass; `max_term_gap` compares them label by label.
inline VerificationReport verify_time_space_measure(const FlowScenario& sc, flow::Form form, const FlowOptions& o) {
    detail::check_common(sc, o);
    if (!flow::needs_reference(form)) throw std::invalid_argument("verify_time_space_measure: form must be coro1, coro1-alt or coro2");
    if (o.worlds < 2) throw std::invalid_argument("verify_time_space_measure: needs M >= 2");
    if (sc.field.has_space() && sc.field.x_dim != sc.model.particle.dim)
        throw std::invalid_argument("verify_time_space_measure: field x-dimension differs from the state");
    FlowScenario s = sc;
    const bool cond = form == flow::Form::Coro2;
    if (cond) {
        if (o.n_copy < 3 || o.n_law < 3) throw std::invalid_argument("verify_time_space_measure: N_inner must be at least 3");
        s.model.conditional = true;
    }
    const auto eo = flow::engine_options(form, false, o.grid(), o.n_law, o.n_copy, o.covariation);
    const flow::Form other = form == flow::Form::Coro1 ? flow::Form::Coro1Alt : flow::Form::Coro1;
    const std::size_t variants = cond ? 1 : 2;
    TermSeries series;
    auto out = detail::run_worlds(s, eo, o, variants, o.record_series ? &series : nullptr,
                                  [&](const flow::InnerIndex& ix, const flow::WorldResult& R, TermSeries* rec) {
                                      std::vector<TermBreakdown> v{
                                          flow::assemble(s.field, ix, R, detail::assembly(form, o, rec))};
                                      if (!cond)
                                          v.push_back(flow::assemble(s.field, ix, R, detail::assembly(other, o, nullptr)));
                                      return v;
                                  });
    VerificationReport r;
    r.formula = flow::to_string(form);
    r.mode = "mc-law";
    r.seed = o.seed;
    r.config = detail::flow_config(sc, o, "mc-law");
    r.samples = std::move(out[0]);
    if (o.record_series) r.series = std::move(series);
    r.summarize();
    detail::mc_rule(r.samples, o.thresholds, o.dt(), r.formula, r.violations);
    if (!cond) {
        const Aggregate a = aggregate(out[1]);
        const std::string name = flow::to_string(other);
        r.checks.emplace_back(name + " mean_residual", a.mean_residual);
        r.checks.emplace_back(name + " standard_error", a.standard_error);
        double gap = 0.0;
        for (std::size_t w = 0; w < o.worlds; ++w)
            for (std::size_t j = 0; j < r.samples[w].terms.size(); ++j)
                gap = std::max(gap, std::abs(r.samples[w].terms[j].second - out[1][w].terms[j].second));
        r.checks.emplace_back("max_term_gap", gap);
        detail::mc_rule(out[1], o.thresholds, o.dt(), name, r.violations);
    }
    return r;
}

/// Compensated forms for flows with Poisson jumps (coro3: full law, coro4:
/// conditional law). Valid in expectation; the gap between the realized
/// copy jumps and their nu-quadrature is reported as a check.
inline VerificationReport verify_poisson(const FlowScenario& sc, flow::Form form, const FlowOptions& o) {
    detail::check_common(sc, o);
    if (!flow::is_poisson(form)) throw std::invalid_argument("verify_poisson: form must be coro3 or coro4");
    if (o.worlds < 2) throw std::invalid_argument("verify_poisson: needs M >= 2");
    if (sc.field.has_space()) throw std::invalid_argument("verify_poisson: field depends on x");
    FlowScenario s = sc;
    s.model.conditional = form == flow::Form::Coro4;
    if (s.model.conditional && (o.n_copy < 3 || o.n_law < 3))
        throw std::invalid_argument("verify_poisson: N_inner must be at least 3");
    const auto eo = flow::engine_options(form, false, o.grid(), o.n_law, o.n_copy, o.covariation);
    TermSeries series;
    auto out = detail::run_worlds(s, eo, o, 1, o.record_series ? &series : nullptr,
                                  [&](const flow::InnerIndex& ix, const flow::WorldResult& R, TermSeries* rec) {
                                      return std::vector<TermBreakdown>{
                                          flow::assemble_poisson(s.field, ix, s.model, R, detail::assembly(form, o, rec))};
                                  });
    VerificationReport r;
    r.formula = flow::to_string(form);
    r.mode = "mc-law";
    r.seed = o.seed;
    r.config = detail::flow_config(sc, o, "mc-law");
    r.samples = std::move(out[0]);
    if (o.record_series) r.series = std::move(series);
    r.summarize();
    detail::mc_rule(r.samples, o.thresholds, o.dt(), r.formula, r.violations);
    std::vector<double> gap;
    for (const auto& b : r.samples)
        gap.push_back(b.term("realized: E~ jump sum dF/dmu") - b.term("E~ int int (dF/dmu(X~+beta) - dF/dmu(X~)) nu"));
    const double m = stats::mean(gap), se = stats::standard_error(gap);
    r.checks.emplace_back("compensator_gap_mean", m);
    r.checks.emplace_back("compensator_gap_se", se);
    if (!(std::abs(m) <= o.thresholds.se_mult * se + o.thresholds.abs_tol + 1e-12))
        r.violations.push_back("realized copy jumps differ from their nu-quadrature by " + detail::fmt(m));
    return r;
}

// ---------------------------------------------------------------------------
// Stored flows

/// Law of X for rhs_terms_full: a stored particle flow on the copies' grid,
/// or exact moments t -> (<mu_t, g_q>)_q in the field's test-function order.
struct LawSource {
    const EmpiricalFlow* flow = nullptr;
    std::function<std::vector<double>(double)> moments;
};

/// Full-law term set on stored paths: `tilde` supplies the copies, `law` the
/// flow mu_t, `Y` (optional) the field driver on the same grid.
inline TermBreakdown rhs_terms_full(const RandomField& F, const LawSource& law, const EmpiricalFlow& tilde,
                                    const SemimartingalePath* Y, const Window& window,
                                    CovariationMode mode = CovariationMode::GeneratorExact,
                                    bool force_indicator = false) {
    F.validate();
    if (F.has_space()) throw std::invalid_argument("rhs_terms_full: field depends on x");
    if (tilde.size() == 0) throw std::invalid_argument("rhs_terms_full: no copy paths");
    if (!law.flow && !law.moments) throw std::invalid_argument("rhs_terms_full: no law source");
    const flow::InnerIndex ix = flow::InnerIndex::of(F);
    const std::size_t Q = ix.size(), d = tilde.dim;
    if (ix.dim != 0 && ix.dim != d) throw std::invalid_argument("rhs_terms_full: field and flow dimensions differ");
    flow::WorldResult R;
    flow::World& W = R.world;
    W.grid = tilde.grid;
    const std::size_t K = W.intervals();
    if (Y) {
        if (Y->grid.points != W.grid.points) throw std::invalid_argument("rhs_terms_full: driver grid differs");
        W.track = driver_track(*Y);
    }
    R.law.Q = Q;
    R.law.z.assign((K + 1) * Q, 0.0);
    R.law.z_left.assign((K + 1) * Q, 0.0);
    R.law.jumps.assign(K + 1, 0);
    if (law.flow) {
        if (law.flow->grid.points != W.grid.points) throw std::invalid_argument("rhs_terms_full: law grid differs");
        for (std::size_t k = 0; k <= K; ++k) {
            for (const auto& p : law.flow->particles) {
                auto x = p.value(k);
                const auto xl = p.left_value(k);
                const bool moved = !std::equal(xl.begin(), xl.end(), x.begin());
                if (moved) R.law.jumps[k] = 1;
                for (std::size_t q = 0; q < Q; ++q) {
                    const double v = ix.fns[q]->value(x);
                    R.law.z[k * Q + q] += v;
                    R.law.z_left[k * Q + q] += moved ? ix.fns[q]->value(xl) : v;
                }
            }
        }
        const double inv = 1.0 / static_cast<double>(law.flow->size());
        for (double& v : R.law.z) v *= inv;
        for (double& v : R.law.z_left) v *= inv;
        R.n_law = law.flow->size();
    } else {
        for (std::size_t k = 0; k <= K; ++k) {
            const auto z = law.moments(W.grid.points[k]);
            if (z.size() != Q) throw std::invalid_argument("rhs_terms_full: exact moments have the wrong length");
            std::copy(z.begin(), z.end(), R.law.z.begin() + static_cast<std::ptrdiff_t>(k * Q));
            std::copy(z.begin(), z.end(), R.law.z_left.begin() + static_cast<std::ptrdiff_t>(k * Q));
        }
        R.n_law = 1;
    }
    Coefficients pc;
    pc.dim = d;
    pc.brownian_dim = tilde.particles.front().brownian_dim;
    flow::EngineOptions eo;
    eo.covariation = mode;
    R.copies.resize(K, Q, W.track.dim, 0, pc, false, eo);
    R.n_copy = tilde.size();
    flow::Accumulator acc(ix, W, pc, eo, 0, nullptr, &R.copies);
    std::vector<double> dm(d);
    for (const auto& p : tilde.particles) {
        if (p.grid.points != W.grid.points) throw std::invalid_argument("rhs_terms_full: copy paths use different grids");
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t i = 0; i < d; ++i) dm[i] = p.mart_cont[(k + 1) * d + i] - p.mart_cont[k * d + i];
            acc.substep(k, true, W.grid.dt(k), p.value(k), p.drift(k), p.sigma(k), {}, dm, p.cont_increment(k));
            acc.point(k + 1, p.left_value(k + 1), p.value(k + 1));
        }
    }
    flow::AssemblyOptions a;
    a.form = flow::Form::Thm3;
    a.force_indicator = force_indicator;
    a.covariation = mode;
    a.window = window;
    return flow::assemble(F, ix, R, a);
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceStudy {
    std::string parameter;
    std::vector<double> levels;
    std::vector<double> values;  ///< error statistic per level
    stats::SlopeFit fit;         ///< log-log slope with 95% interval
};

/// Evaluates `statistic(level)` at each level and fits the log-log slope.
inline ConvergenceStudy convergence_study(std::string parameter, std::vector<double> levels,
                                          const std::function<double(double)>& statistic) {
    if (levels.size() < 3) throw std::invalid_argument("convergence_study: needs at least 3 levels");
    ConvergenceStudy c;
    c.parameter = std::move(parameter);
    c.levels = std::move(levels);
    for (double l : c.levels) c.values.push_back(statistic(l));
    c.fit = stats::fit_loglog(c.levels, c.values);
    return c;
}

inline Json to_json(const ConvergenceStudy& c) {
    Json j;
    j["parameter"] = c.parameter;
    j["levels"] = c.levels;
    j["values"] = c.values;
    j["slope"] = c.fit.slope;
    j["slope_se"] = c.fit.slope_se;
    j["ci_low"] = c.fit.ci_low;
    j["ci_high"] = c.fit.ci_high;
    return j;
}

}  // namespace iwl
