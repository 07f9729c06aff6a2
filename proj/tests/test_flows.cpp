#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "iwl/cli/runner.hpp"
#include "iwl/stats.hpp"

using namespace iwl;
using Json = nlohmann::ordered_json;

namespace {

struct Built {
    FlowScenario sc;
    FlowOptions o;
};

Built build(const std::string& text) {
    const auto cat = cli::Catalog::builtin();
    const auto c = cli::parse_config(Json::parse(text), cat);
    return {cli::detail::flow_scenario(cat, c), cli::detail::flow_options(c)};
}

// Jump-diffusion particles, a driver with its own jumps and a nonlinear field
// in two moments with all three layers.
const char* kJumpScenario = R"({
  "name": "jumps", "formula": "thm3", "seed": 5,
  "time": {"t_end": 1.0, "steps": 25},
  "sizes": {"n_law": 20, "n_copy": 20, "worlds": 10},
  "state": {"template": "jump-diffusion", "params": {"mu": 0.2, "sigma": [0.5], "rate": 2.0}, "x0": [0.1], "x0_sd": 0.5},
  "driver": {"template": "compound-poisson", "params": {"rate": 1.5}, "y0": [0.0]},
  "field": {"template": "custom", "params": {"terms": [
    {"layer": "base", "measure": {"outer": {"template": "quadratic", "params": {"a": [1.0, 0.5], "q": [1.0, 0.3, 0.3, 0.5]}},
                                  "inner": ["identity", "square"]}},
    {"layer": "drift", "measure": {"outer": "square", "inner": ["identity"]}},
    {"layer": "diffusion", "coord": 0, "measure": {"outer": "identity", "inner": ["sin"]},
     "mod": {"template": "driver-linear", "params": {"a": 0.5, "b": 0.2}}}]}}
})";

const char* kBrownianScenario = R"({
  "name": "bm", "formula": "thm3", "mode": "mc-law", "seed": 8,
  "time": {"t_end": 1.0, "steps": 20},
  "sizes": {"n_law": 30, "n_copy": 30, "worlds": 20},
  "state": {"template": "drifted-bm", "x0": [0.3], "x0_sd": 0.4},
  "field": "mean-squared"
})";

bool is_jump_label(const std::string& l) {
    return l.find("jump") != std::string::npos || l.find("-E~ sum") != std::string::npos;
}

}  // namespace

TEST(FullMeasure, EmpiricalTermSetMatchesMomentLift) {
    auto b = build(kJumpScenario);
    const auto r = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    ASSERT_TRUE(r.check("oracle_gap"));
    EXPECT_LE(*r.check("oracle_gap"), 1e-10);
    EXPECT_TRUE(r.passed());
    EXPECT_EQ(r.samples.size(), 10u);
}

TEST(FullMeasure, WithoutCorrectionsTheFiniteNGapIsReported) {
    auto b = build(kJumpScenario);
    b.o.corrections = false;
    const auto r = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    EXPECT_FALSE(r.check("oracle_gap"));
    ASSERT_TRUE(r.check("finite_n_gap"));
    EXPECT_GT(*r.check("finite_n_gap"), 0.0);
    for (const auto& s : r.samples) EXPECT_FALSE(s.find("I2: 1/2 d2f d[Z,Z]c"));
}

TEST(FullMeasure, ConstantShiftOfLinearDerivativeCancels) {
    auto b = build(kJumpScenario);
    b.o.worlds = 4;
    const auto base = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    b.o.delta_shift = 3.7;
    const auto shifted = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    for (std::size_t w = 0; w < base.samples.size(); ++w) {
        EXPECT_NEAR(base.samples[w].residual, shifted.samples[w].residual, 1e-10);
        EXPECT_EQ(base.samples[w].lhs, shifted.samples[w].lhs);
    }
}

TEST(FullMeasure, IndicatorForcingIsInertWithoutLawJumps) {
    auto b = build(kBrownianScenario);
    const auto a = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    b.o.force_indicator = true;
    const auto f = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    for (std::size_t w = 0; w < a.samples.size(); ++w) EXPECT_EQ(a.samples[w].terms, f.samples[w].terms);
}

TEST(FullMeasure, IndicatorForcingMattersWhenCopiesAreTheLaw) {
    // in mc-law mode copies are independent of the law cloud, so the law never
    // jumps with a copy; with the empirical flow every copy jump moves mu
    auto b = build(kJumpScenario);
    b.o.worlds = 4;
    const auto a = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    b.o.force_indicator = true;
    const auto f = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    double gap = 0.0;
    for (std::size_t w = 0; w < a.samples.size(); ++w)
        gap = std::max(gap, std::abs(a.samples[w].term("E~ jump sum: dF/dmu 1{mu=mu-}") -
                                     f.samples[w].term("E~ jump sum: dF/dmu 1{mu=mu-}")));
    EXPECT_GT(gap, 0.0);
    for (const auto& s : a.samples) EXPECT_EQ(s.term("E~ jump sum: dF/dmu 1{mu=mu-}"), 0.0);
}

TEST(FullMeasure, JumpTermsVanishWithoutJumps) {
    auto b = build(kBrownianScenario);
    for (auto mode : {LawMode::MCLaw, LawMode::PathwiseEmpirical}) {
        const auto r = verify_full_measure(b.sc, mode, b.o);
        for (const auto& s : r.samples)
            for (const auto& [label, v] : s.terms) {
                if (is_jump_label(label)) {
                    EXPECT_EQ(v, 0.0) << label;
                }
            }
    }
}

TEST(FullMeasure, MeasureFreeFieldKeepsOnlyTheFieldTerms) {
    auto b = build(kJumpScenario);
    b.sc.field.terms.clear();
    FieldTerm base;
    base.layer = Layer::Base;
    FieldTerm drift;
    drift.layer = Layer::Drift;
    drift.mod = Modulation::cos_time(1.0, 2.0);
    FieldTerm diff;
    diff.layer = Layer::Diffusion;
    diff.mod = Modulation::driver_linear(0.3, 1.0, 0);
    b.sc.field.terms = {base, drift, diff};
    b.sc.field.measure_dim = 0;
    const auto r = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    for (const auto& s : r.samples) {
        for (const auto& [label, v] : s.terms) {
            if (label != "int G dr" && label != "int H dY" && label != "jump sum: F") {
                EXPECT_EQ(v, 0.0) << label;
            }
        }
        EXPECT_LE(std::abs(s.term("jump sum: F")), 1e-12);
        // F(t) = 1 + int m dr + int m' dY, so the expansion is exact
        EXPECT_NEAR(s.residual, 0.0, 1e-12);
    }
}

TEST(FullMeasure, RejectsBadInputs) {
    auto b = build(kBrownianScenario);
    auto o = b.o;
    o.worlds = 1;
    EXPECT_THROW(verify_full_measure(b.sc, LawMode::MCLaw, o), std::invalid_argument);
    o = b.o;
    o.steps = 0;
    EXPECT_THROW(verify_full_measure(b.sc, LawMode::MCLaw, o), std::invalid_argument);
    auto sc = b.sc;
    sc.field.x_dim = 1;
    sc.field.terms[0].space = identity_fn();
    EXPECT_THROW(verify_full_measure(sc, LawMode::MCLaw, b.o), std::invalid_argument);
}

TEST(FullMeasure, IsDeterministicAcrossWorkerCounts) {
    auto b = build(kJumpScenario);
    const auto one = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    b.o.workers = 3;
    const auto three = verify_full_measure(b.sc, LawMode::PathwiseEmpirical, b.o);
    EXPECT_EQ(to_json(one).dump(), to_json(three).dump());
}

TEST(FullMeasure, StandardErrorShrinksLikeInverseRootM) {
    auto b = build(kBrownianScenario);
    const auto study = convergence_study("worlds", {25, 100, 400}, [&](double m) {
        auto o = b.o;
        o.worlds = static_cast<std::size_t>(m);
        return verify_full_measure(b.sc, LawMode::MCLaw, o).summary.standard_error;
    });
    EXPECT_GE(study.fit.slope, -0.65);
    EXPECT_LE(study.fit.slope, -0.35);
}

TEST(Conditional, NeedsThreeInnerParticles) {
    auto b = build(kBrownianScenario);
    b.o.n_copy = 2;
    EXPECT_THROW(verify_conditional(b.sc, b.o), std::invalid_argument);
    b.o.n_copy = 30;
    b.o.n_law = 2;
    EXPECT_THROW(verify_conditional(b.sc, b.o), std::invalid_argument);
}

TEST(Conditional, WithoutCommonNoiseAgreesWithFullLaw) {
    auto b = build(kBrownianScenario);
    b.o.worlds = 200;
    const auto full = verify_full_measure(b.sc, LawMode::MCLaw, b.o);
    const auto cond = verify_conditional(b.sc, b.o);
    EXPECT_TRUE(full.passed());
    EXPECT_TRUE(cond.passed());
    std::vector<double> a, c;
    for (const auto& s : full.samples) a.push_back(s.lhs);
    for (const auto& s : cond.samples) c.push_back(s.lhs);
    EXPECT_GT(stats::ks_two_sample(a, c).p_value, 0.01);
    // the conditional-only terms carry no common coordinates
    for (const auto& s : cond.samples) {
        EXPECT_EQ(s.term("1/2 E' int dmumuF d[X',X'']c"), 0.0);
        EXPECT_EQ(s.term("E' int dmuH d[X',Y]c"), 0.0);
    }
}

TEST(TimeSpace, BothFormsAgreeOnContinuousPaths) {
    auto b = build(R"({
      "name": "ts", "formula": "coro1", "seed": 3,
      "time": {"t_end": 1.0, "steps": 20},
      "sizes": {"n_law": 30, "n_copy": 30, "worlds": 10},
      "state": {"template": "ou", "x0": [0.5]},
      "driver": "state",
      "field": {"template": "custom", "params": {"terms": [
        {"layer": "base", "space": "square", "measure": {"outer": "square", "inner": ["identity"]}},
        {"layer": "diffusion", "coord": 0, "space": "identity", "measure": {"outer": "identity", "inner": ["square"]},
         "mod": {"template": "constant", "params": {"value": 0.4}}}]}}
    })");
    const auto r = verify_time_space_measure(b.sc, flow::Form::Coro1, b.o);
    ASSERT_TRUE(r.check("max_term_gap"));
    EXPECT_LE(*r.check("max_term_gap"), 1e-12);
    EXPECT_THROW(verify_time_space_measure(b.sc, flow::Form::Thm3, b.o), std::invalid_argument);
}

TEST(TimeSpace, MeasureFreeFieldReducesToItoWentzell) {
    // with Phi = 1 every measure term is zero and the x terms close the formula
    auto b = build(R"({
      "name": "ts", "formula": "coro1", "seed": 4,
      "time": {"t_end": 1.0, "steps": 400},
      "sizes": {"n_law": 10, "n_copy": 10, "worlds": 10},
      "state": {"template": "jump-diffusion", "params": {"sigma": [0.5], "rate": 2.0}, "x0": [0.2]},
      "driver": "state",
      "field": {"template": "custom", "params": {"terms": [
        {"layer": "base", "space": "sin"},
        {"layer": "diffusion", "coord": 0, "space": "square", "mod": {"template": "constant", "params": {"value": 0.5}}}]}}
    })");
    const auto r = verify_time_space_measure(b.sc, flow::Form::Coro1, b.o);
    for (const auto& s : r.samples) {
        for (const auto& [label, v] : s.terms) {
            if (label.find("E~") != std::string::npos || label.find("E'") != std::string::npos) {
                EXPECT_EQ(v, 0.0) << label;
            }
        }
        EXPECT_LE(std::abs(s.term("jump sum: F in mu")), 1e-12);
        EXPECT_LE(std::abs(s.residual), 5.0 * std::sqrt(1.0 / 400.0));
    }
}

TEST(Pathwise, IdentityTestFunctionHasZeroResidual) {
    Coefficients c = constant_coefficients({0.3}, {0.8}, 1);
    c.jumps.push_back({normal_marks(3.0, 0.0, 1.0), additive_jump({1.0}), false, "j"});
    const std::vector<double> x0{0.0};
    PathwiseOptions o;
    o.paths = 20;
    const auto r = verify_ito_pathwise(*identity_fn(), c, x0, build_time_grid(0.0, 1.0, 50), o);
    EXPECT_LE(r.summary.max_abs_residual, 1e-12);
}

TEST(Pathwise, PureJumpPathsTelescope) {
    Coefficients c = constant_coefficients({0.0}, {}, 0);
    c.jumps.push_back({normal_marks(5.0, 0.2, 1.0), additive_jump({1.0}), false, "j"});
    const std::vector<double> x0{0.4};
    PathwiseOptions o;
    o.paths = 20;
    const auto g = ridge(std::make_shared<Trig>(1.0, 1.3, 0.2, false));
    const auto r = verify_ito_pathwise(*g, c, x0, build_time_grid(0.0, 1.0, 10), o);
    EXPECT_LE(r.summary.max_abs_residual, 1e-12);
    for (const auto& s : r.samples) EXPECT_EQ(s.term("1/2 int d2g(X-) d[X,X]c"), 0.0);
}

TEST(Pathwise, DeterministicFieldReducesToIto) {
    Coefficients c = constant_coefficients({0.1}, {0.7}, 1);
    c.jumps.push_back({normal_marks(2.0, 0.0, 0.5), additive_jump({1.0}), false, "j"});
    const auto g = ridge(std::make_shared<GaussianBump>(1.0, 0.2, 0.8));
    RandomField F;
    F.x_dim = 1;
    FieldTerm t;
    t.space = g;
    F.terms.push_back(t);
    PathPair pp{c, {0.1}, std::nullopt, {}, 0};
    PathwiseOptions o;
    o.paths = 20;
    const TimeGrid grid = build_time_grid(0.0, 1.0, 100);
    const auto a = verify_ito_wentzell_pathwise(F, pp, grid, o);
    for (const auto& s : a.samples)
        for (const auto& [label, v] : s.terms) {
            if (label.find('H') != std::string::npos || label.find('G') != std::string::npos) {
                EXPECT_EQ(v, 0.0) << label;
            }
        }
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto [x, y] = simulate_pair(pp, grid, derive_seed(o.seed, {i}));
        const auto ito = ito_terms(*g, discretize(x, o.covariation), o.window, x.grid);
        EXPECT_NEAR(a.samples[i].lhs, ito.lhs, 1e-15);
        EXPECT_NEAR(a.samples[i].residual, ito.residual, 1e-12);
    }
}

TEST(Poisson, CompensatedFormAndIndicatorForcing) {
    auto b = build(R"({
      "name": "cp", "formula": "coro3", "seed": 9,
      "time": {"t_end": 1.0, "steps": 10},
      "sizes": {"n_law": 30, "n_copy": 30, "worlds": 100},
      "state": {"template": "compound-poisson", "params": {"rate": 2.0}},
      "field": "mean-squared"
    })");
    const auto r = verify_poisson(b.sc, flow::Form::Coro3, b.o);
    EXPECT_TRUE(r.passed());
    ASSERT_TRUE(r.check("compensator_gap_mean"));
    EXPECT_LE(std::abs(*r.check("compensator_gap_mean")), 3.0 * *r.check("compensator_gap_se") + 1e-12);
    b.o.force_indicator = true;
    const auto f = verify_poisson(b.sc, flow::Form::Coro3, b.o);
    for (std::size_t w = 0; w < r.samples.size(); ++w) EXPECT_EQ(r.samples[w].terms, f.samples[w].terms);
    EXPECT_THROW(verify_poisson(b.sc, flow::Form::Thm3, b.o), std::invalid_argument);
}

TEST(Poisson, ConditionalFormNeedsThreeInnerParticles) {
    auto b = build(R"({
      "name": "cp", "formula": "coro4", "seed": 9,
      "time": {"t_end": 1.0, "steps": 10},
      "sizes": {"n_law": 2, "n_copy": 2, "worlds": 10},
      "state": {"template": "compound-poisson", "params": {"rate": 2.0, "common": true}},
      "field": "mean-squared"
    })");
    EXPECT_THROW(verify_poisson(b.sc, flow::Form::Coro4, b.o), std::invalid_argument);
}
