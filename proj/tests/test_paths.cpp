#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "iwl/paths.hpp"
#include "iwl/stats.hpp"

using namespace iwl;

TEST(TimeGrid, UniformGridHasExactEndpoints) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 4);
    ASSERT_EQ(g.size(), 5u);
    EXPECT_DOUBLE_EQ(g.points[0], 0.0);
    EXPECT_DOUBLE_EQ(g.points[1], 0.25);
    EXPECT_DOUBLE_EQ(g.points[4], 1.0);
}

TEST(TimeGrid, ExtraPointsAreMergedWithoutDuplicates) {
    const std::vector<double> extra{0.5};
    const TimeGrid g = build_time_grid(0.0, 1.0, 2, extra);
    EXPECT_EQ(g.points, (std::vector<double>{0.0, 0.5, 1.0}));

    const std::vector<double> off{0.3, 0.3, 0.7};
    const TimeGrid h = build_time_grid(0.0, 1.0, 2, off);
    EXPECT_EQ(h.points, (std::vector<double>{0.0, 0.3, 0.5, 0.7, 1.0}));
}

TEST(TimeGrid, RejectsEmptyHorizonAndOutOfRangeExtras) {
    EXPECT_THROW(build_time_grid(1.0, 1.0, 10), std::invalid_argument);
    EXPECT_THROW(build_time_grid(2.0, 1.0, 10), std::invalid_argument);
    const std::vector<double> bad{1.5};
    EXPECT_THROW(build_time_grid(0.0, 1.0, 10, bad), std::invalid_argument);
    const std::vector<double> at_start{0.0};
    EXPECT_THROW(build_time_grid(0.0, 1.0, 10, at_start), std::invalid_argument);
}

TEST(Drivers, RejectInfiniteOrNegativeIntensity) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 10);
    MarkMeasure inf_nu;
    inf_nu.mass = std::numeric_limits<double>::infinity();
    EXPECT_THROW(sample_drivers(g, 1, {inf_nu}, 1), std::invalid_argument);
    MarkMeasure neg;
    neg.mass = -1.0;
    EXPECT_THROW(sample_drivers(g, 1, {neg}, 1), std::invalid_argument);
}

TEST(Drivers, ZeroIntensityGivesNoEvents) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 10);
    auto [d, aug] = sample_drivers(g, 1, {constant_marks(0.0, 1.0)}, 3);
    EXPECT_TRUE(d.events.empty());
    EXPECT_EQ(aug.points, g.points);
}

TEST(Drivers, DeterministicInSeedAndEventsAreGridPoints) {
    const TimeGrid g = build_time_grid(0.0, 2.0, 50);
    auto [a, ga] = sample_drivers(g, 2, {constant_marks(5.0, 1.0), normal_marks(3.0, 0.0, 1.0)}, 11);
    auto [b, gb] = sample_drivers(g, 2, {constant_marks(5.0, 1.0), normal_marks(3.0, 0.0, 1.0)}, 11);
    EXPECT_EQ(a.brownian, b.brownian);
    EXPECT_EQ(ga.points, gb.points);
    ASSERT_EQ(a.events.size(), b.events.size());
    ASSERT_FALSE(a.events.empty());
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        EXPECT_EQ(a.events[i].time, b.events[i].time);
        EXPECT_EQ(a.events[i].mark[0], b.events[i].mark[0]);
        EXPECT_EQ(ga.points[a.events[i].index], a.events[i].time);
        EXPECT_LT(a.events[i].time, g.t_end);
        EXPECT_GT(a.events[i].time, g.t_start);
    }
    auto [c, gc] = sample_drivers(g, 2, {constant_marks(5.0, 1.0)}, 12);
    EXPECT_NE(a.brownian, c.brownian);
}

TEST(Drivers, PoissonCountMatchesIntensityOnAverage) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 4);
    double total = 0.0;
    const int reps = 4000;
    for (int r = 0; r < reps; ++r) total += static_cast<double>(sample_drivers(g, 0, {constant_marks(2.0, 1.0)}, r).first.events.size());
    // Poisson(2): sd of the mean is sqrt(2 / reps)
    EXPECT_NEAR(total / reps, 2.0, 4.0 * std::sqrt(2.0 / reps));
}

TEST(Simulate, PureDriftIsExact) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 8);
    Coefficients c = constant_coefficients({1.0}, {0.0}, 1);
    auto [d, aug] = sample_drivers(g, 1, {}, 1);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(c, x0, d, aug);
    for (std::size_t k = 0; k < p.size(); ++k) {
        EXPECT_DOUBLE_EQ(p.value(k)[0], aug.points[k]);
        EXPECT_EQ(p.mart(k)[0], 0.0);
    }
}

TEST(Simulate, CompoundPoissonCountsJumps) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 10);
    Coefficients c = constant_coefficients({0.0}, {0.0}, 1);
    c.jumps.push_back(JumpSource{constant_marks(4.0, 1.0), additive_jump({1.0}), false, "unit"});
    auto [d, aug] = sample_drivers(g, 1, {c.jumps[0].nu}, 9);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(c, x0, d, aug);
    for (std::size_t k = 0; k < p.size(); ++k) {
        double count = 0.0;
        for (const auto& e : d.events)
            if (e.time <= aug.points[k]) count += 1.0;
        EXPECT_EQ(p.value(k)[0], count);
        EXPECT_EQ(p.mart(k)[0], 0.0);
    }
}

TEST(Simulate, DecompositionIsExact) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 200);
    Coefficients c;
    c.dim = 2;
    c.brownian_dim = 2;
    c.drift = [](double t, std::span<const double> x, std::span<double> o) {
        o[0] = -x[0] + t;
        o[1] = std::sin(x[1]);
    };
    c.diffusion = [](double, std::span<const double> x, std::span<double> o) {
        o[0] = 1.0 + 0.1 * x[1];
        o[1] = 0.3;
        o[2] = 0.0;
        o[3] = 0.5;
    };
    c.jumps.push_back(JumpSource{normal_marks(3.0, 0.0, 0.5), additive_jump({1.0, -1.0}), false, "n"});
    auto [d, aug] = sample_drivers(g, 2, {c.jumps[0].nu}, 5);
    const std::vector<double> x0{0.2, -0.3};
    const auto p = simulate_semimartingale(c, x0, d, aug);
    for (std::size_t k = 0; k < p.size(); ++k)
        for (std::size_t i = 0; i < 2; ++i)
            EXPECT_EQ(p.value(k)[i], x0[i] + p.mart(k)[i] + p.finvar(k)[i]);
    // left limits differ from values exactly at jump points
    for (const auto& e : d.events) {
        auto lv = left_limit(p, e.time);
        EXPECT_NE(lv[0], p.value(e.index)[0]);
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p.jump_at(k)) continue;
        EXPECT_EQ(left_limit(p, aug.points[k])[0], p.value(k)[0]);
    }
}

TEST(Simulate, NonFiniteCoefficientReportsTime) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 10);
    Coefficients c = constant_coefficients({0.0}, {1.0}, 1);
    c.drift = [](double t, std::span<const double>, std::span<double> o) { o[0] = t > 0.45 ? NAN : 0.0; };
    auto [d, aug] = sample_drivers(g, 1, {}, 1);
    const std::vector<double> x0{0.0};
    try {
        simulate_semimartingale(c, x0, d, aug);
        FAIL() << "expected SimulationError";
    } catch (const SimulationError& e) {
        EXPECT_NEAR(e.time(), 0.5, 1e-12);
    }
}

TEST(Covariation, GeneratorExactForBrownianMotion) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 100);
    Coefficients c = constant_coefficients({0.0}, {2.0}, 1);
    auto [d, aug] = sample_drivers(g, 1, {}, 2);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(c, x0, d, aug);
    const auto cov = covariation_continuous(p, p);
    EXPECT_NEAR(cov.at(p.size() - 1)[0], 4.0, 1e-12);
    const auto real = covariation_continuous(p, p, CovariationMode::Realized);
    EXPECT_NEAR(real.at(p.size() - 1)[0], 4.0, 4.0 * 4.0 * std::sqrt(2.0 / 100.0));
}

TEST(Covariation, IndependentPathsHaveZeroGeneratorCovariation) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 50);
    Coefficients c = constant_coefficients({0.0}, {1.0}, 1);
    auto [d1, a1] = sample_drivers(g, 1, {}, 1);
    auto [d2, a2] = sample_drivers(g, 1, {}, 2);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(c, x0, d1, a1);
    const auto q = simulate_semimartingale(c, x0, d2, a2);
    EXPECT_EQ(covariation_continuous(p, q).values.back(), 0.0);
}

TEST(Marks, QuadratureIntegratesMoments) {
    const auto u = uniform_marks(2.0, -1.0, 3.0);
    EXPECT_NEAR(u.integrate([](const Mark& e) { return e[0]; }), 2.0 * 1.0, 1e-13);
    EXPECT_NEAR(u.integrate([](const Mark& e) { return e[0] * e[0]; }), 2.0 * (27.0 + 1.0) / 12.0, 1e-12);
    const auto n = normal_marks(1.0, 0.5, 1.0);
    EXPECT_NEAR(n.integrate([](const Mark& e) { return e[0]; }), 0.5, 1e-12);
    EXPECT_NEAR(n.integrate([](const Mark& e) { return e[0] * e[0]; }), 1.25, 1e-12);
    EXPECT_NEAR(n.integrate([](const Mark& e) { return std::cos(e[0]); }), std::cos(0.5) * std::exp(-0.5), 1e-12);
    const auto two = discrete_marks(3.0, {-1.0, 2.0}, {0.25, 0.75});
    EXPECT_DOUBLE_EQ(two.integrate([](const Mark& e) { return e[0]; }), 3.0 * (-0.25 + 1.5));
}

namespace {

double realized_qv(std::size_t steps, std::uint64_t seed) {
    const TimeGrid g = build_time_grid(0.0, 1.0, steps);
    auto [d, aug] = sample_drivers(g, 1, {}, seed);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(constant_coefficients({0.0}, {1.0}, 1), x0, d, aug);
    return covariation_continuous(p, p, CovariationMode::Realized).values.back();
}

}  // namespace

TEST(Covariation, RealizedBrownianQuadraticVariationOnAFineGrid) {
    EXPECT_NEAR(realized_qv(100000, 17), 1.0, 0.02);
}

TEST(Covariation, RealizedErrorShrinksLikeSquareRootOfStep) {
    // Var([W,W]_1 - 1) = 2 dt, so the RMS error has slope 1/2 in dt
    std::vector<double> dts, errs;
    for (std::size_t steps : {10u, 100u, 1000u, 10000u}) {
        double s = 0.0;
        const int reps = 200;
        for (int r = 0; r < reps; ++r) {
            const double e = realized_qv(steps, 1000 + static_cast<std::uint64_t>(r)) - 1.0;
            s += e * e;
        }
        dts.push_back(1.0 / static_cast<double>(steps));
        errs.push_back(std::sqrt(s / reps));
    }
    const auto fit = stats::fit_loglog(dts, errs);
    EXPECT_GT(fit.slope, 0.4);
    EXPECT_LT(fit.slope, 0.6);
}

TEST(Simulate, SameSeedGivesBitIdenticalPaths) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 64);
    Coefficients c = constant_coefficients({0.3, -0.1}, {1.0, 0.2, 0.0, 0.5}, 2);
    c.jumps.push_back({normal_marks(3.0, 0.0, 1.0), additive_jump({1.0, -1.0}), false, "j"});
    const std::vector<double> x0{0.5, -0.5};
    auto run = [&](std::uint64_t seed) {
        auto [d, aug] = sample_drivers(g, 2, {c.jumps[0].nu}, seed);
        return simulate_semimartingale(c, x0, d, aug);
    };
    const auto a = run(9), b = run(9), other = run(10);
    EXPECT_EQ(a.grid.points, b.grid.points);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.fin_var, b.fin_var);
    EXPECT_NE(a.values, other.values);
}

TEST(Simulate, JumpRecordsMatchLeftLimits) {
    const TimeGrid g = build_time_grid(0.0, 1.0, 20);
    Coefficients c = constant_coefficients({0.1}, {0.4}, 1);
    c.jumps.push_back({normal_marks(6.0, 0.5, 1.0), additive_jump({1.0}), false, "j"});
    auto [d, aug] = sample_drivers(g, 1, {c.jumps[0].nu}, 5);
    const std::vector<double> x0{0.0};
    const auto p = simulate_semimartingale(c, x0, d, aug);
    ASSERT_EQ(p.jumps.size(), d.events.size());
    std::size_t seen = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const JumpRecord* j = p.jump_at(k);
        if (!j) {
            EXPECT_EQ(p.left_value(k)[0], p.value(k)[0]);
            continue;
        }
        ++seen;
        EXPECT_EQ(j->index, k);
        EXPECT_NEAR(p.value(k)[0] - p.left_value(k)[0], j->delta[0], 1e-15);
        EXPECT_EQ(left_limit(p, p.grid.points[k])[0], p.left_value(k)[0]);
    }
    EXPECT_EQ(seen, p.jumps.size());
}
