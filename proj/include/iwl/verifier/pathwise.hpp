#pragma once

// Pathwise checks of the Ito formula and the Ito-Wentzell formula on
// simulated paths. All stochastic integrals are left-point sums over the
// extended partition, so jump terms carry no discretization error.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/fields.hpp"
#include "iwl/parallel.hpp"
#include "iwl/paths.hpp"
#include "iwl/verifier/report.hpp"

namespace iwl {

/// Horizon [s, t] inside the simulation grid; defaults to the whole grid.
struct Window {
    std::optional<double> s, t;
    std::pair<std::size_t, std::size_t> indices(const TimeGrid& g) const {
        const std::size_t ks = s ? g.index_of(*s) : 0;
        const std::size_t kt = t ? g.index_of(*t) : g.size() - 1;
        if (ks >= kt) throw std::invalid_argument("window requires s < t");
        return {ks, kt};
    }
};

/// A discrete semimartingale on a grid: values, left limits, continuous
/// increments and continuous covariation increments.
struct DiscreteSemimartingale {
    std::size_t dim = 0;
    std::vector<double> values;  ///< points x dim
    std::vector<double> left;    ///< points x dim
    std::vector<double> cont;    ///< intervals x dim
    std::vector<double> cov;     ///< intervals x dim x dim

    std::span<const double> x(std::size_t k) const { return {values.data() + k * dim, dim}; }
    std::span<const double> x_left(std::size_t k) const { return {left.data() + k * dim, dim}; }
    std::span<const double> dx(std::size_t k) const { return {cont.data() + k * dim, dim}; }
    std::span<const double> dcov(std::size_t k) const { return {cov.data() + k * dim * dim, dim * dim}; }
    bool jumps_at(std::size_t k) const {
        for (std::size_t i = 0; i < dim; ++i)
            if (values[k * dim + i] != left[k * dim + i]) return true;
        return false;
    }
};

inline DiscreteSemimartingale discretize(const SemimartingalePath& p, CovariationMode mode) {
    DiscreteSemimartingale s;
    const std::size_t d = p.dim, n = p.size();
    s.dim = d;
    s.values = p.values;
    s.left = p.values;
    for (const auto& j : p.jumps)
        for (std::size_t i = 0; i < d; ++i) s.left[j.index * d + i] -= j.delta[i];
    s.cont.resize((n - 1) * d);
    s.cov.resize((n - 1) * d * d);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        for (std::size_t i = 0; i < d; ++i) s.cont[k * d + i] = s.left[(k + 1) * d + i] - s.values[k * d + i];
        covariation_increment(p, p, k, mode, std::span<double>(s.cov.data() + k * d * d, d * d));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Ito formula for g(X)

inline TermBreakdown ito_terms(const SmoothFn& g, const DiscreteSemimartingale& X, const Window& w,
                               const TimeGrid& grid) {
    const auto [ks, kt] = w.indices(grid);
    const std::size_t d = X.dim;
    if (g.dim() != d) throw std::invalid_argument("ito: test function dimension mismatch");
    std::vector<double> gr(d), h(d * d);
    double dX = 0.0, quad = 0.0, jumps = 0.0;
    for (std::size_t k = ks; k < kt; ++k) {
        g.gradient(X.x(k), gr);
        g.hessian(X.x(k), h);
        for (std::size_t i = 0; i < d; ++i) dX += gr[i] * X.dx(k)[i];
        for (std::size_t i = 0; i < d * d; ++i) quad += 0.5 * h[i] * X.dcov(k)[i];
        if (X.jumps_at(k + 1)) {
            auto xl = X.x_left(k + 1), xr = X.x(k + 1);
            g.gradient(xl, gr);
            double lin = 0.0;
            for (std::size_t i = 0; i < d; ++i) lin += gr[i] * (xr[i] - xl[i]);
            dX += lin;
            jumps += g.value(xr) - g.value(xl) - lin;
        }
    }
    TermBreakdown b;
    b.formula = "ito";
    b.lhs = g.value(X.x(kt)) - g.value(X.x(ks));
    b.add("int dg(X-) dX", dX);
    b.add("1/2 int d2g(X-) d[X,X]c", quad);
    b.add("jump sum", jumps);
    b.finalize();
    return b;
}

struct PathwiseOptions {
    std::size_t paths = 200;
    std::uint64_t seed = 1;
    CovariationMode covariation = CovariationMode::GeneratorExact;
    Window window;
    std::size_t workers = 1;
    bool record_series = false;
};

inline std::vector<MarkMeasure> intensities(const Coefficients& c) {
    std::vector<MarkMeasure> out;
    for (const auto& j : c.jumps) out.push_back(j.nu);
    return out;
}

/// g(X_t) - g(X_s) against its Ito expansion on `paths` independent paths.
inline VerificationReport verify_ito_pathwise(const SmoothFn& g, const Coefficients& coeffs,
                                              std::span<const double> x0, const TimeGrid& grid,
                                              const PathwiseOptions& opt) {
    if (opt.paths == 0) throw std::invalid_argument("verify_ito_pathwise: need at least one path");
    VerificationReport r;
    r.formula = "thm1";
    r.mode = "pathwise";
    r.seed = opt.seed;
    r.samples.resize(opt.paths);
    parallel_for(opt.paths, opt.workers, [&](std::size_t i) {
        auto [drv, g2] = sample_drivers(grid, coeffs.brownian_dim, intensities(coeffs), derive_seed(opt.seed, {i}));
        const auto path = simulate_semimartingale(coeffs, x0, drv, g2);
        r.samples[i] = ito_terms(g, discretize(path, opt.covariation), opt.window, g2);
    });
    r.summarize();
    return r;
}

// ---------------------------------------------------------------------------
// Ito-Wentzell formula for a random field F(t, x) driven by Y

/// phi, grad phi and hess phi of every field term at one point.
struct TermJets {
    std::size_t dim = 0;
    std::vector<double> value, grad, hess;

    void evaluate(const RandomField& F, std::span<const double> x) {
        const std::size_t P = F.terms.size();
        dim = x.size();
        value.assign(P, 1.0);
        grad.assign(P * dim, 0.0);
        hess.assign(P * dim * dim, 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            const auto& s = F.terms[p].space;
            if (!s) continue;
            value[p] = s->value(x);
            s->gradient(x, std::span<double>(grad.data() + p * dim, dim));
            s->hessian(x, std::span<double>(hess.data() + p * dim * dim, dim * dim));
        }
    }
};

/// Continuous covariation increments between X and Y: intervals x dx x dy.
struct CrossCovariation {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
    std::span<const double> at(std::size_t k) const { return {values.data() + k * rows * cols, rows * cols}; }
};

/// Ito-Wentzell assembly for a field without measure dependence. `record`
/// receives cumulative terms after each step when non-null.
inline TermBreakdown ito_wentzell_terms(const RandomField& F, const FieldCoefficients& fc,
                                        const DiscreteSemimartingale& X, const DriverTrack* Y,
                                        const CrossCovariation* xy, const TimeGrid& grid, const Window& w,
                                        TermSeries* record = nullptr) {
    if (F.has_measure()) throw std::invalid_argument("ito-wentzell: field must not depend on mu");
    const auto [ks, kt] = w.indices(grid);
    const std::size_t d = X.dim, P = F.terms.size(), L = Y ? Y->dim : 0;
    static const std::vector<double> none;
    TermJets jets;
    auto field_value = [&](std::size_t k, bool left_coeff, std::span<const double> x) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            const double c = left_coeff ? fc.c_left(k, p) : fc.c(k, p);
            if (c != 0.0) s += c * (F.terms[p].space ? F.terms[p].space->value(x) : 1.0);
        }
        return s;
    };
    enum { kG, kH, kDX, kQuad, kCross, kJump, kCount };
    const char* labels[kCount] = {"int G dr", "int H dY", "int dF/dx dX", "1/2 int d2F/dx2 d[X,X]c",
                                  "int dH/dx d[X,Y]c", "jump sum"};
    double acc[kCount] = {0, 0, 0, 0, 0, 0};
    const double lhs0 = field_value(ks, false, X.x(ks));
    if (record) {
        record->labels.assign(labels, labels + kCount);
        record->times.push_back(grid.points[ks]);
        record->rows.push_back(std::vector<double>(kCount + 2, 0.0));
    }
    std::vector<double> gF(d), gH(d * std::max<std::size_t>(L, 1));
    for (std::size_t k = ks; k < kt; ++k) {
        const double t = grid.points[k], dt = grid.dt(k);
        auto yk = Y ? Y->y(k) : std::span<const double>(none);
        jets.evaluate(F, X.x(k));
        std::fill(gF.begin(), gF.end(), 0.0);
        std::fill(gH.begin(), gH.end(), 0.0);
        for (std::size_t p = 0; p < P; ++p) {
            const FieldTerm& term = F.terms[p];
            const double c = fc.c(k, p);
            for (std::size_t i = 0; i < d; ++i) gF[i] += c * jets.grad[p * d + i];
            for (std::size_t i = 0; i < d * d; ++i) acc[kQuad] += 0.5 * c * jets.hess[p * d * d + i] * X.dcov(k)[i];
            if (term.layer == Layer::Drift) {
                acc[kG] += term.mod(t, yk) * jets.value[p] * dt;
            } else if (term.layer == Layer::Diffusion) {
                const double m = term.mod(t, yk);
                acc[kH] += m * jets.value[p] * Y->cont(k, term.coord);
                if (xy)
                    for (std::size_t i = 0; i < d; ++i)
                        acc[kCross] += m * jets.grad[p * d + i] * xy->at(k)[i * L + term.coord];
            }
        }
        for (std::size_t i = 0; i < d; ++i) acc[kDX] += gF[i] * X.dx(k)[i];

        // jumps at t_{k+1}
        const bool yj = Y && [&] {
            for (std::size_t l = 0; l < L; ++l)
                if (Y->jump(k + 1, l) != 0.0) return true;
            return false;
        }();
        if (X.jumps_at(k + 1) || yj) {
            auto xl = X.x_left(k + 1), xr = X.x(k + 1);
            jets.evaluate(F, xl);
            double lin = 0.0, hj = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
                const FieldTerm& term = F.terms[p];
                const double c = fc.c_left(k + 1, p);
                for (std::size_t i = 0; i < d; ++i) lin += c * jets.grad[p * d + i] * (xr[i] - xl[i]);
                if (term.layer == Layer::Diffusion)
                    hj += term.mod(grid.points[k + 1], Y->y_left(k + 1)) * jets.value[p] * Y->jump(k + 1, term.coord);
            }
            acc[kDX] += lin;
            acc[kH] += hj;
            acc[kJump] += field_value(k + 1, false, xr) - field_value(k + 1, true, xl) - lin - hj;
        }
        if (record) {
            std::vector<double> row(acc, acc + kCount);
            double rhs = 0.0;
            for (double v : row) rhs += v;
            const double lhs = field_value(k + 1, false, X.x(k + 1)) - lhs0;
            row.push_back(lhs);
            row.push_back(lhs - rhs);
            record->times.push_back(grid.points[k + 1]);
            record->rows.push_back(std::move(row));
        }
    }
    TermBreakdown b;
    b.formula = "ito-wentzell";
    b.lhs = field_value(kt, false, X.x(kt)) - lhs0;
    for (int i = 0; i < kCount; ++i) b.add(labels[i], acc[i]);
    b.finalize();
    return b;
}

/// State X and field driver Y. Y may be X itself, or its own semimartingale
/// whose first `shared_brownian` Brownian coordinates are X's first ones.
struct PathPair {
    Coefficients x;
    std::vector<double> x0;
    std::optional<Coefficients> y;  ///< empty: Y = X
    std::vector<double> y0;
    std::size_t shared_brownian = 0;
};

inline std::pair<SemimartingalePath, SemimartingalePath> simulate_pair(const PathPair& pp, const TimeGrid& grid,
                                                                       std::uint64_t seed) {
    if (!pp.y) {
        auto [drv, g] = sample_drivers(grid, pp.x.brownian_dim, intensities(pp.x), derive_seed(seed, {1}));
        auto p = simulate_semimartingale(pp.x, pp.x0, drv, g);
        return {p, p};
    }
    const Coefficients& cy = *pp.y;
    if (pp.shared_brownian > std::min(pp.x.brownian_dim, cy.brownian_dim))
        throw std::invalid_argument("simulate_pair: more shared coordinates than Brownian dimensions");
    // events of both, then one merged grid
    auto ev = [&](const Coefficients& c, std::uint64_t tag) {
        std::vector<Event> out;
        for (std::size_t s = 0; s < c.jumps.size(); ++s) {
            Engine rng = make_engine(seed, {tag, stream::kEvents, s});
            for (auto& [t, m] : sample_events(c.jumps[s].nu, grid.t_start, grid.t_end, rng)) out.push_back({t, 0, m, s});
        }
        return out;
    };
    auto ex = ev(pp.x, 1), eyv = ev(cy, 2);
    std::vector<double> times;
    for (auto& e : ex) times.push_back(e.time);
    for (auto& e : eyv) times.push_back(e.time);
    const TimeGrid g = times.empty() ? grid : merge_points(grid, times);
    auto finish = [&](std::vector<Event>& evs) {
        for (auto& e : evs) {
            e.index = g.index_of(e.time);
            e.time = g.points[e.index];
        }
        std::stable_sort(evs.begin(), evs.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    };
    finish(ex);
    finish(eyv);
    DriverSet dx, dy;
    dx.brownian_dim = pp.x.brownian_dim;
    dy.brownian_dim = cy.brownian_dim;
    {
        Engine rng = make_engine(seed, {1, stream::kBrownian});
        sample_brownian(g, dx.brownian_dim, rng, dx.brownian);
        Engine rng2 = make_engine(seed, {2, stream::kBrownian});
        sample_brownian(g, dy.brownian_dim, rng2, dy.brownian);
    }
    for (std::size_t j = 0; j < dx.brownian_dim; ++j) dx.tags.push_back(derive_seed(seed, {1, stream::kBrownian, j}));
    for (std::size_t j = 0; j < dy.brownian_dim; ++j) dy.tags.push_back(derive_seed(seed, {2, stream::kBrownian, j}));
    const std::size_t K = g.intervals();
    for (std::size_t j = 0; j < pp.shared_brownian; ++j) {
        dy.tags[j] = dx.tags[j];
        for (std::size_t k = 0; k < K; ++k) dy.brownian[k * dy.brownian_dim + j] = dx.brownian[k * dx.brownian_dim + j];
    }
    dx.events = std::move(ex);
    dy.events = std::move(eyv);
    return {simulate_semimartingale(pp.x, pp.x0, dx, g), simulate_semimartingale(cy, pp.y0, dy, g)};
}

inline CrossCovariation cross_covariation(const SemimartingalePath& x, const SemimartingalePath& y,
                                          CovariationMode mode) {
    CrossCovariation c;
    c.rows = x.dim;
    c.cols = y.dim;
    const std::size_t K = x.grid.intervals();
    c.values.assign(K * x.dim * y.dim, 0.0);
    for (std::size_t k = 0; k < K; ++k)
        covariation_increment(x, y, k, mode, std::span<double>(c.values.data() + k * x.dim * y.dim, x.dim * y.dim));
    return c;
}

/// F(t, X_t) - F(s, X_s) against the Ito-Wentzell expansion, pathwise.
inline VerificationReport verify_ito_wentzell_pathwise(const RandomField& F, const PathPair& pp,
                                                       const TimeGrid& grid, const PathwiseOptions& opt) {
    F.validate();
    if (F.has_measure()) throw std::invalid_argument("verify_ito_wentzell_pathwise: field must not depend on mu");
    if (F.x_dim != pp.x.dim) throw std::invalid_argument("verify_ito_wentzell_pathwise: field and state dimensions differ");
    const std::size_t ydim = pp.y ? pp.y->dim : pp.x.dim;
    if (F.driver_dim != 0 && F.driver_dim != ydim)
        throw std::invalid_argument("verify_ito_wentzell_pathwise: field and driver dimensions differ");
    VerificationReport r;
    r.formula = "thm2";
    r.mode = "pathwise";
    r.seed = opt.seed;
    r.samples.resize(opt.paths);
    std::vector<TermSeries> series(opt.record_series ? 1 : 0);
    parallel_for(opt.paths, opt.workers, [&](std::size_t i) {
        auto [x, y] = simulate_pair(pp, grid, derive_seed(opt.seed, {i}));
        const auto X = discretize(x, opt.covariation);
        const auto Y = driver_track(y);
        const auto fc = field_coefficients(F, x.grid, &Y);
        const auto xy = cross_covariation(x, y, opt.covariation);
        r.samples[i] = ito_wentzell_terms(F, fc, X, &Y, &xy, x.grid, opt.window,
                                          (opt.record_series && i == 0) ? &series[0] : nullptr);
        r.samples[i].formula = "thm2";
    });
    if (opt.record_series) r.series = std::move(series[0]);
    r.summarize();
    return r;
}

}  // namespace iwl
