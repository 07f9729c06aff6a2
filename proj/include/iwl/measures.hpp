#pragma once

// Empirical measures, particle flows (full and conditional) and a few
// distances used by the tests.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/parallel.hpp"
#include "iwl/paths.hpp"
#include "iwl/random.hpp"

namespace iwl {

/// Weighted atoms in R^d. Atoms are stored row-major (N x d).
struct EmpiricalMeasure {
    std::size_t dim = 1;
    std::vector<double> atoms;
    std::vector<double> weights;

    std::size_t size() const { return weights.size(); }
    std::span<const double> atom(std::size_t i) const { return {atoms.data() + i * dim, dim}; }

    template <class G>
    double integrate(G&& g) const {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += weights[i] * g(atom(i));
        return s;
    }
};

/// Uniform-weight empirical measure of `points` (N x d, row-major). Repeated
/// points stay as separate atoms.
inline EmpiricalMeasure empirical_measure(std::span<const double> points, std::size_t dim = 1) {
    if (dim == 0) throw std::invalid_argument("empirical measure: dim must be positive");
    if (points.empty()) throw std::invalid_argument("empirical measure of an empty sample");
    if (points.size() % dim != 0) throw std::invalid_argument("empirical measure: points not a multiple of dim");
    EmpiricalMeasure mu;
    mu.dim = dim;
    mu.atoms.assign(points.begin(), points.end());
    const std::size_t n = points.size() / dim;
    mu.weights.assign(n, 1.0 / static_cast<double>(n));
    return mu;
}

/// N particle paths on one shared grid.
struct EmpiricalFlow {
    TimeGrid grid;
    std::size_t dim = 1;
    std::vector<SemimartingalePath> particles;

    std::size_t size() const { return particles.size(); }

    EmpiricalMeasure measure_at_index(std::size_t k) const {
        std::vector<double> pts;
        pts.reserve(size() * dim);
        for (const auto& p : particles) pts.insert(pts.end(), p.value(k).begin(), p.value(k).end());
        return empirical_measure(pts, dim);
    }
    EmpiricalMeasure left_measure_at_index(std::size_t k) const {
        std::vector<double> pts;
        pts.reserve(size() * dim);
        for (const auto& p : particles) {
            auto v = p.left_value(k);
            pts.insert(pts.end(), v.begin(), v.end());
        }
        return empirical_measure(pts, dim);
    }
    EmpiricalMeasure measure_at(double t) const { return measure_at_index(grid.index_of(t)); }
    EmpiricalMeasure left_measure_at(double t) const { return left_measure_at_index(grid.index_of(t)); }
};

/// Particles driven by one shared common noise and independent idiosyncratic
/// noise. X' and X'' are two distinct particles used as conditional copies.
struct ConditionalParticleSystem {
    EmpiricalFlow flow;
    DriverSet common;
    std::vector<DriverSet> idio;
    std::size_t copy_first = 1;
    std::size_t copy_second = 2;
};

namespace detail {

inline std::vector<std::pair<double, Mark>> particle_events(const JumpSource& src, const TimeGrid& g, Engine& rng) {
    return sample_events(src.nu, g.t_start, g.t_end, rng);
}

// Common Brownian columns take the shared increments when `share_common` is
// set; every other column is drawn from the particle's own stream.
inline EmpiricalFlow simulate_particles(const Coefficients& coeffs, std::span<const double> x0, std::size_t n,
                                        const TimeGrid& grid, std::uint64_t seed, bool share_common,
                                        DriverSet* common_out, std::vector<DriverSet>* idio_out,
                                        std::size_t workers) {
    coeffs.validate();
    if (n == 0) throw std::invalid_argument("particle flow requires N >= 1");
    if (x0.size() != coeffs.dim) throw std::invalid_argument("particle flow: x0 dimension mismatch");
    const std::size_t m = coeffs.brownian_dim;
    const std::size_t mc = share_common ? coeffs.common_brownian : 0;

    // events first: the union of all event times defines the shared grid
    std::vector<Event> common_events;
    for (std::size_t s = 0; s < coeffs.jumps.size(); ++s) {
        if (!share_common || !coeffs.jumps[s].common) continue;
        Engine rng = make_engine(seed, {stream::kCommon, stream::kEvents, s});
        for (auto& [t, mk] : particle_events(coeffs.jumps[s], grid, rng)) common_events.push_back({t, 0, mk, s});
    }
    std::vector<std::vector<Event>> own(n);
    std::vector<double> times;
    for (const auto& e : common_events) times.push_back(e.time);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < coeffs.jumps.size(); ++s) {
            if (share_common && coeffs.jumps[s].common) continue;
            Engine rng = make_engine(seed, {stream::kIdio, i, stream::kEvents, s});
            for (auto& [t, mk] : particle_events(coeffs.jumps[s], grid, rng)) {
                own[i].push_back({t, 0, mk, s});
                times.push_back(t);
            }
        }
    }
    const TimeGrid g = times.empty() ? grid : merge_points(grid, times);
    const std::size_t K = g.intervals();
    auto index_events = [&](std::vector<Event>& evs) {
        for (auto& e : evs) {
            e.index = g.index_of(e.time);
            e.time = g.points[e.index];
        }
    };
    index_events(common_events);
    for (auto& evs : own) index_events(evs);

    DriverSet common;
    common.seed = seed;
    common.brownian_dim = mc;
    common.events = common_events;
    std::stable_sort(common.events.begin(), common.events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    {
        Engine rng = make_engine(seed, {stream::kCommon, stream::kBrownian});
        sample_brownian(g, mc, rng, common.brownian);
        common.tags.resize(mc);
        for (std::size_t c = 0; c < mc; ++c) common.tags[c] = derive_seed(seed, {stream::kCommon, stream::kBrownian, c});
    }

    EmpiricalFlow flow;
    flow.grid = g;
    flow.dim = coeffs.dim;
    flow.particles.resize(n);
    std::vector<DriverSet> idio(n);
    parallel_for(n, workers, [&](std::size_t i) {
        DriverSet own_d;
        own_d.seed = derive_seed(seed, {stream::kIdio, i});
        own_d.brownian_dim = m - mc;
        own_d.events = own[i];
        std::stable_sort(own_d.events.begin(), own_d.events.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
        Engine rng = make_engine(seed, {stream::kIdio, i, stream::kBrownian});
        sample_brownian(g, m - mc, rng, own_d.brownian);
        own_d.tags.resize(m - mc);
        for (std::size_t j = 0; j < m - mc; ++j) own_d.tags[j] = derive_seed(seed, {stream::kIdio, i, stream::kBrownian, j});

        DriverSet full;
        full.seed = own_d.seed;
        full.brownian_dim = m;
        full.brownian.assign(K * m, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < mc; ++c) full.brownian[k * m + c] = common.brownian[k * mc + c];
            for (std::size_t j = 0; j < m - mc; ++j) full.brownian[k * m + mc + j] = own_d.brownian[k * (m - mc) + j];
        }
        full.tags = common.tags;
        full.tags.insert(full.tags.end(), own_d.tags.begin(), own_d.tags.end());
        full.events = common.events;
        full.events.insert(full.events.end(), own_d.events.begin(), own_d.events.end());
        std::stable_sort(full.events.begin(), full.events.end(),
                         [](const Event& a, const Event& b) { return a.time < b.time; });
        flow.particles[i] = simulate_semimartingale(coeffs, x0, full, g);
        idio[i] = std::move(own_d);
    });
    if (common_out) *common_out = std::move(common);
    if (idio_out) *idio_out = std::move(idio);
    return flow;
}

}  // namespace detail

/// N i.i.d. particles; every Brownian coordinate and jump source is private
/// to its particle. All particles share the union grid of event times.
inline EmpiricalFlow simulate_full_flow(const Coefficients& coeffs, std::span<const double> x0, std::size_t n,
                                        const TimeGrid& grid, std::uint64_t seed, std::size_t workers = 1) {
    return detail::simulate_particles(coeffs, x0, n, grid, seed, false, nullptr, nullptr, workers);
}

/// Conditionally i.i.d. particles given the common noise: the first
/// `common_brownian` Brownian coordinates and every jump source flagged
/// common are shared by all particles.
inline ConditionalParticleSystem simulate_conditional_flow(const Coefficients& coeffs, std::span<const double> x0,
                                                           std::size_t n, const TimeGrid& grid, std::uint64_t seed,
                                                           std::size_t workers = 1) {
    if (n < 3) throw std::invalid_argument("conditional flow requires N >= 3 (X, X' and X'' must be distinct)");
    ConditionalParticleSystem sys;
    sys.flow = detail::simulate_particles(coeffs, x0, n, grid, seed, true, &sys.common, &sys.idio, workers);
    return sys;
}

/// (X', X'') of a conditional system.
inline std::pair<const SemimartingalePath&, const SemimartingalePath&> conditional_copies(
    const ConditionalParticleSystem& sys) {
    const std::size_t n = sys.flow.size();
    if (sys.copy_first >= n || sys.copy_second >= n || sys.copy_first == sys.copy_second)
        throw std::invalid_argument("conditional copies must be two distinct particles");
    return {sys.flow.particles[sys.copy_first], sys.flow.particles[sys.copy_second]};
}

/// W2 distance between two measures on R via the quantile coupling.
inline double wasserstein2_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim != 1 || nu.dim != 1) throw std::invalid_argument("wasserstein2_1d: only d = 1 is supported");
    if (mu.size() == 0 || nu.size() == 0) throw std::invalid_argument("wasserstein2_1d: empty measure");
    auto sorted = [](const EmpiricalMeasure& m) {
        std::vector<std::pair<double, double>> a(m.size());
        double total = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            a[i] = {m.atoms[i], m.weights[i]};
            total += m.weights[i];
        }
        std::sort(a.begin(), a.end());
        for (auto& p : a) p.second /= total;
        return a;
    };
    const auto a = sorted(mu), b = sorted(nu);
    double cost = 0.0;
    std::size_t i = 0, j = 0;
    double ra = a[0].second, rb = b[0].second;
    while (i < a.size() && j < b.size()) {
        const double w = std::min(ra, rb);
        const double diff = a[i].first - b[j].first;
        cost += w * diff * diff;
        ra -= w;
        rb -= w;
        if (ra <= 1e-15) {
            if (++i < a.size()) ra = a[i].second;
        }
        if (rb <= 1e-15) {
            if (++j < b.size()) rb = b[j].second;
        }
    }
    return std::sqrt(cost);
}

/// CSV with columns time, particle, x0 .. x{d-1}.
inline void write_flow_csv(const EmpiricalFlow& flow, std::ostream& os) {
    os << "time,particle";
    for (std::size_t j = 0; j < flow.dim; ++j) os << ",x" << j;
    os << "\n" << std::setprecision(17);
    for (std::size_t k = 0; k < flow.grid.size(); ++k)
        for (std::size_t i = 0; i < flow.size(); ++i) {
            os << flow.grid.points[k] << "," << i;
            for (double v : flow.particles[i].value(k)) os << "," << v;
            os << "\n";
        }
}

inline void write_flow_csv(const EmpiricalFlow& flow, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    write_flow_csv(flow, f);
}

}  // namespace iwl
