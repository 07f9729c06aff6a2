#pragma once

// Time grids, noise drivers and Euler simulation of jump semimartingales
// X = X0 + M + V, where M collects the continuous martingale increments
// sigma dW and V collects drift plus jumps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>

#include "iwl/random.hpp"

namespace iwl {

class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

// ---------------------------------------------------------------------------
// Time grid

struct TimeGrid {
    double t_start = 0.0;
    double t_end = 1.0;
    std::vector<double> points;

    std::size_t size() const { return points.size(); }
    std::size_t intervals() const { return points.empty() ? 0 : points.size() - 1; }
    double dt(std::size_t k) const { return points[k + 1] - points[k]; }
    double tolerance() const { return 1e-12 * std::max(1.0, std::abs(t_end - t_start)); }

    /// Index of the grid point equal to t (within tolerance), if any.
    std::optional<std::size_t> find(double t) const {
        auto it = std::lower_bound(points.begin(), points.end(), t - tolerance());
        if (it != points.end() && std::abs(*it - t) <= tolerance())
            return static_cast<std::size_t>(it - points.begin());
        return std::nullopt;
    }
    std::size_t index_of(double t) const {
        auto k = find(t);
        if (!k) {
            std::ostringstream os;
            os << "time " << t << " is not a grid point";
            throw std::invalid_argument(os.str());
        }
        return *k;
    }
    /// Largest index k with points[k] <= t.
    std::size_t floor_index(double t) const {
        if (auto k = find(t)) return *k;
        auto it = std::upper_bound(points.begin(), points.end(), t);
        if (it == points.begin()) throw std::invalid_argument("time precedes the grid");
        return static_cast<std::size_t>(it - points.begin()) - 1;
    }
    double max_step() const {
        double m = 0.0;
        for (std::size_t k = 0; k + 1 < points.size(); ++k) m = std::max(m, dt(k));
        return m;
    }
};

/// Merges `points` into `grid`, dropping duplicates within the grid tolerance.
inline TimeGrid merge_points(const TimeGrid& grid, std::span<const double> extra) {
    TimeGrid g = grid;
    const double tol = grid.tolerance();
    for (double e : extra) {
        if (!(e > grid.t_start + tol) || e > grid.t_end + tol) {
            std::ostringstream os;
            os << "extra time " << e << " outside (" << grid.t_start << ", " << grid.t_end << "]";
            throw std::invalid_argument(os.str());
        }
    }
    std::vector<double> merged;
    merged.reserve(g.points.size() + extra.size());
    std::vector<double> sorted(extra.begin(), extra.end());
    std::sort(sorted.begin(), sorted.end());
    std::merge(g.points.begin(), g.points.end(), sorted.begin(), sorted.end(), std::back_inserter(merged));
    g.points.clear();
    for (double t : merged) {
        if (!g.points.empty() && t - g.points.back() <= tol) {
            // keep the uniform point when an extra time collides with it
            continue;
        }
        g.points.push_back(t);
    }
    g.points.back() = grid.t_end;
    return g;
}

/// Uniform grid with n_steps intervals on [t0, t1], merged with `extra`.
inline TimeGrid build_time_grid(double t0, double t1, std::size_t n_steps, std::span<const double> extra = {}) {
    if (!std::isfinite(t0) || !std::isfinite(t1) || !(t0 < t1))
        throw std::invalid_argument("time grid requires t_start < t_end");
    if (n_steps == 0) throw std::invalid_argument("time grid requires at least one step");
    TimeGrid g;
    g.t_start = t0;
    g.t_end = t1;
    g.points.resize(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k)
        g.points[k] = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n_steps);
    g.points.back() = t1;
    if (!extra.empty()) return merge_points(g, extra);
    return g;
}

// ---------------------------------------------------------------------------
// Marks and intensities

inline constexpr std::size_t kMaxMarkDim = 4;

struct Mark {
    std::array<double, kMaxMarkDim> v{};
    std::size_t dim = 1;

    Mark() = default;
    explicit Mark(double x) { v[0] = x; }
    std::span<const double> coords() const { return {v.data(), dim}; }
    double operator[](std::size_t i) const { return v[i]; }
};

/// Finite intensity measure nu = mass * (probability law on marks).
/// `nodes` is a probability-weighted quadrature of the mark law: exact for
/// finite mark sets, Gauss-Legendre otherwise.
struct MarkMeasure {
    double mass = 0.0;
    std::function<Mark(Engine&)> sample;
    std::vector<std::pair<Mark, double>> nodes;
    std::string description = "none";

    /// Integral of phi against nu via the quadrature nodes.
    template <class Phi>
    double integrate(Phi&& phi) const {
        double s = 0.0;
        for (const auto& [m, w] : nodes) s += w * phi(m);
        return mass * s;
    }
};

inline void check_mass(double mass) {
    if (!std::isfinite(mass) || mass < 0.0)
        throw std::invalid_argument("intensity mass must be finite and non-negative (finite activity)");
}

inline MarkMeasure constant_marks(double mass, double value) {
    check_mass(mass);
    MarkMeasure nu;
    nu.mass = mass;
    nu.sample = [value](Engine&) { return Mark(value); };
    nu.nodes = {{Mark(value), 1.0}};
    std::ostringstream os;
    os << "constant(" << value << ")";
    nu.description = os.str();
    return nu;
}

inline MarkMeasure discrete_marks(double mass, std::vector<double> values, std::vector<double> probs) {
    check_mass(mass);
    if (values.empty() || values.size() != probs.size())
        throw std::invalid_argument("discrete marks: values and probabilities must have equal non-zero length");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("discrete marks: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("discrete marks: probabilities must sum to 1");
    MarkMeasure nu;
    nu.mass = mass;
    std::vector<double> cdf(probs.size());
    std::partial_sum(probs.begin(), probs.end(), cdf.begin());
    nu.sample = [values, cdf](Engine& rng) {
        const double u = Uniform(0.0, 1.0)(rng);
        std::size_t i = 0;
        while (i + 1 < cdf.size() && u >= cdf[i]) ++i;
        return Mark(values[i]);
    };
    for (std::size_t i = 0; i < values.size(); ++i) nu.nodes.emplace_back(Mark(values[i]), probs[i]);
    std::ostringstream os;
    os << "discrete[";
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i] << ":" << probs[i];
    os << "]";
    nu.description = os.str();
    return nu;
}

namespace detail {
// 20-point Gauss-Legendre rule mapped to (0, 1), probability weights.
inline std::vector<std::pair<double, double>> unit_gauss_legendre() {
    using Rule = boost::math::quadrature::gauss<double, 20>;
    std::vector<std::pair<double, double>> out;
    const auto& x = Rule::abscissa();
    const auto& w = Rule::weights();
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.emplace_back(0.5 * (1.0 - x[i]), 0.5 * w[i]);
        out.emplace_back(0.5 * (1.0 + x[i]), 0.5 * w[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// n-point Gauss-Hermite rule for the standard normal law (Golub-Welsch).
inline std::vector<std::pair<double, double>> gauss_hermite(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i < n; ++i) {
        const double v = es.eigenvectors()(0, i);
        out.emplace_back(es.eigenvalues()(i), v * v);
    }
    return out;
}
}  // namespace detail

inline MarkMeasure uniform_marks(double mass, double lo, double hi) {
    check_mass(mass);
    if (!(lo < hi)) throw std::invalid_argument("uniform marks: require low < high");
    MarkMeasure nu;
    nu.mass = mass;
    nu.sample = [lo, hi](Engine& rng) { return Mark(Uniform(lo, hi)(rng)); };
    for (auto [u, w] : detail::unit_gauss_legendre()) nu.nodes.emplace_back(Mark(lo + (hi - lo) * u), w);
    std::ostringstream os;
    os << "uniform(" << lo << "," << hi << ")";
    nu.description = os.str();
    return nu;
}

inline MarkMeasure normal_marks(double mass, double mean, double sd) {
    check_mass(mass);
    if (!(sd > 0.0)) throw std::invalid_argument("normal marks: sd must be positive");
    MarkMeasure nu;
    nu.mass = mass;
    nu.sample = [mean, sd](Engine& rng) { return Mark(Normal(mean, sd)(rng)); };
    for (auto [x, w] : detail::gauss_hermite(20)) nu.nodes.emplace_back(Mark(mean + sd * x), w);
    std::ostringstream os;
    os << "normal(" << mean << "," << sd << ")";
    nu.description = os.str();
    return nu;
}

// ---------------------------------------------------------------------------
// Coefficients

using VecFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
using JumpFn = std::function<void(double t, std::span<const double> x_left, const Mark& e, std::span<double> out)>;

struct JumpSource {
    MarkMeasure nu;
    JumpFn beta;          ///< jump size beta(t, X_{t-}, e)
    bool common = false;  ///< shared by every particle of a conditional system
    std::string label;
};

/// dX = b(t, X) dt + sigma(t, X) dW + sum_s beta_s(t, X_-, e) N_s(de, dt).
/// The first `common_brownian` Brownian coordinates are common noise in a
/// conditional particle system; they are ordinary coordinates otherwise.
struct Coefficients {
    std::size_t dim = 1;
    std::size_t brownian_dim = 1;
    std::size_t common_brownian = 0;
    VecFn drift;      ///< out: dim
    VecFn diffusion;  ///< out: dim x brownian_dim, row-major
    std::vector<JumpSource> jumps;
    std::string label = "custom";

    void validate() const {
        if (dim == 0) throw std::invalid_argument("coefficients: dim must be positive");
        if (common_brownian > brownian_dim)
            throw std::invalid_argument("coefficients: common_brownian exceeds brownian_dim");
        if (!drift) throw std::invalid_argument("coefficients: missing drift");
        if (brownian_dim > 0 && !diffusion) throw std::invalid_argument("coefficients: missing diffusion");
        for (const auto& j : jumps) {
            check_mass(j.nu.mass);
            if (!j.beta) throw std::invalid_argument("coefficients: jump source without jump size");
            if (j.nu.mass > 0.0 && !j.nu.sample) throw std::invalid_argument("coefficients: jump source without sampler");
        }
    }
    bool has_common_noise() const {
        if (common_brownian > 0) return true;
        return std::any_of(jumps.begin(), jumps.end(), [](const JumpSource& j) { return j.common; });
    }
};

/// Constant coefficients: b, sigma (row-major dim x brownian_dim).
inline Coefficients constant_coefficients(std::vector<double> b, std::vector<double> sigma, std::size_t brownian_dim,
                                          std::size_t common_brownian = 0) {
    Coefficients c;
    c.dim = b.size();
    c.brownian_dim = brownian_dim;
    c.common_brownian = common_brownian;
    if (sigma.size() != c.dim * brownian_dim) throw std::invalid_argument("constant coefficients: sigma shape");
    c.drift = [b](double, std::span<const double>, std::span<double> out) { std::copy(b.begin(), b.end(), out.begin()); };
    c.diffusion = [sigma](double, std::span<const double>, std::span<double> out) {
        std::copy(sigma.begin(), sigma.end(), out.begin());
    };
    return c;
}

/// beta(t, x, e) = e * direction, the usual additive mark.
inline JumpFn additive_jump(std::vector<double> direction) {
    return [direction](double, std::span<const double>, const Mark& e, std::span<double> out) {
        for (std::size_t i = 0; i < direction.size(); ++i) out[i] = e[0] * direction[i];
    };
}

// ---------------------------------------------------------------------------
// Drivers

struct Event {
    double time = 0.0;
    std::size_t index = 0;  ///< grid index of the event time
    Mark mark;
    std::size_t source = 0;
};

/// Brownian increments on each interval of `grid` plus marked jump events.
/// `tags` identify Brownian coordinates: two paths share a coordinate exactly
/// when the tags agree, which is how generator-exact covariation is formed.
struct DriverSet {
    std::size_t brownian_dim = 0;
    std::vector<double> brownian;  ///< intervals x brownian_dim
    std::vector<std::uint64_t> tags;
    std::vector<Event> events;  ///< sorted by time
    std::uint64_t seed = 0;

    std::span<const double> dW(std::size_t k) const { return {brownian.data() + k * brownian_dim, brownian_dim}; }
};

/// Event times of a finite-activity Poisson source on (t0, t1), sorted.
/// t1 itself is never scheduled.
inline std::vector<std::pair<double, Mark>> sample_events(const MarkMeasure& nu, double t0, double t1, Engine& rng) {
    std::vector<std::pair<double, Mark>> out;
    if (nu.mass <= 0.0) return out;
    const double mean = nu.mass * (t1 - t0);
    const std::size_t n = Poisson(mean)(rng);
    Uniform u(0.0, 1.0);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t;
        do t = t0 + (t1 - t0) * u(rng);
        while (!(t > t0) || !(t < t1));
        out.emplace_back(t, Mark());
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& e : out) e.second = nu.sample(rng);
    return out;
}

/// Fills `out` (intervals x width) with independent N(0, dt_k) draws.
inline void sample_brownian(const TimeGrid& grid, std::size_t width, Engine& rng, std::vector<double>& out,
                            std::size_t stride = 0, std::size_t offset = 0) {
    if (stride == 0) stride = width;
    Normal n01(0.0, 1.0);
    const std::size_t K = grid.intervals();
    if (out.size() < K * stride) out.resize(K * stride, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const double s = std::sqrt(grid.dt(k));
        for (std::size_t j = 0; j < width; ++j) out[k * stride + offset + j] = s * n01(rng);
    }
}

/// Samples events from every intensity, augments `grid` with the event times
/// and draws Brownian increments on the augmented grid. Deterministic in seed.
inline std::pair<DriverSet, TimeGrid> sample_drivers(const TimeGrid& grid, std::size_t brownian_dim,
                                                     const std::vector<MarkMeasure>& intensities, std::uint64_t seed) {
    for (const auto& nu : intensities) check_mass(nu.mass);
    DriverSet d;
    d.seed = seed;
    d.brownian_dim = brownian_dim;
    std::vector<double> times;
    for (std::size_t s = 0; s < intensities.size(); ++s) {
        Engine rng = make_engine(seed, {stream::kEvents, s});
        for (auto& [t, m] : sample_events(intensities[s], grid.t_start, grid.t_end, rng)) {
            d.events.push_back(Event{t, 0, m, s});
            times.push_back(t);
        }
    }
    std::stable_sort(d.events.begin(), d.events.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    TimeGrid aug = times.empty() ? grid : merge_points(grid, times);
    for (auto& e : d.events) {
        e.index = aug.index_of(e.time);
        e.time = aug.points[e.index];
    }
    Engine rng = make_engine(seed, {stream::kBrownian});
    sample_brownian(aug, brownian_dim, rng, d.brownian);
    d.tags.resize(brownian_dim);
    for (std::size_t j = 0; j < brownian_dim; ++j) d.tags[j] = derive_seed(seed, {stream::kBrownian, j});
    return {std::move(d), std::move(aug)};
}

// ---------------------------------------------------------------------------
// Paths

struct JumpRecord {
    std::size_t index = 0;  ///< grid index of the post-jump value
    std::vector<double> delta;
};

class SemimartingalePath {
public:
    TimeGrid grid;
    std::size_t dim = 0;
    std::size_t brownian_dim = 0;
    std::vector<double> values;     ///< points x dim
    std::vector<double> mart_cont;  ///< points x dim, M_t
    std::vector<double> fin_var;    ///< points x dim, V_t including jumps
    std::vector<JumpRecord> jumps;
    std::vector<std::ptrdiff_t> jump_slot;  ///< per point: index into jumps or -1
    // Coefficients at the left point of each interval (generator record).
    std::vector<double> drift_rec;  ///< intervals x dim
    std::vector<double> sigma_rec;  ///< intervals x dim x brownian_dim
    std::vector<std::uint64_t> tags;

    std::size_t size() const { return grid.size(); }
    std::span<const double> value(std::size_t k) const { return {values.data() + k * dim, dim}; }
    std::span<const double> mart(std::size_t k) const { return {mart_cont.data() + k * dim, dim}; }
    std::span<const double> finvar(std::size_t k) const { return {fin_var.data() + k * dim, dim}; }
    std::span<const double> sigma(std::size_t k) const {
        return {sigma_rec.data() + k * dim * brownian_dim, dim * brownian_dim};
    }
    std::span<const double> drift(std::size_t k) const { return {drift_rec.data() + k * dim, dim}; }
    const JumpRecord* jump_at(std::size_t k) const {
        return jump_slot.empty() || jump_slot[k] < 0 ? nullptr : &jumps[static_cast<std::size_t>(jump_slot[k])];
    }
    /// X_{t_k-}.
    std::vector<double> left_value(std::size_t k) const {
        std::vector<double> x(value(k).begin(), value(k).end());
        if (const JumpRecord* j = jump_at(k))
            for (std::size_t i = 0; i < dim; ++i) x[i] -= j->delta[i];
        return x;
    }
    /// Continuous increment over interval k: X_{t_{k+1}-} - X_{t_k}.
    std::vector<double> cont_increment(std::size_t k) const {
        std::vector<double> lv = left_value(k + 1);
        for (std::size_t i = 0; i < dim; ++i) lv[i] -= values[k * dim + i];
        return lv;
    }
};

namespace detail {
inline void check_finite(std::span<const double> v, const char* what, double t) {
    for (double x : v)
        if (!std::isfinite(x)) {
            std::ostringstream os;
            os << "non-finite " << what << " at t=" << t;
            throw SimulationError(os.str(), t);
        }
}
}  // namespace detail

/// Left-point Euler scheme on `grid` driven by `drivers`. Jumps occur at
/// event grid points with beta evaluated at the left limit.
inline SemimartingalePath simulate_semimartingale(const Coefficients& coeffs, std::span<const double> x0,
                                                  const DriverSet& drivers, const TimeGrid& grid) {
    coeffs.validate();
    const std::size_t d = coeffs.dim, m = coeffs.brownian_dim;
    if (x0.size() != d) throw std::invalid_argument("simulate: x0 dimension mismatch");
    if (drivers.brownian_dim != m) throw std::invalid_argument("simulate: driver Brownian dimension mismatch");
    const std::size_t K = grid.intervals();
    if (drivers.brownian.size() < K * m) throw std::invalid_argument("simulate: drivers shorter than grid");
    for (const Event& e : drivers.events) {
        if (e.source >= coeffs.jumps.size()) throw std::invalid_argument("simulate: event from unknown jump source");
        if (e.index == 0 || e.index > K || std::abs(grid.points[e.index] - e.time) > grid.tolerance())
            throw std::invalid_argument("simulate: event time is not an interior grid point of this grid");
        if (e.index == K) throw std::invalid_argument("simulate: events at t_end are not supported");
    }

    SemimartingalePath p;
    p.grid = grid;
    p.dim = d;
    p.brownian_dim = m;
    p.tags = drivers.tags;
    p.values.assign(grid.size() * d, 0.0);
    p.mart_cont.assign(grid.size() * d, 0.0);
    p.fin_var.assign(grid.size() * d, 0.0);
    p.jump_slot.assign(grid.size(), -1);
    p.drift_rec.assign(K * d, 0.0);
    p.sigma_rec.assign(K * d * m, 0.0);
    std::copy(x0.begin(), x0.end(), p.values.begin());

    std::vector<double> x(x0.begin(), x0.end()), jump(d), beta(d);
    std::size_t ev = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const double t = grid.points[k], dt = grid.dt(k);
        std::span<double> b(p.drift_rec.data() + k * d, d);
        std::span<double> sig(p.sigma_rec.data() + k * d * m, d * m);
        coeffs.drift(t, x, b);
        detail::check_finite(b, "drift", t);
        if (m > 0) {
            coeffs.diffusion(t, x, sig);
            detail::check_finite(sig, "diffusion", t);
        }
        auto dW = drivers.dW(k);
        for (std::size_t i = 0; i < d; ++i) {
            double dm = 0.0;
            for (std::size_t j = 0; j < m; ++j) dm += sig[i * m + j] * dW[j];
            p.mart_cont[(k + 1) * d + i] = p.mart_cont[k * d + i] + dm;
            p.fin_var[(k + 1) * d + i] = p.fin_var[k * d + i] + b[i] * dt;
        }
        for (std::size_t i = 0; i < d; ++i)
            x[i] = x0[i] + p.mart_cont[(k + 1) * d + i] + p.fin_var[(k + 1) * d + i];
        // jumps at t_{k+1}, sized at the left limit
        bool jumped = false;
        std::fill(jump.begin(), jump.end(), 0.0);
        while (ev < drivers.events.size() && drivers.events[ev].index == k + 1) {
            const Event& e = drivers.events[ev++];
            coeffs.jumps[e.source].beta(grid.points[k + 1], x, e.mark, beta);
            detail::check_finite(beta, "jump size", grid.points[k + 1]);
            for (std::size_t i = 0; i < d; ++i) jump[i] += beta[i];
            jumped = true;
        }
        if (jumped) {
            for (std::size_t i = 0; i < d; ++i) {
                p.fin_var[(k + 1) * d + i] += jump[i];
                x[i] = x0[i] + p.mart_cont[(k + 1) * d + i] + p.fin_var[(k + 1) * d + i];
            }
            p.jump_slot[k + 1] = static_cast<std::ptrdiff_t>(p.jumps.size());
            p.jumps.push_back(JumpRecord{k + 1, jump});
        }
        std::copy(x.begin(), x.end(), p.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
        detail::check_finite(x, "state", grid.points[k + 1]);
    }
    return p;
}

/// X_{t-}. Between grid points the path is taken piecewise constant.
inline std::vector<double> left_limit(const SemimartingalePath& path, double t) {
    const TimeGrid& g = path.grid;
    if (t < g.t_start - g.tolerance() || t > g.t_end + g.tolerance())
        throw std::invalid_argument("left_limit: time outside the path horizon");
    if (auto k = g.find(t)) return path.left_value(*k);
    const std::size_t k = g.floor_index(t);
    return std::vector<double>(path.value(k).begin(), path.value(k).end());
}

enum class CovariationMode { GeneratorExact, Realized };

inline const char* to_string(CovariationMode m) {
    return m == CovariationMode::GeneratorExact ? "generator-exact" : "realized";
}

/// Cumulative [X, Y]^c at every grid point, each a dim_x x dim_y block.
struct CovariationPath {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;  ///< points x rows x cols
    std::span<const double> at(std::size_t k) const { return {values.data() + k * rows * cols, rows * cols}; }
};

/// Increment of [X, Y]^c over interval k.
inline void covariation_increment(const SemimartingalePath& x, const SemimartingalePath& y, std::size_t k,
                                  CovariationMode mode, std::span<double> out) {
    const std::size_t dx = x.dim, dy = y.dim;
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(dx * dy), 0.0);
    if (mode == CovariationMode::Realized) {
        for (std::size_t i = 0; i < dx; ++i) {
            const double a = x.mart_cont[(k + 1) * dx + i] - x.mart_cont[k * dx + i];
            for (std::size_t j = 0; j < dy; ++j)
                out[i * dy + j] = a * (y.mart_cont[(k + 1) * dy + j] - y.mart_cont[k * dy + j]);
        }
        return;
    }
    const double dt = x.grid.dt(k);
    auto sx = x.sigma(k), sy = y.sigma(k);
    for (std::size_t a = 0; a < x.brownian_dim; ++a)
        for (std::size_t b = 0; b < y.brownian_dim; ++b) {
            if (x.tags[a] != y.tags[b]) continue;
            for (std::size_t i = 0; i < dx; ++i)
                for (std::size_t j = 0; j < dy; ++j)
                    out[i * dy + j] += sx[i * x.brownian_dim + a] * sy[j * y.brownian_dim + b] * dt;
        }
}

inline CovariationPath covariation_continuous(const SemimartingalePath& x, const SemimartingalePath& y,
                                              CovariationMode mode = CovariationMode::GeneratorExact) {
    if (x.grid.points != y.grid.points) throw std::invalid_argument("covariation: paths live on different grids");
    CovariationPath c;
    c.rows = x.dim;
    c.cols = y.dim;
    const std::size_t n = x.dim * y.dim;
    c.values.assign(x.size() * n, 0.0);
    std::vector<double> inc(n);
    for (std::size_t k = 0; k + 1 < x.size(); ++k) {
        covariation_increment(x, y, k, mode, inc);
        for (std::size_t i = 0; i < n; ++i) c.values[(k + 1) * n + i] = c.values[k * n + i] + inc[i];
    }
    return c;
}

}  // namespace iwl
