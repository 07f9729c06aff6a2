#pragma once

// Streaming particle engine behind the measure-flow verifiers.
//
// A world holds the common noise, the field driver Y and optionally a
// reference state path X, all on a world grid. A law cloud of N particles
// supplies mu_t through the moments Z_t = <mu_t, g_q> at world points. A copy
// cloud supplies the copy expectations through weight-free sums such as
// sum_i grad g_q(X^i) . dX^i per world step. Formula assembly weights these
// sums with derivatives of the field afterwards, so the particle loop never
// depends on the formula.
//
// Copy particles refine the world grid with their own jump times. Common
// Brownian increments are split over the refined steps with Brownian
// bridges, so every particle sees the same common increment on each world
// step. In empirical mode the law cloud is its own copy cloud and all of its
// event times are world points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/fields.hpp"
#include "iwl/paths.hpp"
#include "iwl/random.hpp"

namespace iwl::flow {

/// Dynamics of a world.
struct FlowModel {
    Coefficients particle;
    std::vector<double> x0;
    double x0_sd = 0.0;  ///< independent N(0, sd^2) spread of every initial coordinate
    std::optional<Coefficients> driver;  ///< dynamics of Y; unused when driver_is_reference
    std::vector<double> y0;
    bool driver_is_reference = false;  ///< Y is the reference path X itself
    bool conditional = false;          ///< particles share the world's common noise

    void validate() const {
        particle.validate();
        if (x0.size() != particle.dim) throw std::invalid_argument("flow model: x0 dimension mismatch");
        if (!(x0_sd >= 0.0)) throw std::invalid_argument("flow model: initial spread must be non-negative");
        if (driver && !driver_is_reference) {
            driver->validate();
            if (y0.size() != driver->dim) throw std::invalid_argument("flow model: y0 dimension mismatch");
            if (driver->common_brownian > particle.common_brownian)
                throw std::invalid_argument("flow model: driver shares more common coordinates than the state has");
            for (const auto& j : driver->jumps) {
                if (!j.common) continue;
                bool found = false;
                for (const auto& pj : particle.jumps) found = found || (pj.common && pj.label == j.label);
                if (!found)
                    throw std::invalid_argument("flow model: common driver jump source '" + j.label +
                                                "' has no common state source with that label");
            }
        }
    }
};

struct EngineOptions {
    TimeGrid base;
    std::size_t n_law = 100;
    std::size_t n_copy = 100;
    bool empirical = false;  ///< law cloud doubles as copy cloud
    bool with_reference = false;
    CovariationMode covariation = CovariationMode::GeneratorExact;
    bool need_pairs = false;        ///< cross-particle sums over common coordinates and world-point jumps
    bool need_same_cov = false;     ///< same-particle covariation projections
    bool need_compensator = false;  ///< nu-quadrature of test-function jumps
    bool need_node_pairs = false;   ///< per-mark pair sums for common jump sources
};

/// Test functions g_q of every measure factor, in term order.
struct InnerIndex {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> offset;  ///< per field term; npos without measure factor
    std::vector<const SmoothFn*> fns;
    std::size_t dim = 0;

    std::size_t size() const { return fns.size(); }

    static InnerIndex of(const RandomField& F) {
        InnerIndex ix;
        ix.dim = F.measure_dim;
        for (const auto& t : F.terms) {
            if (!t.measure) {
                ix.offset.push_back(npos);
                continue;
            }
            ix.offset.push_back(ix.fns.size());
            for (const auto& g : t.measure->inner) ix.fns.push_back(g.get());
        }
        return ix;
    }
};

/// World-level randomness and paths on the world grid.
struct World {
    TimeGrid grid;
    std::size_t common_dim = 0;
    std::vector<double> dB;  ///< intervals x common_dim
    std::vector<std::uint64_t> common_tags;
    std::vector<Event> common_events;  ///< source = particle jump source
    std::optional<SemimartingalePath> driver;
    std::optional<SemimartingalePath> reference;
    DriverTrack track;  ///< of the driver; dim 0 when absent
    /// sigma of the driver / reference on the common coordinates: intervals x dim x common_dim.
    std::vector<double> driver_common, reference_common;
    /// Own events per law particle (empirical mode).
    std::vector<std::vector<Event>> particle_events;

    std::size_t intervals() const { return grid.intervals(); }

    /// Common-coordinate covariation over world step k (common_dim^2).
    void common_cov(std::size_t k, CovariationMode mode, std::span<double> out) const {
        const std::size_t C = common_dim;
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = 0; b < C; ++b)
                out[a * C + b] = mode == CovariationMode::GeneratorExact ? (a == b ? grid.dt(k) : 0.0)
                                                                          : dB[k * C + a] * dB[k * C + b];
    }
};

/// Moments of the law cloud at world points, divided by N.
struct LawSums {
    std::size_t Q = 0;
    std::vector<double> z;       ///< points x Q
    std::vector<double> z_left;  ///< points x Q
    std::vector<char> jumps;     ///< points: some law particle jumped here

    std::span<const double> at(std::size_t k) const { return {z.data() + k * Q, Q}; }
    std::span<const double> left(std::size_t k) const { return {z_left.data() + k * Q, Q}; }
};

/// Copy-cloud sums, not divided by N. Index names: k world interval or
/// point, q test function, l driver coordinate, c common coordinate,
/// s common jump source, e mark node.
struct CopyAggregates {
    std::size_t K = 0, Q = 0, L = 0, C = 0, S = 0, E = 0;
    std::vector<double> dx;     ///< K x Q: grad g . dX over continuous sub-steps
    std::vector<double> dxx;    ///< K x Q: 1/2 hess g : d[X,X]^c
    std::vector<double> drift;  ///< K x Q: grad g . b dt
    std::vector<double> xy;     ///< K x Q x L: grad g^T d[X, Y^l]^c
    // jumps strictly inside world step k
    std::vector<double> jint_plus, jint_minus, jint_gdx;  ///< K x Q: g(X_r), g(X_r-), grad g(X_r-) . dX_r
    std::vector<double> jint_count;                       ///< K
    // jumps at world point k
    std::vector<double> jpt_plus, jpt_minus, jpt_gdx;  ///< points x Q
    std::vector<double> jpt_count;                     ///< points
    std::vector<double> comp;  ///< K x Q: int (g(X + beta) - g(X)) nu(de) dt
    std::vector<double> u1;    ///< K x Q x C: sigma_c^T grad g at world left points
    std::vector<double> u2;    ///< K x Q x Q x C x C
    std::vector<double> v1;    ///< points x Q: world-point jumps of g
    std::vector<double> v2;    ///< points x Q x Q
    std::vector<double> same;  ///< K x Q x Q: grad g_q^T d[X,X]^c grad g_r
    std::vector<double> p1;    ///< K x S x E x Q: g(X + beta(e)) - g(X) at world left points
    std::vector<double> p2;    ///< K x S x E x Q x Q
    std::vector<std::size_t> common_sources;  ///< particle jump source of each s

    void resize(std::size_t K_, std::size_t Q_, std::size_t L_, std::size_t C_, const Coefficients& pc,
                bool conditional, const EngineOptions& o) {
        K = K_;
        Q = Q_;
        L = L_;
        C = C_;
        dx.assign(K * Q, 0.0);
        dxx.assign(K * Q, 0.0);
        drift.assign(K * Q, 0.0);
        xy.assign(K * Q * L, 0.0);
        jint_plus.assign(K * Q, 0.0);
        jint_minus.assign(K * Q, 0.0);
        jint_gdx.assign(K * Q, 0.0);
        jint_count.assign(K, 0.0);
        jpt_plus.assign((K + 1) * Q, 0.0);
        jpt_minus.assign((K + 1) * Q, 0.0);
        jpt_gdx.assign((K + 1) * Q, 0.0);
        jpt_count.assign(K + 1, 0.0);
        comp.assign(o.need_compensator ? K * Q : 0, 0.0);
        u1.assign(o.need_pairs ? K * Q * C : 0, 0.0);
        u2.assign(o.need_pairs ? K * Q * Q * C * C : 0, 0.0);
        v1.assign(o.need_pairs ? (K + 1) * Q : 0, 0.0);
        v2.assign(o.need_pairs ? (K + 1) * Q * Q : 0, 0.0);
        same.assign(o.need_same_cov ? K * Q * Q : 0, 0.0);
        common_sources.clear();
        E = 0;
        if (o.need_node_pairs && o.need_compensator && conditional)
            for (std::size_t s = 0; s < pc.jumps.size(); ++s)
                if (pc.jumps[s].common) {
                    common_sources.push_back(s);
                    E = std::max(E, pc.jumps[s].nu.nodes.size());
                }
        S = common_sources.size();
        p1.assign(K * S * E * Q, 0.0);
        p2.assign(K * S * E * Q * Q, 0.0);
    }
    double U1(std::size_t k, std::size_t q, std::size_t c) const { return u1[(k * Q + q) * C + c]; }
    double U2(std::size_t k, std::size_t q, std::size_t r, std::size_t c, std::size_t e) const {
        return u2[(((k * Q + q) * Q + r) * C + c) * C + e];
    }
    double P1(std::size_t k, std::size_t s, std::size_t e, std::size_t q) const { return p1[((k * S + s) * E + e) * Q + q]; }
    double P2(std::size_t k, std::size_t s, std::size_t e, std::size_t q, std::size_t r) const {
        return p2[(((k * S + s) * E + e) * Q + q) * Q + r];
    }
    double XY(std::size_t k, std::size_t q, std::size_t l) const { return xy[(k * Q + q) * L + l]; }
};

struct WorldResult {
    World world;
    LawSums law;
    CopyAggregates copies;
    std::size_t n_law = 0;
    std::size_t n_copy = 0;
};

// ---------------------------------------------------------------------------
// Accumulating visitor

class Accumulator {
public:
    /// `shared` is the number of leading Brownian coordinates the particles
    /// take from the world. Either sink may be null.
    Accumulator(const InnerIndex& ix, const World& w, const Coefficients& pc, const EngineOptions& opt,
                std::size_t shared, LawSums* sums, CopyAggregates* agg)
        : ix_(ix), w_(w), pc_(pc), opt_(opt), cc_(shared), sums_(sums), agg_(agg) {
        const std::size_t d = pc.dim, Q = ix.size();
        g_.resize(Q * d);
        h_.resize(Q * d * d);
        proj_.resize(Q * std::max<std::size_t>(cc_, 1));
        cov_.resize(d * d);
        beta_.resize(d);
        shifted_.resize(d);
        gl_.resize(Q);
        dgv_.resize(Q);
        ccov_.resize(cc_ * cc_);
    }

    /// World point k with left limit x_left and value x.
    void point(std::size_t k, std::span<const double> x_left, std::span<const double> x) {
        const std::size_t Q = ix_.size();
        const bool moved = !std::equal(x_left.begin(), x_left.end(), x.begin());
        if (sums_) {
            for (std::size_t q = 0; q < Q; ++q) {
                const double v = ix_.fns[q]->value(x);
                sums_->z[k * Q + q] += v;
                sums_->z_left[k * Q + q] += moved ? ix_.fns[q]->value(x_left) : v;
            }
            if (moved) sums_->jumps[k] = 1;
        }
        if (agg_ && moved) jump(k, false, x_left, x);
    }

    /// Continuous step inside world interval k from x. `first` marks the step
    /// that starts at the world point t_k. `dW_shared` holds the shared
    /// Brownian increments, `dm` the martingale increment sigma dW.
    void substep(std::size_t k, bool first, double dt, std::span<const double> x, std::span<const double> b,
                 std::span<const double> sigma, std::span<const double> dW_shared, std::span<const double> dm,
                 std::span<const double> dx) {
        if (!agg_) return;
        const std::size_t d = pc_.dim, Q = ix_.size(), m = pc_.brownian_dim;
        CopyAggregates& A = *agg_;
        const bool gen = opt_.covariation == CovariationMode::GeneratorExact;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                if (gen) {
                    double s = 0.0;
                    for (std::size_t a = 0; a < m; ++a) s += sigma[i * m + a] * sigma[j * m + a];
                    cov_[i * d + j] = s * dt;
                } else {
                    cov_[i * d + j] = dm[i] * dm[j];
                }
            }
        for (std::size_t q = 0; q < Q; ++q) {
            std::span<double> g(g_.data() + q * d, d), h(h_.data() + q * d * d, d * d);
            ix_.fns[q]->gradient(x, g);
            ix_.fns[q]->hessian(x, h);
            double gdx = 0.0, gb = 0.0, hc = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                gdx += g[i] * dx[i];
                gb += g[i] * b[i];
            }
            for (std::size_t i = 0; i < d * d; ++i) hc += h[i] * cov_[i];
            A.dx[k * Q + q] += gdx;
            A.drift[k * Q + q] += gb * dt;
            A.dxx[k * Q + q] += 0.5 * hc;
            for (std::size_t c = 0; c < cc_; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += g[i] * sigma[i * m + c];
                proj_[q * cc_ + c] = s;
            }
        }
        if (opt_.need_same_cov)
            for (std::size_t q = 0; q < Q; ++q)
                for (std::size_t r = 0; r < Q; ++r) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t j = 0; j < d; ++j) s += g_[q * d + i] * cov_[i * d + j] * g_[r * d + j];
                    A.same[(k * Q + q) * Q + r] += s;
                }
        if (cc_ == 0) return;
        for (std::size_t a = 0; a < cc_; ++a)
            for (std::size_t c = 0; c < cc_; ++c)
                ccov_[a * cc_ + c] = gen ? (a == c ? dt : 0.0) : dW_shared[a] * dW_shared[c];
        const std::size_t L = A.L, WC = w_.common_dim;
        for (std::size_t q = 0; q < Q; ++q)
            for (std::size_t l = 0; l < L; ++l) {
                double s = 0.0;
                for (std::size_t a = 0; a < cc_; ++a)
                    for (std::size_t c = 0; c < cc_; ++c)
                        s += proj_[q * cc_ + a] * ccov_[a * cc_ + c] * w_.driver_common[(k * L + l) * WC + c];
                A.xy[(k * Q + q) * L + l] += s;
            }
        if (first && opt_.need_pairs)
            for (std::size_t q = 0; q < Q; ++q)
                for (std::size_t a = 0; a < cc_; ++a) {
                    A.u1[(k * Q + q) * cc_ + a] += proj_[q * cc_ + a];
                    for (std::size_t r = 0; r < Q; ++r)
                        for (std::size_t c = 0; c < cc_; ++c)
                            A.u2[(((k * Q + q) * Q + r) * cc_ + a) * cc_ + c] += proj_[q * cc_ + a] * proj_[r * cc_ + c];
                }
    }

    /// Compensator sums for the continuous sub-step [t, t + dt) from x.
    void compensate(std::size_t k, bool first, double t, double dt, std::span<const double> x) {
        if (!agg_ || !opt_.need_compensator) return;
        const std::size_t d = pc_.dim, Q = ix_.size();
        CopyAggregates& A = *agg_;
        for (std::size_t q = 0; q < Q; ++q) gl_[q] = ix_.fns[q]->value(x);
        for (std::size_t s = 0; s < pc_.jumps.size(); ++s) {
            const JumpSource& src = pc_.jumps[s];
            if (src.nu.mass == 0.0) continue;
            std::size_t cs = InnerIndex::npos;
            if (first)
                for (std::size_t j = 0; j < A.S; ++j)
                    if (A.common_sources[j] == s) cs = j;
            for (std::size_t e = 0; e < src.nu.nodes.size(); ++e) {
                const auto& [mark, wgt] = src.nu.nodes[e];
                src.beta(t, x, mark, beta_);
                for (std::size_t i = 0; i < d; ++i) shifted_[i] = x[i] + beta_[i];
                for (std::size_t q = 0; q < Q; ++q) {
                    dgv_[q] = ix_.fns[q]->value(shifted_) - gl_[q];
                    A.comp[k * Q + q] += src.nu.mass * wgt * dgv_[q] * dt;
                }
                if (cs == InnerIndex::npos) continue;
                for (std::size_t q = 0; q < Q; ++q) {
                    A.p1[((k * A.S + cs) * A.E + e) * Q + q] += dgv_[q];
                    for (std::size_t r = 0; r < Q; ++r)
                        A.p2[(((k * A.S + cs) * A.E + e) * Q + q) * Q + r] += dgv_[q] * dgv_[r];
                }
            }
        }
    }

    /// Jump from x_left to x. Interior jumps belong to world interval k,
    /// world-point jumps to world point k.
    void jump(std::size_t k, bool interior, std::span<const double> x_left, std::span<const double> x) {
        if (!agg_) return;
        const std::size_t d = pc_.dim, Q = ix_.size();
        CopyAggregates& A = *agg_;
        for (std::size_t q = 0; q < Q; ++q) {
            ix_.fns[q]->gradient(x_left, std::span<double>(g_.data(), d));
            double gdx = 0.0;
            for (std::size_t i = 0; i < d; ++i) gdx += g_[i] * (x[i] - x_left[i]);
            const double plus = ix_.fns[q]->value(x), minus = ix_.fns[q]->value(x_left);
            dgv_[q] = plus - minus;
            auto& P = interior ? A.jint_plus : A.jpt_plus;
            auto& M = interior ? A.jint_minus : A.jpt_minus;
            auto& G = interior ? A.jint_gdx : A.jpt_gdx;
            P[k * Q + q] += plus;
            M[k * Q + q] += minus;
            G[k * Q + q] += gdx;
        }
        (interior ? A.jint_count : A.jpt_count)[k] += 1.0;
        if (!interior && opt_.need_pairs)
            for (std::size_t q = 0; q < Q; ++q) {
                A.v1[k * Q + q] += dgv_[q];
                for (std::size_t r = 0; r < Q; ++r) A.v2[(k * Q + q) * Q + r] += dgv_[q] * dgv_[r];
            }
    }

private:
    const InnerIndex& ix_;
    const World& w_;
    const Coefficients& pc_;
    const EngineOptions& opt_;
    std::size_t cc_;
    LawSums* sums_;
    CopyAggregates* agg_;
    std::vector<double> g_, h_, proj_, cov_, beta_, shifted_, gl_, dgv_, ccov_;
};

// ---------------------------------------------------------------------------
// Particle stepping

namespace detail {

inline bool by_time(const Event& a, const Event& b) { return a.time < b.time; }

/// Events of every jump source a particle does not share with the world.
inline std::vector<Event> own_events(const Coefficients& c, bool shared_common, const TimeGrid& g, Engine& rng) {
    std::vector<Event> out;
    for (std::size_t s = 0; s < c.jumps.size(); ++s) {
        if (shared_common && c.jumps[s].common) continue;
        for (auto& [t, m] : sample_events(c.jumps[s].nu, g.t_start, g.t_end, rng)) out.push_back({t, 0, m, s});
    }
    std::stable_sort(out.begin(), out.end(), by_time);
    return out;
}

inline void initial_state(const FlowModel& m, Engine& rng, std::vector<double>& x) {
    x = m.x0;
    if (m.x0_sd > 0.0) {
        Normal n01(0.0, 1.0);
        for (double& v : x) v += m.x0_sd * n01(rng);
    }
}

/// Simulates one particle on the world grid refined by its own events and
/// feeds `acc`. The first `shared` Brownian coordinates follow the world's
/// dB; with `common_events` set the world's common events move it too.
inline void run_particle(const World& w, const Coefficients& c, std::vector<double> x, const std::vector<Event>& own,
                         std::size_t shared, bool common_events, Engine& rng, Accumulator& acc) {
    const TimeGrid& g = w.grid;
    const std::size_t K = g.intervals(), d = c.dim, m = c.brownian_dim;
    const double tol = g.tolerance();
    Normal n01(0.0, 1.0);
    std::vector<double> xl(d), b(d), sig(d * m, 0.0), dW(m), dm(d), dx(d), jmp(d), beta(d), remaining(shared);
    std::vector<double> taus;
    std::vector<std::size_t> first_event;  // own-event index at each interior tau
    acc.point(0, x, x);
    std::size_t ev = 0, cev = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const double t0 = g.points[k], t1 = g.points[k + 1];
        taus.assign(1, t0);
        first_event.clear();
        std::size_t ev_end = ev;
        while (ev_end < own.size() && own[ev_end].time < t1 - tol) {
            if (own[ev_end].time > taus.back() + tol) {
                taus.push_back(own[ev_end].time);
                first_event.push_back(ev_end);
            }
            ++ev_end;
        }
        taus.push_back(t1);
        double remaining_len = t1 - t0;
        for (std::size_t a = 0; a < shared; ++a) remaining[a] = w.dB[k * w.common_dim + a];
        for (std::size_t a = 0; a + 1 < taus.size(); ++a) {
            const double t = taus[a], dt = taus[a + 1] - t;
            const bool last = a + 2 == taus.size();
            c.drift(t, x, b);
            if (m > 0) c.diffusion(t, x, sig);
            for (std::size_t j = 0; j < shared; ++j) {
                if (last) {
                    dW[j] = remaining[j];
                } else {
                    // Brownian bridge: the piece over dt given the remaining increment
                    const double mean = remaining[j] * dt / remaining_len;
                    const double var = dt * (remaining_len - dt) / remaining_len;
                    dW[j] = mean + std::sqrt(std::max(var, 0.0)) * n01(rng);
                    remaining[j] -= dW[j];
                }
            }
            remaining_len -= dt;
            const double sq = std::sqrt(dt);
            for (std::size_t j = shared; j < m; ++j) dW[j] = sq * n01(rng);
            for (std::size_t i = 0; i < d; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < m; ++j) s += sig[i * m + j] * dW[j];
                dm[i] = s;
                dx[i] = b[i] * dt + s;
            }
            acc.substep(k, a == 0, dt, x, b, sig, std::span<const double>(dW.data(), shared), dm, dx);
            acc.compensate(k, a == 0, t, dt, x);
            for (std::size_t i = 0; i < d; ++i) x[i] += dx[i];
            if (last) break;
            const double tj = taus[a + 1];
            std::fill(jmp.begin(), jmp.end(), 0.0);
            for (std::size_t e = first_event[a]; e < ev_end && std::abs(own[e].time - tj) <= tol; ++e) {
                c.jumps[own[e].source].beta(tj, x, own[e].mark, beta);
                for (std::size_t i = 0; i < d; ++i) jmp[i] += beta[i];
            }
            xl = x;
            for (std::size_t i = 0; i < d; ++i) x[i] += jmp[i];
            acc.jump(k, true, xl, x);
        }
        ev = ev_end;
        // jumps at the world point t1, sized at the left limit
        xl = x;
        std::fill(jmp.begin(), jmp.end(), 0.0);
        if (common_events) {
            while (cev < w.common_events.size() && w.common_events[cev].index < k + 1) ++cev;
            for (std::size_t e = cev; e < w.common_events.size() && w.common_events[e].index == k + 1; ++e) {
                c.jumps[w.common_events[e].source].beta(t1, xl, w.common_events[e].mark, beta);
                for (std::size_t i = 0; i < d; ++i) jmp[i] += beta[i];
            }
        }
        while (ev < own.size() && std::abs(own[ev].time - t1) <= tol) {
            c.jumps[own[ev].source].beta(t1, xl, own[ev].mark, beta);
            for (std::size_t i = 0; i < d; ++i) jmp[i] += beta[i];
            ++ev;
        }
        for (std::size_t i = 0; i < d; ++i) x[i] += jmp[i];
        for (double v : x)
            if (!std::isfinite(v)) throw SimulationError("non-finite particle state at t=" + std::to_string(t1), t1);
        acc.point(k + 1, xl, x);
    }
}

/// Drivers of a world-level path. The first `shared` Brownian coordinates
/// are the world's common ones, the rest are drawn from `rng`. Common jump
/// sources take the world's common events, linked by label to `particle`.
inline DriverSet world_drivers(const World& w, const Coefficients& c, const Coefficients& particle, std::size_t shared,
                               std::vector<Event> own, Engine& rng, std::uint64_t tag_seed) {
    DriverSet d;
    d.brownian_dim = c.brownian_dim;
    const std::size_t K = w.intervals(), m = c.brownian_dim;
    d.brownian.assign(K * m, 0.0);
    sample_brownian(w.grid, m - shared, rng, d.brownian, m, shared);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < shared; ++j) d.brownian[k * m + j] = w.dB[k * w.common_dim + j];
    d.tags.resize(m);
    for (std::size_t j = 0; j < m; ++j) d.tags[j] = j < shared ? w.common_tags[j] : derive_seed(tag_seed, {j});
    for (std::size_t s = 0; s < c.jumps.size(); ++s) {
        if (!c.jumps[s].common) continue;
        for (const Event& e : w.common_events)
            if (particle.jumps[e.source].label == c.jumps[s].label) own.push_back({e.time, e.index, e.mark, s});
    }
    for (auto& e : own) {
        e.index = w.grid.index_of(e.time);
        e.time = w.grid.points[e.index];
    }
    std::stable_sort(own.begin(), own.end(), by_time);
    d.events = std::move(own);
    return d;
}

inline void common_loadings(const SemimartingalePath& p, std::size_t shared, std::size_t C, std::vector<double>& out) {
    const std::size_t K = p.grid.intervals(), n = p.dim, m = p.brownian_dim;
    out.assign(K * n * C, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        auto s = p.sigma(k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < shared; ++c) out[(k * n + i) * C + c] = s[i * m + c];
    }
}

}  // namespace detail

/// Common noise, driver and reference path of world `w`. In empirical mode
/// the law particles' own events are drawn here from `law_rng` and merged
/// into the world grid.
inline World build_world(const FlowModel& model, const EngineOptions& opt, std::uint64_t seed, std::size_t w,
                         Engine* law_rng = nullptr) {
    World W;
    const Coefficients& pc = model.particle;
    const TimeGrid& base = opt.base;
    W.common_dim = pc.common_brownian;
    std::vector<double> times;
    if (model.conditional || (model.driver && !model.driver_is_reference) || opt.with_reference)
        for (std::size_t s = 0; s < pc.jumps.size(); ++s) {
            if (!pc.jumps[s].common) continue;
            Engine rng = make_engine(seed, {stream::kWorld, w, stream::kCommon, stream::kEvents, s});
            for (auto& [t, m] : sample_events(pc.jumps[s].nu, base.t_start, base.t_end, rng)) {
                W.common_events.push_back({t, 0, m, s});
                times.push_back(t);
            }
        }
    std::stable_sort(W.common_events.begin(), W.common_events.end(), detail::by_time);
    const bool own_driver = model.driver && !model.driver_is_reference;
    std::vector<Event> driver_own, ref_own;
    Engine drv_rng = make_engine(seed, {stream::kWorld, w, stream::kDriver});
    Engine ref_rng = make_engine(seed, {stream::kWorld, w, stream::kReference});
    if (own_driver)
        for (std::size_t s = 0; s < model.driver->jumps.size(); ++s) {
            if (model.driver->jumps[s].common) continue;
            for (auto& [t, m] : sample_events(model.driver->jumps[s].nu, base.t_start, base.t_end, drv_rng)) {
                driver_own.push_back({t, 0, m, s});
                times.push_back(t);
            }
        }
    if (opt.with_reference)
        for (std::size_t s = 0; s < pc.jumps.size(); ++s) {
            if (pc.jumps[s].common) continue;
            for (auto& [t, m] : sample_events(pc.jumps[s].nu, base.t_start, base.t_end, ref_rng)) {
                ref_own.push_back({t, 0, m, s});
                times.push_back(t);
            }
        }
    if (opt.empirical) {
        if (!law_rng) throw std::logic_error("build_world: empirical mode needs the law-cloud stream");
        W.particle_events.resize(opt.n_law);
        for (std::size_t i = 0; i < opt.n_law; ++i) {
            W.particle_events[i] = detail::own_events(pc, model.conditional, base, *law_rng);
            for (const auto& e : W.particle_events[i]) times.push_back(e.time);
        }
    }
    W.grid = times.empty() ? base : merge_points(base, times);
    for (auto& e : W.common_events) {
        e.index = W.grid.index_of(e.time);
        e.time = W.grid.points[e.index];
    }
    for (auto& pe : W.particle_events)
        for (auto& e : pe) {
            e.index = W.grid.index_of(e.time);
            e.time = W.grid.points[e.index];
        }
    {
        Engine rng = make_engine(seed, {stream::kWorld, w, stream::kCommon, stream::kBrownian});
        sample_brownian(W.grid, W.common_dim, rng, W.dB);
        W.dB.resize(W.intervals() * W.common_dim);
        for (std::size_t c = 0; c < W.common_dim; ++c)
            W.common_tags.push_back(derive_seed(seed, {stream::kWorld, w, stream::kCommon, stream::kBrownian, c}));
    }
    if (opt.with_reference) {
        std::vector<double> x0;
        detail::initial_state(model, ref_rng, x0);
        const auto d = detail::world_drivers(W, pc, pc, W.common_dim, std::move(ref_own), ref_rng,
                                             derive_seed(seed, {stream::kWorld, w, stream::kReference, stream::kBrownian}));
        W.reference = simulate_semimartingale(pc, x0, d, W.grid);
        detail::common_loadings(*W.reference, W.common_dim, W.common_dim, W.reference_common);
    }
    if (model.driver_is_reference) {
        if (!W.reference) throw std::invalid_argument("build_world: the driver is the reference path but none is simulated");
        W.driver = W.reference;
        W.driver_common = W.reference_common;
    } else if (own_driver) {
        const Coefficients& dc = *model.driver;
        const auto d = detail::world_drivers(W, dc, pc, dc.common_brownian, std::move(driver_own), drv_rng,
                                             derive_seed(seed, {stream::kWorld, w, stream::kDriver, stream::kBrownian}));
        W.driver = simulate_semimartingale(dc, model.y0, d, W.grid);
        detail::common_loadings(*W.driver, dc.common_brownian, W.common_dim, W.driver_common);
    }
    if (W.driver) W.track = driver_track(*W.driver);
    return W;
}

/// Builds world `w` and streams its particle clouds.
inline WorldResult run_world(const FlowModel& model, const InnerIndex& ix, const EngineOptions& opt,
                             std::uint64_t seed, std::size_t w) {
    if (opt.n_law == 0) throw std::invalid_argument("flow engine: the law cloud needs at least one particle");
    if (!opt.empirical && opt.n_copy == 0) throw std::invalid_argument("flow engine: the copy cloud needs at least one particle");
    if (ix.dim != 0 && ix.dim != model.particle.dim)
        throw std::invalid_argument("flow engine: field measure dimension differs from the state dimension");
    WorldResult R;
    Engine law_rng = make_engine(seed, {stream::kLawCloud, w});
    Engine copy_rng = make_engine(seed, {stream::kCopyCloud, w});
    R.world = build_world(model, opt, seed, w, &law_rng);
    const World& W = R.world;
    const Coefficients& pc = model.particle;
    const std::size_t K = W.intervals(), Q = ix.size(), L = W.track.dim;
    const std::size_t shared = model.conditional ? W.common_dim : 0;
    R.law.Q = Q;
    R.law.z.assign((K + 1) * Q, 0.0);
    R.law.z_left.assign((K + 1) * Q, 0.0);
    R.law.jumps.assign(K + 1, 0);
    R.copies.resize(K, Q, L, shared, pc, model.conditional, opt);
    R.n_law = opt.n_law;
    R.n_copy = opt.empirical ? opt.n_law : opt.n_copy;
    std::vector<double> x;
    if (opt.empirical) {
        Accumulator acc(ix, W, pc, opt, shared, &R.law, &R.copies);
        for (std::size_t i = 0; i < opt.n_law; ++i) {
            detail::initial_state(model, law_rng, x);
            detail::run_particle(W, pc, x, W.particle_events[i], shared, model.conditional, law_rng, acc);
        }
    } else {
        Accumulator law(ix, W, pc, opt, shared, &R.law, nullptr);
        for (std::size_t i = 0; i < opt.n_law; ++i) {
            detail::initial_state(model, law_rng, x);
            const auto own = detail::own_events(pc, model.conditional, W.grid, law_rng);
            detail::run_particle(W, pc, x, own, shared, model.conditional, law_rng, law);
        }
        Accumulator copy(ix, W, pc, opt, shared, nullptr, &R.copies);
        for (std::size_t i = 0; i < opt.n_copy; ++i) {
            detail::initial_state(model, copy_rng, x);
            const auto own = detail::own_events(pc, model.conditional, W.grid, copy_rng);
            detail::run_particle(W, pc, x, own, shared, model.conditional, copy_rng, copy);
        }
    }
    const double inv = 1.0 / static_cast<double>(opt.n_law);
    for (double& v : R.law.z) v *= inv;
    for (double& v : R.law.z_left) v *= inv;
    return R;
}

}  // namespace iwl::flow
