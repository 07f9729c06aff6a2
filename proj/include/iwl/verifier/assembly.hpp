#pragma once

// Term assembly for the measure-flow formulas. The engine hands over
// weight-free sums per world step; here they are weighted with the outer
// derivatives of the field at the law moments Z and the scalar field
// coefficients c_p along the driver path.
//
// World interval k covers (t_k, t_{k+1}] and owns the jumps at t_{k+1}.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/fields.hpp"
#include "iwl/verifier/flow_engine.hpp"
#include "iwl/verifier/pathwise.hpp"
#include "iwl/verifier/report.hpp"

namespace iwl::flow {

enum class Form { Thm3, Thm4, Coro1, Coro1Alt, Coro2, Coro3, Coro4 };

inline const char* to_string(Form f) {
    switch (f) {
        case Form::Thm3: return "thm3";
        case Form::Thm4: return "thm4";
        case Form::Coro1: return "coro1";
        case Form::Coro1Alt: return "coro1-alt";
        case Form::Coro2: return "coro2";
        case Form::Coro3: return "coro3";
        case Form::Coro4: return "coro4";
    }
    return "?";
}

inline bool is_conditional(Form f) { return f == Form::Thm4 || f == Form::Coro2 || f == Form::Coro4; }
inline bool needs_reference(Form f) { return f == Form::Coro1 || f == Form::Coro1Alt || f == Form::Coro2; }
inline bool is_poisson(Form f) { return f == Form::Coro3 || f == Form::Coro4; }

struct AssemblyOptions {
    Form form = Form::Thm3;
    bool corrections = false;      ///< add the finite-N terms I2, I3 (empirical mode)
    bool force_indicator = false;  ///< take 1{mu_r = mu_r-} = 1 everywhere
    double delta_shift = 0.0;      ///< constant added to dF/dmu before differencing
    CovariationMode covariation = CovariationMode::GeneratorExact;
    Window window;
    TermSeries* record = nullptr;
};

/// Engine switches a form needs.
inline EngineOptions engine_options(Form f, bool empirical, TimeGrid grid, std::size_t n_law, std::size_t n_copy,
                                    CovariationMode mode) {
    EngineOptions o;
    o.base = std::move(grid);
    o.n_law = n_law;
    o.n_copy = n_copy;
    o.empirical = empirical;
    o.covariation = mode;
    o.with_reference = needs_reference(f);
    o.need_pairs = is_conditional(f) || empirical;
    o.need_same_cov = empirical;
    o.need_compensator = is_poisson(f);
    o.need_node_pairs = f == Form::Coro4;
    return o;
}

namespace detail {

/// Ordered labelled accumulators; diagnostics are reported but not summed.
struct Slots {
    static constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::string> labels;
    std::vector<char> diag;
    std::vector<double> acc;

    std::size_t add(std::string label, bool diagnostic = false) {
        labels.push_back(std::move(label));
        diag.push_back(diagnostic);
        acc.push_back(0.0);
        return labels.size() - 1;
    }
    void put(std::size_t i, double v) {
        if (i != none) acc[i] += v;
    }
    double rhs() const {
        double s = 0.0;
        for (std::size_t i = 0; i < acc.size(); ++i)
            if (!diag[i]) s += acc[i];
        return s;
    }
    void start_series(TermSeries* rec, double t0) const {
        if (!rec) return;
        rec->labels.clear();
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (!diag[i]) rec->labels.push_back(labels[i]);
        rec->times.assign(1, t0);
        rec->rows.assign(1, std::vector<double>(rec->labels.size() + 2, 0.0));
    }
    void push_series(TermSeries* rec, double t, double lhs) const {
        if (!rec) return;
        std::vector<double> row;
        for (std::size_t i = 0; i < acc.size(); ++i)
            if (!diag[i]) row.push_back(acc[i]);
        row.push_back(lhs);
        row.push_back(lhs - rhs());
        rec->times.push_back(t);
        rec->rows.push_back(std::move(row));
    }
    TermBreakdown finish(std::string formula, double lhs) const {
        TermBreakdown b;
        b.formula = std::move(formula);
        b.lhs = lhs;
        for (std::size_t i = 0; i < acc.size(); ++i) {
            if (diag[i])
                b.diagnose(labels[i], acc[i]);
            else
                b.add(labels[i], acc[i]);
        }
        b.finalize();
        return b;
    }
};

/// Outer function of a measure factor at a moment vector.
struct OuterEval {
    double v = 1.0;
    std::vector<double> g, h;  ///< gradient (n), Hessian (n x n); empty without measure factor
};

/// phi of a term at a point; phi = 1 without space factor.
struct SpaceEval {
    double v = 1.0;
    std::vector<double> g, h;
};

/// Field-wide evaluation helpers bound to one world.
class FieldView {
public:
    FieldView(const RandomField& F, const InnerIndex& ix) : F_(F), ix_(ix) {}

    std::size_t terms() const { return F_.terms.size(); }
    const FieldTerm& term(std::size_t p) const { return F_.terms[p]; }
    std::size_t offset(std::size_t p) const { return ix_.offset[p]; }
    std::size_t arity(std::size_t p) const { return F_.terms[p].measure ? F_.terms[p].measure->arity() : 0; }

    void outer(std::size_t p, std::span<const double> z, OuterEval& o, bool second = true) const {
        const auto& t = F_.terms[p];
        if (!t.measure) {
            o.v = 1.0;
            o.g.clear();
            o.h.clear();
            return;
        }
        const std::size_t n = t.measure->arity();
        auto zb = z.subspan(ix_.offset[p], n);
        o.v = t.measure->outer->value(zb);
        o.g.resize(n);
        t.measure->outer->gradient(zb, o.g);
        if (second) {
            o.h.resize(n * n);
            t.measure->outer->hessian(zb, o.h);
        }
    }
    void space(std::size_t p, std::span<const double> x, SpaceEval& s) const {
        const auto& t = F_.terms[p];
        if (!t.space || x.empty()) {
            s.v = 1.0;
            s.g.assign(x.size(), 0.0);
            s.h.assign(x.size() * x.size(), 0.0);
            return;
        }
        const std::size_t d = x.size();
        s.v = t.space->value(x);
        s.g.resize(d);
        s.h.resize(d * d);
        t.space->gradient(x, s.g);
        t.space->hessian(x, s.h);
    }
    /// F(c, x, Z) with coefficients from `fc` at point k.
    double value(const FieldCoefficients& fc, std::size_t k, bool left, std::span<const double> z,
                 std::span<const double> x) const {
        double s = 0.0;
        OuterEval o;
        for (std::size_t p = 0; p < terms(); ++p) {
            const double c = left ? fc.c_left(k, p) : fc.c(k, p);
            if (c == 0.0) continue;
            outer(p, z, o, false);
            const auto& sp = F_.terms[p].space;
            s += c * o.v * (sp && !x.empty() ? sp->value(x) : 1.0);
        }
        return s;
    }

private:
    const RandomField& F_;
    const InnerIndex& ix_;
};

inline bool driver_jumps(const DriverTrack& Y, std::size_t k) {
    for (std::size_t l = 0; l < Y.dim; ++l)
        if (Y.jump(k, l) != 0.0) return true;
    return false;
}

inline FieldCoefficients coefficients_for(const RandomField& F, const World& W) {
    return field_coefficients(F, W.grid, W.track.dim > 0 ? &W.track : nullptr);
}

}  // namespace detail

/// d[Z_q, Z_r]^c over world step k from the copy sums (N^2 normalization).
inline double law_covariation(const CopyAggregates& A, const std::vector<double>& M, std::size_t k, std::size_t q,
                              std::size_t r, double n) {
    double s = A.same.empty() ? 0.0 : A.same[(k * A.Q + q) * A.Q + r];
    if (!A.u1.empty())
        for (std::size_t c = 0; c < A.C; ++c)
            for (std::size_t e = 0; e < A.C; ++e)
                s += M[c * A.C + e] * (A.U1(k, q, c) * A.U1(k, r, e) - A.U2(k, q, r, c, e));
    return s / (n * n);
}

/// Formula-level assembly of the full and conditional measure-flow forms and
/// their time-space variants on one world.
inline TermBreakdown assemble(const RandomField& F, const InnerIndex& ix, const WorldResult& R,
                              const AssemblyOptions& o) {
    using detail::Slots;
    if (is_poisson(o.form)) throw std::invalid_argument("assemble: use assemble_poisson for the Poisson forms");
    const World& W = R.world;
    const LawSums& L = R.law;
    const CopyAggregates& A = R.copies;
    const TimeGrid& g = W.grid;
    const auto [ks, kt] = o.window.indices(g);
    const bool xdep = needs_reference(o.form);
    const bool cond = is_conditional(o.form);
    const bool alt = o.form == Form::Coro1Alt;
    if (xdep && !W.reference) throw std::invalid_argument("assemble: form needs a reference state path");
    if (!xdep && F.has_space()) throw std::invalid_argument("assemble: field depends on x; use a time-space-measure form");
    const detail::FieldView view(F, ix);
    const FieldCoefficients fc = detail::coefficients_for(F, W);
    const DriverTrack& Y = W.track;
    const double Nc = static_cast<double>(R.n_copy), N = static_cast<double>(R.n_law);
    const double pairs = Nc * (Nc - 1.0);
    static const std::vector<double> none;

    std::optional<DiscreteSemimartingale> X;
    if (xdep) {
        X = discretize(*W.reference, o.covariation);
        if (F.has_space() && F.x_dim != X->dim)
            throw std::invalid_argument("assemble: field x-dimension differs from the state");
    }
    const std::size_t d = X ? X->dim : 0;
    std::vector<double> covXY(d * Y.dim);

    Slots S;
    const std::size_t iG = S.add("int G dr");
    const std::size_t iH = S.add("int H dY");
    const std::size_t iMu = S.add("E~ int dmuF dX~");
    const std::size_t iMuQ = S.add("1/2 E~ int dxdmuF d[X~,X~]c");
    const std::size_t iJF = S.add(xdep ? "jump sum: F in mu" : "jump sum: F");
    const std::size_t iJD = S.add("E~ jump sum: dF/dmu 1{mu=mu-}");
    const std::size_t iJL = S.add("-E~ sum dmuF dX~");
    std::size_t iPair = Slots::none, iMuH = Slots::none, iDbl = Slots::none, iDH = Slots::none, iCross = Slots::none;
    if (cond) {
        iPair = S.add("1/2 E' int dmumuF d[X',X'']c");
        iMuH = S.add("E' int dmuH d[X',Y]c");
        iDbl = S.add("E' jump sum: 1/2 d2F/dmu2 double jump");
        iDH = S.add("E' jump sum: dH/dmu dY");
    }
    std::size_t iX = Slots::none, iXQ = Slots::none, iXH = Slots::none, iXJ = Slots::none;
    if (xdep) {
        iX = S.add("int dF/dx dX");
        iXQ = S.add("1/2 int d2F/dx2 d[X,X]c");
        iXH = S.add("int dH/dx d[X,Y]c");
        iXJ = S.add("jump sum: F in x");
        if (cond) iCross = S.add("E' int dxdmuF d[X,X']c");
    }
    std::size_t iI2 = Slots::none, iI3 = Slots::none;
    if (o.corrections) {
        iI2 = S.add("I2: 1/2 d2f d[Z,Z]c");
        iI3 = S.add("I3: df d[Z,Y]c");
    }

    auto xat = [&](std::size_t k) { return X ? X->x(k) : std::span<const double>(none); };
    auto xleft = [&](std::size_t k) { return X ? X->x_left(k) : std::span<const double>(none); };
    const double lhs0 = view.value(fc, ks, false, L.at(ks), xat(ks));
    S.start_series(o.record, g.points[ks]);

    const std::size_t C = A.C, WC = W.common_dim;
    std::vector<double> M(WC * WC), Mc(C * C);
    detail::OuterEval J, Jl, Jr;
    detail::SpaceEval sk, sl, sr, smu;
    for (std::size_t k = ks; k < kt; ++k) {
        const double t = g.points[k], dt = g.dt(k), r = g.points[k + 1];
        auto yk = Y.dim ? Y.y(k) : std::span<const double>(none);
        auto Z = L.at(k);
        W.common_cov(k, o.covariation, M);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t e = 0; e < C; ++e) Mc[c * C + e] = M[c * WC + e];
        if (X && Y.dim) covariation_increment(*W.reference, *W.driver, k, o.covariation, covXY);

        // continuous part of interval k
        for (std::size_t p = 0; p < view.terms(); ++p) {
            const FieldTerm& term = view.term(p);
            view.outer(p, Z, J);
            view.space(p, xat(k), sk);
            const double c = fc.c(k, p);
            const double m = term.layer == Layer::Base ? 0.0 : term.mod(t, yk);
            if (term.layer == Layer::Drift) S.put(iG, m * J.v * sk.v * dt);
            if (term.layer == Layer::Diffusion) S.put(iH, m * J.v * sk.v * Y.cont(k, term.coord));
            if (xdep) {
                double lin = 0.0, quad = 0.0, hx = 0.0;
                for (std::size_t i = 0; i < d; ++i) lin += sk.g[i] * X->dx(k)[i];
                for (std::size_t i = 0; i < d * d; ++i) quad += sk.h[i] * X->dcov(k)[i];
                S.put(iX, c * J.v * lin);
                S.put(iXQ, 0.5 * c * J.v * quad);
                if (term.layer == Layer::Diffusion) {
                    for (std::size_t i = 0; i < d; ++i) hx += sk.g[i] * covXY[i * Y.dim + term.coord];
                    S.put(iXH, m * J.v * hx);
                }
            }
            if (!term.measure) continue;
            const std::size_t off = view.offset(p), n = view.arity(p);
            const double a = c * sk.v;
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t q = off + j;
                const std::size_t kq = k * A.Q + q;
                const double w = a * J.g[j];
                S.put(iMu, w * (A.dx[kq] + A.jint_gdx[kq]) / Nc);
                S.put(iMuQ, w * A.dxx[kq] / Nc);
                const double cnt = A.jint_count[k];
                const double plus = A.jint_plus[kq] - cnt * Z[q] + o.delta_shift * cnt;
                const double minus = A.jint_minus[kq] - cnt * Z[q] + o.delta_shift * cnt;
                S.put(iJD, w * (plus - minus) / Nc);
                S.put(iJL, -w * A.jint_gdx[kq] / Nc);
                if (term.layer == Layer::Diffusion) {
                    double xy = 0.0;
                    for (std::size_t l = 0; l < A.L; ++l)
                        if (l == term.coord) xy = A.XY(k, q, l);
                    if (cond) S.put(iMuH, m * sk.v * J.g[j] * xy / Nc);
                    if (o.corrections) S.put(iI3, m * sk.v * J.g[j] * xy / N);
                }
                if (cond && xdep && C > 0) {
                    // grad phi(X)^T sigma_X,common M U1_q
                    double s = 0.0;
                    for (std::size_t i = 0; i < d; ++i)
                        for (std::size_t cc = 0; cc < C; ++cc) {
                            double mu1 = 0.0;
                            for (std::size_t e = 0; e < C; ++e) mu1 += Mc[cc * C + e] * A.U1(k, q, e);
                            s += sk.g[i] * W.reference_common[(k * d + i) * WC + cc] * mu1;
                        }
                    S.put(iCross, c * J.g[j] * s / Nc);
                }
            }
            if (cond || o.corrections) {
                double pair = 0.0, zz = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t jj = 0; jj < n; ++jj) {
                        const double h = J.h[j * n + jj];
                        if (h == 0.0) continue;
                        const std::size_t q = off + j, q2 = off + jj;
                        if (cond && pairs > 0.0 && !A.u1.empty()) {
                            double s = 0.0;
                            for (std::size_t cc = 0; cc < C; ++cc)
                                for (std::size_t e = 0; e < C; ++e)
                                    s += Mc[cc * C + e] * (A.U1(k, q, cc) * A.U1(k, q2, e) - A.U2(k, q, q2, cc, e));
                            pair += h * s / pairs;
                        }
                        if (o.corrections) zz += h * law_covariation(A, Mc, k, q, q2, N);
                    }
                S.put(iPair, 0.5 * a * pair);
                S.put(iI2, 0.5 * a * zz);
            }
        }

        // jumps at t_{k+1}
        const std::size_t kp = k + 1;
        const bool yj = Y.dim && detail::driver_jumps(Y, kp);
        const bool lawj = L.jumps[kp] != 0;
        const bool xj = X && X->jumps_at(kp);
        const bool copyj = A.jpt_count[kp] > 0.0;
        if (yj || lawj || xj || copyj) {
            const double ind = o.force_indicator || !lawj ? 1.0 : 0.0;
            auto Zl = L.left(kp), Zr = L.at(kp);
            auto xl = xleft(kp), xr = xat(kp);
            auto ylk = Y.dim ? Y.y_left(kp) : std::span<const double>(none);
            for (std::size_t p = 0; p < view.terms(); ++p) {
                const FieldTerm& term = view.term(p);
                view.outer(p, Zl, Jl);
                view.outer(p, Zr, Jr, false);
                view.space(p, xl, sl);
                view.space(p, xr, sr);
                const detail::SpaceEval& sm = alt ? sr : sl;  // x argument of the mu-block
                const double cl = fc.c_left(kp, p), cr = fc.c(kp, p);
                double mr = 0.0, dY = 0.0;
                if (term.layer == Layer::Diffusion) {
                    mr = term.mod(r, ylk);
                    dY = Y.jump(kp, term.coord);
                }
                S.put(iH, mr * Jl.v * sl.v * dY);
                if (yj || lawj) S.put(iJF, cr * Jr.v * sm.v - cl * Jl.v * sm.v - mr * Jl.v * sm.v * dY);
                if (xj) {
                    double dphi_dx = 0.0;
                    for (std::size_t i = 0; i < d; ++i) dphi_dx += sl.g[i] * (xr[i] - xl[i]);
                    // coro1: d_x F(r, X-, mu_r); alternative: d_x F(r-, X-, mu_r)
                    const double lin = (alt ? cl : cr) * Jr.v * dphi_dx;
                    S.put(iX, lin);
                    S.put(iXJ, (alt ? Jl.v : Jr.v) * cr * (sr.v - sl.v) - lin);
                }
                if (!term.measure) continue;
                const std::size_t off = view.offset(p), n = view.arity(p);
                const double a = cl * sm.v;
                double dh = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t q = off + j, kq = kp * A.Q + q;
                    const double w = a * Jl.g[j];
                    const double cnt = A.jpt_count[kp];
                    const double plus = A.jpt_plus[kq] - cnt * Zl[q] + o.delta_shift * cnt;
                    const double minus = A.jpt_minus[kq] - cnt * Zl[q] + o.delta_shift * cnt;
                    S.put(iMu, w * A.jpt_gdx[kq] / Nc);
                    S.put(iJD, ind * w * (plus - minus) / Nc);
                    S.put(iJL, -w * A.jpt_gdx[kq] / Nc);
                    dh += Jl.g[j] * (plus - minus);
                }
                if (cond) {
                    S.put(iDH, ind * mr * sm.v * dY * dh / Nc);
                    if (pairs > 0.0 && !A.v1.empty()) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            for (std::size_t jj = 0; jj < n; ++jj) {
                                const std::size_t q = off + j, q2 = off + jj;
                                s += Jl.h[j * n + jj] *
                                     (A.v1[kp * A.Q + q] * A.v1[kp * A.Q + q2] - A.v2[(kp * A.Q + q) * A.Q + q2]);
                            }
                        S.put(iDbl, ind * 0.5 * a * s / pairs);
                    }
                }
            }
        }
        if (o.record) S.push_series(o.record, r, view.value(fc, kp, false, L.at(kp), xat(kp)) - lhs0);
    }
    const double lhs = view.value(fc, kt, false, L.at(kt), xat(kt)) - lhs0;
    return S.finish(to_string(o.form), lhs);
}

/// Classical Ito-Wentzell assembly of f(t, Z^N) for an empirical world: the
/// field is lifted to moment space and Z is treated as a semimartingale with
/// the engine's continuous increments and covariations.
inline TermBreakdown assemble_moment_lift(const RandomField& F, const InnerIndex& ix, const WorldResult& R,
                                          CovariationMode mode, const Window& w) {
    if (F.has_space()) throw std::invalid_argument("moment lift: field must not depend on x");
    const World& W = R.world;
    const CopyAggregates& A = R.copies;
    const std::size_t Q = ix.size(), K = W.intervals();
    const double N = static_cast<double>(R.n_law);
    RandomField Fz;
    Fz.x_dim = Q;
    Fz.driver_dim = F.driver_dim;
    Fz.label = F.label + " on Z";
    for (std::size_t p = 0; p < F.terms.size(); ++p) {
        FieldTerm t = F.terms[p];
        if (t.measure) t.space = std::make_shared<BlockFn>(t.measure->outer, ix.offset[p], Q);
        t.measure.reset();
        Fz.terms.push_back(std::move(t));
    }
    DiscreteSemimartingale Z;
    Z.dim = Q;
    Z.values = R.law.z;
    Z.left = R.law.z_left;
    Z.cont.assign(K * Q, 0.0);
    Z.cov.assign(K * Q * Q, 0.0);
    std::vector<double> M(W.common_dim * W.common_dim), Mc(A.C * A.C);
    for (std::size_t k = 0; k < K; ++k) {
        W.common_cov(k, mode, M);
        for (std::size_t c = 0; c < A.C; ++c)
            for (std::size_t e = 0; e < A.C; ++e) Mc[c * A.C + e] = M[c * W.common_dim + e];
        for (std::size_t q = 0; q < Q; ++q) {
            Z.cont[k * Q + q] = (A.dx[k * Q + q] + A.dxx[k * Q + q]) / N;
            for (std::size_t r = 0; r < Q; ++r) Z.cov[(k * Q + q) * Q + r] = law_covariation(A, Mc, k, q, r, N);
        }
    }
    CrossCovariation xy;
    xy.rows = Q;
    xy.cols = A.L;
    xy.values.resize(A.xy.size());
    for (std::size_t i = 0; i < A.xy.size(); ++i) xy.values[i] = A.xy[i] / N;
    const DriverTrack* Y = W.track.dim ? &W.track : nullptr;
    const FieldCoefficients fc = field_coefficients(Fz, W.grid, Y);
    auto b = ito_wentzell_terms(Fz, fc, Z, Y, Y ? &xy : nullptr, W.grid, w);
    b.formula = "thm2 on Z";
    return b;
}

/// Compensated forms for Poisson-driven flows. Jump sums of the law, the
/// copies and the field driver are replaced by nu(de) dr integrals; the
/// realized sums are kept as diagnostics.
inline TermBreakdown assemble_poisson(const RandomField& F, const InnerIndex& ix, const FlowModel& model,
                                      const WorldResult& R, const AssemblyOptions& o) {
    using detail::Slots;
    if (!is_poisson(o.form)) throw std::invalid_argument("assemble_poisson: not a Poisson form");
    if (F.has_space()) throw std::invalid_argument("assemble_poisson: field must not depend on x");
    const World& W = R.world;
    const LawSums& L = R.law;
    const CopyAggregates& A = R.copies;
    const TimeGrid& g = W.grid;
    const auto [ks, kt] = o.window.indices(g);
    const bool cond = o.form == Form::Coro4;
    const detail::FieldView view(F, ix);
    const FieldCoefficients fc = detail::coefficients_for(F, W);
    const DriverTrack& Y = W.track;
    const double Nc = static_cast<double>(R.n_copy), pairs = Nc * (Nc - 1.0);
    static const std::vector<double> none;
    const Coefficients* dc = model.driver_is_reference ? &model.particle : (model.driver ? &*model.driver : nullptr);
    // driver jump source linked to each common particle source, by label
    std::vector<std::size_t> linked(A.S, Slots::none);
    if (dc)
        for (std::size_t s = 0; s < A.S; ++s)
            for (std::size_t j = 0; j < dc->jumps.size(); ++j)
                if (dc->jumps[j].common && dc->jumps[j].label == model.particle.jumps[A.common_sources[s]].label)
                    linked[s] = j;

    Slots S;
    const std::size_t iG = S.add("int G dr");
    const std::size_t iH = S.add("int H dW");
    const std::size_t iJ = S.add("int int J nu");
    const std::size_t iDr = S.add("E~ int (dmuF b + 1/2 dxdmuF:sigma sigma^T) dr");
    std::size_t iPair = Slots::none, iMart = Slots::none, iMuH = Slots::none;
    if (cond) {
        iPair = S.add("1/2 E' int dmumuF sigma' sigma''^T d[W',W'']");
        iMart = S.add("E' int dmuF sigma' dW'");
        iMuH = S.add("E' int dmuH sigma' d[Y,W']");
    }
    const std::size_t iComp = S.add("E~ int int (dF/dmu(X~+beta) - dF/dmu(X~)) nu");
    std::size_t iD2 = Slots::none, iDJ = Slots::none;
    if (cond) {
        iD2 = S.add("E' int int 1/2 d2F/dmu2 jump bracket nu");
        iDJ = S.add("E' int int (dH/dmu(X'+beta) - dH/dmu(X')) J nu");
    }
    const std::size_t dHJ = S.add("realized: sum H dY jumps", true);
    const std::size_t dDF = S.add("realized: E~ jump sum dF/dmu", true);
    const std::size_t dJF = S.add("realized: jump sum F - F- - H dY", true);
    const std::size_t dM = cond ? Slots::none : S.add("martingale: E~ int dmuF sigma dW~", true);

    const double lhs0 = view.value(fc, ks, false, L.at(ks), {});
    S.start_series(o.record, g.points[ks]);
    const std::size_t C = A.C, WC = W.common_dim;
    std::vector<double> M(WC * WC), Mc(C * C), jbar(Y.dim), beta(Y.dim);
    detail::OuterEval J, Jl, Jr;
    for (std::size_t k = ks; k < kt; ++k) {
        const double t = g.points[k], dt = g.dt(k), r = g.points[k + 1];
        auto yk = Y.dim ? Y.y(k) : std::span<const double>(none);
        auto Z = L.at(k);
        W.common_cov(k, o.covariation, M);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t e = 0; e < C; ++e) Mc[c * C + e] = M[c * WC + e];
        // nu-integral of the driver jump sizes at the left point
        std::fill(jbar.begin(), jbar.end(), 0.0);
        if (dc)
            for (const auto& src : dc->jumps)
                for (const auto& [mark, wgt] : src.nu.nodes) {
                    src.beta(t, yk, mark, beta);
                    for (std::size_t l = 0; l < Y.dim; ++l) jbar[l] += src.nu.mass * wgt * beta[l];
                }
        for (std::size_t p = 0; p < view.terms(); ++p) {
            const FieldTerm& term = view.term(p);
            view.outer(p, Z, J);
            const double c = fc.c(k, p);
            const double m = term.layer == Layer::Base ? 0.0 : term.mod(t, yk);
            if (term.layer == Layer::Drift) S.put(iG, m * J.v * dt);
            if (term.layer == Layer::Diffusion) {
                S.put(iH, m * J.v * Y.cont(k, term.coord));
                S.put(iJ, m * J.v * jbar[term.coord] * dt);
            }
            if (!term.measure) continue;
            const std::size_t off = view.offset(p), n = view.arity(p);
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t q = off + j, kq = k * A.Q + q;
                const double w = c * J.g[j];
                S.put(iDr, w * (A.drift[kq] + A.dxx[kq]) / Nc);
                S.put(iComp, w * A.comp[kq] / Nc);
                S.put(iMart, w * (A.dx[kq] - A.drift[kq]) / Nc);
                S.put(dM, w * (A.dx[kq] - A.drift[kq]) / Nc);
                S.put(dDF, w * (A.jint_plus[kq] - A.jint_minus[kq]) / Nc);
                if (cond && term.layer == Layer::Diffusion && term.coord < A.L)
                    S.put(iMuH, m * J.g[j] * A.XY(k, q, term.coord) / Nc);
                if (cond)
                    for (std::size_t s = 0; s < A.S; ++s) {
                        if (linked[s] == Slots::none || term.layer != Layer::Diffusion) continue;
                        const JumpSource& src = dc->jumps[linked[s]];
                        for (std::size_t e = 0; e < src.nu.nodes.size() && e < A.E; ++e) {
                            src.beta(t, yk, src.nu.nodes[e].first, beta);
                            S.put(iDJ, m * J.g[j] * A.P1(k, s, e, q) / Nc * beta[term.coord] * src.nu.mass *
                                           src.nu.nodes[e].second * dt);
                        }
                    }
            }
            if (cond && pairs > 0.0) {
                double pair = 0.0, d2 = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t jj = 0; jj < n; ++jj) {
                        const double h = J.h[j * n + jj];
                        if (h == 0.0) continue;
                        const std::size_t q = off + j, q2 = off + jj;
                        double s = 0.0;
                        for (std::size_t cc = 0; cc < C; ++cc)
                            for (std::size_t e = 0; e < C; ++e)
                                s += Mc[cc * C + e] * (A.U1(k, q, cc) * A.U1(k, q2, e) - A.U2(k, q, q2, cc, e));
                        pair += h * s / pairs;
                        for (std::size_t s2 = 0; s2 < A.S; ++s2) {
                            const JumpSource& src = model.particle.jumps[A.common_sources[s2]];
                            for (std::size_t e = 0; e < src.nu.nodes.size() && e < A.E; ++e)
                                d2 += h *
                                      (A.P1(k, s2, e, q) * A.P1(k, s2, e, q2) - A.P2(k, s2, e, q, q2)) / pairs *
                                      src.nu.mass * src.nu.nodes[e].second * dt;
                        }
                    }
                S.put(iPair, 0.5 * c * pair);
                S.put(iD2, 0.5 * c * d2);
            }
        }
        const std::size_t kp = k + 1;
        const bool yj = Y.dim && detail::driver_jumps(Y, kp);
        if (yj || L.jumps[kp] || A.jpt_count[kp] > 0.0) {
            auto Zl = L.left(kp), Zr = L.at(kp);
            auto ylk = Y.dim ? Y.y_left(kp) : std::span<const double>(none);
            for (std::size_t p = 0; p < view.terms(); ++p) {
                const FieldTerm& term = view.term(p);
                view.outer(p, Zl, Jl);
                view.outer(p, Zr, Jr, false);
                const double cl = fc.c_left(kp, p), cr = fc.c(kp, p);
                double mr = 0.0, dY = 0.0;
                if (term.layer == Layer::Diffusion) {
                    mr = term.mod(r, ylk);
                    dY = Y.jump(kp, term.coord);
                }
                S.put(dHJ, mr * Jl.v * dY);
                S.put(dJF, cr * Jr.v - cl * Jl.v - mr * Jl.v * dY);
                if (!term.measure) continue;
                for (std::size_t j = 0; j < view.arity(p); ++j) {
                    const std::size_t kq = kp * A.Q + view.offset(p) + j;
                    S.put(dDF, cl * Jl.g[j] * (A.jpt_plus[kq] - A.jpt_minus[kq]) / Nc);
                }
            }
        }
        if (o.record) S.push_series(o.record, r, view.value(fc, kp, false, L.at(kp), {}) - lhs0);
    }
    const double lhs = view.value(fc, kt, false, L.at(kt), {}) - lhs0;
    return S.finish(to_string(o.form), lhs);
}

}  // namespace iwl::flow
