#pragma once

// Random fields F(t, x, mu) = F_0(x, mu) + int_0^t G_r dr + int_0^t H_r dY_r.
//
// Every layer is a sum of terms m(r, Y_{r-}) * phi(x) * Phi(mu) where phi is
// a test function on R^d, Phi a cylindrical functional and m an adapted
// scalar modulation. Either factor may be absent (taken as 1). Along a driver
// path this gives F(t, .) = sum_p c_p(t) phi_p Phi_p with scalar coefficients
// c_p(t), which is how the verifier evaluates fields.

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/calculus.hpp"
#include "iwl/paths.hpp"

namespace iwl {

/// m(t, y) with y = Y_{t-}; evaluated at left points so the layers are adapted.
struct Modulation {
    std::function<double(double, std::span<const double>)> fn;
    std::string label = "1";

    double operator()(double t, std::span<const double> y) const { return fn ? fn(t, y) : 1.0; }

    static Modulation constant(double c) {
        std::ostringstream os;
        os << c;
        return {[c](double, std::span<const double>) { return c; }, os.str()};
    }
    /// a + b * Y^coord.
    static Modulation driver_linear(double a, double b, std::size_t coord) {
        std::ostringstream os;
        os << a << "+" << b << "*Y" << coord;
        return {[a, b, coord](double, std::span<const double> y) { return a + b * y[coord]; }, os.str()};
    }
    /// a * cos(omega t).
    static Modulation cos_time(double a, double omega) {
        std::ostringstream os;
        os << a << "*cos(" << omega << "t)";
        return {[a, omega](double t, std::span<const double>) { return a * std::cos(omega * t); }, os.str()};
    }
};

enum class Layer { Base, Drift, Diffusion };

inline const char* to_string(Layer l) {
    switch (l) {
        case Layer::Base: return "base";
        case Layer::Drift: return "drift";
        case Layer::Diffusion: return "diffusion";
    }
    return "?";
}

struct FieldTerm {
    Layer layer = Layer::Base;
    std::size_t coord = 0;  ///< driver coordinate of a diffusion term
    SmoothFnPtr space;      ///< phi(x); null means 1
    std::optional<CylindricalFn> measure;  ///< Phi(mu); empty means 1
    Modulation mod;         ///< unused for base terms
    std::string label;
};

struct RandomField {
    std::vector<FieldTerm> terms;
    std::size_t x_dim = 0;        ///< 0 when no term depends on x
    std::size_t measure_dim = 0;  ///< 0 when no term depends on mu
    std::size_t driver_dim = 0;   ///< dimension of Y
    bool second_order = true;     ///< false restricts to first-order Lions derivatives
    std::string label = "field";

    bool has_space() const {
        for (const auto& t : terms)
            if (t.space) return true;
        return false;
    }
    bool has_measure() const {
        for (const auto& t : terms)
            if (t.measure) return true;
        return false;
    }

    void validate() const {
        if (terms.empty()) throw std::invalid_argument("field: no terms");
        for (const auto& t : terms) {
            if (t.space && t.space->dim() != x_dim) throw std::invalid_argument("field: space factor dimension mismatch");
            if (t.measure) {
                t.measure->validate();
                if (t.measure->dim() != measure_dim)
                    throw std::invalid_argument("field: measure factor dimension mismatch");
            }
            if (t.layer == Layer::Diffusion && t.coord >= driver_dim)
                throw std::invalid_argument("field: diffusion term refers to a missing driver coordinate");
        }
    }
};

/// c_p(t_k) and c_p(t_k-) for every term along a driver path.
struct FieldCoefficients {
    std::size_t n_terms = 0;
    std::vector<double> at;    ///< points x terms
    std::vector<double> left;  ///< points x terms

    double c(std::size_t k, std::size_t p) const { return at[k * n_terms + p]; }
    double c_left(std::size_t k, std::size_t p) const { return left[k * n_terms + p]; }
};

/// Driver data needed to integrate the layers: Y at grid points, left
/// limits, continuous increments and jumps. A null driver means Y is absent.
struct DriverTrack {
    std::size_t dim = 0;
    std::vector<double> values;  ///< points x dim
    std::vector<double> left;    ///< points x dim, Y_{t_k-}
    std::span<const double> y(std::size_t k) const { return {values.data() + k * dim, dim}; }
    std::span<const double> y_left(std::size_t k) const { return {left.data() + k * dim, dim}; }
    double cont(std::size_t k, std::size_t l) const { return left[(k + 1) * dim + l] - values[k * dim + l]; }
    double jump(std::size_t k, std::size_t l) const { return values[k * dim + l] - left[k * dim + l]; }
};

inline DriverTrack driver_track(const SemimartingalePath& y) {
    DriverTrack d;
    d.dim = y.dim;
    d.values = y.values;
    d.left = y.values;
    for (const auto& j : y.jumps)
        for (std::size_t l = 0; l < y.dim; ++l) d.left[j.index * y.dim + l] -= j.delta[l];
    return d;
}

inline FieldCoefficients field_coefficients(const RandomField& F, const TimeGrid& grid, const DriverTrack* Y) {
    const std::size_t P = F.terms.size(), n = grid.size();
    for (const auto& t : F.terms)
        if (t.layer == Layer::Diffusion && (!Y || t.coord >= Y->dim))
            throw std::invalid_argument("field: diffusion layer needs a driver path");
    if (Y && Y->values.size() != n * Y->dim) throw std::invalid_argument("field: driver path is on another grid");
    FieldCoefficients fc;
    fc.n_terms = P;
    fc.at.assign(n * P, 0.0);
    fc.left.assign(n * P, 0.0);
    for (std::size_t p = 0; p < P; ++p)
        if (F.terms[p].layer == Layer::Base) fc.at[p] = fc.left[p] = 1.0;
    static const std::vector<double> none;
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double t = grid.points[k], dt = grid.dt(k);
        for (std::size_t p = 0; p < P; ++p) {
            const FieldTerm& term = F.terms[p];
            double cl = fc.at[k * P + p];
            double c = cl;
            if (term.layer == Layer::Drift) {
                cl += term.mod(t, Y ? Y->y(k) : std::span<const double>(none)) * dt;
                c = cl;
            } else if (term.layer == Layer::Diffusion) {
                cl += term.mod(t, Y->y(k)) * Y->cont(k, term.coord);
                c = cl + term.mod(grid.points[k + 1], Y->y_left(k + 1)) * Y->jump(k + 1, term.coord);
            }
            fc.left[(k + 1) * P + p] = cl;
            fc.at[(k + 1) * P + p] = c;
        }
    }
    return fc;
}

/// F(t_k, x, mu). `x` may be empty for measure-only fields.
inline double evaluate_field(const RandomField& F, const FieldCoefficients& fc, std::size_t k, const EmpiricalMeasure* mu,
                             std::span<const double> x = {}, bool left = false) {
    double s = 0.0;
    for (std::size_t p = 0; p < F.terms.size(); ++p) {
        const FieldTerm& t = F.terms[p];
        const double c = left ? fc.c_left(k, p) : fc.c(k, p);
        if (c == 0.0) continue;
        double v = c;
        if (t.space) {
            if (x.size() != F.x_dim) throw std::invalid_argument("evaluate_field: x dimension mismatch");
            v *= t.space->value(x);
        }
        if (t.measure) {
            if (!mu) throw std::invalid_argument("evaluate_field: field depends on mu but no measure given");
            v *= eval_cyl(*t.measure, *mu);
        }
        s += v;
    }
    return s;
}

/// Measure derivatives of F(t_k, x, .) at (mu, y).
struct FieldMuDerivative {
    double linear = 0.0;
    std::vector<double> lions;        ///< d
    std::vector<double> lions_space;  ///< d x d
    std::optional<SecondDerivatives> second;
};

inline FieldMuDerivative field_mu_derivative(const RandomField& F, const FieldCoefficients& fc, std::size_t k,
                                             const EmpiricalMeasure& mu, std::span<const double> y,
                                             std::span<const double> x = {}, std::span<const double> y2 = {},
                                             bool want_second = false) {
    if (want_second && !F.second_order)
        throw std::invalid_argument("field_mu_derivative: second-order derivatives need a fully C2 field");
    const std::size_t d = F.measure_dim;
    FieldMuDerivative out;
    out.lions.assign(d, 0.0);
    out.lions_space.assign(d * d, 0.0);
    if (want_second) out.second = SecondDerivatives{0.0, std::vector<double>(d * d, 0.0)};
    for (std::size_t p = 0; p < F.terms.size(); ++p) {
        const FieldTerm& t = F.terms[p];
        if (!t.measure) continue;
        double c = fc.c(k, p);
        if (t.space) c *= t.space->value(x);
        if (c == 0.0) continue;
        out.linear += c * linear_derivative(*t.measure, mu, y);
        const auto l = lions_derivative(*t.measure, mu, y);
        const auto ls = lions_space_derivative(*t.measure, mu, y);
        for (std::size_t i = 0; i < d; ++i) out.lions[i] += c * l[i];
        for (std::size_t i = 0; i < d * d; ++i) out.lions_space[i] += c * ls[i];
        if (want_second) {
            const auto s = second_derivatives(*t.measure, mu, y, y2.empty() ? y : y2);
            out.second->linear += c * s.linear;
            for (std::size_t i = 0; i < d * d; ++i) out.second->lions[i] += c * s.lions[i];
        }
    }
    return out;
}

struct LeibnizResult {
    double finite_difference = 0.0;
    double analytic = 0.0;
    double discrepancy = 0.0;
};

/// Checks D int f(t, x) dW = int Df(t, x) dW on one Brownian path, where
/// f(t, x) = sum_p m_p(t, W) Phi_p(mu_x) is the diffusion layer on coordinate
/// 0 of `F`, lifted to the atoms x (N x d) of a uniform empirical measure, and
/// D is the derivative in direction h.
inline LeibnizResult leibniz_check(const RandomField& F, const SemimartingalePath& W, std::span<const double> x,
                                   std::span<const double> h, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("leibniz_check: eps must be positive");
    if (x.size() != h.size()) throw std::invalid_argument("leibniz_check: direction shape mismatch");
    const std::size_t d = F.measure_dim;
    if (d == 0 || x.size() % d != 0) throw std::invalid_argument("leibniz_check: atoms do not match the field dimension");
    const std::size_t n = x.size() / d;
    // per-term stochastic integral of the modulation: I_p = sum_k m_p(t_k, W_k) dW_k
    std::vector<double> ip(F.terms.size(), 0.0);
    for (std::size_t p = 0; p < F.terms.size(); ++p) {
        const FieldTerm& t = F.terms[p];
        if (t.layer != Layer::Diffusion || t.coord != 0 || !t.measure) continue;
        if (t.space) throw std::invalid_argument("leibniz_check: layer must not depend on x");
        for (std::size_t k = 0; k + 1 < W.size(); ++k)
            ip[p] += t.mod(W.grid.points[k], W.value(k)) * (W.values[(k + 1) * W.dim] - W.values[k * W.dim]);
    }
    auto integral = [&](std::span<const double> atoms) {
        const auto mu = empirical_measure(atoms, d);
        double s = 0.0;
        for (std::size_t p = 0; p < F.terms.size(); ++p)
            if (ip[p] != 0.0) s += ip[p] * eval_cyl(*F.terms[p].measure, mu);
        return s;
    };
    std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += eps * h[i];
        xm[i] -= eps * h[i];
    }
    LeibnizResult r;
    r.finite_difference = (integral(xp) - integral(xm)) / (2.0 * eps);
    const auto mu = empirical_measure(x, d);
    for (std::size_t p = 0; p < F.terms.size(); ++p) {
        if (ip[p] == 0.0) continue;
        double df = 0.0;  // directional derivative of the lift: sum_i w_i d_mu Phi(x_i) . h_i
        for (std::size_t i = 0; i < n; ++i) {
            const auto l = lions_derivative(*F.terms[p].measure, mu, mu.atom(i));
            for (std::size_t c = 0; c < d; ++c) df += mu.weights[i] * l[c] * h[i * d + c];
        }
        r.analytic += ip[p] * df;
    }
    r.discrepancy = std::abs(r.finite_difference - r.analytic);
    return r;
}

}  // namespace iwl
