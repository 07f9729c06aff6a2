#pragma once

// Cylindrical functionals F(mu) = f(<mu, g_1>, ..., <mu, g_n>) with their
// linear (flat) and Lions derivatives in closed form.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iwl/measures.hpp"
#include "iwl/smooth.hpp"

namespace iwl {

struct CylindricalFn {
    SmoothFnPtr outer;
    std::vector<SmoothFnPtr> inner;

    std::size_t arity() const { return inner.size(); }
    std::size_t dim() const { return inner.empty() ? 0 : inner.front()->dim(); }

    void validate() const {
        if (!outer) throw std::invalid_argument("cylindrical function: missing outer function");
        if (inner.empty()) throw std::invalid_argument("cylindrical function: no test functions");
        if (outer->dim() != inner.size())
            throw std::invalid_argument("cylindrical function: outer arity differs from the number of test functions");
        for (const auto& g : inner) {
            if (!g) throw std::invalid_argument("cylindrical function: null test function");
            if (g->dim() != inner.front()->dim())
                throw std::invalid_argument("cylindrical function: test functions disagree on dimension");
        }
    }

    /// z_j = <mu, g_j>.
    std::vector<double> moments(const EmpiricalMeasure& mu) const {
        if (mu.dim != dim()) throw std::invalid_argument("cylindrical function: measure dimension mismatch");
        std::vector<double> z(arity());
        for (std::size_t j = 0; j < arity(); ++j) z[j] = mu.integrate([&](auto x) { return inner[j]->value(x); });
        return z;
    }

    std::string describe() const {
        std::string s = outer->describe() + " o (";
        for (std::size_t j = 0; j < inner.size(); ++j) s += (j ? ", " : "") + inner[j]->describe();
        return s + ")";
    }
};

inline CylindricalFn cylindrical(SmoothFnPtr outer, std::vector<SmoothFnPtr> inner) {
    CylindricalFn f{std::move(outer), std::move(inner)};
    f.validate();
    return f;
}

/// Values of f and its derivatives at the moment vector z.
struct OuterJet {
    double value = 0.0;
    std::vector<double> grad;  ///< n
    std::vector<double> hess;  ///< n x n
};

inline OuterJet outer_jet(const SmoothFn& f, std::span<const double> z) {
    OuterJet j;
    const std::size_t n = f.dim();
    j.value = f.value(z);
    j.grad.resize(n);
    j.hess.resize(n * n);
    f.gradient(z, j.grad);
    f.hessian(z, j.hess);
    return j;
}

inline double eval_cyl(const CylindricalFn& F, const EmpiricalMeasure& mu) {
    const auto z = F.moments(mu);
    return F.outer->value(z);
}

/// delta F / delta mu (mu, y) = sum_j d_j f (g_j(y) - <mu, g_j>).
/// Normalized so that its mu-integral vanishes.
inline double linear_derivative(const CylindricalFn& F, const EmpiricalMeasure& mu, std::span<const double> y) {
    const auto z = F.moments(mu);
    std::vector<double> df(F.arity());
    F.outer->gradient(z, df);
    double s = 0.0;
    for (std::size_t j = 0; j < F.arity(); ++j) s += df[j] * (F.inner[j]->value(y) - z[j]);
    return s;
}

/// d_mu F(mu, y) = sum_j d_j f grad g_j(y).
inline std::vector<double> lions_derivative(const CylindricalFn& F, const EmpiricalMeasure& mu,
                                            std::span<const double> y) {
    const auto z = F.moments(mu);
    const std::size_t d = F.dim(), n = F.arity();
    std::vector<double> df(n), gg(d), out(d, 0.0);
    F.outer->gradient(z, df);
    for (std::size_t j = 0; j < n; ++j) {
        F.inner[j]->gradient(y, gg);
        for (std::size_t i = 0; i < d; ++i) out[i] += df[j] * gg[i];
    }
    return out;
}

/// d_y d_mu F(mu, y) = sum_j d_j f hess g_j(y), row-major d x d.
inline std::vector<double> lions_space_derivative(const CylindricalFn& F, const EmpiricalMeasure& mu,
                                                  std::span<const double> y) {
    const auto z = F.moments(mu);
    const std::size_t d = F.dim(), n = F.arity();
    std::vector<double> df(n), hg(d * d), out(d * d, 0.0);
    F.outer->gradient(z, df);
    for (std::size_t j = 0; j < n; ++j) {
        F.inner[j]->hessian(y, hg);
        for (std::size_t i = 0; i < d * d; ++i) out[i] += df[j] * hg[i];
    }
    return out;
}

struct SecondDerivatives {
    double linear = 0.0;        ///< delta^2 F / delta mu^2 (mu, y, y')
    std::vector<double> lions;  ///< d_mu d_mu F (mu, y, y'), row-major d x d
};

/// delta^2 F/delta mu^2 = sum_jk d_jk f (g_j(y) - z_j)(g_k(y') - z_k), and
/// d_mu d_mu F = sum_jk d_jk f grad g_j(y) grad g_k(y')^T.
inline SecondDerivatives second_derivatives(const CylindricalFn& F, const EmpiricalMeasure& mu,
                                            std::span<const double> y, std::span<const double> y2) {
    const auto z = F.moments(mu);
    const std::size_t d = F.dim(), n = F.arity();
    std::vector<double> h(n * n);
    F.outer->hessian(z, h);
    std::vector<double> a(n), b(n), ga(n * d), gb(n * d);
    for (std::size_t j = 0; j < n; ++j) {
        a[j] = F.inner[j]->value(y) - z[j];
        b[j] = F.inner[j]->value(y2) - z[j];
        F.inner[j]->gradient(y, std::span<double>(ga.data() + j * d, d));
        F.inner[j]->gradient(y2, std::span<double>(gb.data() + j * d, d));
    }
    SecondDerivatives out;
    out.lions.assign(d * d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) {
            const double c = h[j * n + k];
            if (c == 0.0) continue;
            out.linear += c * a[j] * b[k];
            for (std::size_t p = 0; p < d; ++p)
                for (std::size_t q = 0; q < d; ++q) out.lions[p * d + q] += c * ga[j * d + p] * gb[k * d + q];
        }
    return out;
}

struct LiftCheck {
    double max_abs_error = 0.0;
    std::size_t worst_atom = 0;
    std::size_t worst_coord = 0;
};

/// Central finite differences of the lift x -> F(mu_x) against the weighted
/// Lions derivative: dF/dx_i = w_i d_mu F(mu, x_i). Every atom and coordinate
/// is perturbed.
inline LiftCheck fd_lift_check(const CylindricalFn& F, const EmpiricalMeasure& mu, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_lift_check: step h must be positive");
    LiftCheck out;
    const std::size_t d = mu.dim;
    EmpiricalMeasure work = mu;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (mu.weights[i] == 0.0) continue;
        const auto analytic = lions_derivative(F, mu, mu.atom(i));
        for (std::size_t c = 0; c < d; ++c) {
            double& xi = work.atoms[i * d + c];
            const double x = xi;
            xi = x + h;
            const double fp = eval_cyl(F, work);
            xi = x - h;
            const double fm = eval_cyl(F, work);
            xi = x;
            const double fd = (fp - fm) / (2.0 * h * mu.weights[i]);
            const double err = std::abs(fd - analytic[c]);
            if (err > out.max_abs_error) {
                out.max_abs_error = err;
                out.worst_atom = i;
                out.worst_coord = c;
            }
        }
    }
    return out;
}

}  // namespace iwl
