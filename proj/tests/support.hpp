#pragma once

// Random functionals and measures shared by the unit and acceptance tests.

#include <memory>
#include <vector>

#include "iwl/calculus.hpp"
#include "iwl/fields.hpp"
#include "iwl/measures.hpp"
#include "iwl/random.hpp"
#include "iwl/smooth.hpp"

namespace iwl::testing {

inline double uniform(Engine& rng, double lo, double hi) { return Uniform(lo, hi)(rng); }

inline std::vector<double> normals(Engine& rng, std::size_t n, double sd = 1.0) {
    Normal nd(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

/// A bounded or polynomial profile with random parameters.
inline ProfilePtr random_profile(Engine& rng) {
    switch (static_cast<int>(uniform(rng, 0.0, 5.0))) {
        case 0: return std::make_shared<Trig>(uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 2.0), uniform(rng, -1, 1), false);
        case 1: return std::make_shared<Trig>(uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 2.0), uniform(rng, -1, 1), true);
        case 2: return std::make_shared<GaussianBump>(uniform(rng, 0.5, 2.0), uniform(rng, -1, 1), uniform(rng, 0.5, 1.5));
        case 3: return std::make_shared<CompactBump>(uniform(rng, 0.5, 2.0), uniform(rng, -0.5, 0.5), uniform(rng, 2.0, 4.0));
        default:
            return std::make_shared<Polynomial>(
                std::vector<double>{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -0.5, 0.5), uniform(rng, -0.2, 0.2)});
    }
}

inline SmoothFnPtr random_test_function(Engine& rng, std::size_t d) {
    std::vector<double> dir(d);
    for (auto& a : dir) a = uniform(rng, -1.0, 1.0);
    dir[0] += dir[0] >= 0 ? 0.3 : -0.3;
    return ridge(random_profile(rng), dir);
}

/// f(<mu, g_1>, ..., <mu, g_n>) with a random quadratic f (n = 1..3) or a
/// random quartic in one moment.
inline CylindricalFn random_cylindrical(Engine& rng, std::size_t d) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform(rng, 0.0, 3.0));
    std::vector<SmoothFnPtr> inner;
    for (std::size_t j = 0; j < n; ++j) inner.push_back(random_test_function(rng, d));
    SmoothFnPtr outer;
    if (n == 1 && uniform(rng, 0.0, 1.0) < 0.5) {
        outer = polynomial({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -0.3, 0.3),
                            uniform(rng, -0.1, 0.1)});
    } else {
        std::vector<double> a(n), q(n * n);
        for (auto& v : a) v = uniform(rng, -1, 1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k <= i; ++k) q[i * n + k] = q[k * n + i] = uniform(rng, -1, 1);
        outer = quadratic(uniform(rng, -1, 1), a, q);
    }
    return cylindrical(outer, inner);
}

inline EmpiricalMeasure random_measure(Engine& rng, std::size_t n, std::size_t d) {
    return empirical_measure(normals(rng, n * d), d);
}

}  // namespace iwl::testing
