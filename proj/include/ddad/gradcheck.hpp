#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ddad/tensor.hpp"

// Finite-difference gradient verification. `f` maps the current contents of
// `x` to a scalar; the returned vector approximates dL/dx elementwise with
// central differences. Used only by tests and debug tooling.

namespace ddad {

inline std::vector<double> finite_difference_gradient(const std::function<double()>& f,
                                                      Tensor& x, double h = 1e-5) {
    if (!(h > 0.0)) throw ValueError("finite_difference_gradient: step must be positive");
    auto& v = x.values();
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double keep = v[i];
        v[i] = keep + h;
        double fp = f();
        v[i] = keep - h;
        double fm = f();
        v[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// |a-b| / max(|a|, |b|, floor); the floor keeps near-zero pairs comparable.
inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                                 double floor = 1e-8) {
    if (a.size() != b.size())
        throw ShapeError("max_relative_error: length mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

}  // namespace ddad
