#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace gradnormir {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline Vector to_double(std::span<const float> a) { return Vector(a.begin(), a.end()); }

}  // namespace gradnormir
