#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace mvlab::grid {

/// Index i with t == i * dt up to rounding, or nullopt when t is off grid.
inline std::optional<std::int64_t> to_index(double t, double dt) {
    const double r = t / dt;
    const double i = std::nearbyint(r);
    if (std::abs(r - i) > 1e-7 * std::max(1.0, std::abs(r))) return std::nullopt;
    return static_cast<std::int64_t>(i);
}

/// n + 1 equally spaced times from a to b inclusive.
inline std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> t(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) t[static_cast<std::size_t>(i)] = a + (b - a) * i / n;
    return t;
}

}  // namespace mvlab::grid
