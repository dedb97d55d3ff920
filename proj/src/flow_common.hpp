#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mvlab/errors.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::detail {

/// Grid index of each time in t_grid; throws DomainError when off grid or decreasing.
inline std::vector<std::int64_t> grid_indices(const WienerPath& path, std::span<const double> t_grid) {
    if (t_grid.empty()) throw DomainError("time grid is empty");
    std::vector<std::int64_t> idx(t_grid.size());
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        idx[k] = path.index_of(t_grid[k]);
        if (k > 0 && idx[k] < idx[k - 1]) throw DomainError("time grid must be nondecreasing");
    }
    return idx;
}

/// Throws SimulationDiverged when x is non-finite or its norm exceeds guard.
inline void guard_check(std::span<const double> x, double guard, double t) {
    double r2 = 0.0;
    for (double v : x) {
        if (!std::isfinite(v)) throw SimulationDiverged("non-finite state", t);
        r2 += v * v;
    }
    if (r2 > guard * guard) throw SimulationDiverged("state left the guard radius", t);
}

}  // namespace mvlab::detail
