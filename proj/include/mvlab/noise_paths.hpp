#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace mvlab {

/// Two-sided Brownian path sampled on a uniform grid t_i = i * dt, i in [i_min, i_max].
///
/// Increments are generated by a counter-based sampler keyed by
/// (seed, coordinate, absolute fine index). A path therefore carries an
/// `origin` (its time zero expressed as an absolute fine index) and a
/// `substeps` factor (fine steps per grid step). Shifting moves the origin,
/// coarsening multiplies the substeps; neither ever changes the underlying
/// realization.
class WienerPath {
public:
    /// Sample a fresh path anchored at W(0) = 0.
    static WienerPath sample(double t_min, double t_max, double dt, int dim, std::uint64_t seed);

    /// theta_s: r -> W(s + r) - W(s). `s` must be a grid multiple.
    WienerPath shift(double s) const;

    /// Same realization on a grid `factor` times coarser.
    WienerPath coarsen(int factor) const;

    /// Same realization over a different window (extended with fresh increments).
    WienerPath with_window(double t_min, double t_max) const;

    /// Same grid and window, independent realization keyed by `seed`.
    WienerPath sibling(std::uint64_t seed) const;

    std::uint64_t seed() const noexcept { return seed_; }
    int dim() const noexcept { return dim_; }
    double dt() const noexcept { return dt_; }
    int substeps() const noexcept { return substeps_; }
    std::int64_t origin() const noexcept { return origin_; }
    std::int64_t i_min() const noexcept { return i_min_; }
    std::int64_t i_max() const noexcept { return i_max_; }
    double t_min() const noexcept { return static_cast<double>(i_min_) * dt_; }
    double t_max() const noexcept { return static_cast<double>(i_max_) * dt_; }
    std::size_t node_count() const noexcept { return static_cast<std::size_t>(i_max_ - i_min_ + 1); }

    /// Grid index of time t; throws DomainError when t is off grid.
    std::int64_t index_of(double t) const;
    double time(std::int64_t i) const noexcept { return static_cast<double>(i) * dt_; }
    bool contains(std::int64_t i) const noexcept { return i >= i_min_ && i <= i_max_; }

    std::span<const double> value(std::int64_t i) const;
    double value(std::int64_t i, int coord) const;

    /// W(t_{i+1}) - W(t_i) for i in [i_min, i_max - 1], as generated (not a difference of values).
    double increment(std::int64_t i, int coord) const;

    /// Increment of an independent stream `stream_seed` on this path's grid.
    /// Valid for any grid index, inside or outside the window.
    double stream_increment(std::uint64_t stream_seed, int coord, std::int64_t i) const noexcept;

    const std::vector<double>& values() const noexcept { return values_; }

    /// Header (t_min, t_max, dt, dim, seed as little-endian 64-bit fields),
    /// then raw doubles row-major by time then coordinate.
    void write_binary(std::ostream& out) const;

private:
    WienerPath() = default;
    void generate();

    std::uint64_t seed_ = 0;
    int dim_ = 1;
    double dt_ = 0.0;
    int substeps_ = 1;
    std::int64_t i_min_ = 0;
    std::int64_t i_max_ = 0;
    std::int64_t origin_ = 0;
    std::vector<double> increments_;
    std::vector<double> values_;
};

/// Contents of a binary path dump.
struct PathDump {
    double t_min = 0.0;
    double t_max = 0.0;
    double dt = 0.0;
    std::uint64_t dim = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;
};

PathDump read_path_binary(std::istream& in);

/// Stationary Ornstein-Uhlenbeck path dz = -eta z dt + dW driven by a WienerPath.
///
/// The value at the window start is an exact draw from N(0, 1/(2 eta));
/// the recursion z_{i+1} = e^{-eta dt} z_i + c dW_i uses
/// c = sqrt((1 - e^{-2 eta dt}) / (2 eta dt)) so the chain is exactly stationary.
class OUPath {
public:
    static OUPath build(const WienerPath& base, double eta);

    /// Re-index so that time s becomes time 0 (exact; reads the same values).
    OUPath shift(double s) const;

    double eta() const noexcept { return eta_; }
    int dim() const noexcept { return dim_; }
    double dt() const noexcept { return dt_; }
    std::int64_t i_min() const noexcept { return i_min_; }
    std::int64_t i_max() const noexcept { return i_max_; }
    std::int64_t index_of(double t) const;
    double time(std::int64_t i) const noexcept { return static_cast<double>(i) * dt_; }
    std::span<const double> value(std::int64_t i) const;
    double value(std::int64_t i, int coord) const;
    const std::vector<double>& values() const noexcept { return values_; }

private:
    OUPath() = default;

    double eta_ = 1.0;
    int dim_ = 1;
    double dt_ = 0.0;
    std::int64_t i_min_ = 0;
    std::int64_t i_max_ = 0;
    std::vector<double> values_;
};

/// ou_path(base, eta)
inline OUPath ou_path(const WienerPath& base, double eta) { return OUPath::build(base, eta); }

/// sample_wiener(t_min, t_max, dt, dim, seed)
inline WienerPath sample_wiener(double t_min, double t_max, double dt, int dim, std::uint64_t seed) {
    return WienerPath::sample(t_min, t_max, dt, dim, seed);
}

}  // namespace mvlab
