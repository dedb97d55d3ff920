#include "mvlab/noise_paths.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "mvlab/errors.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((v >> (8 * b)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw DomainError("truncated path dump");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    return v;
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

WienerPath WienerPath::sample(double t_min, double t_max, double dt, int dim, std::uint64_t seed) {
    if (!(dt > 0.0)) throw DomainError("sample_wiener: dt must be positive");
    if (dim < 1) throw DomainError("sample_wiener: dim must be >= 1");
    if (!(t_min < t_max) || t_min > 0.0 || t_max < 0.0)
        throw DomainError("sample_wiener: window must satisfy t_min <= 0 <= t_max, t_min < t_max");
    const auto lo = grid::to_index(t_min, dt);
    const auto hi = grid::to_index(t_max, dt);
    if (!lo || !hi) throw ConfigurationError("sample_wiener: dt does not divide the window", "dt");

    WienerPath p;
    p.seed_ = seed;
    p.dim_ = dim;
    p.dt_ = dt;
    p.substeps_ = 1;
    p.i_min_ = *lo;
    p.i_max_ = *hi;
    p.origin_ = 0;
    p.generate();
    return p;
}

WienerPath WienerPath::shift(double s) const {
    const std::int64_t j = index_of(s);
    WienerPath p = *this;
    p.origin_ = origin_ + j * substeps_;
    p.generate();
    return p;
}

WienerPath WienerPath::coarsen(int factor) const {
    if (factor < 1) throw DomainError("coarsen: factor must be >= 1");
    if (i_min_ % factor != 0 || i_max_ % factor != 0)
        throw ConfigurationError("coarsen: window is not a multiple of the coarse step", "factor");
    WienerPath p = *this;
    p.dt_ = dt_ * factor;
    p.substeps_ = substeps_ * factor;
    p.i_min_ = i_min_ / factor;
    p.i_max_ = i_max_ / factor;
    p.generate();
    return p;
}

WienerPath WienerPath::with_window(double t_min, double t_max) const {
    if (!(t_min < t_max) || t_min > 0.0 || t_max < 0.0)
        throw DomainError("with_window: window must satisfy t_min <= 0 <= t_max, t_min < t_max");
    WienerPath p = *this;
    p.i_min_ = index_of(t_min);
    p.i_max_ = index_of(t_max);
    p.generate();
    return p;
}

WienerPath WienerPath::sibling(std::uint64_t seed) const {
    WienerPath p = *this;
    p.seed_ = seed;
    p.generate();
    return p;
}

std::int64_t WienerPath::index_of(double t) const {
    const auto i = grid::to_index(t, dt_);
    if (!i) throw DomainError("time " + std::to_string(t) + " is not on the path grid");
    return *i;
}

std::span<const double> WienerPath::value(std::int64_t i) const {
    if (!contains(i)) throw DomainError("path index outside the sampled window");
    return {values_.data() + static_cast<std::size_t>(i - i_min_) * dim_, static_cast<std::size_t>(dim_)};
}

double WienerPath::value(std::int64_t i, int coord) const { return value(i)[static_cast<std::size_t>(coord)]; }

double WienerPath::increment(std::int64_t i, int coord) const {
    if (i < i_min_ || i >= i_max_) throw DomainError("increment index outside the sampled window");
    return increments_[static_cast<std::size_t>(i - i_min_) * dim_ + coord];
}

double WienerPath::stream_increment(std::uint64_t stream_seed, int coord, std::int64_t i) const noexcept {
    const std::int64_t first = origin_ + i * substeps_;
    if (substeps_ == 1) return std::sqrt(dt_) * rng::normal(stream_seed, static_cast<std::uint64_t>(coord), first);
    double sum = 0.0;
    for (int j = 0; j < substeps_; ++j) sum += rng::normal(stream_seed, static_cast<std::uint64_t>(coord), first + j);
    return std::sqrt(dt_ / substeps_) * sum;
}

void WienerPath::generate() {
    const std::size_t nodes = node_count();
    increments_.assign((nodes - 1) * dim_, 0.0);
    values_.assign(nodes * dim_, 0.0);
    for (std::int64_t i = i_min_; i < i_max_; ++i)
        for (int c = 0; c < dim_; ++c)
            increments_[static_cast<std::size_t>(i - i_min_) * dim_ + c] = stream_increment(seed_, c, i);

    // Cumulative sums run outward from the anchor W(0) = 0.
    auto at = [&](std::int64_t i, int c) -> double& {
        return values_[static_cast<std::size_t>(i - i_min_) * dim_ + c];
    };
    auto inc = [&](std::int64_t i, int c) { return increments_[static_cast<std::size_t>(i - i_min_) * dim_ + c]; };
    for (int c = 0; c < dim_; ++c) {
        for (std::int64_t i = 1; i <= i_max_; ++i) at(i, c) = at(i - 1, c) + inc(i - 1, c);
        for (std::int64_t i = -1; i >= i_min_; --i) at(i, c) = at(i + 1, c) - inc(i, c);
    }
}

void WienerPath::write_binary(std::ostream& out) const {
    put_f64(out, t_min());
    put_f64(out, t_max());
    put_f64(out, dt_);
    put_u64(out, static_cast<std::uint64_t>(dim_));
    put_u64(out, seed_);
    for (double v : values_) put_f64(out, v);
}

PathDump read_path_binary(std::istream& in) {
    PathDump d;
    d.t_min = get_f64(in);
    d.t_max = get_f64(in);
    d.dt = get_f64(in);
    d.dim = get_u64(in);
    d.seed = get_u64(in);
    const auto lo = grid::to_index(d.t_min, d.dt);
    const auto hi = grid::to_index(d.t_max, d.dt);
    if (!lo || !hi || *hi < *lo || d.dim == 0) throw DomainError("corrupt path dump header");
    const std::size_t n = static_cast<std::size_t>(*hi - *lo + 1) * d.dim;
    d.values.resize(n);
    for (auto& v : d.values) v = get_f64(in);
    return d;
}

OUPath OUPath::build(const WienerPath& base, double eta) {
    if (!(eta > 0.0)) throw DomainError("ou_path: eta must be positive");
    OUPath z;
    z.eta_ = eta;
    z.dim_ = base.dim();
    z.dt_ = base.dt();
    z.i_min_ = base.i_min();
    z.i_max_ = base.i_max();
    z.values_.assign(base.node_count() * z.dim_, 0.0);

    const double decay = std::exp(-eta * z.dt_);
    const double gain = std::sqrt(-std::expm1(-2.0 * eta * z.dt_) / (2.0 * eta * z.dt_));
    const double stationary_sd = std::sqrt(1.0 / (2.0 * eta));
    const std::uint64_t init_seed = rng::hash3(base.seed(), rng::kOuInit, std::bit_cast<std::uint64_t>(eta));
    const std::int64_t start_fine = base.origin() + base.i_min() * base.substeps();

    for (int c = 0; c < z.dim_; ++c) {
        double v = stationary_sd * rng::normal(init_seed, static_cast<std::uint64_t>(c), start_fine);
        z.values_[static_cast<std::size_t>(c)] = v;
        for (std::int64_t i = base.i_min(); i < base.i_max(); ++i) {
            v = decay * v + gain * base.increment(i, c);
            z.values_[static_cast<std::size_t>(i + 1 - z.i_min_) * z.dim_ + c] = v;
        }
    }
    return z;
}

OUPath OUPath::shift(double s) const {
    const std::int64_t j = index_of(s);
    OUPath z = *this;
    z.i_min_ -= j;
    z.i_max_ -= j;
    return z;
}

std::int64_t OUPath::index_of(double t) const {
    const auto i = grid::to_index(t, dt_);
    if (!i) throw DomainError("time " + std::to_string(t) + " is not on the OU grid");
    return *i;
}

std::span<const double> OUPath::value(std::int64_t i) const {
    if (i < i_min_ || i > i_max_) throw DomainError("OU index outside the sampled window");
    return {values_.data() + static_cast<std::size_t>(i - i_min_) * dim_, static_cast<std::size_t>(dim_)};
}

double OUPath::value(std::int64_t i, int coord) const { return value(i)[static_cast<std::size_t>(coord)]; }

}  // namespace mvlab
