#include "mvlab/mv_ns.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>
#include <string>

#include "mvlab/errors.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/rng.hpp"

#include "flow_common.hpp"

namespace mvlab::ns {

namespace {

using detail::grid_indices;
using detail::guard_check;

constexpr Complex kI{0.0, 1.0};

/// The FFTW planner is not thread-safe; plan creation and destruction go through this lock.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

double norm_sq(std::span<const double> y) {
    double s = 0.0;
    for (double v : y) s += v * v;
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

void check_step(const NsConfig& cfg, const WienerPath& path) {
    if (std::abs(path.dt() - cfg.dt) > 1e-12 * cfg.dt)
        throw ConfigurationError("path grid spacing differs from dt", "dt");
}

int packed_dim(int kd) { return (2 * kd + 1) * (2 * kd + 1) - 1; }

}  // namespace

std::string to_string(ForceKind k) {
    switch (k) {
        case ForceKind::none: return "none";
        case ForceKind::stokes_drag: return "stokes_drag";
        case ForceKind::saturated_norm: return "saturated_norm";
    }
    return "none";
}

ForceKind force_kind_from_string(const std::string& name) {
    if (name == "none") return ForceKind::none;
    if (name == "stokes_drag") return ForceKind::stokes_drag;
    if (name == "saturated_norm") return ForceKind::saturated_norm;
    throw ConfigurationError("unknown force kind '" + name + "'", "f_kind");
}

double NsConfig::lambda1() const noexcept {
    switch (f_kind) {
        case ForceKind::stokes_drag: return 3.0 * c0;
        case ForceKind::saturated_norm: return 2.0 * std::max(h_amp, 0.0);
        case ForceKind::none: return 0.0;
    }
    return 0.0;
}

double NsConfig::lambda2() const noexcept { return f_kind == ForceKind::stokes_drag ? c0 : 0.0; }

void NsConfig::validate() const {
    if (k_modes < 2 || k_modes > 512) throw ConfigurationError("k_modes must lie in [2, 512]", "k_modes");
    if (!(nu_c > 0.0)) throw ConfigurationError("nu_c must be positive", "nu_c");
    if (d_noise < 0 || d_noise > packed_dim(dealiased_modes()))
        throw ConfigurationError("d_noise must lie in [0, number of retained real directions]", "d_noise");
    if (!(eta > 0.0)) throw ConfigurationError("eta must be positive", "eta");
    if (!(c0 >= 0.0)) throw ConfigurationError("c0 must be nonnegative", "c0");
    if (!std::isfinite(h_amp)) throw ConfigurationError("h_amp must be finite", "h_amp");
    if (!(n_sat > 0.0)) throw ConfigurationError("n_sat must be positive", "n_sat");
    if (!(p_moment > 4.0)) throw ConfigurationError("p_moment must exceed 4", "p_moment");
    if (!(dt > 0.0)) throw ConfigurationError("dt must be positive", "dt");
    if (n_particles < 1) throw ConfigurationError("n_particles must be at least 1", "n_particles");
    if (!(probe_radius > 0.0)) throw ConfigurationError("probe_radius must be positive", "probe_radius");
    if (pullback_times.empty()) throw ConfigurationError("pullback_times is empty", "pullback_times");
    for (std::size_t i = 0; i < pullback_times.size(); ++i) {
        if (!(pullback_times[i] > 0.0) || (i > 0 && !(pullback_times[i] > pullback_times[i - 1])))
            throw ConfigurationError("pullback_times must be positive and increasing", "pullback_times");
    }
    if (!(lambda1() + lambda2() < 2.0 * nu_c * gamma_sq())) {
        const char* key = f_kind == ForceKind::saturated_norm ? "h_amp" : "c0";
        throw ConfigurationError("lambda1 + lambda2 must stay below 2 nu_c gamma^2", key);
    }
}

// ---------------------------------------------------------------------------
// FourierVelocityField

FourierVelocityField::FourierVelocityField(int k_modes) : k_(k_modes) {
    if (k_modes < 0) throw DomainError("k_modes must be nonnegative");
    const auto side = static_cast<std::size_t>(2 * k_modes + 1);
    c_.assign(side * side, {Complex{}, Complex{}});
}

std::size_t FourierVelocityField::index(int kx, int ky) const {
    if (!contains(kx, ky)) throw DomainError("mode outside the stored range");
    return static_cast<std::size_t>(kx + k_) * static_cast<std::size_t>(2 * k_ + 1) + static_cast<std::size_t>(ky + k_);
}

double inner(const FourierVelocityField& u, const FourierVelocityField& v) {
    if (u.k_modes() != v.k_modes()) throw DomainError("inner: fields have different cutoffs");
    const int K = u.k_modes();
    double s = 0.0;
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky)
            for (int c = 0; c < 2; ++c) s += std::real(std::conj(u(kx, ky)[c]) * v(kx, ky)[c]);
    return s;
}

double h_norm_sq(const FourierVelocityField& u) { return inner(u, u); }

double v_norm_sq(const FourierVelocityField& u) {
    const int K = u.k_modes();
    double s = 0.0;
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky)
            s += static_cast<double>(kx * kx + ky * ky) * (std::norm(u(kx, ky)[0]) + std::norm(u(kx, ky)[1]));
    return s;
}

double max_divergence(const FourierVelocityField& u) {
    const int K = u.k_modes();
    double m = 0.0;
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky)
            m = std::max(m, std::abs(static_cast<double>(kx) * u(kx, ky)[0] + static_cast<double>(ky) * u(kx, ky)[1]));
    return m;
}

double max_reality_defect(const FourierVelocityField& u) {
    const int K = u.k_modes();
    double m = 0.0;
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky)
            for (int c = 0; c < 2; ++c) m = std::max(m, std::abs(u(-kx, -ky)[c] - std::conj(u(kx, ky)[c])));
    return m;
}

FourierVelocityField leray_project(const FourierVelocityField& w) {
    const int K = w.k_modes();
    FourierVelocityField out(K);
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky) {
            if (kx == 0 && ky == 0) continue;
            const auto& a = w(kx, ky);
            const double fx = kx, fy = ky;
            const Complex kdotu = (fx * a[0] + fy * a[1]) / (fx * fx + fy * fy);
            out(kx, ky) = {a[0] - fx * kdotu, a[1] - fy * kdotu};
        }
    return out;
}

void write_coefficients_csv(std::ostream& out, const FourierVelocityField& u) {
    const int K = u.k_modes();
    out << "kx,ky,re_u1,im_u1,re_u2,im_u2\n";
    out.precision(17);
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky) {
            if (kx == 0 && ky == 0) continue;
            const auto& a = u(kx, ky);
            out << kx << ',' << ky << ',' << a[0].real() << ',' << a[0].imag() << ',' << a[1].real() << ','
                << a[1].imag() << '\n';
        }
}

// ---------------------------------------------------------------------------
// NsSpace

struct NsSpace::Plans {
    int m = 0;
    fftw_plan c2r = nullptr;
    fftw_plan r2c = nullptr;

    explicit Plans(int grid) : m(grid) {
        std::vector<double> real(static_cast<std::size_t>(m * m));
        std::vector<Complex> spec(static_cast<std::size_t>(m * (m / 2 + 1)));
        auto* cs = reinterpret_cast<fftw_complex*>(spec.data());
        std::lock_guard lock(planner_mutex());
        c2r = fftw_plan_dft_c2r_2d(m, m, cs, real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
        r2c = fftw_plan_dft_r2c_2d(m, m, real.data(), cs, FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!c2r || !r2c) throw Error("FFTW planning failed");
    }
    ~Plans() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(c2r);
        fftw_destroy_plan(r2c);
    }
    Plans(const Plans&) = delete;
    Plans& operator=(const Plans&) = delete;

    std::size_t half() const noexcept { return static_cast<std::size_t>(m / 2 + 1); }
    std::size_t spec_size() const noexcept { return static_cast<std::size_t>(m) * half(); }
    std::size_t real_size() const noexcept { return static_cast<std::size_t>(m) * static_cast<std::size_t>(m); }
    /// Slot of wavenumber (kx, ky), ky >= 0, in the half spectrum.
    std::size_t slot(int kx, int ky) const noexcept {
        return static_cast<std::size_t>((kx % m + m) % m) * half() + static_cast<std::size_t>(ky);
    }
    /// Grid values of sum_k s(k) e^{i k.x}; `spec` is consumed.
    void synthesize(std::vector<Complex>& spec, std::vector<double>& real) const {
        real.resize(real_size());
        fftw_execute_dft_c2r(c2r, reinterpret_cast<fftw_complex*>(spec.data()), real.data());
    }
    /// Normalized coefficients (divided by M^2) of grid values.
    void analyze(std::vector<double>& real, std::vector<Complex>& spec) const {
        spec.resize(spec_size());
        fftw_execute_dft_r2c(r2c, real.data(), reinterpret_cast<fftw_complex*>(spec.data()));
        const double scale = 1.0 / static_cast<double>(real_size());
        for (auto& s : spec) s *= scale;
    }
};

NsSpace::NsSpace(int k_modes) : k_(k_modes), kd_(2 * k_modes / 3) {
    if (k_modes < 2) throw DomainError("NsSpace needs k_modes >= 2");
    for (int ky = 0; ky <= kd_; ++ky)
        for (int kx = -kd_; kx <= kd_; ++kx) {
            if (ky == 0 && kx <= 0) continue;
            modes_.push_back({kx, ky, static_cast<double>(kx * kx + ky * ky)});
        }
    std::stable_sort(modes_.begin(), modes_.end(), [](const Mode& a, const Mode& b) {
        if (a.k_sq != b.k_sq) return a.k_sq < b.k_sq;
        if (a.ky != b.ky) return a.ky < b.ky;
        return a.kx < b.kx;
    });
    plans_ = std::make_shared<const Plans>(2 * k_modes);
}

FourierVelocityField NsSpace::unpack(std::span<const double> y) const {
    if (y.size() != dim()) throw DomainError("packed state has the wrong dimension");
    FourierVelocityField u(k_);
    for (std::size_t m = 0; m < modes_.size(); ++m) {
        const auto& md = modes_[m];
        const double kn = std::sqrt(md.k_sq);
        const Complex alpha = Complex(y[2 * m], y[2 * m + 1]) / std::numbers::sqrt2;
        const std::array<Complex, 2> a{alpha * (-md.ky / kn), alpha * (md.kx / kn)};
        u(md.kx, md.ky) = a;
        u(-md.kx, -md.ky) = {std::conj(a[0]), std::conj(a[1])};
    }
    return u;
}

State NsSpace::pack(const FourierVelocityField& u) const {
    if (u.k_modes() < kd_) throw DomainError("field cutoff is below the retained range");
    State y(dim());
    for (std::size_t m = 0; m < modes_.size(); ++m) {
        const auto& md = modes_[m];
        const double kn = std::sqrt(md.k_sq);
        const auto& a = u(md.kx, md.ky);
        const Complex alpha = (-md.ky / kn) * a[0] + (md.kx / kn) * a[1];
        y[2 * m] = std::numbers::sqrt2 * alpha.real();
        y[2 * m + 1] = std::numbers::sqrt2 * alpha.imag();
    }
    return y;
}

namespace {

/// Half spectrum of factor(kx, ky) * u_hat_c(k) restricted to |k|_inf <= kd.
template <class Factor>
std::vector<Complex> half_spectrum(const FourierVelocityField& u, int c, int kd, const NsSpace::Plans& p,
                                   Factor&& factor) {
    std::vector<Complex> s(p.spec_size());
    const int lim = std::min(kd, u.k_modes());
    for (int kx = -lim; kx <= lim; ++kx)
        for (int ky = 0; ky <= lim; ++ky) s[p.slot(kx, ky)] = factor(kx, ky) * u(kx, ky)[c];
    return s;
}

/// -P_H of the retained modes of (w1, w2), as a full-plane field.
FourierVelocityField project_output(const std::vector<Complex>& w1, const std::vector<Complex>& w2, int K, int kd,
                                    const NsSpace::Plans& p) {
    FourierVelocityField raw(K);
    for (int kx = -kd; kx <= kd; ++kx)
        for (int ky = 0; ky <= kd; ++ky) {
            const std::array<Complex, 2> a{-w1[p.slot(kx, ky)], -w2[p.slot(kx, ky)]};
            raw(kx, ky) = a;
            if (ky > 0) raw(-kx, -ky) = {std::conj(a[0]), std::conj(a[1])};
        }
    return leray_project(raw);
}

}  // namespace

FourierVelocityField NsSpace::nonlinearity(const FourierVelocityField& u, const FourierVelocityField& v) const {
    const auto& p = *plans_;
    auto one = [](int, int) { return Complex(1.0); };
    auto dx = [](int kx, int) { return kI * static_cast<double>(kx); };
    auto dy = [](int, int ky) { return kI * static_cast<double>(ky); };
    std::vector<double> u1, u2, g;
    {
        auto s = half_spectrum(u, 0, kd_, p, one);
        p.synthesize(s, u1);
        s = half_spectrum(u, 1, kd_, p, one);
        p.synthesize(s, u2);
    }
    std::array<std::vector<double>, 2> w;
    for (int c = 0; c < 2; ++c) {
        auto s = half_spectrum(v, c, kd_, p, dx);
        p.synthesize(s, g);
        w[c].resize(p.real_size());
        for (std::size_t i = 0; i < g.size(); ++i) w[c][i] = u1[i] * g[i];
        s = half_spectrum(v, c, kd_, p, dy);
        p.synthesize(s, g);
        for (std::size_t i = 0; i < g.size(); ++i) w[c][i] += u2[i] * g[i];
    }
    std::vector<Complex> w1, w2;
    p.analyze(w[0], w1);
    p.analyze(w[1], w2);
    return project_output(w1, w2, k_, kd_, p);
}

FourierVelocityField NsSpace::self_nonlinearity(const FourierVelocityField& u) const {
    const auto& p = *plans_;
    std::vector<double> u1, u2, om;
    auto s = half_spectrum(u, 0, kd_, p, [](int, int) { return Complex(1.0); });
    p.synthesize(s, u1);
    s = half_spectrum(u, 1, kd_, p, [](int, int) { return Complex(1.0); });
    p.synthesize(s, u2);
    auto sx = half_spectrum(u, 1, kd_, p, [](int kx, int) { return kI * static_cast<double>(kx); });
    auto sy = half_spectrum(u, 0, kd_, p, [](int, int ky) { return kI * static_cast<double>(ky); });
    for (std::size_t i = 0; i < sx.size(); ++i) sx[i] -= sy[i];
    p.synthesize(sx, om);
    std::vector<double> w1(p.real_size()), w2(p.real_size());
    for (std::size_t i = 0; i < w1.size(); ++i) {
        w1[i] = -om[i] * u2[i];
        w2[i] = om[i] * u1[i];
    }
    std::vector<Complex> f1, f2;
    p.analyze(w1, f1);
    p.analyze(w2, f2);
    return project_output(f1, f2, k_, kd_, p);
}

void NsSpace::self_nonlinearity(std::span<const double> y, std::span<double> out) const {
    if (y.size() != dim() || out.size() != dim()) throw DomainError("packed state has the wrong dimension");
    const auto& p = *plans_;
    std::vector<Complex> s1(p.spec_size()), s2(p.spec_size()), so(p.spec_size());
    for (std::size_t m = 0; m < modes_.size(); ++m) {
        const auto& md = modes_[m];
        const double kn = std::sqrt(md.k_sq);
        const Complex alpha = Complex(y[2 * m], y[2 * m + 1]) / std::numbers::sqrt2;
        const Complex a1 = alpha * (-md.ky / kn), a2 = alpha * (md.kx / kn), w = kI * kn * alpha;
        const std::size_t i = p.slot(md.kx, md.ky);
        s1[i] = a1;
        s2[i] = a2;
        so[i] = w;
        if (md.ky == 0) {
            const std::size_t j = p.slot(-md.kx, 0);
            s1[j] = std::conj(a1);
            s2[j] = std::conj(a2);
            so[j] = std::conj(w);
        }
    }
    std::vector<double> u1, u2, om;
    p.synthesize(s1, u1);
    p.synthesize(s2, u2);
    p.synthesize(so, om);
    for (std::size_t i = 0; i < om.size(); ++i) {
        const double a = -om[i] * u2[i];
        u2[i] = om[i] * u1[i];
        u1[i] = a;
    }
    p.analyze(u1, s1);
    p.analyze(u2, s2);
    for (std::size_t m = 0; m < modes_.size(); ++m) {
        const auto& md = modes_[m];
        const double kn = std::sqrt(md.k_sq);
        const std::size_t i = p.slot(md.kx, md.ky);
        const Complex alpha = -((-md.ky / kn) * s1[i] + (md.kx / kn) * s2[i]);
        out[2 * m] = std::numbers::sqrt2 * alpha.real();
        out[2 * m + 1] = std::numbers::sqrt2 * alpha.imag();
    }
}

std::array<std::vector<double>, 2> NsSpace::to_grid(const FourierVelocityField& u) const {
    const auto& p = *plans_;
    std::array<std::vector<double>, 2> g;
    for (int c = 0; c < 2; ++c) {
        auto s = half_spectrum(u, c, k_ - 1, p, [](int, int) { return Complex(1.0); });
        p.synthesize(s, g[c]);
    }
    return g;
}

double v_norm_sq(const NsSpace& space, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) s += space.k_sq(j) * y[j] * y[j];
    return s;
}

double flux_residual(const NsSpace& space, std::span<const double> y) {
    const double scale = std::sqrt(norm_sq(y)) * v_norm_sq(space, y);
    if (scale == 0.0) return 0.0;
    std::vector<double> b(space.dim());
    space.self_nonlinearity(y, b);
    return std::abs(dot(b, y)) / scale;
}

State random_state(const NsSpace& space, std::uint64_t seed, std::uint64_t index, double radius, int max_shell) {
    State y(space.dim(), 0.0);
    for (std::size_t j = 0; j < y.size(); ++j) {
        const auto& md = space.modes()[j / 2];
        if (max_shell > 0 && std::max(std::abs(md.kx), md.ky) > max_shell) continue;
        y[j] = rng::normal(seed, index, static_cast<std::int64_t>(j)) / md.k_sq;
    }
    const double n = std::sqrt(norm_sq(y));
    if (n > 0.0)
        for (auto& v : y) v *= radius / n;
    return y;
}

FourierVelocityField phi_field(const NsSpace& space, int i) {
    if (i < 0 || static_cast<std::size_t>(i) >= space.dim()) throw DomainError("noise index out of range");
    State e(space.dim(), 0.0);
    e[static_cast<std::size_t>(i)] = 1.0;
    return space.unpack(e);
}

State ou_state(const NsSpace& space, const OUPath& z, std::int64_t i) {
    if (static_cast<std::size_t>(z.dim()) > space.dim()) throw DomainError("more OU coordinates than directions");
    State y(space.dim(), 0.0);
    const auto v = z.value(i);
    std::copy(v.begin(), v.end(), y.begin());
    return y;
}

FourierVelocityField ou_field(const NsSpace& space, const OUPath& z, double t) {
    return space.unpack(ou_state(space, z, z.index_of(t)));
}

std::vector<double> law_features(const NsConfig& cfg, const EmpiricalMeasure& mu) {
    switch (cfg.f_kind) {
        case ForceKind::stokes_drag: return mean(mu);
        case ForceKind::saturated_norm: {
            double s = 0.0;
            for (std::size_t i = 0; i < mu.size(); ++i)
                s += mu.weight(i) * std::min(std::sqrt(norm_sq(mu.particle(i))), cfg.n_sat);
            return {s};
        }
        case ForceKind::none: return {};
    }
    return {};
}

void force(const NsConfig& cfg, std::span<const double> u, std::span<const double> features, std::span<double> out) {
    switch (cfg.f_kind) {
        case ForceKind::stokes_drag:
            if (features.size() != u.size()) throw DomainError("Stokes drag needs the mean as law feature");
            for (std::size_t j = 0; j < u.size(); ++j) out[j] = cfg.c0 * (u[j] - features[j]);
            return;
        case ForceKind::saturated_norm: {
            if (features.size() != 1) throw DomainError("saturated norm force needs one law feature");
            const double h = cfg.h_amp * std::tanh(features[0]);
            for (std::size_t j = 0; j < u.size(); ++j) out[j] = h * u[j];
            return;
        }
        case ForceKind::none: std::fill(out.begin(), out.end(), 0.0); return;
    }
}

namespace {

/// Exponential Euler step shared by particles, the X flow and (with an extra term) the Z flow.
struct Stepper {
    const NsSpace& space;
    const NsConfig& cfg;
    std::vector<double> decay;

    Stepper(const NsSpace& s, const NsConfig& c) : space(s), cfg(c), decay(s.dim()) {
        for (std::size_t j = 0; j < decay.size(); ++j) decay[j] = std::exp(-cfg.nu_c * s.k_sq(j) * cfg.dt);
    }

    /// drift = B(u, u) + F(u, mu) at u.
    void drift(std::span<const double> u, std::span<const double> features, std::vector<double>& b) const {
        b.assign(space.dim(), 0.0);
        if (cfg.nonlinear) space.self_nonlinearity(u, b);
        if (cfg.f_kind != ForceKind::none) {
            std::vector<double> f(space.dim());
            force(cfg, u, features, f);
            for (std::size_t j = 0; j < b.size(); ++j) b[j] += f[j];
        }
    }

    template <class Noise>
    void step(std::span<double> y, std::span<const double> features, Noise&& dW) const {
        std::vector<double> b;
        drift(y, features, b);
        const auto d = static_cast<std::size_t>(cfg.noise ? cfg.d_noise : 0);
        for (std::size_t j = 0; j < y.size(); ++j) {
            double v = y[j] + cfg.dt * b[j];
            if (j < d) v += dW(static_cast<int>(j));
            y[j] = decay[j] * v;
        }
    }
};

std::span<const double> features_at(const NsConfig& cfg, const sode::LawPath& law, std::int64_t i) {
    if (cfg.f_kind == ForceKind::none) return {};
    return law.at(i);
}

void check_omega(const NsConfig& cfg, const WienerPath& omega) {
    if (cfg.noise && omega.dim() < cfg.d_noise) throw DomainError("omega has fewer coordinates than d_noise");
}

}  // namespace

NsMeasureFlow simulate_ns_measure_flow(const NsSpace& space, const NsConfig& cfg, const EmpiricalMeasure& mu0,
                                       const WienerPath& path, std::span<const double> t_grid, double guard) {
    check_step(cfg, path);
    if (space.k_modes() != cfg.k_modes) throw DomainError("space and config disagree on k_modes");
    if (static_cast<std::size_t>(mu0.dim()) != space.dim()) throw DomainError("initial measure has the wrong dimension");
    const auto idx = grid_indices(path, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    const std::size_t n = mu0.size();
    const Stepper stepper(space, cfg);
    for (std::size_t p = 0; p < n; ++p) guard_check(mu0.particle(p), guard, t_grid.front());

    std::vector<std::uint64_t> streams(n);
    for (std::size_t p = 0; p < n; ++p) streams[p] = rng::particle_seed(path.seed(), p);

    EmpiricalMeasure cur = mu0;
    NsMeasureFlow out;
    out.law.i_start = i0;
    out.law.features.reserve(static_cast<std::size_t>(i1 - i0 + 1));
    std::size_t next = 0;
    auto record = [&](std::int64_t i) {
        while (next < idx.size() && idx[next] == i) {
            out.times.push_back(t_grid[next]);
            out.snapshots.push_back(cur);
            ++next;
        }
    };
    for (std::int64_t i = i0; i < i1; ++i) {
        out.law.features.push_back(law_features(cfg, cur));
        record(i);
        const auto& feat = out.law.features.back();
        const double t_next = path.time(i + 1);
        parallel_for(n, [&](std::size_t p) {
            auto x = cur.particle(p);
            stepper.step(x, feat, [&](int c) { return path.stream_increment(streams[p], c, i); });
            guard_check(x, guard, t_next);
        });
    }
    out.law.features.push_back(law_features(cfg, cur));
    record(i1);
    return out;
}

std::vector<State> simulate_ns_state_flow(const NsSpace& space, const NsConfig& cfg, std::span<const double> x0,
                                          const sode::LawPath& law, const WienerPath& omega,
                                          std::span<const double> t_grid, std::optional<std::uint64_t> noise_stream,
                                          double guard) {
    check_step(cfg, omega);
    if (x0.size() != space.dim()) throw DomainError("initial state has the wrong dimension");
    if (!noise_stream) check_omega(cfg, omega);
    const auto idx = grid_indices(omega, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    if (!noise_stream && (!omega.contains(i0) || !omega.contains(i1)))
        throw DomainError("time grid leaves the path window");
    guard_check(x0, guard, t_grid.front());
    const Stepper stepper(space, cfg);

    State x(x0.begin(), x0.end());
    std::vector<State> out;
    out.reserve(idx.size());
    std::size_t next = 0;
    auto record = [&](std::int64_t i) {
        while (next < idx.size() && idx[next] == i) {
            out.push_back(x);
            ++next;
        }
    };
    for (std::int64_t i = i0; i < i1; ++i) {
        record(i);
        const auto feat = features_at(cfg, law, i);
        if (noise_stream)
            stepper.step(x, feat, [&](int c) { return omega.stream_increment(*noise_stream, c, i); });
        else
            stepper.step(x, feat, [&](int c) { return omega.increment(i, c); });
        guard_check(x, guard, omega.time(i + 1));
    }
    record(i1);
    return out;
}

ZTrajectory integrate_Z(const NsSpace& space, const NsConfig& cfg, std::span<const double> x0,
                        const sode::LawPath& law, const WienerPath& omega, std::span<const double> t_grid,
                        double guard) {
    check_step(cfg, omega);
    check_omega(cfg, omega);
    if (x0.size() != space.dim()) throw DomainError("initial state has the wrong dimension");
    const auto idx = grid_indices(omega, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    if (!omega.contains(i0) || !omega.contains(i1)) throw DomainError("time grid leaves the path window");
    const bool noisy = cfg.noise && cfg.d_noise > 0;
    std::optional<OUPath> ou;
    if (noisy) ou = OUPath::build(omega, cfg.eta);
    auto zI = [&](std::int64_t i) {
        State z(space.dim(), 0.0);
        if (noisy)
            for (int c = 0; c < cfg.d_noise; ++c) z[static_cast<std::size_t>(c)] = ou->value(i, c);
        return z;
    };
    const Stepper stepper(space, cfg);

    State Z(x0.begin(), x0.end());
    {
        const auto z0 = zI(i0);
        for (std::size_t j = 0; j < Z.size(); ++j) Z[j] -= z0[j];
    }
    guard_check(Z, guard, t_grid.front());

    ZTrajectory out;
    std::size_t next = 0;
    auto record = [&](std::int64_t i, const State& z) {
        while (next < idx.size() && idx[next] == i) {
            out.times.push_back(t_grid[next]);
            out.z.push_back(Z);
            if (i == i0) {
                out.x.emplace_back(x0.begin(), x0.end());
            } else {
                State x = Z;
                for (std::size_t j = 0; j < x.size(); ++j) x[j] += z[j];
                out.x.push_back(std::move(x));
            }
            ++next;
        }
    };
    std::vector<double> b;
    for (std::int64_t i = i0; i < i1; ++i) {
        const State z = zI(i);
        record(i, z);
        State u = Z;
        for (std::size_t j = 0; j < u.size(); ++j) u[j] += z[j];
        stepper.drift(u, features_at(cfg, law, i), b);
        for (std::size_t j = 0; j < Z.size(); ++j) {
            const double lin = (cfg.eta - cfg.nu_c * space.k_sq(j)) * z[j];
            Z[j] = stepper.decay[j] * (Z[j] + cfg.dt * (b[j] + lin));
        }
        guard_check(Z, guard, omega.time(i + 1));
    }
    record(i1, zI(i1));
    return out;
}

attractor::CocycleAdapter make_adapter(const NsConfig& cfg) {
    cfg.validate();
    auto space = std::make_shared<const NsSpace>(cfg.k_modes);
    attractor::CocycleAdapter a;
    a.advance = [cfg, space](double t0, double t1, const WienerPath& omega, const EmpiricalMeasure& mu,
                             const std::vector<attractor::State>& states) {
        const double grid[] = {t0, t1};
        NsMeasureFlow flow = simulate_ns_measure_flow(*space, cfg, mu, omega, grid);
        attractor::CocycleAdapter::Output out;
        out.states.resize(states.size());
        parallel_for(states.size(), [&](std::size_t i) {
            out.states[i] = simulate_ns_state_flow(*space, cfg, states[i], flow.law, omega, grid).back();
        });
        out.mu = std::move(flow.snapshots.back());
        return out;
    };
    return a;
}

// ---------------------------------------------------------------------------
// Diagnostics

namespace {

struct ExpFit {
    double rate = 0.0, amplitude = 0.0, offset = 0.0, residual = 0.0;
    bool at_lower_edge = false;
};

// Relative least squares for y ~ a e^{-lambda t} + c: linear in (a, c) for fixed lambda,
// a log-spaced scan in lambda, then golden-section refinement around the best scan point.
ExpFit fit_exponential(std::span<const double> t, std::span<const double> y) {
    const double span = t.back() - t.front();
    auto solve = [&](double lam, double& a, double& c) {
        double see = 0, se = 0, s1 = 0, sey = 0, sy = 0;
        for (std::size_t k = 0; k < t.size(); ++k) {
            const double w = y[k] > 0.0 ? 1.0 / (y[k] * y[k]) : 1.0;
            const double e = std::exp(-lam * (t[k] - t.front()));
            see += w * e * e;
            se += w * e;
            s1 += w;
            sey += w * e * y[k];
            sy += w * y[k];
        }
        const double det = see * s1 - se * se;
        if (!(std::abs(det) > 1e-300)) {
            a = 0.0;
            c = sy / s1;
        } else {
            a = (sey * s1 - se * sy) / det;
            c = (see * sy - se * sey) / det;
        }
        double r = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) {
            const double w = y[k] > 0.0 ? 1.0 / (y[k] * y[k]) : 1.0;
            const double e = std::exp(-lam * (t[k] - t.front()));
            r += w * std::pow(a * e + c - y[k], 2);
        }
        return r;
    };
    constexpr int kScan = 241;
    const double lo = 1e-3 / span, hi = 1e3 / span;
    std::vector<double> lam(kScan), res(kScan);
    double a = 0, c = 0;
    for (int k = 0; k < kScan; ++k) {
        lam[k] = lo * std::pow(hi / lo, static_cast<double>(k) / (kScan - 1));
        res[k] = solve(lam[k], a, c);
    }
    const int best = static_cast<int>(std::min_element(res.begin(), res.end()) - res.begin());
    double x0 = lam[std::max(best - 1, 0)], x3 = lam[std::min(best + 1, kScan - 1)];
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = x3 - g * (x3 - x0), x2 = x0 + g * (x3 - x0);
    double f1 = solve(x1, a, c), f2 = solve(x2, a, c);
    for (int it = 0; it < 200 && (x3 - x0) > 1e-14 * x3; ++it) {
        if (f1 <= f2) {
            x3 = x2;
            x2 = x1;
            f2 = f1;
            x1 = x3 - g * (x3 - x0);
            f1 = solve(x1, a, c);
        } else {
            x0 = x1;
            x1 = x2;
            f1 = f2;
            x2 = x0 + g * (x3 - x0);
            f2 = solve(x2, a, c);
        }
    }
    ExpFit f;
    f.rate = f1 <= f2 ? x1 : x2;
    f.residual = solve(f.rate, f.amplitude, f.offset);
    f.at_lower_edge = best == 0;
    return f;
}

}  // namespace

MomentDecayResult moment_decay_test(const NsConfig& cfg, const EmpiricalMeasure& mu0, const WienerPath& path,
                                    std::span<const double> t_grid, double p, double slack_se) {
    cfg.validate();
    if (!(p >= 1.0) || p > cfg.p_moment) throw ConfigurationError("moment exponent must lie in [1, p_moment]", "p");
    if (t_grid.size() < 4) throw DomainError("moment decay test needs at least 4 sample times");
    const NsSpace space(cfg.k_modes);
    const auto flow = simulate_ns_measure_flow(space, cfg, mu0, path, t_grid);

    MomentDecayResult r;
    r.p = p;
    r.times = flow.times;
    r.slack_se = slack_se;
    r.rate_bound = cfg.moment_rate_bound(p);
    for (const auto& s : flow.snapshots) {
        const double m = moment(s, p);
        double var = 0.0, w2 = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double v = std::pow(norm_sq(s.particle(i)), p / 2.0);
            var += s.weight(i) * (v - m) * (v - m);
            w2 += s.weight(i) * s.weight(i);
        }
        r.moments.push_back(m);
        r.standard_errors.push_back(std::sqrt(var * w2));
    }
    const auto& last = flow.snapshots.back();
    for (std::size_t i = 0; i < std::min<std::size_t>(last.size(), 16); ++i)
        r.flux_residual = std::max(r.flux_residual, flux_residual(space, last.particle(i)));

    const std::size_t n = r.moments.size();
    const std::size_t tail = std::max<std::size_t>(1, n / 4);
    double plateau = 0.0;
    for (std::size_t k = n - tail; k < n; ++k) plateau += r.moments[k] / static_cast<double>(tail);
    while (static_cast<std::size_t>(r.transient_samples) < n && r.moments[r.transient_samples] > 1.1 * plateau)
        ++r.transient_samples;

    const auto fit = fit_exponential(r.times, r.moments);
    r.rate = fit.at_lower_edge ? 0.0 : fit.rate;
    r.amplitude = fit.amplitude;
    r.offset = fit.offset;
    r.dominated = true;
    for (std::size_t k = 0; k < n; ++k) {
        const double env =
            r.moments.front() * std::exp(-r.rate * (r.times[k] - r.times.front())) + std::max(r.offset, 0.0);
        r.envelope.push_back(env);
        if (r.moments[k] > env + slack_se * r.standard_errors[k] + 1e-12 * r.moments.front()) r.dominated = false;
    }
    if (r.transient_samples < 3)
        r.status = attractor::Status::inconclusive;
    else
        r.status = (r.rate > 0.0 && r.amplitude > 0.0 && r.dominated) ? attractor::Status::pass
                                                                       : attractor::Status::fail;
    return r;
}

AbsorbingProbes default_probes(const NsSpace& space, const NsConfig& cfg, std::uint64_t seed, double radius) {
    AbsorbingProbes p;
    const std::size_t D = space.dim();
    p.states.emplace_back(D, 0.0);
    p.states.emplace_back(D, 0.0);
    p.states.back()[0] = radius;
    p.states.emplace_back(D, 0.0);
    p.states.back()[std::min<std::size_t>(3, D - 1)] = -radius;
    const auto ss = rng::derive_seed(seed, rng::kProbe);
    p.states.push_back(random_state(space, ss, 0, radius, 3));
    p.states.push_back(random_state(space, ss, 1, radius, 3));

    const auto n = static_cast<std::size_t>(cfg.n_particles);
    std::vector<double> zero(n * D, 0.0);
    p.measures.emplace_back(static_cast<int>(D), std::move(zero));
    std::vector<double> cloud;
    cloud.reserve(n * D);
    const auto cs = rng::derive_seed(seed, rng::kInitialCloud);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = random_state(space, cs, i, radius, 3);
        cloud.insert(cloud.end(), s.begin(), s.end());
    }
    p.measures.emplace_back(static_cast<int>(D), std::move(cloud));
    return p;
}

AbsorbingResult absorbing_radius_estimate(const NsConfig& cfg, const WienerPath& omega, double t0,
                                          std::span<const double> pullback_times, const AbsorbingProbes& probes,
                                          std::span<const double> c_values) {
    cfg.validate();
    check_step(cfg, omega);
    check_omega(cfg, omega);
    if (!(t0 >= 0.0)) throw DomainError("t0 must be nonnegative");
    if (pullback_times.empty()) throw DomainError("pullback schedule is empty");
    if (probes.states.empty() || probes.measures.empty()) throw DomainError("absorbing estimate needs probes");
    for (std::size_t n = 0; n < pullback_times.size(); ++n)
        if (!(pullback_times[n] > t0) || (n > 0 && !(pullback_times[n] > pullback_times[n - 1])))
            throw DomainError("pullback times must exceed t0 and increase");
    if (omega.t_min() > -pullback_times.back() + 1e-12 * cfg.dt)
        throw DomainError("omega window does not reach the earliest pullback time");

    const NsSpace space(cfg.k_modes);
    const std::int64_t i_hi = omega.index_of(-t0), i_lo = omega.i_min();
    const bool noisy = cfg.noise && cfg.d_noise > 0;
    std::optional<OUPath> ou;
    if (noisy) ou = OUPath::build(omega, cfg.eta);
    auto zI = [&](std::int64_t i) {
        std::vector<double> z(static_cast<std::size_t>(noisy ? cfg.d_noise : 0));
        for (std::size_t c = 0; c < z.size(); ++c) z[c] = ou->value(i, static_cast<int>(c));
        return z;
    };
    const auto z_end = zI(i_hi);

    AbsorbingResult r;
    r.pullback_times.assign(pullback_times.begin(), pullback_times.end());
    r.lambda2_prime = cfg.lambda2_prime();
    for (double t : pullback_times) {
        const double grid[] = {-t, -t0};
        std::vector<double> zsq;
        double radius = 0.0;
        for (const auto& mu : probes.measures) {
            const auto flow = simulate_ns_measure_flow(space, cfg, mu, omega, grid);
            std::vector<State> xs(probes.states.size());
            parallel_for(xs.size(), [&](std::size_t k) {
                xs[k] = simulate_ns_state_flow(space, cfg, probes.states[k], flow.law, omega, grid).back();
            });
            for (auto& x : xs) {
                radius = std::max(radius, std::sqrt(norm_sq(x)));
                r.flux_residual = std::max(r.flux_residual, flux_residual(space, x));
                for (std::size_t c = 0; c < z_end.size(); ++c) x[c] -= z_end[c];
                zsq.push_back(norm_sq(x));
            }
        }
        r.max_z_sq.push_back(*std::max_element(zsq.begin(), zsq.end()));
        r.z_sq.push_back(std::move(zsq));
        r.cloud_radius.push_back(radius);
    }

    // Quadrature of the radius formula over [omega.t_min, -t0] on the grid.
    const auto steps = static_cast<std::size_t>(i_hi - i_lo);
    std::vector<double> zsq_path(steps + 1), s1(steps + 1), s4(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        const auto z = zI(i_lo + static_cast<std::int64_t>(k));
        for (double v : z) {
            zsq_path[k] += v * v;
            s1[k] += std::abs(v) * (std::abs(v) + 1.0);
            s4[k] += std::pow(v, 4);
        }
    }
    const double terminal = r.max_z_sq.back();
    bool any_convergent = false, found = false;
    for (double C : c_values) {
        RadiusScan sc;
        sc.C = C;
        double G = 0.0, sup = zsq_path[steps], integral = 0.0;
        for (std::size_t k = steps; k-- > 0;) {
            G += (-r.lambda2_prime / 8.0 + C * s1[k]) * cfg.dt;
            sup = std::max(sup, zsq_path[k] * std::exp(G));
            integral += std::exp(G) * C * (1.0 + s4[k]) * cfg.dt;
        }
        sc.exponent_average = steps > 0 ? G / (static_cast<double>(steps) * cfg.dt) : -r.lambda2_prime / 8.0;
        sc.convergent = sc.exponent_average < 0.0;
        sc.r_sq = 2.0 + 2.0 * sup + integral;
        r.scan.push_back(sc);
        if (!sc.convergent) continue;
        any_convergent = true;
        if (!found && sc.r_sq >= terminal) {
            found = true;
            r.selected_C = C;
            r.r_sq = sc.r_sq;
        } else if (!found && sc.r_sq > r.r_sq) {
            r.selected_C = C;
            r.r_sq = sc.r_sq;
        }
    }
    if (!any_convergent)
        r.status = attractor::Status::inconclusive;
    else
        r.status = found ? attractor::Status::pass : attractor::Status::fail;
    return r;
}

}  // namespace mvlab::ns
