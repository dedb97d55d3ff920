#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "mvlab/errors.hpp"
#include "mvlab/mv_ns.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;
using namespace mvlab::ns;

namespace {

NsConfig small_config(int K = 6, int n = 16) {
    NsConfig c;
    c.k_modes = K;
    c.n_particles = n;
    return c;
}

NsConfig linear_config(int K = 6) {
    NsConfig c = small_config(K);
    c.noise = false;
    c.nonlinear = false;
    c.f_kind = ForceKind::none;
    return c;
}

double norm(std::span<const double> y) {
    double s = 0.0;
    for (double v : y) s += v * v;
    return std::sqrt(s);
}

double packed_dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

double max_abs_diff(const FourierVelocityField& a, const FourierVelocityField& b) {
    const int K = a.k_modes();
    double m = 0.0;
    for (int kx = -K; kx <= K; ++kx)
        for (int ky = -K; ky <= K; ++ky)
            for (int c = 0; c < 2; ++c) m = std::max(m, std::abs(a(kx, ky)[c] - b(kx, ky)[c]));
    return m;
}

/// Index of the packed mode (kx, ky) in the half plane.
std::size_t mode_index(const NsSpace& s, int kx, int ky) {
    for (std::size_t m = 0; m < s.modes().size(); ++m)
        if (s.modes()[m].kx == kx && s.modes()[m].ky == ky) return m;
    throw std::logic_error("mode not retained");
}

EmpiricalMeasure cloud_of(const NsSpace& s, int n, std::uint64_t seed, double radius, int shell = 3) {
    std::vector<double> x;
    for (int i = 0; i < n; ++i) {
        const auto y = random_state(s, seed, static_cast<std::uint64_t>(i), radius, shell);
        x.insert(x.end(), y.begin(), y.end());
    }
    return EmpiricalMeasure(static_cast<int>(s.dim()), std::move(x));
}

EmpiricalMeasure repeated(const State& y, int n) {
    std::vector<double> x;
    for (int i = 0; i < n; ++i) x.insert(x.end(), y.begin(), y.end());
    return EmpiricalMeasure(static_cast<int>(y.size()), std::move(x));
}

}  // namespace

TEST(NsConfig, ForceConstantsAndGates) {
    NsConfig c;
    EXPECT_DOUBLE_EQ(c.lambda1(), 0.30000000000000004);
    EXPECT_DOUBLE_EQ(c.lambda2(), 0.1);
    EXPECT_NEAR(c.lambda2_prime(), 1.7, 1e-15);
    EXPECT_NEAR(c.moment_rate_bound(2.0), 1.6, 1e-15);
    EXPECT_EQ(c.dealiased_modes(), 10);
    EXPECT_NO_THROW(c.validate());

    auto expect_key = [](NsConfig bad, const std::string& key) {
        try {
            bad.validate();
            FAIL() << "expected a configuration error for " << key;
        } catch (const ConfigurationError& e) {
            EXPECT_EQ(e.key(), key);
        }
    };
    NsConfig b = c;
    b.c0 = 0.5;  // lambda1 + lambda2 = 2 = 2 nu_c
    expect_key(b, "c0");
    b = c;
    b.f_kind = ForceKind::saturated_norm;
    b.h_amp = 1.0;
    expect_key(b, "h_amp");
    b = c;
    b.p_moment = 4.0;
    expect_key(b, "p_moment");
    b = c;
    b.nu_c = 0.0;
    expect_key(b, "nu_c");
    b = c;
    b.d_noise = 1000;
    expect_key(b, "d_noise");
    b = c;
    b.pullback_times = {16.0, 8.0};
    expect_key(b, "pullback_times");

    EXPECT_EQ(force_kind_from_string("saturated_norm"), ForceKind::saturated_norm);
    EXPECT_EQ(to_string(ForceKind::stokes_drag), "stokes_drag");
    EXPECT_THROW(force_kind_from_string("drag"), ConfigurationError);
}

TEST(NsConfig, ForceConstantsBoundTheEnergyForm) {
    // 2 <F(u, mu), u> <= lambda1 |u|^2 + lambda2 mu(|.|^2) on random data.
    const NsSpace s(6);
    for (ForceKind kind : {ForceKind::stokes_drag, ForceKind::saturated_norm}) {
        NsConfig c = small_config();
        c.f_kind = kind;
        c.c0 = 0.2;
        c.h_amp = 0.4;
        for (int trial = 0; trial < 50; ++trial) {
            const auto u = random_state(s, 11, static_cast<std::uint64_t>(trial), 0.5 + trial % 5);
            const auto mu = cloud_of(s, 8, 100 + trial, 0.3 + trial % 7);
            std::vector<double> f(s.dim());
            force(c, u, law_features(c, mu), f);
            const double lhs = 2.0 * packed_dot(f, u);
            const double rhs = c.lambda1() * packed_dot(u, u) + c.lambda2() * moment(mu, 2.0);
            EXPECT_LE(lhs, rhs + 1e-12);
        }
    }
}

TEST(NsForce, SaturatedNormFeature) {
    NsConfig c = small_config();
    c.f_kind = ForceKind::saturated_norm;
    c.n_sat = 1.5;
    c.h_amp = 0.3;
    const NsSpace s(6);
    std::vector<double> x(2 * s.dim(), 0.0);
    x[0] = 1.0;           // |v| = 1
    x[s.dim() + 1] = 4.0;  // |v| = 4, saturated at 1.5
    const EmpiricalMeasure mu(static_cast<int>(s.dim()), x);
    const auto feat = law_features(c, mu);
    ASSERT_EQ(feat.size(), 1u);
    EXPECT_DOUBLE_EQ(feat[0], 1.25);
    std::vector<double> u(s.dim(), 0.0), out(s.dim());
    u[2] = 2.0;
    force(c, u, feat, out);
    EXPECT_DOUBLE_EQ(out[2], 2.0 * 0.3 * std::tanh(1.25));
}

TEST(Leray, Examples) {
    FourierVelocityField w(4);
    w(1, 0) = {Complex(1.0), Complex(1.0)};
    const auto p = leray_project(w);
    EXPECT_EQ(p(1, 0)[0], Complex(0.0));
    EXPECT_EQ(p(1, 0)[1], Complex(1.0));

    // Gradient field: u_hat parallel to k.
    FourierVelocityField g(4);
    g(2, -3) = {Complex(2.0, 1.0) * 2.0, Complex(2.0, 1.0) * -3.0};
    g(0, 0) = {Complex(5.0), Complex(-1.0)};
    const auto pg = leray_project(g);
    EXPECT_LT(std::sqrt(h_norm_sq(pg)), 1e-15);

    // Divergence-free fields are unchanged and the projector is idempotent.
    const NsSpace s(6);
    const auto u = s.unpack(random_state(s, 5, 0, 1.0));
    EXPECT_LT(max_abs_diff(leray_project(u), u), 1e-15);
    FourierVelocityField r(6);
    std::mt19937_64 gen(9);
    std::normal_distribution<double> n;
    for (int kx = -6; kx <= 6; ++kx)
        for (int ky = -6; ky <= 6; ++ky) r(kx, ky) = {Complex(n(gen), n(gen)), Complex(n(gen), n(gen))};
    const auto pr = leray_project(r);
    EXPECT_LT(max_abs_diff(leray_project(pr), pr), 1e-14);
    EXPECT_LT(max_divergence(pr), 1e-14);
}

TEST(NsSpace, PackedLayout) {
    const NsSpace s(16);
    EXPECT_EQ(s.grid(), 32);
    EXPECT_EQ(s.dealiased_modes(), 10);
    EXPECT_EQ(s.dim(), 440u);
    EXPECT_EQ(s.modes()[0].k_sq, 1.0);
    EXPECT_EQ(s.modes()[1].k_sq, 1.0);
    EXPECT_EQ(s.modes()[2].k_sq, 2.0);
    for (std::size_t m = 1; m < s.modes().size(); ++m) EXPECT_LE(s.modes()[m - 1].k_sq, s.modes()[m].k_sq);
}

TEST(NsSpace, PackUnpackIsAnIsometry) {
    const NsSpace s(16);
    for (int t = 0; t < 10; ++t) {
        const auto y = random_state(s, 21, static_cast<std::uint64_t>(t), 1.0 + t);
        const auto u = s.unpack(y);
        EXPECT_NEAR(h_norm_sq(u), packed_dot(y, y), 1e-12 * packed_dot(y, y));
        EXPECT_NEAR(v_norm_sq(u), v_norm_sq(s, y), 1e-12 * v_norm_sq(s, y));
        EXPECT_LT(max_divergence(u), 1e-13 * (1.0 + t));
        EXPECT_EQ(max_reality_defect(u), 0.0);
        EXPECT_EQ(u(0, 0)[0], Complex(0.0));
        const auto back = s.pack(u);
        for (std::size_t j = 0; j < y.size(); ++j) EXPECT_NEAR(back[j], y[j], 1e-14 * (1.0 + t));
    }
}

TEST(NsSpace, GridParseval) {
    const NsSpace s(8);
    const auto y = random_state(s, 4, 0, 2.0);
    const auto g = s.to_grid(s.unpack(y));
    double mean_sq = 0.0;
    for (int c = 0; c < 2; ++c)
        for (double v : g[c]) mean_sq += v * v;
    mean_sq /= static_cast<double>(g[0].size());
    EXPECT_NEAR(mean_sq, 4.0, 1e-12);
}

TEST(Nonlinearity, SingleModeOracle) {
    // u = (cos y, 0), v = (0, sin x): (u . grad) v = (0, cos x cos y), whose Leray
    // projection at k = (1, 1) is (-1/8, 1/8) and at k = (1, -1) is (1/8, 1/8).
    const NsSpace s(16);
    FourierVelocityField u(16), v(16);
    u(0, 1) = {Complex(0.5), Complex(0.0)};
    u(0, -1) = {Complex(0.5), Complex(0.0)};
    v(1, 0) = {Complex(0.0), Complex(0.0, -0.5)};
    v(-1, 0) = {Complex(0.0), Complex(0.0, 0.5)};
    const auto b = s.nonlinearity(u, v);
    FourierVelocityField expect(16);
    expect(1, 1) = {Complex(0.125), Complex(-0.125)};
    expect(-1, -1) = {Complex(0.125), Complex(-0.125)};
    expect(1, -1) = {Complex(-0.125), Complex(-0.125)};
    expect(-1, 1) = {Complex(-0.125), Complex(-0.125)};
    EXPECT_LT(max_abs_diff(b, expect), 1e-15);

    const auto zero = s.nonlinearity(FourierVelocityField(16), v);
    EXPECT_EQ(h_norm_sq(zero), 0.0);
}

TEST(Nonlinearity, EnergyAndAntisymmetryIdentities) {
    const NsSpace s(16);
    double worst_flux = 0.0, worst_anti = 0.0, worst_rot = 0.0, worst_packed = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto yu = random_state(s, 31, static_cast<std::uint64_t>(3 * t), 1.0);
        const auto yv = random_state(s, 31, static_cast<std::uint64_t>(3 * t + 1), 1.0);
        const auto yw = random_state(s, 31, static_cast<std::uint64_t>(3 * t + 2), 1.0);
        const auto u = s.unpack(yu), v = s.unpack(yv), w = s.unpack(yw);
        const double nu = std::sqrt(h_norm_sq(u)), vv = std::sqrt(v_norm_sq(v)), vw = std::sqrt(v_norm_sq(w));
        const auto buv = s.nonlinearity(u, v), buw = s.nonlinearity(u, w);
        worst_flux = std::max(worst_flux, std::abs(inner(buv, v)) / (nu * vv * vv));
        worst_anti = std::max(worst_anti, std::abs(inner(buv, w) + inner(buw, v)) / (nu * vv * vw));
        EXPECT_LT(max_divergence(buv), 1e-13);
        EXPECT_LT(max_reality_defect(buv), 1e-15);

        const auto buu = s.nonlinearity(u, u);
        const double scale = nu * std::sqrt(v_norm_sq(u));
        worst_rot = std::max(worst_rot, max_abs_diff(s.self_nonlinearity(u), buu) / scale);
        std::vector<double> packed(s.dim());
        s.self_nonlinearity(yu, packed);
        const auto ref = s.pack(buu);
        for (std::size_t j = 0; j < packed.size(); ++j)
            worst_packed = std::max(worst_packed, std::abs(packed[j] - ref[j]) / scale);
    }
    EXPECT_LE(worst_flux, 1e-12);
    EXPECT_LE(worst_anti, 1e-12);
    EXPECT_LE(worst_rot, 1e-12);
    EXPECT_LE(worst_packed, 1e-12);
}

TEST(NoiseFields, LowestOrthonormalDivergenceFreeModes) {
    const NsSpace s(6);
    for (int i = 0; i < 8; ++i) {
        const auto phi = phi_field(s, i);
        EXPECT_NEAR(h_norm_sq(phi), 1.0, 1e-15);
        EXPECT_EQ(max_divergence(phi), 0.0);
        EXPECT_EQ(phi(0, 0)[0], Complex(0.0));
        for (int j = 0; j < i; ++j) EXPECT_NEAR(inner(phi, phi_field(s, j)), 0.0, 1e-15);
    }
    // phi_0 = sqrt(2) cos(x) (0, 1): grid values at x = 0 and x = pi.
    const auto g = s.to_grid(phi_field(s, 0));
    const int M = s.grid();
    EXPECT_NEAR(g[1][0], std::numbers::sqrt2, 1e-14);
    EXPECT_NEAR(g[1][static_cast<std::size_t>(M / 2 * M)], -std::numbers::sqrt2, 1e-14);
    EXPECT_NEAR(g[0][0], 0.0, 1e-15);
}

TEST(OuField, ExamplesAndStationarity) {
    const NsSpace s(6);
    const int d = 4;
    const double eta = 4.0;
    const auto base = WienerPath::sample(0.0, 0.01, 0.01, d, 3);
    const auto z = OUPath::build(base, eta);
    const auto f = ou_field(s, z, 0.0);
    FourierVelocityField expect(6);
    for (int i = 0; i < d; ++i) {
        const auto phi = phi_field(s, i);
        for (int kx = -6; kx <= 6; ++kx)
            for (int ky = -6; ky <= 6; ++ky)
                for (int c = 0; c < 2; ++c) expect(kx, ky)[c] += z.value(0, i) * phi(kx, ky)[c];
    }
    EXPECT_LT(max_abs_diff(f, expect), 1e-15);

    double mean = 0.0;
    const int samples = 10000;
    for (int k = 0; k < samples; ++k) {
        const auto p = OUPath::build(WienerPath::sample(0.0, 0.01, 0.01, d, 1000 + k), eta);
        mean += h_norm_sq(ou_field(s, p, 0.01)) / samples;
    }
    EXPECT_NEAR(mean, d / (2.0 * eta), 0.05 * d / (2.0 * eta));
}

TEST(NsFlow, ViscousDecayOfASingleMode) {
    const auto cfg = linear_config();
    const NsSpace s(cfg.k_modes);
    State x(s.dim(), 0.0);
    const std::size_t m = mode_index(s, 1, 2);
    x[2 * m] = 3.0;
    const auto omega = WienerPath::sample(0.0, 1.0, cfg.dt, cfg.d_noise, 1);
    const double grid[] = {0.0, 0.5, 1.0};
    const sode::LawPath law;
    const auto xs = simulate_ns_state_flow(s, cfg, x, law, omega, grid);
    const auto zs = integrate_Z(s, cfg, x, law, omega, grid);
    for (int k = 0; k < 3; ++k) {
        const double expect = 3.0 * std::exp(-5.0 * grid[k]);
        EXPECT_NEAR(xs[k][2 * m], expect, 1e-13);
        EXPECT_NEAR(zs.x[k][2 * m], expect, 1e-13);
        EXPECT_NEAR(norm(xs[k]), expect, 1e-13);
    }
}

TEST(NsFlow, DivergenceFreeAndFluxNeutralAlongATrajectory) {
    NsConfig cfg = small_config(16, 1);
    const NsSpace s(cfg.k_modes);
    const auto omega = WienerPath::sample(0.0, 1.0, cfg.dt, cfg.d_noise, 8);
    const auto x0 = random_state(s, 2, 0, 4.0, 3);
    const auto flow = simulate_ns_measure_flow(s, cfg, repeated(x0, 1), omega, std::vector<double>{0.0, 1.0});
    std::vector<double> grid;
    for (int k = 0; k <= 20; ++k) grid.push_back(0.05 * k);
    const auto xs = simulate_ns_state_flow(s, cfg, x0, flow.law, omega, grid);
    for (const auto& x : xs) {
        EXPECT_LT(max_divergence(s.unpack(x)), 1e-12);
        EXPECT_LT(flux_residual(s, x), 1e-12);
    }
}

TEST(NsFlow, StateFlowReproducesAParticleBitwise) {
    NsConfig cfg = small_config(6, 6);
    const NsSpace s(cfg.k_modes);
    const auto mu = cloud_of(s, 6, 77, 2.0);
    const auto path = WienerPath::sample(0.0, 0.5, cfg.dt, cfg.d_noise, 12);
    const double grid[] = {0.0, 0.5};
    const auto flow = simulate_ns_measure_flow(s, cfg, mu, path, grid);
    const std::size_t p = 4;
    const State x0(mu.particle(p).begin(), mu.particle(p).end());
    const auto x = simulate_ns_state_flow(s, cfg, x0, flow.law, path, grid, rng::particle_seed(path.seed(), p));
    const auto y = flow.snapshots.back().particle(p);
    for (std::size_t j = 0; j < x.back().size(); ++j) EXPECT_EQ(x.back()[j], y[j]);
}

TEST(NsFlow, ZRouteStartsAtTheInitialState) {
    NsConfig cfg = small_config();
    const NsSpace s(cfg.k_modes);
    const auto omega = WienerPath::sample(-1.0, 1.0, cfg.dt, cfg.d_noise, 5);
    const auto x0 = random_state(s, 3, 0, 2.0);
    const auto mu = repeated(x0, 1);
    const auto flow = simulate_ns_measure_flow(s, cfg, mu, omega, std::vector<double>{0.3, 0.3});
    const auto z = integrate_Z(s, cfg, x0, flow.law, omega, std::vector<double>{0.3});
    ASSERT_EQ(z.x.size(), 1u);
    EXPECT_EQ(z.x[0], x0);
    const auto ou = OUPath::build(omega, cfg.eta);
    for (int c = 0; c < cfg.d_noise; ++c) EXPECT_EQ(z.z[0][c], x0[c] - ou.value(omega.index_of(0.3), c));
}

TEST(NsFlow, ZRouteAgreesWithTheDirectFlowToFirstOrder) {
    // Same realization on grids dt and dt/2; the gap between the two routes shrinks with dt.
    NsConfig cfg = small_config(8, 1);
    cfg.f_kind = ForceKind::saturated_norm;
    const NsSpace s(cfg.k_modes);
    const auto fine = WienerPath::sample(-1.0, 0.5, 2.5e-3, cfg.d_noise, 17);
    const auto x0 = random_state(s, 6, 0, 2.0, 3);
    const double grid[] = {0.0, 0.5};
    std::vector<double> gaps;
    for (int factor : {4, 2, 1}) {
        NsConfig c = cfg;
        c.dt = 2.5e-3 * factor;
        const auto omega = factor == 1 ? fine : fine.coarsen(factor);
        const auto flow = simulate_ns_measure_flow(s, c, repeated(x0, 1), omega, grid);
        const auto x = simulate_ns_state_flow(s, c, x0, flow.law, omega, grid).back();
        const auto z = integrate_Z(s, c, x0, flow.law, omega, grid).x.back();
        double gap = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) gap += (x[j] - z[j]) * (x[j] - z[j]);
        gaps.push_back(std::sqrt(gap));
    }
    EXPECT_LT(gaps[0], 0.2);
    EXPECT_LT(gaps[1], 0.75 * gaps[0]);
    EXPECT_LT(gaps[2], 0.75 * gaps[1]);
}

TEST(NsAdapter, CocycleIsExact) {
    NsConfig cfg = small_config(4, 8);
    const NsSpace s(cfg.k_modes);
    const auto adapter = make_adapter(cfg);
    const auto omega = WienerPath::sample(-1.0, 1.0, cfg.dt, cfg.d_noise, 23);
    const auto mu = cloud_of(s, 8, 4, 1.5);
    const std::vector<attractor::State> states{random_state(s, 9, 0, 1.0), random_state(s, 9, 1, 3.0)};
    EXPECT_EQ(attractor::cocycle_residual(adapter, omega, -0.5, 0.1, 0.6, mu, states), 0.0);
}

TEST(MomentDecay, ExactLinearRateForASingleMode) {
    const auto cfg = linear_config();
    const NsSpace s(cfg.k_modes);
    State x(s.dim(), 0.0);
    x[2 * mode_index(s, 1, 1)] = 5.0;
    const auto path = WienerPath::sample(0.0, 2.0, cfg.dt, cfg.d_noise, 1);
    std::vector<double> grid;
    for (int k = 0; k <= 20; ++k) grid.push_back(0.1 * k);
    for (double p : {2.0, 3.0}) {
        const auto r = moment_decay_test(cfg, repeated(x, 2), path, grid, p);
        EXPECT_NEAR(r.rate, p * cfg.nu_c * 2.0, 1e-6);
        EXPECT_NEAR(r.offset, 0.0, 1e-9);
        EXPECT_EQ(r.status, attractor::Status::pass);
    }
    EXPECT_THROW(moment_decay_test(cfg, repeated(x, 2), path, grid, 7.0), ConfigurationError);
}

TEST(MomentDecay, HighEnergyStartDecaysWithStokesDrag) {
    NsConfig cfg = small_config(8, 64);
    const NsSpace s(cfg.k_modes);
    const auto path = WienerPath::sample(0.0, 3.0, cfg.dt, cfg.d_noise, 41);
    std::vector<double> grid;
    for (int k = 0; k <= 30; ++k) grid.push_back(0.1 * k);
    const auto r = moment_decay_test(cfg, cloud_of(s, 64, 8, 6.0), path, grid, 2.0);
    EXPECT_GT(r.rate, 0.0);
    EXPECT_EQ(r.status, attractor::Status::pass);
    EXPECT_LT(r.flux_residual, 1e-12);
}

TEST(MomentDecay, EquilibriumStartIsInconclusive) {
    // Linear dynamics with noise on the four |k| = 1 directions: each is a stationary OU
    // coordinate with variance 1 / (2 nu_c) when started from that law.
    NsConfig cfg = linear_config();
    cfg.noise = true;
    cfg.n_particles = 512;
    const NsSpace s(cfg.k_modes);
    std::vector<double> x(512 * s.dim(), 0.0);
    std::mt19937_64 gen(2);
    std::normal_distribution<double> g(0.0, std::sqrt(0.5 / cfg.nu_c));
    for (int i = 0; i < 512; ++i)
        for (int c = 0; c < 4; ++c) x[static_cast<std::size_t>(i) * s.dim() + c] = g(gen);
    const EmpiricalMeasure mu(static_cast<int>(s.dim()), std::move(x));
    const auto path = WienerPath::sample(0.0, 2.0, cfg.dt, cfg.d_noise, 2);
    std::vector<double> grid;
    for (int k = 0; k <= 20; ++k) grid.push_back(0.1 * k);
    const auto r = moment_decay_test(cfg, mu, path, grid, 2.0);
    EXPECT_LT(r.transient_samples, 3);
    EXPECT_EQ(r.status, attractor::Status::inconclusive);
}

TEST(Absorbing, NoiseFreeLinearFlowIsInsideTheRadius) {
    NsConfig cfg = linear_config(4);
    cfg.n_particles = 4;
    const NsSpace s(cfg.k_modes);
    const auto probes = default_probes(s, cfg, 3, 5.0);
    ASSERT_EQ(probes.states.size() * probes.measures.size(), 10u);
    const auto omega = WienerPath::sample(-4.0, 0.0, cfg.dt, cfg.d_noise, 3);
    const double times[] = {2.0, 4.0};
    const auto r = absorbing_radius_estimate(cfg, omega, 0.0, times, probes);
    for (std::size_t n = 0; n < 2; ++n)
        for (double z : r.z_sq[n]) EXPECT_LE(z, 25.0 * std::exp(-2.0 * times[n]) * (1.0 + 1e-12));
    for (const auto& sc : r.scan) {
        EXPECT_TRUE(sc.convergent);
        EXPECT_GE(sc.r_sq, 2.0);
    }
    EXPECT_EQ(r.selected_C, 0.1);
    EXPECT_EQ(r.status, attractor::Status::pass);
}

TEST(Absorbing, SmallNoisyRunReportsAFiniteEnvelope) {
    NsConfig cfg = small_config(6, 16);
    const NsSpace s(cfg.k_modes);
    const auto probes = default_probes(s, cfg, 5, cfg.probe_radius);
    const auto omega = WienerPath::sample(-40.0, 0.0, cfg.dt, cfg.d_noise, 19);
    const double times[] = {2.0, 4.0};
    const auto r = absorbing_radius_estimate(cfg, omega, 0.0, times, probes);
    ASSERT_EQ(r.scan.size(), 3u);
    EXPECT_TRUE(r.scan[0].convergent);
    EXPECT_FALSE(r.scan[2].convergent);
    EXPECT_TRUE(std::isfinite(r.max_z_sq.back()));
    EXPECT_LT(r.max_z_sq.back(), r.max_z_sq.front() + 1.0);
    EXPECT_LT(r.flux_residual, 1e-12);
    EXPECT_NE(r.status, attractor::Status::inconclusive);
}

TEST(CoefficientCsv, OneRowPerMode) {
    FourierVelocityField u(2);
    u(1, -2) = {Complex(0.5, -1.0), Complex(0.25, 2.0)};
    std::ostringstream out;
    write_coefficients_csv(out, u);
    const std::string text = out.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 25);
    EXPECT_EQ(text.substr(0, text.find('\n')), "kx,ky,re_u1,im_u1,re_u2,im_u2");
    EXPECT_NE(text.find("\n1,-2,0.5,-1,0.25,2\n"), std::string::npos);
}
