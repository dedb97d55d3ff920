#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mvlab/errors.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/mv_rd.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;
using namespace mvlab::rd;

namespace {

RdConfig small_config(int K = 8, int n = 64) {
    RdConfig c;
    c.k_modes = K;
    c.n_particles = n;
    return c;
}

SpectralField unit(int K, int k, double v = 1.0) {
    SpectralField a(static_cast<std::size_t>(K), 0.0);
    a[static_cast<std::size_t>(k - 1)] = v;
    return a;
}

EmpiricalMeasure dirac_field(const SpectralField& a, std::size_t n) { return replicate(EmpiricalMeasure::dirac(a), n); }

EmpiricalMeasure gaussian_cloud(int K, int n, std::uint64_t seed, double scale) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g;
    std::vector<double> x(static_cast<std::size_t>(K) * n);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = scale * g(gen) / static_cast<double>(i % K + 1);
    return EmpiricalMeasure(K, std::move(x));
}

}  // namespace

TEST(RdConfig, DerivedConstants) {
    RdConfig c;
    EXPECT_DOUBLE_EQ(c.lambda_star(), 1.0);
    EXPECT_DOUBLE_EQ(c.C1(), 0.1);
    EXPECT_DOUBLE_EQ(c.C2(), 0.3);
    EXPECT_NEAR(c.contraction_rate(), 1.6, 1e-15);
    EXPECT_DOUBLE_EQ(c.q(3), 1.0 / 9.0);
    c.noise = false;
    EXPECT_EQ(c.q(1), 0.0);
}

TEST(RdConfig, StokesDragConstantsBoundTheMonotonicityForm) {
    // 2<F(u,mu) - F(v,nu), u - v> <= C1 W2^2 + C2 |u - v|^2 on random data, with
    // W2^2 bounded below by |mean(mu) - mean(nu)|^2.
    RdConfig c;
    c.c0 = 0.3;
    std::mt19937_64 gen(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> u(4), v(4), mu(4), nu(4);
        for (auto* w : {&u, &v, &mu, &nu})
            for (double& x : *w) x = g(gen);
        double lhs = 0.0, du = 0.0, dm = 0.0;
        for (int k = 0; k < 4; ++k) {
            const double fu = c.c0 * (u[k] - mu[k]), fv = c.c0 * (v[k] - nu[k]);
            lhs += 2.0 * (fu - fv) * (u[k] - v[k]);
            du += (u[k] - v[k]) * (u[k] - v[k]);
            dm += (mu[k] - nu[k]) * (mu[k] - nu[k]);
        }
        EXPECT_LE(lhs, c.C1() * dm + c.C2() * du + 1e-12);
    }
}

TEST(RdConfig, ValidationGates) {
    RdConfig c;
    EXPECT_NO_THROW(c.validate());
    c.c0 = 1.0;
    try {
        c.validate();
        FAIL() << "c0 = 1 accepted";
    } catch (const ConfigurationError& e) {
        EXPECT_EQ(e.key(), "c0");
    }
    c.c0 = 0.5;
    EXPECT_THROW(c.validate(), ConfigurationError);
    c.c0 = 0.49;
    EXPECT_NO_THROW(c.validate());
    c.noise_decay = 1.5;
    EXPECT_THROW(c.validate(), ConfigurationError);
    c = RdConfig{};
    c.pullback_times = {1.0, 1.0};
    EXPECT_THROW(c.validate(), ConfigurationError);
    c = RdConfig{};
    c.k_modes = 0;
    EXPECT_THROW(c.validate(), ConfigurationError);
}

TEST(SpectralField, ParsevalAgainstQuadrature) {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> g;
    SpectralField a(6);
    for (double& v : a) v = g(gen);
    // The trapezoid rule on (0, pi) integrates cos(m x) exactly for 0 < m < 2n.
    const int n = 400;
    const double h = std::numbers::pi / n;
    double l2 = 0.0, h1 = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = i * h;
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        const double u = evaluate(a, x);
        double du = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k)
            du += a[k] * (k + 1.0) * std::sqrt(2.0 / std::numbers::pi) * std::cos((k + 1.0) * x);
        l2 += w * u * u * h;
        h1 += w * (u * u + du * du) * h;
    }
    EXPECT_NEAR(l2, h_norm_sq(a), 1e-10);
    EXPECT_NEAR(h1, v_norm_sq(a), 1e-9);
    EXPECT_EQ(evaluate(a, 0.0), 0.0);
}

TEST(RdDrift, Examples) {
    RdConfig c = small_config(4);
    const SpectralField zero(4, 0.0);
    const auto delta0 = EmpiricalMeasure::dirac(zero);
    for (double v : rd_drift(c, zero, delta0)) EXPECT_EQ(v, 0.0);
    const auto d = rd_drift(c, unit(4, 1), delta0);
    EXPECT_DOUBLE_EQ(d[0], -0.9);
    const SpectralField u{0.5, -1.0, 2.0, 0.25};
    const auto pure = rd_drift(c, u, EmpiricalMeasure::dirac(u));
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(pure[k], -(k + 1.0) * (k + 1.0) * u[k]);
    EXPECT_THROW(rd_drift(c, SpectralField(3, 0.0), delta0), DomainError);
}

TEST(RdMeasureFlow, HeatDecayWithoutNoiseOrDrag) {
    RdConfig c = small_config(4, 8);
    c.c0 = 0.0;
    c.noise = false;
    const auto path = WienerPath::sample(0.0, 1.0, c.dt, 4, 1);
    const SpectralField a0{1.0, 0.5, -0.25, 2.0};
    const auto t = grid::linspace(0.0, 1.0, 4);
    const auto flow = simulate_rd_measure_flow(c, dirac_field(a0, 8), path, t);
    for (std::size_t s = 0; s < t.size(); ++s)
        for (int k = 1; k <= 4; ++k) {
            const double exact = a0[k - 1] * std::exp(-k * k * t[s]);
            EXPECT_NEAR(flow.snapshots[s].particle(3)[k - 1], exact, 1e-12 * std::max(1.0, std::abs(a0[k - 1])));
        }
}

TEST(RdMeasureFlow, LinearPartNeverIncreasesNorm) {
    RdConfig c = small_config(6, 16);
    c.c0 = 0.0;
    c.noise = false;
    const auto path = WienerPath::sample(0.0, 0.5, c.dt, 6, 2);
    const auto t = grid::linspace(0.0, 0.5, 500);
    const auto flow = simulate_rd_measure_flow(c, gaussian_cloud(6, 16, 9, 3.0), path, t);
    for (std::size_t s = 1; s < t.size(); ++s)
        for (std::size_t i = 0; i < 16; ++i)
            EXPECT_LE(h_norm_sq(flow.snapshots[s].particle(i)), h_norm_sq(flow.snapshots[s - 1].particle(i)));
}

TEST(RdMeasureFlow, EnergyIdentityWithoutNoise) {
    RdConfig c = small_config(5, 1);
    c.noise = false;
    c.dt = 1e-6;
    const auto path = WienerPath::sample(0.0, 1e-3, c.dt, 5, 3);
    const SpectralField a0{1.0, -0.7, 0.4, 0.2, -0.1};
    // Single particle: the mean equals the state, so the drag vanishes; use a two-atom cloud instead.
    const EmpiricalMeasure mu(5, {1.0, -0.7, 0.4, 0.2, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0});
    const double t[] = {0.0, 1e-3};
    const auto flow = simulate_rd_measure_flow(c, mu, path, t);
    const auto drift = rd_drift(c, a0, mean(mu));
    double rate = 0.0;
    for (int k = 0; k < 5; ++k) rate += 2.0 * a0[k] * drift[k];
    const double measured = (h_norm_sq(flow.snapshots[1].particle(0)) - h_norm_sq(a0)) / 1e-3;
    EXPECT_NEAR(measured, rate, 1e-2 * std::abs(rate));
}

TEST(RdMeasureFlow, RerunIsBitwiseIdentical) {
    const RdConfig c = small_config(4, 32);
    const auto path = WienerPath::sample(0.0, 0.5, c.dt, 4, 4);
    const double t[] = {0.0, 0.25, 0.5};
    const auto mu = gaussian_cloud(4, 32, 1, 1.0);
    const auto a = simulate_rd_measure_flow(c, mu, path, t);
    const auto b = simulate_rd_measure_flow(c, mu, path, t);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.snapshots[s].particles(), b.snapshots[s].particles());
}

TEST(RdMeasureFlow, SecondMomentPlateausAtTheStationaryLevel) {
    // Independent oracle: each mode is asymptotically an OU process with rate k^2 - c0
    // and noise q_k, so E|Y|^2 -> sum_k q_k^2 / (2 (k^2 - c0)).
    RdConfig c = small_config(8, 512);
    const auto path = WienerPath::sample(0.0, 6.0, c.dt, 8, 5);
    const auto t = grid::linspace(0.0, 6.0, 60);
    const auto flow = simulate_rd_measure_flow(c, dirac_field(SpectralField(8, 0.0), 512), path, t);
    double oracle = 0.0, trace = 0.0;
    for (int k = 1; k <= 8; ++k) {
        oracle += c.q(k) * c.q(k) / (2.0 * (k * k - c.c0));
        trace += c.q(k) * c.q(k);
    }
    double late = 0.0;
    int count = 0;
    for (std::size_t s = 0; s < t.size(); ++s) {
        if (t[s] < 4.0) continue;
        late += second_moment(flow.snapshots[s]);
        ++count;
    }
    EXPECT_NEAR(late / count, oracle, 0.1 * oracle);

    // From a high-energy start the decay bound E|Y_t|^2 <= E|Y_0|^2 e^{-(eta1 - eta2) t} + C
    // holds with eta1 - eta2 = 2 - 4 c0 and C = trace / (2 - 4 c0).
    const auto hot = simulate_rd_measure_flow(c, gaussian_cloud(8, 512, 2, 10.0), path, t);
    const double m0 = second_moment(hot.snapshots[0]);
    const double rate = 2.0 - 4.0 * c.c0;
    for (std::size_t s = 0; s < t.size(); ++s)
        EXPECT_LE(second_moment(hot.snapshots[s]), m0 * std::exp(-rate * t[s]) + 1.2 * trace / rate) << t[s];
}

TEST(RdStateFlow, ReproducesAParticleBitwise) {
    const RdConfig c = small_config(4, 16);
    const auto path = WienerPath::sample(0.0, 0.5, c.dt, 4, 6);
    const double t[] = {0.0, 0.5};
    const auto mu = gaussian_cloud(4, 16, 3, 1.0);
    const auto flow = simulate_rd_measure_flow(c, mu, path, t);
    const auto x = simulate_rd_state_flow(c, mu.particle(7), flow.law, path, t, rng::particle_seed(path.seed(), 7));
    const auto p = flow.snapshots[1].particle(7);
    EXPECT_TRUE(std::equal(p.begin(), p.end(), x.back().begin()));
}

TEST(RdStateFlow, StartTimeReturnsInitialState) {
    const RdConfig c = small_config(4, 4);
    const auto path = WienerPath::sample(0.0, 0.1, c.dt, 4, 7);
    const double t[] = {0.05, 0.05};
    const SpectralField x0{1.0, 2.0, 3.0, 4.0};
    const auto flow = simulate_rd_measure_flow(c, dirac_field(x0, 4), path, t);
    const auto x = simulate_rd_state_flow(c, x0, flow.law, path, t);
    EXPECT_EQ(x.front(), x0);
    EXPECT_THROW(simulate_rd_state_flow(c, x0, flow.law, WienerPath::sample(0.0, 0.1, c.dt, 2, 7), t), DomainError);
}

TEST(RdAdapter, CocycleIsExact) {
    const RdConfig c = small_config(4, 16);
    const auto omega = WienerPath::sample(-2.0, 0.0, c.dt, 4, 8);
    const auto adapter = make_adapter(c);
    const std::vector<attractor::State> states{{1.0, 0.0, 0.0, 0.0}, {0.0, -1.0, 0.5, 0.0}};
    EXPECT_EQ(attractor::cocycle_residual(adapter, omega, -2.0, -1.3, -0.2, gaussian_cloud(4, 16, 4, 1.0), states), 0.0);
}

TEST(Contraction, DiracPairDecaysAtTheExactLinearRate) {
    // All paired differences equal e_1 and stay equal, so the drag cancels and
    // the coupling cost is exactly e^{-2t} under the exponential step.
    RdConfig c = small_config(8, 64);
    const auto path = WienerPath::sample(0.0, 4.0, c.dt, 8, 9);
    const auto t = grid::linspace(0.0, 4.0, 40);
    const auto r = contraction_test(c, EmpiricalMeasure::dirac(SpectralField(8, 0.0)), EmpiricalMeasure::dirac(unit(8, 1)),
                                    path, t);
    EXPECT_EQ(r.status, attractor::Status::pass);
    EXPECT_NEAR(r.slope, -2.0, 1e-9);
    EXPECT_LE(r.slope, -1.4);
    EXPECT_NEAR(r.bound, -1.6, 1e-15);
    EXPECT_NEAR(r.margin, -1.4 - r.slope, 1e-12);
    EXPECT_EQ(r.fitted_points, 41);
}

TEST(Contraction, EqualMeasuresAreInconclusive) {
    RdConfig c = small_config(4, 16);
    const auto path = WienerPath::sample(0.0, 1.0, c.dt, 4, 10);
    const auto t = grid::linspace(0.0, 1.0, 10);
    const auto mu = gaussian_cloud(4, 16, 5, 1.0);
    const auto r = contraction_test(c, mu, mu, path, t);
    for (double w : r.w2_sq) EXPECT_EQ(w, 0.0);
    EXPECT_EQ(r.status, attractor::Status::inconclusive);
}

TEST(Contraction, RandomPairsSatisfyTheUpperBound) {
    RdConfig c = small_config(6, 64);
    const auto t = grid::linspace(0.0, 4.0, 20);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto path = WienerPath::sample(0.0, 4.0, c.dt, 6, 100 + s);
        const auto r = contraction_test(c, gaussian_cloud(6, 64, 2 * s, 1.0), gaussian_cloud(6, 64, 2 * s + 1, 2.0),
                                        path, t);
        EXPECT_EQ(r.status, attractor::Status::pass) << "pair " << s << " slope " << r.slope;
        EXPECT_LE(r.slope, r.bound);
    }
}

TEST(Contraction, GateViolationIsRejected) {
    RdConfig c = small_config(4, 4);
    c.c0 = 1.0;
    const auto path = WienerPath::sample(0.0, 1.0, 1e-3, 4, 11);
    const double t[] = {0.0, 1.0};
    EXPECT_THROW(contraction_test(c, EmpiricalMeasure::dirac(SpectralField(4, 0.0)),
                                  EmpiricalMeasure::dirac(unit(4, 1)), path, t),
                 ConfigurationError);
}

TEST(PullbackXi, NoiseFreeHeatFlowCollapsesToZero) {
    RdConfig c = small_config(4, 4);
    c.c0 = 0.0;
    c.noise = false;
    const auto omega = WienerPath::sample(-16.0, 0.0, c.dt, 4, 12);
    const auto probes = default_probes(c, 1);
    const double times[] = {1.0, 4.0, 16.0};
    const auto est = pullback_xi(c, omega, times, probes.states, probes.measures);
    EXPECT_LT(h_norm_sq(est.xi), 1e-12);
    EXPECT_LT(est.diameter, 1e-6);
}

TEST(PullbackXi, FullSystemContractsToASingleton) {
    RdConfig c = small_config(6, 64);
    const auto omega = WienerPath::sample(-16.0, 0.0, c.dt, 6, 13);
    const auto probes = default_probes(c, 2);
    const auto est = pullback_xi(c, omega, c.pullback_times, probes.states, probes.measures);
    EXPECT_LE(est.diameter, 1e-2);
    EXPECT_TRUE(attractor::singleton_test(est.report, 1e-2).singleton);
    EXPECT_EQ(est.report.hausdorff_to_final.back(), 0.0);

    // Probe order does not change the estimate.
    auto states = probes.states;
    auto measures = probes.measures;
    std::reverse(states.begin(), states.end());
    std::reverse(measures.begin(), measures.end());
    const auto again = pullback_xi(c, omega, c.pullback_times, states, measures);
    EXPECT_EQ(again.xi, est.xi);
    EXPECT_EQ(again.diameter, est.diameter);
}

TEST(LawOfXi, NoiseFreeCloudsCollapse) {
    RdConfig c = small_config(4, 16);
    c.noise = false;
    c.pullback_times = {2.0};
    const auto r = law_of_xi_test(c, 8, 3);
    EXPECT_EQ(r.distance, 0.0);
    EXPECT_EQ(r.control_distance, 0.0);
    EXPECT_EQ(r.status, attractor::Status::pass);
}

TEST(LawOfXi, SmallEnsembleMatchesTheLongRun) {
    RdConfig c = small_config(4, 256);
    c.dt = 1e-2;
    const auto r = law_of_xi_test(c, 64, 4, 0.25);
    EXPECT_NEAR(r.horizon, 16.0, 1e-12);
    EXPECT_EQ(r.xi_cloud.size(), 64u);
    EXPECT_EQ(r.mu_inf.size(), 256u);
    EXPECT_LE(r.distance, 0.25);
    // The ensemble variance matches the law's variance mode by mode.
    const double var_xi = second_moment(r.xi_cloud), var_mu = second_moment(r.mu_inf);
    EXPECT_NEAR(var_xi, var_mu, 0.35 * var_mu);
}
