#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "mvlab/errors.hpp"
#include "mvlab/grid.hpp"
#include "mvlab/mv_sode.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;
using namespace mvlab::sode;

namespace {

// dX = b(X) dt + s(X) dW with no law dependence.
SodeModel scalar_model(std::function<double(double)> b, std::function<double(double)> s,
                       std::function<double(double)> ds) {
    SodeModel m;
    m.drift = [b](CSpan x, CSpan, Span out) { out[0] = b(x[0]); };
    m.diffusion = [s](CSpan x, Span out) { out[0] = s(x[0]); };
    m.diffusion_jacobian = [ds](CSpan x, Span out) { out[0] = ds(x[0]); };
    return m;
}

SodeModel quadratic_lyapunov(double noise) {
    auto m = scalar_model([](double x) { return -x; }, [noise](double) { return noise; }, [](double) { return 0.0; });
    m.V = [](CSpan x, CSpan) { return x[0] * x[0]; };
    m.dV_dx = [](CSpan x, CSpan, Span out) { out[0] = 2 * x[0]; };
    m.d2V_dxx = [](CSpan, CSpan, Span out) { out[0] = 2.0; };
    m.dmu_V = [](CSpan, CSpan, CSpan, Span out) { out[0] = 0.0; };
    m.dy_dmu_V = [](CSpan, CSpan, CSpan, Span out) { out[0] = 0.0; };
    return m;
}

std::vector<double> moments2(const MeasureFlow& f) {
    std::vector<double> out;
    for (const auto& mu : f.snapshots) out.push_back(moment(mu, 2.0));
    return out;
}

LawPath subsample(const LawPath& fine, int k) {
    LawPath coarse;
    coarse.i_start = fine.i_start / k;
    for (std::size_t j = 0; j < fine.features.size(); j += static_cast<std::size_t>(k))
        coarse.features.push_back(fine.features[j]);
    return coarse;
}

}  // namespace

TEST(ItoDrift, ConstantDiffusionLeavesDrift) {
    const auto m = scalar_model([](double x) { return -3 * x; }, [](double) { return 2.0; }, [](double) { return 0.0; });
    const double x[] = {1.7};
    EXPECT_DOUBLE_EQ(ito_drift(m, x, EmpiricalMeasure::dirac(0.0))[0], -5.1);
}

TEST(ItoDrift, LinearDiffusion) {
    const auto m = scalar_model([](double) { return 0.0; }, [](double x) { return x; }, [](double) { return 1.0; });
    for (double v : {-2.0, 0.3, 5.0}) {
        const double x[] = {v};
        EXPECT_DOUBLE_EQ(ito_drift(m, x, EmpiricalMeasure::dirac(0.0))[0], v / 2);
    }
}

TEST(ItoDrift, ExampleMiddleBand) {
    const auto m = example_model();
    const EmpiricalMeasure mu(1, {-0.7, 0.2, 1.1});
    const double m2 = second_moment(mu);
    for (double v : {-1.4, -0.3, 0.0, 0.9, 1.49}) {
        const double x[] = {v};
        const double b = -v * v * v * std::pow(m2, 5) - 10 * v;
        EXPECT_NEAR(ito_drift(m, x, mu)[0], b + v / 2, 1e-13);
    }
}

TEST(ExampleSigma, ClosedFormsOutsideBands) {
    const ExampleSigma s;
    for (double x : {-10.0, -3.0, -2.5001}) EXPECT_DOUBLE_EQ(s(x), x / 2 - 1.0);
    for (double x : {-1.4999, -0.5, 0.0, 1.0, 1.4999}) EXPECT_DOUBLE_EQ(s(x), x);
    for (double x : {2.5001, 4.0, 10.0}) EXPECT_DOUBLE_EQ(s(x), 1.5 * x - 1.0);
}

TEST(ExampleSigma, SmoothAndStrictlyIncreasing) {
    const ExampleSigma s;
    double min_slope = 1e9;
    for (int i = 0; i < 10000; ++i) min_slope = std::min(min_slope, s.derivative(-6.0 + 12.0 * i / 9999));
    EXPECT_GT(min_slope, 0.0);
    // C^1 at the four breakpoints.
    for (double c : {-2.5, -1.5, 1.5, 2.5}) {
        EXPECT_NEAR(s(c - 1e-12), s(c + 1e-12), 1e-10);
        EXPECT_NEAR(s.derivative(c - 1e-12), s.derivative(c + 1e-12), 1e-9);
    }
    EXPECT_THROW(ExampleSigma(2.0, 2.5), ConfigurationError);
}

TEST(ExampleModel, DiffusionJacobianConsistent) {
    const auto m = example_model();
    std::vector<Vec> probes;
    for (int i = 0; i <= 400; ++i) probes.push_back({-5.0 + 10.0 * i / 400 + 1e-4});
    EXPECT_LT(diffusion_jacobian_error(m, probes), 1e-6);
}

TEST(MeasureFlow, DeterministicDiracDecay) {
    const auto m = scalar_model([](double x) { return -x; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    const auto path = sample_wiener(0.0, 2.0, 1e-3, 1, 1);
    const double times[] = {0.0, 1.0, 2.0};
    const auto flow = simulate_measure_flow(m, EmpiricalMeasure::dirac(3.0), path, times);
    ASSERT_EQ(flow.snapshots.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(flow.snapshots[k].size(), 1u);
        EXPECT_NEAR(flow.snapshots[k].particle(0)[0], 3.0 * std::exp(-times[k]), 3.0 * 1e-3 * times[k]);
    }
}

TEST(MeasureFlow, OrnsteinUhlenbeckStationaryLaw) {
    const auto m = scalar_model([](double x) { return -x; }, [](double) { return 1.0; }, [](double) { return 0.0; });
    const auto path = sample_wiener(0.0, 10.0, 0.01, 1, 77);
    const int n = 4096;
    const double times[] = {0.0, 10.0};
    const auto flow = simulate_measure_flow(m, EmpiricalMeasure(1, std::vector<double>(n, 2.0)), path, times);
    boost::math::normal_distribution<double> g(0.0, std::sqrt(0.5));
    std::vector<double> q(n);
    for (int i = 0; i < n; ++i) q[i] = boost::math::quantile(g, (i + 0.5) / n);
    EXPECT_LE(wasserstein(flow.snapshots.back(), EmpiricalMeasure(1, q), 2.0), 0.05);
}

TEST(MeasureFlow, PermutationAndKeying) {
    const auto m = example_model();
    const auto path = sample_wiener(0.0, 0.5, 1e-3, 1, 5);
    std::vector<double> x = {-0.9, -0.3, 0.1, 0.4, 0.8, 1.2};
    std::vector<double> xp = {0.4, 1.2, -0.9, 0.8, 0.1, -0.3};
    const auto times = grid::linspace(0.0, 0.5, 5);

    const auto a = simulate_measure_flow(m, EmpiricalMeasure(1, x), path, times);
    const auto b = simulate_measure_flow(m, EmpiricalMeasure(1, xp), path, times);
    EXPECT_NE(moments2(a), moments2(b));

    MeasureFlowOptions sorted;
    sorted.keying = SeedKeying::sorted_position;
    const auto c = simulate_measure_flow(m, EmpiricalMeasure(1, x), path, times, sorted);
    const auto d = simulate_measure_flow(m, EmpiricalMeasure(1, xp), path, times, sorted);
    EXPECT_EQ(moments2(c), moments2(d));
}

TEST(MeasureFlow, DeterministicReruns) {
    const auto m = example_model();
    const auto path = sample_wiener(0.0, 0.3, 1e-3, 1, 8);
    const double times[] = {0.0, 0.3};
    const EmpiricalMeasure mu(1, {0.1, -0.5, 0.7});
    EXPECT_EQ(simulate_measure_flow(m, mu, path, times).snapshots[1].particles(),
              simulate_measure_flow(m, mu, path, times).snapshots[1].particles());
}

TEST(MeasureFlow, DivergenceGuard) {
    const auto m = scalar_model([](double x) { return x * x * x; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    const auto path = sample_wiener(0.0, 5.0, 1e-2, 1, 1);
    const double times[] = {0.0, 5.0};
    try {
        simulate_measure_flow(m, EmpiricalMeasure::dirac(2.0), path, times);
        FAIL() << "expected divergence";
    } catch (const SimulationDiverged& e) {
        EXPECT_GT(e.time(), 0.0);
        EXPECT_LT(e.time(), 5.0);
    }
}

TEST(FrozenFlow, NoNoiseMatchesReference) {
    const auto m = scalar_model([](double x) { return -2 * x; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    const auto path = sample_wiener(0.0, 1.0, 1e-3, 1, 3);
    const double times[] = {0.0, 1.0};
    const auto flow = simulate_measure_flow(m, EmpiricalMeasure::dirac(0.0), path, times);
    for (auto scheme : {Scheme::euler_ito, Scheme::heun_stratonovich}) {
        FrozenFlowOptions o;
        o.scheme = scheme;
        const double x0[] = {1.5};
        const auto x = simulate_frozen_law_flow(m, x0, flow.law, path, times, o);
        EXPECT_NEAR(x.back()[0], 1.5 * std::exp(-2.0), 1.5 * 2e-3);
    }
}

TEST(FrozenFlow, ReproducesParticleBitwise) {
    const auto m = example_model();
    const auto path = sample_wiener(0.0, 1.0, 1e-3, 1, 21);
    const double times[] = {0.0, 1.0};
    const EmpiricalMeasure mu(1, {0.2, -0.6, 0.9, 0.4, -0.1});
    const auto flow = simulate_measure_flow(m, mu, path, times);
    for (std::size_t p = 0; p < mu.size(); ++p) {
        FrozenFlowOptions o;
        o.noise_stream = rng::particle_seed(path.seed(), p);
        const auto x = simulate_frozen_law_flow(m, mu.particle(p), flow.law, path, times, o);
        EXPECT_EQ(x.back()[0], flow.snapshots.back().particle(p)[0]);
    }
}

TEST(FrozenFlow, EulerAndHeunConverge) {
    const auto m = example_model();
    const double T = 1.0, fine_dt = 1e-3;
    const int ks[] = {8, 4, 2, 1};
    std::vector<double> sq(4, 0.0);
    const int n_omega = 16;
    for (int w = 0; w < n_omega; ++w) {
        const auto fine = sample_wiener(0.0, T, fine_dt, 1, 1000 + w);
        const double times[] = {0.0, T};
        const auto law = simulate_measure_flow(m, EmpiricalMeasure(1, {-0.5, 0.0, 0.5, 1.0}), fine, times).law;
        for (int j = 0; j < 4; ++j) {
            const auto path = fine.coarsen(ks[j]);
            const auto lp = subsample(law, ks[j]);
            const double x0[] = {1.0};
            FrozenFlowOptions e, h;
            h.scheme = Scheme::heun_stratonovich;
            const double xe = simulate_frozen_law_flow(m, x0, lp, path, times, e).back()[0];
            const double xh = simulate_frozen_law_flow(m, x0, lp, path, times, h).back()[0];
            sq[j] += (xe - xh) * (xe - xh) / n_omega;
        }
    }
    std::vector<double> diff(4);
    for (int j = 0; j < 4; ++j) diff[j] = std::sqrt(sq[j]);
    for (int j = 1; j < 4; ++j) EXPECT_LT(diff[j], diff[j - 1]);
    const double order = std::log2(diff[0] / diff[3]) / 3.0;
    RecordProperty("observed_order", std::to_string(order));
    EXPECT_GE(order, 0.5);
}

TEST(FlowProperty, TrivialTriples) {
    const auto m = example_model();
    const auto path = sample_wiener(-1.0, 1.0, 1e-3, 1, 2);
    const EmpiricalMeasure mu(1, {0.3, -0.2, 0.8});
    const double x0[] = {0.7};
    EXPECT_EQ(check_flow_property(m, x0, mu, path, 0.2, 0.2, 0.2), 0.0);
    EXPECT_EQ(check_flow_property(m, x0, mu, path, -0.4, -0.4, 0.5), 0.0);
}

TEST(FlowProperty, RandomTriplesExact) {
    const auto m = example_model();
    const auto path = sample_wiener(-2.0, 2.0, 1e-3, 1, 31);
    std::mt19937_64 gen(12);
    std::uniform_int_distribution<int> pick(-2000, 2000);
    const EmpiricalMeasure mu(1, {0.5, -0.1, 0.25, -0.9});
    for (int trial = 0; trial < 5; ++trial) {
        int a[3] = {pick(gen), pick(gen), pick(gen)};
        std::sort(a, a + 3);
        const double x0[] = {-1.3};
        EXPECT_EQ(check_flow_property(m, x0, mu, path, a[0] * 1e-3, a[1] * 1e-3, a[2] * 1e-3), 0.0);
    }
}

TEST(Lyapunov, ExampleCertificate) {
    const auto m = example_model();
    const auto probes = example_probe_grid();
    EXPECT_LE(lyapunov_drift_residual(m, probes, 8.0, 0.0), 0.0);
}

TEST(Lyapunov, QuadraticNoNoise) {
    const auto m = quadratic_lyapunov(0.0);
    std::vector<LyapunovProbe> probes;
    for (double x : {-3.0, -0.5, 0.0, 2.0}) probes.push_back({{x}, EmpiricalMeasure::dirac(1.0)});
    EXPECT_DOUBLE_EQ(lyapunov_drift_residual(m, probes, 2.0, 0.0), 0.0);
}

TEST(Lyapunov, QuadraticUnitNoise) {
    const auto m = quadratic_lyapunov(1.0);
    for (double x : {-3.0, -0.5, 0.0, 2.0}) {
        const LyapunovProbe p{{x}, EmpiricalMeasure::dirac(0.0)};
        EXPECT_NEAR(lyapunov_drift_residual(m, std::span(&p, 1), 2.0, 1.0), 0.0, 1e-12);
        EXPECT_NEAR(lyapunov_generator(m, p.x, p.mu), -2 * x * x + 1, 1e-12);
    }
}

TEST(Lyapunov, GeneratorMatchesMonteCarloDrift) {
    // E[V(X_h)] - V(x) ~ h LV(x) for dX = -X dt + dW, V = x^2.
    const auto m = quadratic_lyapunov(1.0);
    const double x0 = 1.3, h = 0.01;
    const int n = 200000;
    const auto path = sample_wiener(0.0, h, h, 1, 4);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dw = path.stream_increment(rng::particle_seed(99, i), 0, 0);
        const double x = x0 - x0 * h + dw;
        acc += x * x;
    }
    const double drift = (acc / n - x0 * x0) / h;
    const double x[] = {x0};
    EXPECT_NEAR(drift, lyapunov_generator(m, x, EmpiricalMeasure::dirac(0.0)), 0.2);
}

TEST(Lyapunov, MissingClosures) {
    const auto m = scalar_model([](double x) { return -x; }, [](double) { return 1.0; }, [](double) { return 0.0; });
    const double x[] = {1.0};
    EXPECT_THROW(lyapunov_generator(m, x, EmpiricalMeasure::dirac(0.0)), CapabilityError);
}
