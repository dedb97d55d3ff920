#include "mvlab/mv_rd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mvlab/errors.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/rng.hpp"

#include "flow_common.hpp"

namespace mvlab::rd {

namespace {

using detail::grid_indices;
using detail::guard_check;

/// Exponential Euler step shared by particles and the X-flow.
struct Stepper {
    int K = 0;
    double dt = 0.0;
    double c0 = 0.0;
    bool noise = false;
    std::vector<double> decay, q;

    Stepper(const RdConfig& cfg, double step) : K(cfg.k_modes), dt(step), c0(cfg.c0), noise(cfg.noise) {
        decay.resize(static_cast<std::size_t>(K));
        q.resize(static_cast<std::size_t>(K));
        for (int k = 1; k <= K; ++k) {
            decay[k - 1] = std::exp(-static_cast<double>(k) * k * dt);
            q[k - 1] = cfg.q(k);
        }
    }

    template <class Noise>
    void step(double* a, const double* mean, Noise&& dW) const {
        for (int k = 0; k < K; ++k) {
            double v = a[k] + dt * c0 * (a[k] - mean[k]);
            if (noise) v += q[k] * dW(k);
            a[k] = decay[k] * v;
        }
    }
};

void check_step(const RdConfig& cfg, const WienerPath& path) {
    if (std::abs(path.dt() - cfg.dt) > 1e-12 * cfg.dt)
        throw ConfigurationError("path grid spacing differs from dt", "dt");
}

std::vector<double> weighted_mean(const EmpiricalMeasure& mu) {
    std::vector<double> m(static_cast<std::size_t>(mu.dim()), 0.0);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto p = mu.particle(i);
        const double w = mu.weight(i);
        for (int k = 0; k < mu.dim(); ++k) m[k] += w * p[k];
    }
    return m;
}

// Least-squares line through (t, log y) over the leading points above floor.
void fit_log_slope(ContractionResult& r, double floor) {
    std::size_t n = 0;
    while (n < r.w2_sq.size() && r.w2_sq[n] > floor) ++n;
    r.fitted_points = static_cast<int>(n);
    if (n < 3) return;
    double st = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        st += r.times[i];
        sy += std::log(r.w2_sq[i]);
    }
    const double tm = st / n, ym = sy / n;
    double stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        stt += (r.times[i] - tm) * (r.times[i] - tm);
        sty += (r.times[i] - tm) * (std::log(r.w2_sq[i]) - ym);
    }
    r.slope = sty / stt;
    r.intercept = ym - r.slope * tm;
}

}  // namespace

double RdConfig::q(int k) const {
    if (!noise) return 0.0;
    return std::pow(static_cast<double>(k), -noise_decay);
}

void RdConfig::validate() const {
    if (k_modes < 1) throw ConfigurationError("k_modes must be at least 1", "k_modes");
    if (!(c0 >= 0.0)) throw ConfigurationError("c0 must be nonnegative", "c0");
    if (!(C1() + C2() < 2.0 * lambda_star()))
        throw ConfigurationError("C1 + C2 = 4 c0 must stay below 2 lambda* = 2, i.e. c0 < 1/2", "c0");
    if (!(noise_decay > 1.5))
        throw ConfigurationError("noise_decay must exceed 3/2 for H^1_0-valued noise", "noise_decay");
    if (!(dt > 0.0)) throw ConfigurationError("dt must be positive", "dt");
    if (n_particles < 1) throw ConfigurationError("n_particles must be at least 1", "n_particles");
    if (n_omega < 1) throw ConfigurationError("n_omega must be at least 1", "n_omega");
    if (pullback_times.empty()) throw ConfigurationError("pullback_times is empty", "pullback_times");
    for (std::size_t i = 0; i < pullback_times.size(); ++i) {
        if (!(pullback_times[i] > 0.0) || (i > 0 && !(pullback_times[i] > pullback_times[i - 1])))
            throw ConfigurationError("pullback_times must be positive and increasing", "pullback_times");
    }
}

double h_norm_sq(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

double v_norm_sq(std::span<const double> a) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double kk = static_cast<double>(k + 1);
        s += (1.0 + kk * kk) * a[k] * a[k];
    }
    return s;
}

double evaluate(std::span<const double> a, double x) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * std::sin(static_cast<double>(k + 1) * x);
    return c * s;
}

SpectralField rd_drift(const RdConfig& cfg, std::span<const double> a, std::span<const double> mean) {
    if (static_cast<int>(a.size()) != cfg.k_modes || mean.size() != a.size())
        throw DomainError("rd_drift: coefficient count differs from k_modes");
    SpectralField out(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double kk = static_cast<double>(k + 1);
        out[k] = -kk * kk * a[k] + cfg.c0 * (a[k] - mean[k]);
    }
    return out;
}

SpectralField rd_drift(const RdConfig& cfg, std::span<const double> a, const EmpiricalMeasure& mu) {
    if (mu.dim() != cfg.k_modes) throw DomainError("rd_drift: measure dimension differs from k_modes");
    return rd_drift(cfg, a, weighted_mean(mu));
}

EmpiricalMeasure replicate(const EmpiricalMeasure& mu, std::size_t n) {
    if (mu.size() == n) return mu;
    if (mu.size() == 0 || n % mu.size() != 0 || !mu.uniform())
        throw DomainError("replicate: needs a uniform cloud whose size divides the particle count");
    std::vector<double> x;
    x.reserve(n * static_cast<std::size_t>(mu.dim()));
    for (std::size_t r = 0; r < n / mu.size(); ++r) x.insert(x.end(), mu.particles().begin(), mu.particles().end());
    return EmpiricalMeasure(mu.dim(), std::move(x));
}

RdMeasureFlow simulate_rd_measure_flow(const RdConfig& cfg, const EmpiricalMeasure& mu0, const WienerPath& path,
                                       std::span<const double> t_grid, double guard) {
    check_step(cfg, path);
    if (mu0.dim() != cfg.k_modes) throw DomainError("initial measure dimension differs from k_modes");
    const auto idx = grid_indices(path, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    const std::size_t n = mu0.size();
    const Stepper stepper(cfg, path.dt());
    for (std::size_t p = 0; p < n; ++p) guard_check(mu0.particle(p), guard, t_grid.front());

    std::vector<std::uint64_t> streams(n);
    for (std::size_t p = 0; p < n; ++p) streams[p] = rng::particle_seed(path.seed(), p);

    EmpiricalMeasure cur = mu0;
    RdMeasureFlow out;
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
        out.law.features.push_back(weighted_mean(cur));
        record(i);
        const double* mean = out.law.features.back().data();
        const double t_next = path.time(i + 1);
        parallel_for(n, [&](std::size_t p) {
            auto x = cur.particle(p);
            stepper.step(x.data(), mean, [&](int k) { return path.stream_increment(streams[p], k, i); });
            guard_check(x, guard, t_next);
        });
    }
    out.law.features.push_back(weighted_mean(cur));
    record(i1);
    return out;
}

std::vector<SpectralField> simulate_rd_state_flow(const RdConfig& cfg, std::span<const double> x0,
                                                  const sode::LawPath& law, const WienerPath& omega,
                                                  std::span<const double> t_grid,
                                                  std::optional<std::uint64_t> noise_stream, double guard) {
    check_step(cfg, omega);
    if (static_cast<int>(x0.size()) != cfg.k_modes) throw DomainError("initial state dimension differs from k_modes");
    if (!noise_stream && omega.dim() != cfg.k_modes) throw DomainError("omega dimension differs from k_modes");
    const auto idx = grid_indices(omega, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    if (!noise_stream && (!omega.contains(i0) || !omega.contains(i1)))
        throw DomainError("time grid leaves the path window");
    guard_check(x0, guard, t_grid.front());
    const Stepper stepper(cfg, omega.dt());

    SpectralField x(x0.begin(), x0.end());
    std::vector<SpectralField> out;
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
        const double* mean = law.at(i).data();
        if (noise_stream)
            stepper.step(x.data(), mean, [&](int k) { return omega.stream_increment(*noise_stream, k, i); });
        else
            stepper.step(x.data(), mean, [&](int k) { return omega.increment(i, k); });
        guard_check(x, guard, omega.time(i + 1));
    }
    record(i1);
    return out;
}

double h_wasserstein(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    const bool replicable = a.dim() > 1 && a.size() > 1 && b.size() > 1 && a.uniform() && b.uniform() &&
                            std::lcm(a.size(), b.size()) <= kReplicatedAssignmentMaxSize;
    if (replicable) return wasserstein_detailed(a, b, 2.0, WassersteinBackend::assignment).value;
    return wasserstein(a, b, 2.0);
}

attractor::CocycleAdapter make_adapter(const RdConfig& cfg) {
    attractor::CocycleAdapter a;
    a.advance = [cfg](double t0, double t1, const WienerPath& omega, const EmpiricalMeasure& mu,
                      const std::vector<attractor::State>& states) {
        const double grid[] = {t0, t1};
        RdMeasureFlow flow = simulate_rd_measure_flow(cfg, mu, omega, grid);
        attractor::CocycleAdapter::Output out;
        out.states.resize(states.size());
        parallel_for(states.size(), [&](std::size_t i) {
            out.states[i] = simulate_rd_state_flow(cfg, states[i], flow.law, omega, grid).back();
        });
        out.mu = std::move(flow.snapshots.back());
        return out;
    };
    a.measure_distance = h_wasserstein;
    return a;
}

ContractionResult contraction_test(const RdConfig& cfg, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                   const WienerPath& path, std::span<const double> t_grid, double tolerance,
                                   double floor) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.n_particles);
    const EmpiricalMeasure a = replicate(mu, n);
    EmpiricalMeasure b = replicate(nu, n);
    if (a.weights() != b.weights()) throw DomainError("contraction_test: clouds must carry equal weights");

    // Pair particles by an optimal assignment of the initial clouds when it is affordable.
    if (a.uniform() && n > 1 && n <= kAssignmentMaxSize) {
        std::vector<double> c(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (int k = 0; k < a.dim(); ++k) s += std::pow(a.particle(i)[k] - b.particle(j)[k], 2);
                c[i * n + j] = s;
            }
        const auto match = solve_assignment(c, static_cast<int>(n));
        std::vector<double> x(b.particles().size());
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(b.particle(static_cast<std::size_t>(match[i])).begin(), b.dim(),
                        x.begin() + static_cast<std::ptrdiff_t>(i * b.dim()));
        b = EmpiricalMeasure(b.dim(), std::move(x), b.weights());
    }

    const auto fa = simulate_rd_measure_flow(cfg, a, path, t_grid);
    const auto fb = simulate_rd_measure_flow(cfg, b, path, t_grid);
    ContractionResult r;
    r.times = fa.times;
    for (std::size_t s = 0; s < fa.snapshots.size(); ++s) {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = 0.0;
            for (int k = 0; k < a.dim(); ++k) {
                const double v = fa.snapshots[s].particle(i)[k] - fb.snapshots[s].particle(i)[k];
                d += v * v;
            }
            cost += a.weight(i) * d;
        }
        r.w2_sq.push_back(cost);
    }
    r.bound = -cfg.contraction_rate();
    r.tolerance = tolerance;
    fit_log_slope(r, floor);
    if (r.fitted_points >= 3) {
        r.margin = r.bound + tolerance - r.slope;
        r.status = r.margin >= 0.0 ? attractor::Status::pass : attractor::Status::fail;
    }
    return r;
}

XiEstimate pullback_xi(const RdConfig& cfg, const WienerPath& omega, std::span<const double> pullback_times,
                       std::span<const SpectralField> probe_states, std::span<const EmpiricalMeasure> probe_measures) {
    cfg.validate();
    const auto adapter = make_adapter(cfg);
    XiEstimate est;
    est.report = attractor::run_pullback(adapter, omega, pullback_times, probe_states, probe_measures);
    auto cloud = est.report.clouds.back();
    std::sort(cloud.begin(), cloud.end());
    est.xi.assign(static_cast<std::size_t>(cfg.k_modes), 0.0);
    for (const auto& p : cloud)
        for (int k = 0; k < cfg.k_modes; ++k) est.xi[k] += p[k] / static_cast<double>(cloud.size());
    est.diameter = est.report.diameters.back();
    return est;
}

RdProbes default_probes(const RdConfig& cfg, std::uint64_t seed) {
    const int K = cfg.k_modes;
    const auto n = static_cast<std::size_t>(cfg.n_particles);
    RdProbes p;
    SpectralField e1(static_cast<std::size_t>(K), 0.0);
    e1[0] = 1.0;
    p.states.emplace_back(static_cast<std::size_t>(K), 0.0);
    p.states.push_back(e1);
    for (auto& v : p.states.back()) v *= 2.0;
    p.states.push_back(e1);
    for (auto& v : p.states.back()) v *= -2.0;
    for (int r = 0; r < 2; ++r) {
        SpectralField s(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) s[k] = 2.0 * rng::normal(seed, rng::kProbe, r * K + k) / (k + 1);
        p.states.push_back(std::move(s));
    }
    p.measures.push_back(replicate(EmpiricalMeasure::dirac(std::vector<double>(static_cast<std::size_t>(K), 0.0)), n));
    p.measures.push_back(replicate(EmpiricalMeasure::dirac(e1), n));
    std::vector<double> cloud(n * static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < K; ++k)
            cloud[i * K + k] = rng::normal(seed, rng::kInitialCloud, static_cast<std::int64_t>(i * K + k)) / (k + 1);
    p.measures.emplace_back(K, std::move(cloud));
    return p;
}

LawOfXiResult law_of_xi_test(const RdConfig& cfg, int n_omega, std::uint64_t seed, double tolerance) {
    cfg.validate();
    if (n_omega < 1) throw ConfigurationError("n_omega must be at least 1", "n_omega");
    const int K = cfg.k_modes;
    const auto n = static_cast<std::size_t>(cfg.n_particles);
    const double T = std::max(cfg.pullback_times.back(), 20.0 / cfg.contraction_rate());
    const double horizon = std::ceil(T / cfg.dt - 1e-9) * cfg.dt;
    const auto delta0 = replicate(EmpiricalMeasure::dirac(std::vector<double>(static_cast<std::size_t>(K), 0.0)), n);

    LawOfXiResult r;
    r.horizon = horizon;
    r.tolerance = tolerance;

    // One law run shared by every omega.
    const auto law_path = WienerPath::sample(-horizon, 0.0, cfg.dt, K, rng::derive_seed(seed, rng::kLawSeed));
    const double pull[] = {-horizon, 0.0};
    const auto law = simulate_rd_measure_flow(cfg, delta0, law_path, pull).law;

    std::vector<double> xi(static_cast<std::size_t>(n_omega) * K);
    const std::vector<double> zero(static_cast<std::size_t>(K), 0.0);
    parallel_for(static_cast<std::size_t>(n_omega), [&](std::size_t w) {
        const auto omega = WienerPath::sample(-horizon, 0.0, cfg.dt, K, rng::hash3(seed, rng::kOmegaEnsemble, w));
        const auto x = simulate_rd_state_flow(cfg, zero, law, omega, pull).back();
        std::copy(x.begin(), x.end(), xi.begin() + static_cast<std::ptrdiff_t>(w * K));
    });
    r.xi_cloud = EmpiricalMeasure(K, std::move(xi));

    const double fwd[] = {0.0, horizon};
    auto long_run = [&](std::uint64_t tag) {
        const auto path = WienerPath::sample(0.0, horizon, cfg.dt, K, rng::hash3(seed, rng::kLawSeed, tag));
        return simulate_rd_measure_flow(cfg, delta0, path, fwd).snapshots.back();
    };
    r.mu_inf = long_run(1);
    r.mu_inf_control = long_run(2);
    r.distance = h_wasserstein(r.xi_cloud, r.mu_inf);
    r.control_distance = h_wasserstein(r.mu_inf, r.mu_inf_control);
    if (static_cast<std::size_t>(n_omega) < n) {
        const auto& pc = r.mu_inf_control.particles();
        const EmpiricalMeasure head(K, std::vector<double>(pc.begin(), pc.begin() + static_cast<std::ptrdiff_t>(n_omega) * K));
        r.null_distance = h_wasserstein(head, r.mu_inf);
    } else {
        r.null_distance = r.control_distance;
    }
    r.consistent = r.control_distance <= r.distance + 0.05;
    r.status = r.distance <= tolerance ? attractor::Status::pass : attractor::Status::fail;
    return r;
}

}  // namespace mvlab::rd
