#include "mvlab/mv_sode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mvlab/errors.hpp"
#include "mvlab/parallel.hpp"
#include "mvlab/rng.hpp"

#include "flow_common.hpp"

namespace mvlab::sode {

namespace {

using detail::grid_indices;
using detail::guard_check;

struct Scratch {
    Vec bbar, b2, sig, sig2, dsig, pred, dW;
    void resize(int d, int m) {
        bbar.resize(d);
        b2.resize(d);
        sig.resize(static_cast<std::size_t>(d) * m);
        sig2.resize(static_cast<std::size_t>(d) * m);
        dsig.resize(static_cast<std::size_t>(d) * m * d);
        pred.resize(d);
        dW.resize(m);
    }
};

Scratch& scratch(int d, int m) {
    thread_local Scratch s;
    s.resize(d, m);
    return s;
}

// One Euler-Maruyama step on the Ito form; shared by particles and the X-flow
// so that both produce identical arithmetic.
void euler_step(const SodeModel& model, Span x, CSpan law, double dt, CSpan dW, Scratch& s) {
    ito_drift(model, x, law, s.bbar);
    model.diffusion(x, s.sig);
    for (int j = 0; j < model.d; ++j) {
        double noise = 0.0;
        for (int i = 0; i < model.m; ++i) noise += s.sig[static_cast<std::size_t>(j) * model.m + i] * dW[i];
        x[j] = x[j] + s.bbar[j] * dt + noise;
    }
}

// Stochastic Heun step on the Stratonovich form.
void heun_step(const SodeModel& model, Span x, CSpan law0, CSpan law1, double dt, CSpan dW, Scratch& s) {
    const int d = model.d, m = model.m;
    model.drift(x, law0, s.bbar);
    model.diffusion(x, s.sig);
    for (int j = 0; j < d; ++j) {
        double noise = 0.0;
        for (int i = 0; i < m; ++i) noise += s.sig[static_cast<std::size_t>(j) * m + i] * dW[i];
        s.pred[j] = x[j] + s.bbar[j] * dt + noise;
    }
    model.drift(s.pred, law1, s.b2);
    model.diffusion(s.pred, s.sig2);
    for (int j = 0; j < d; ++j) {
        double noise = 0.0;
        for (int i = 0; i < m; ++i) {
            const std::size_t k = static_cast<std::size_t>(j) * m + i;
            noise += 0.5 * (s.sig[k] + s.sig2[k]) * dW[i];
        }
        x[j] = x[j] + 0.5 * (s.bbar[j] + s.b2[j]) * dt + noise;
    }
}

void require_closures(const SodeModel& model) {
    if (!model.drift || !model.diffusion || !model.diffusion_jacobian)
        throw CapabilityError("model lacks drift, diffusion or diffusion_jacobian");
}

}  // namespace

double ExampleSigma::Band::value(double x) const noexcept {
    const double h = b - a, s = (x - a) / h;
    const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * va + h10 * h * sa + h01 * vb + h11 * h * sb;
}

double ExampleSigma::Band::slope(double x) const noexcept {
    const double h = b - a, s = (x - a) / h;
    const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
    const double d01 = 6 * s - 6 * s * s, d11 = 3 * s * s - 2 * s;
    return (d00 * va + d01 * vb) / h + d10 * sa + d11 * sb;
}

ExampleSigma::ExampleSigma(double M_cut, double eps) : M_(M_cut), eps_(eps) {
    if (!(eps > 0.0 && eps < M_cut)) throw ConfigurationError("example sigma needs 0 < eps < M", "eps");
    const double a1 = -M_ - eps_, b1 = -M_ + eps_;
    lower_ = {a1, b1, 0.5 * a1 - 0.5 * M_, b1, 0.5, 1.0};
    const double a2 = M_ - eps_, b2 = M_ + eps_;
    upper_ = {a2, b2, a2, 1.5 * b2 - 0.5 * M_, 1.0, 1.5};
    // Endpoint slopes within 3x the secant keep the Hermite cubic monotone (Fritsch-Carlson box).
    for (const Band& band : {lower_, upper_}) {
        const double secant = (band.vb - band.va) / (band.b - band.a);
        if (!(secant > 0.0) || band.sa / secant > 3.0 || band.sb / secant > 3.0)
            throw ConfigurationError("example sigma smoothing band is not monotone for these M, eps", "eps");
    }
}

double ExampleSigma::operator()(double x) const noexcept {
    if (x < lower_.a) return 0.5 * x - 0.5 * M_;
    if (x <= lower_.b) return lower_.value(x);
    if (x < upper_.a) return x;
    if (x <= upper_.b) return upper_.value(x);
    return 1.5 * x - 0.5 * M_;
}

double ExampleSigma::derivative(double x) const noexcept {
    if (x < lower_.a) return 0.5;
    if (x <= lower_.b) return lower_.slope(x);
    if (x < upper_.a) return 1.0;
    if (x <= upper_.b) return upper_.slope(x);
    return 1.5;
}

SodeModel example_model(double M_cut, double eps) {
    const ExampleSigma sigma(M_cut, eps);
    SodeModel m;
    m.d = 1;
    m.m = 1;
    m.law_features = [](const EmpiricalMeasure& mu) { return Vec{second_moment(mu)}; };
    m.drift = [](CSpan x, CSpan law, Span out) {
        const double m2 = law[0], m2_5 = m2 * m2 * m2 * m2 * m2;
        out[0] = -x[0] * x[0] * x[0] * m2_5 - 10.0 * x[0];
    };
    m.diffusion = [sigma](CSpan x, Span out) { out[0] = sigma(x[0]); };
    m.diffusion_jacobian = [sigma](CSpan x, Span out) { out[0] = sigma.derivative(x[0]); };
    m.V = [](CSpan x, CSpan law) { return std::pow(x[0], 8) + std::pow(law[0], 45); };
    m.dV_dx = [](CSpan x, CSpan, Span out) { out[0] = 8.0 * std::pow(x[0], 7); };
    m.d2V_dxx = [](CSpan x, CSpan, Span out) { out[0] = 56.0 * std::pow(x[0], 6); };
    m.dmu_V = [](CSpan, CSpan law, CSpan y, Span out) { out[0] = 90.0 * std::pow(law[0], 44) * y[0]; };
    m.dy_dmu_V = [](CSpan, CSpan law, CSpan, Span out) { out[0] = 90.0 * std::pow(law[0], 44); };
    m.alpha = 8.0;
    m.M = 0.0;
    return m;
}

double diffusion_jacobian_error(const SodeModel& model, std::span<const Vec> probes, double h) {
    require_closures(model);
    const int d = model.d, m = model.m;
    Vec sp(static_cast<std::size_t>(d) * m), sm(sp.size()), ds(sp.size() * d);
    double worst = 0.0;
    for (const Vec& x : probes) {
        model.diffusion_jacobian(x, ds);
        for (int k = 0; k < d; ++k) {
            Vec xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            model.diffusion(xp, sp);
            model.diffusion(xm, sm);
            for (std::size_t ji = 0; ji < sp.size(); ++ji) {
                const double fd = (sp[ji] - sm[ji]) / (2 * h);
                worst = std::max(worst, std::abs(fd - ds[ji * d + k]));
            }
        }
    }
    return worst;
}

void ito_drift(const SodeModel& model, CSpan x, CSpan law, Span out) {
    const int d = model.d, m = model.m;
    model.drift(x, law, out);
    thread_local Vec sig, dsig;
    sig.resize(static_cast<std::size_t>(d) * m);
    dsig.resize(sig.size() * d);
    model.diffusion(x, sig);
    model.diffusion_jacobian(x, dsig);
    for (int j = 0; j < d; ++j) {
        double corr = 0.0;
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < d; ++k)
                corr += dsig[(static_cast<std::size_t>(j) * m + i) * d + k] * sig[static_cast<std::size_t>(k) * m + i];
        out[j] += 0.5 * corr;
    }
}

Vec ito_drift(const SodeModel& model, CSpan x, const EmpiricalMeasure& mu) {
    require_closures(model);
    Vec out(static_cast<std::size_t>(model.d));
    const Vec law = model.features(mu);
    ito_drift(model, x, law, out);
    return out;
}

CSpan LawPath::at(std::int64_t i) const {
    if (i < i_start || i > i_end()) throw DomainError("law path does not cover the requested grid index");
    return features[static_cast<std::size_t>(i - i_start)];
}

MeasureFlow simulate_measure_flow(const SodeModel& model, const EmpiricalMeasure& mu0, const WienerPath& path,
                                  std::span<const double> t_grid, const MeasureFlowOptions& options) {
    require_closures(model);
    if (mu0.dim() != model.d) throw DomainError("initial measure dimension does not match the model");
    const auto idx = grid_indices(path, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    if (!path.contains(i0) || !path.contains(i1)) throw DomainError("time grid leaves the path window");
    const std::size_t n = mu0.size();
    const int d = model.d, m = model.m;

    EmpiricalMeasure cur = mu0;
    std::vector<std::uint64_t> streams(n);
    if (options.keying == SeedKeying::sorted_position) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const auto pa = mu0.particle(a), pb = mu0.particle(b);
            if (std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end())) return true;
            if (std::lexicographical_compare(pb.begin(), pb.end(), pa.begin(), pa.end())) return false;
            return mu0.weight(a) < mu0.weight(b);
        });
        Vec xs(mu0.particles().size()), ws(n);
        for (std::size_t r = 0; r < n; ++r) {
            std::copy_n(mu0.particle(order[r]).begin(), d, xs.begin() + static_cast<std::ptrdiff_t>(r * d));
            ws[r] = mu0.weight(order[r]);
        }
        cur = EmpiricalMeasure(d, std::move(xs), std::move(ws));
    }
    for (std::size_t i = 0; i < n; ++i) streams[i] = rng::particle_seed(path.seed(), i);

    MeasureFlow out;
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

    const double dt = path.dt();
    for (std::int64_t i = i0; i < i1; ++i) {
        out.law.features.push_back(model.features(cur));
        record(i);
        const CSpan law = out.law.features.back();
        const double t_next = path.time(i + 1);
        parallel_for(n, [&](std::size_t p) {
            Scratch& s = scratch(d, m);
            for (int c = 0; c < m; ++c) s.dW[c] = path.stream_increment(streams[p], c, i);
            auto x = cur.particle(p);
            euler_step(model, x, law, dt, s.dW, s);
            guard_check(x, options.guard, t_next);
        });
    }
    out.law.features.push_back(model.features(cur));
    record(i1);
    return out;
}

std::vector<Vec> simulate_frozen_law_flow(const SodeModel& model, CSpan x0, const LawPath& law,
                                          const WienerPath& path, std::span<const double> t_grid,
                                          const FrozenFlowOptions& options) {
    require_closures(model);
    if (static_cast<int>(x0.size()) != model.d) throw DomainError("initial state dimension does not match the model");
    guard_check(x0, options.guard, t_grid.empty() ? 0.0 : t_grid.front());
    const auto idx = grid_indices(path, t_grid);
    const std::int64_t i0 = idx.front(), i1 = idx.back();
    if (!options.noise_stream && (!path.contains(i0) || !path.contains(i1)))
        throw DomainError("time grid leaves the path window");
    const int m = model.m;
    Scratch& s = scratch(model.d, m);

    Vec x(x0.begin(), x0.end());
    std::vector<Vec> out;
    out.reserve(idx.size());
    std::size_t next = 0;
    auto record = [&](std::int64_t i) {
        while (next < idx.size() && idx[next] == i) {
            out.push_back(x);
            ++next;
        }
    };
    const double dt = path.dt();
    for (std::int64_t i = i0; i < i1; ++i) {
        record(i);
        for (int c = 0; c < m; ++c)
            s.dW[c] = options.noise_stream ? path.stream_increment(*options.noise_stream, c, i) : path.increment(i, c);
        if (options.scheme == Scheme::euler_ito)
            euler_step(model, x, law.at(i), dt, s.dW, s);
        else
            heun_step(model, x, law.at(i), law.at(i + 1), dt, s.dW, s);
        guard_check(x, options.guard, path.time(i + 1));
    }
    record(i1);
    return out;
}

std::vector<Vec> simulate_frozen_law_flow(const SodeModel& model, CSpan x0,
                                          std::span<const EmpiricalMeasure> law_path, const WienerPath& path,
                                          std::span<const double> t_grid, const FrozenFlowOptions& options) {
    if (t_grid.empty()) throw DomainError("time grid is empty");
    LawPath law;
    law.i_start = path.index_of(t_grid.front());
    const std::int64_t steps = path.index_of(t_grid.back()) - law.i_start;
    if (static_cast<std::int64_t>(law_path.size()) != steps + 1)
        throw DomainError("law path needs one measure per grid node");
    for (const auto& mu : law_path) law.features.push_back(model.features(mu));
    return simulate_frozen_law_flow(model, x0, law, path, t_grid, options);
}

double check_flow_property(const SodeModel& model, CSpan x0, const EmpiricalMeasure& mu0, const WienerPath& path,
                           double s, double r, double t) {
    if (!(s <= r && r <= t)) throw DomainError("flow property needs s <= r <= t");
    const double full_grid[] = {s, r, t};
    const MeasureFlow full = simulate_measure_flow(model, mu0, path, full_grid);
    const double tail_grid[] = {r, t};
    const MeasureFlow tail = simulate_measure_flow(model, full.snapshots[1], path, tail_grid);

    const auto x_full = simulate_frozen_law_flow(model, x0, full.law, path, full_grid);
    const auto x_tail = simulate_frozen_law_flow(model, x_full[1], tail.law, path, tail_grid);
    double dx = 0.0;
    for (int k = 0; k < model.d; ++k) dx += (x_full[2][k] - x_tail[1][k]) * (x_full[2][k] - x_tail[1][k]);
    return std::sqrt(dx) + wasserstein(full.snapshots[2], tail.snapshots[1], 2.0);
}

double lyapunov_generator(const SodeModel& model, CSpan x, const EmpiricalMeasure& mu) {
    require_closures(model);
    if (!model.V || !model.dV_dx || !model.d2V_dxx || !model.dmu_V || !model.dy_dmu_V)
        throw CapabilityError("model does not supply the Lyapunov function and all its derivatives");
    const int d = model.d, m = model.m;
    const Vec law = model.features(mu);
    Vec grad(d), hess(static_cast<std::size_t>(d) * d), bbar(d), sig(static_cast<std::size_t>(d) * m);

    auto diffusion_term = [&](const Vec& h) {
        // 1/2 sum_i sigma_i^T H sigma_i
        double acc = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j)
                for (int k = 0; k < d; ++k)
                    acc += sig[static_cast<std::size_t>(j) * m + i] * h[static_cast<std::size_t>(j) * d + k] *
                           sig[static_cast<std::size_t>(k) * m + i];
        return 0.5 * acc;
    };

    model.dV_dx(x, law, grad);
    model.d2V_dxx(x, law, hess);
    ito_drift(model, x, law, bbar);
    model.diffusion(x, sig);
    double lv = 0.0;
    for (int j = 0; j < d; ++j) lv += grad[j] * bbar[j];
    lv += diffusion_term(hess);

    for (std::size_t p = 0; p < mu.size(); ++p) {
        const auto y = mu.particle(p);
        model.dmu_V(x, law, y, grad);
        model.dy_dmu_V(x, law, y, hess);
        ito_drift(model, y, law, bbar);
        model.diffusion(y, sig);
        double term = 0.0;
        for (int j = 0; j < d; ++j) term += grad[j] * bbar[j];
        term += diffusion_term(hess);
        lv += mu.weight(p) * term;
    }
    return lv;
}

double lyapunov_drift_residual(const SodeModel& model, std::span<const LyapunovProbe> probes, double alpha,
                               double M) {
    if (probes.empty()) throw DomainError("lyapunov residual needs at least one probe");
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& probe : probes) {
        const Vec law = model.features(probe.mu);
        const double v = model.V(probe.x, law);
        if (v < 0.0) throw DomainError("Lyapunov function is negative at a probe");
        worst = std::max(worst, lyapunov_generator(model, probe.x, probe.mu) + alpha * v - M);
    }
    return worst;
}

std::vector<LyapunovProbe> example_probe_grid(int nx, double x_max, int nm, double m2_max) {
    std::vector<LyapunovProbe> probes;
    for (int j = 0; j < nm; ++j) {
        const double m2 = nm > 1 ? m2_max * j / (nm - 1) : 0.0;
        const double a = std::sqrt(m2);
        const EmpiricalMeasure mu(1, Vec{-a, a});
        for (int i = 0; i < nx; ++i) {
            const double x = nx > 1 ? -x_max + 2.0 * x_max * i / (nx - 1) : 0.0;
            probes.push_back({Vec{x}, mu});
        }
    }
    return probes;
}

attractor::CocycleAdapter make_adapter(const SodeModel& model, Scheme scheme) {
    attractor::CocycleAdapter a;
    a.advance = [model, scheme](double t0, double t1, const WienerPath& omega, const EmpiricalMeasure& mu,
                                const std::vector<attractor::State>& states) {
        const double grid[] = {t0, t1};
        MeasureFlow flow = simulate_measure_flow(model, mu, omega, grid);
        FrozenFlowOptions opts;
        opts.scheme = scheme;
        attractor::CocycleAdapter::Output out;
        out.states.resize(states.size());
        for (std::size_t i = 0; i < states.size(); ++i)
            out.states[i] = simulate_frozen_law_flow(model, states[i], flow.law, omega, grid, opts).back();
        out.mu = std::move(flow.snapshots.back());
        return out;
    };
    return a;
}

}  // namespace mvlab::sode
