#include "mvlab/attractor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvlab/errors.hpp"
#include "mvlab/parallel.hpp"

namespace mvlab::attractor {

double euclidean(const State& a, const State& b) {
    if (a.size() != b.size()) throw DomainError("state dimension mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

double CocycleAdapter::distance(const State& a, const State& b) const {
    return state_distance ? state_distance(a, b) : euclidean(a, b);
}

double CocycleAdapter::distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b) const {
    return measure_distance ? measure_distance(a, b) : wasserstein(a, b, 2.0);
}

double diameter(std::span<const State> cloud, const std::function<double(const State&, const State&)>& dist) {
    double d = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j) d = std::max(d, dist(cloud[i], cloud[j]));
    return d;
}

double hausdorff(std::span<const State> a, std::span<const State> b,
                 const std::function<double(const State&, const State&)>& dist) {
    if (a.empty() || b.empty()) throw DomainError("hausdorff: empty cloud");
    auto directed = [&](std::span<const State> p, std::span<const State> q) {
        double worst = 0.0;
        for (const auto& x : p) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& y : q) best = std::min(best, dist(x, y));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

PullbackCloud pullback_cloud(const CocycleAdapter& adapter, const WienerPath& omega, double t_n,
                             std::span<const State> initial_states, std::span<const EmpiricalMeasure> initial_measures) {
    if (initial_states.empty() || initial_measures.empty()) throw DomainError("pullback needs nonempty initial sets");
    if (t_n < 0.0) throw DomainError("pullback time must be nonnegative");
    const std::vector<State> states(initial_states.begin(), initial_states.end());
    PullbackCloud out;
    if (t_n == 0.0) {
        for (std::size_t j = 0; j < initial_measures.size(); ++j)
            out.points.insert(out.points.end(), states.begin(), states.end());
        out.measures.assign(initial_measures.begin(), initial_measures.end());
        return out;
    }
    std::vector<CocycleAdapter::Output> runs(initial_measures.size());
    parallel_for(initial_measures.size(), [&](std::size_t j) {
        runs[j] = adapter.advance(-t_n, 0.0, omega, initial_measures[j], states);
    });
    for (auto& r : runs) {
        out.points.insert(out.points.end(), r.states.begin(), r.states.end());
        out.measures.push_back(std::move(r.mu));
    }
    return out;
}

PullbackReport run_pullback(const CocycleAdapter& adapter, const WienerPath& omega, std::span<const double> times,
                            std::span<const State> initial_states, std::span<const EmpiricalMeasure> initial_measures) {
    if (times.empty()) throw DomainError("pullback schedule is empty");
    for (std::size_t n = 1; n < times.size(); ++n)
        if (!(times[n] > times[n - 1])) throw DomainError("pullback times must be increasing");
    PullbackReport rep;
    rep.pullback_times.assign(times.begin(), times.end());
    auto dist = [&](const State& a, const State& b) { return adapter.distance(a, b); };
    for (std::size_t n = 0; n < times.size(); ++n) {
        auto cloud = pullback_cloud(adapter, omega, times[n], initial_states, initial_measures);
        rep.diameters.push_back(diameter(cloud.points, dist));
        std::vector<double> inc(cloud.measures.size(), 0.0);
        if (n > 0)
            for (std::size_t j = 0; j < inc.size(); ++j)
                inc[j] = adapter.distance(cloud.measures[j], rep.measure_trajectory.back()[j]);
        rep.cauchy_increments.push_back(std::move(inc));
        rep.clouds.push_back(std::move(cloud.points));
        rep.measure_trajectory.push_back(std::move(cloud.measures));
    }
    for (const auto& c : rep.clouds) rep.hausdorff_to_final.push_back(hausdorff(c, rep.clouds.back(), dist));
    return rep;
}

double cocycle_residual(const CocycleAdapter& adapter, const WienerPath& omega, double s, double r, double t,
                        const EmpiricalMeasure& mu, const std::vector<State>& states) {
    if (!(s <= r && r <= t)) throw DomainError("cocycle residual needs s <= r <= t");
    const auto direct = adapter.advance(s, t, omega, mu, states);
    const auto first = adapter.advance(s, r, omega, mu, states);
    const auto second = adapter.advance(r, t, omega, first.mu, first.states);
    double worst = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i)
        worst = std::max(worst, adapter.distance(direct.states[i], second.states[i]));
    return worst + adapter.distance(direct.mu, second.mu);
}

std::string to_string(Status s) {
    switch (s) {
        case Status::pass: return "PASS";
        case Status::fail: return "FAIL";
        case Status::inconclusive: return "INCONCLUSIVE";
    }
    return "INCONCLUSIVE";
}

MeasureAttractorEstimate measure_attractor_estimate(
    const std::function<EmpiricalMeasure(const EmpiricalMeasure&, double t)>& step,
    std::span<const EmpiricalMeasure> seeds, double tol, double interval, double t_max,
    const std::function<double(const EmpiricalMeasure&, const EmpiricalMeasure&)>& dist) {
    if (seeds.empty()) throw DomainError("measure attractor estimate needs seeds");
    if (!(interval > 0.0) || !(t_max >= interval)) throw DomainError("invalid checkpoint schedule");
    auto d = [&](const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
        return dist ? dist(a, b) : wasserstein(a, b, 2.0);
    };
    MeasureAttractorEstimate est;
    est.measures.assign(seeds.begin(), seeds.end());
    int below = 0;
    const int checkpoints = static_cast<int>(std::floor(t_max / interval + 1e-9));
    for (int k = 1; k <= checkpoints; ++k) {
        const double t0 = (k - 1) * interval;
        std::vector<EmpiricalMeasure> next(est.measures.size());
        parallel_for(next.size(), [&](std::size_t j) { next[j] = step(est.measures[j], t0); });
        double inc = 0.0;
        for (std::size_t j = 0; j < next.size(); ++j) inc = std::max(inc, d(next[j], est.measures[j]));
        est.measures = std::move(next);
        est.times.push_back(k * interval);
        est.max_increment.push_back(inc);
        below = inc < tol ? below + 1 : 0;
        if (below >= 3) {
            est.status = Status::pass;
            est.converged_at = k * interval;
            break;
        }
    }
    for (std::size_t i = 0; i < est.measures.size(); ++i)
        for (std::size_t j = i + 1; j < est.measures.size(); ++j)
            est.spread = std::max(est.spread, d(est.measures[i], est.measures[j]));
    return est;
}

bool nonincreasing_tail(std::span<const double> v, std::size_t count) {
    if (v.empty()) return true;
    const std::size_t start = v.size() > count ? v.size() - count : 0;
    for (std::size_t i = start + 1; i < v.size(); ++i)
        if (v[i] > v[i - 1]) return false;
    return true;
}

SingletonResult singleton_test(std::span<const double> diameters, double threshold) {
    SingletonResult r;
    if (diameters.empty()) return r;
    r.margin = threshold - diameters.back();
    r.eventually_decreasing = nonincreasing_tail(diameters, (diameters.size() + 1) / 2);
    r.singleton = diameters.back() < threshold && r.eventually_decreasing;
    return r;
}

SingletonResult singleton_test(const PullbackReport& report, double threshold) {
    return singleton_test(report.diameters, threshold);
}

}  // namespace mvlab::attractor
