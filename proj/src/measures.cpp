#include "mvlab/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <tuple>

#include "mvlab/errors.hpp"

namespace mvlab {

namespace {

void validate(int dim, const std::vector<double>& particles, const std::vector<double>& weights) {
    if (dim < 1) throw DomainError("EmpiricalMeasure: dim must be >= 1");
    if (weights.empty()) throw DomainError("EmpiricalMeasure: needs at least one particle");
    if (particles.size() != weights.size() * static_cast<std::size_t>(dim))
        throw DomainError("EmpiricalMeasure: particle array does not match weights and dimension");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw DomainError("EmpiricalMeasure: negative or NaN weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw DomainError("EmpiricalMeasure: weights must sum to 1");
}

double dist_pow(std::span<const double> x, std::span<const double> y, double p) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    if (p == 2.0) return s;
    return std::pow(std::sqrt(s), p);
}

double root(double cost, double p) {
    cost = std::max(cost, 0.0);
    return p == 2.0 ? std::sqrt(cost) : std::pow(cost, 1.0 / p);
}

WassersteinResult unique_coupling(const EmpiricalMeasure& atom, const EmpiricalMeasure& other, double p) {
    double cost = 0.0;
    for (std::size_t i = 0; i < other.size(); ++i) cost += other.weight(i) * dist_pow(other.particle(i), atom.particle(0), p);
    return {root(cost, p), WassersteinBackend::unique_coupling, 0.0, 0};
}

WassersteinResult quantile_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    auto order = [](const EmpiricalMeasure& m) {
        std::vector<std::size_t> idx(m.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return m.particles()[a] < m.particles()[b];
        });
        return idx;
    };
    const auto ia = order(mu);
    const auto ib = order(nu);
    std::size_t i = 0, j = 0;
    double ra = mu.weight(ia[0]);
    double rb = nu.weight(ib[0]);
    double cost = 0.0;
    while (i < ia.size() && j < ib.size()) {
        const double m = std::min(ra, rb);
        const double d = std::abs(mu.particles()[ia[i]] - nu.particles()[ib[j]]);
        cost += m * (p == 2.0 ? d * d : std::pow(d, p));
        ra -= m;
        rb -= m;
        // Advance whichever side is exhausted; ties advance both.
        if (ra <= 1e-15) {
            if (++i < ia.size()) ra = mu.weight(ia[i]);
        }
        if (rb <= 1e-15) {
            if (++j < ib.size()) rb = nu.weight(ib[j]);
        }
    }
    return {root(cost, p), WassersteinBackend::quantile_1d, 0.0, 0};
}

std::vector<double> cost_matrix(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    std::vector<double> c(mu.size() * nu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
        for (std::size_t j = 0; j < nu.size(); ++j) c[i * nu.size() + j] = dist_pow(mu.particle(i), nu.particle(j), p);
    return c;
}

// Uniform clouds of sizes n and m are replicated to lcm(n, m) atoms each; an
// optimal permutation between the replicas is an optimal plan for the originals.
WassersteinResult assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    const std::size_t n = std::lcm(mu.size(), nu.size());
    const std::size_t rm = n / mu.size(), rn = n / nu.size();
    std::vector<double> c(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dist_pow(mu.particle(i / rm), nu.particle(j / rn), p);
    const auto match = solve_assignment(c, static_cast<int>(n));
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) cost += c[i * n + static_cast<std::size_t>(match[i])];
    return {root(cost / static_cast<double>(n), p), WassersteinBackend::assignment, 0.0, 0};
}

struct SinkhornOutput {
    double value = 0.0;
    int iterations = 0;
};

double log_sum_exp(const double* v, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[k]);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k] - mx);
    return mx + std::log(s);
}

// Log-domain Sinkhorn with epsilon annealing. Returns the entropic OT value <a,f> + <b,g>.
SinkhornOutput sinkhorn(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& c,
                        double eps_target) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<double> la(n), lb(m), f(n, 0.0), g(m, 0.0), buf(std::max(n, m));
    for (std::size_t i = 0; i < n; ++i) la[i] = a[i] > 0 ? std::log(a[i]) : -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) lb[j] = b[j] > 0 ? std::log(b[j]) : -std::numeric_limits<double>::infinity();
    const double cmax = *std::max_element(c.begin(), c.end());

    auto update_f = [&](double eps) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) buf[j] = lb[j] + (g[j] - c[i * m + j]) / eps;
            f[i] = -eps * log_sum_exp(buf.data(), m);
        }
    };
    auto update_g = [&](double eps) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = la[i] + (f[i] - c[i * m + j]) / eps;
            g[j] = -eps * log_sum_exp(buf.data(), n);
        }
    };
    auto row_error = [&](double eps) {
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) buf[j] = lb[j] + (f[i] + g[j] - c[i * m + j]) / eps;
            err += std::abs(a[i] * (std::exp(log_sum_exp(buf.data(), m)) - 1.0));
        }
        return err;
    };

    int iters = 0;
    double eps = std::max(cmax, eps_target);
    while (eps > eps_target) {
        for (int k = 0; k < 3; ++k, ++iters) {
            update_f(eps);
            update_g(eps);
        }
        eps = std::max(eps * 0.5, eps_target);
    }
    constexpr int kMaxIterations = 4000;
    for (int k = 0; k < kMaxIterations; ++k, ++iters) {
        update_f(eps_target);
        update_g(eps_target);
        if (k % 10 == 9 && row_error(eps_target) < 1e-9) break;
    }
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i) value += a[i] * f[i];
    for (std::size_t j = 0; j < m; ++j) value += b[j] * g[j];
    return {value, iters};
}

WassersteinResult entropic(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    const auto cxy = cost_matrix(mu, nu, p);
    std::vector<double> scratch = cxy;
    auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
    std::nth_element(scratch.begin(), mid, scratch.end());
    double scale = *mid;
    if (!(scale > 0.0)) scale = *std::max_element(cxy.begin(), cxy.end());
    if (!(scale > 0.0)) return {0.0, WassersteinBackend::entropic, 0.0, 0};
    const double eps = 1e-3 * scale;

    const auto sxy = sinkhorn(mu.weights(), nu.weights(), cxy, eps);
    const auto sxx = sinkhorn(mu.weights(), mu.weights(), cost_matrix(mu, mu, p), eps);
    const auto syy = sinkhorn(nu.weights(), nu.weights(), cost_matrix(nu, nu, p), eps);
    const double divergence = sxy.value - 0.5 * (sxx.value + syy.value);
    return {root(divergence, p), WassersteinBackend::entropic, eps, sxy.iterations + sxx.iterations + syy.iterations};
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(int dim, std::vector<double> particles)
    : dim_(dim), particles_(std::move(particles)) {
    if (dim < 1) throw DomainError("EmpiricalMeasure: dim must be >= 1");
    const std::size_t n = particles_.size() / static_cast<std::size_t>(dim);
    weights_.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    validate(dim_, particles_, weights_);
    uniform_ = true;
}

EmpiricalMeasure::EmpiricalMeasure(int dim, std::vector<double> particles, std::vector<double> weights)
    : dim_(dim), particles_(std::move(particles)), weights_(std::move(weights)) {
    validate(dim_, particles_, weights_);
    uniform_ = std::all_of(weights_.begin(), weights_.end(), [&](double w) { return w == weights_.front(); });
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::span<const double> point) {
    return EmpiricalMeasure(static_cast<int>(point.size()), std::vector<double>(point.begin(), point.end()));
}

EmpiricalMeasure EmpiricalMeasure::normalized(int dim, std::vector<double> particles, std::vector<double> weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw DomainError("EmpiricalMeasure: negative or NaN weight");
        sum += w;
    }
    if (!(sum > 0.0)) throw DomainError("EmpiricalMeasure: total mass must be positive");
    for (double& w : weights) w /= sum;
    // Renormalize once more so the sum lands inside the 1e-12 band.
    double s2 = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= s2;
    return EmpiricalMeasure(dim, std::move(particles), std::move(weights));
}

double moment(const EmpiricalMeasure& mu, double p) {
    if (!(p >= 1.0)) throw DomainError("moment: p must be >= 1");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double r2 = 0.0;
        for (double v : mu.particle(i)) r2 += v * v;
        s += mu.weight(i) * (p == 2.0 ? r2 : std::pow(std::sqrt(r2), p));
    }
    return s;
}

std::vector<double> mean(const EmpiricalMeasure& mu) {
    std::vector<double> m(static_cast<std::size_t>(mu.dim()), 0.0);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto x = mu.particle(i);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] += mu.weight(i) * x[k];
    }
    return m;
}

double second_moment(const EmpiricalMeasure& mu) { return moment(mu, 2.0); }

EmpiricalMeasure scaled(const EmpiricalMeasure& mu, double s) {
    std::vector<double> x = mu.particles();
    for (double& v : x) v *= s;
    return EmpiricalMeasure(mu.dim(), std::move(x), mu.weights());
}

std::string to_string(WassersteinBackend b) {
    switch (b) {
        case WassersteinBackend::unique_coupling: return "unique_coupling";
        case WassersteinBackend::quantile_1d: return "quantile_1d";
        case WassersteinBackend::assignment: return "assignment";
        case WassersteinBackend::entropic: return "entropic";
    }
    return "unknown";
}

WassersteinBackend select_backend(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.dim() == 1) return WassersteinBackend::quantile_1d;
    if (mu.size() == 1 || nu.size() == 1) return WassersteinBackend::unique_coupling;
    if (mu.uniform() && nu.uniform() && mu.size() == nu.size() && mu.size() <= kAssignmentMaxSize)
        return WassersteinBackend::assignment;
    return WassersteinBackend::entropic;
}

WassersteinResult wasserstein_detailed(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p,
                                       std::optional<WassersteinBackend> force) {
    if (mu.dim() != nu.dim()) throw DomainError("wasserstein: dimension mismatch");
    if (!(p >= 1.0)) throw DomainError("wasserstein: p must be >= 1");
    // Evaluate in a canonical argument order so the result is exactly symmetric.
    const bool swap = std::forward_as_tuple(nu.size(), nu.particles(), nu.weights()) <
                      std::forward_as_tuple(mu.size(), mu.particles(), mu.weights());
    if (swap) return wasserstein_detailed(nu, mu, p, force);
    const WassersteinBackend backend = force.value_or(select_backend(mu, nu));
    switch (backend) {
        case WassersteinBackend::unique_coupling:
            if (mu.size() == 1) return unique_coupling(mu, nu, p);
            if (nu.size() == 1) return unique_coupling(nu, mu, p);
            throw DomainError("wasserstein: unique coupling needs a single-atom measure");
        case WassersteinBackend::quantile_1d:
            if (mu.dim() != 1) throw DomainError("wasserstein: quantile backend is one-dimensional");
            return quantile_1d(mu, nu, p);
        case WassersteinBackend::assignment:
            if (!(mu.uniform() && nu.uniform()))
                throw DomainError("wasserstein: assignment backend needs uniform clouds");
            if (std::lcm(mu.size(), nu.size()) > kReplicatedAssignmentMaxSize)
                throw DomainError("wasserstein: clouds too large for the assignment backend");
            return assignment(mu, nu, p);
        case WassersteinBackend::entropic:
            return entropic(mu, nu, p);
    }
    throw DomainError("wasserstein: unknown backend");
}

std::vector<int> solve_assignment(std::span<const double> cost, int n) {
    // Shortest augmenting path (Hungarian) with potentials, O(n^3).
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            const double* row = cost.data() + static_cast<std::size_t>(i0 - 1) * n;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = row[j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> match(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) match[static_cast<std::size_t>(p[j] - 1)] = j - 1;
    return match;
}

void write_csv(std::ostream& out, const EmpiricalMeasure& mu) {
    out << "weight";
    for (int k = 1; k <= mu.dim(); ++k) out << ",x_" << k;
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        out << mu.weight(i);
        for (double v : mu.particle(i)) out << ',' << v;
        out << '\n';
    }
}

}  // namespace mvlab
