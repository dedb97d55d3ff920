#include "mvlab/conjugation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "mvlab/errors.hpp"
#include "mvlab/grid.hpp"

namespace mvlab::conj {

namespace odeint = boost::numeric::odeint;

namespace {

constexpr std::size_t kMaxCacheEntries = 1u << 21;

std::string cache_key(CSpan z, CSpan x) {
    std::string key((z.size() + x.size()) * sizeof(double), '\0');
    std::memcpy(key.data(), z.data(), z.size() * sizeof(double));
    std::memcpy(key.data() + z.size() * sizeof(double), x.data(), x.size() * sizeof(double));
    return key;
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_matrix(const Vec& a,
                                                                                                       int d) {
    return {a.data(), d, d};
}

}  // namespace

ConjugationSolver::ConjugationSolver(const sode::SodeModel& model, double z_tolerance)
    : model_(model), tol_(z_tolerance) {
    if (!model_.diffusion || !model_.diffusion_jacobian || !model_.drift)
        throw CapabilityError("conjugation needs drift, diffusion and diffusion_jacobian");
    if (!(z_tolerance > 0.0)) throw DomainError("z tolerance must be positive");
}

ConjugationSolver::Result ConjugationSolver::integrate_ray(CSpan z, CSpan x) const {
    const int d = model_.d, m = model_.m;
    const std::size_t dd = static_cast<std::size_t>(d) * d;
    Vec state(static_cast<std::size_t>(d) + dd, 0.0);
    std::copy(x.begin(), x.end(), state.begin());
    for (int k = 0; k < d; ++k) state[d + static_cast<std::size_t>(k) * d + k] = 1.0;

    bool zero = std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; });
    if (!zero) {
        Vec sig(static_cast<std::size_t>(d) * m), dsig(sig.size() * d);
        auto system = [&](const Vec& y, Vec& dy, double) {
            model_.diffusion(CSpan(y.data(), d), sig);
            model_.diffusion_jacobian(CSpan(y.data(), d), dsig);
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int i = 0; i < m; ++i) acc += sig[static_cast<std::size_t>(j) * m + i] * z[i];
                dy[j] = acc;
            }
            // J' = (sum_i z_i d sigma_i) J
            for (int j = 0; j < d; ++j)
                for (int c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (int k = 0; k < d; ++k) {
                        double a = 0.0;
                        for (int i = 0; i < m; ++i) a += z[i] * dsig[(static_cast<std::size_t>(j) * m + i) * d + k];
                        acc += a * y[d + static_cast<std::size_t>(k) * d + c];
                    }
                    dy[d + static_cast<std::size_t>(j) * d + c] = acc;
                }
        };
        odeint::integrate_adaptive(odeint::make_controlled(tol_, tol_, odeint::runge_kutta_dopri5<Vec>()), system,
                                   state, 0.0, 1.0, 0.05);
    }
    Result r;
    r.u.assign(state.begin(), state.begin() + d);
    r.du.assign(state.begin() + d, state.end());
    return r;
}

ConjugationSolver::Result ConjugationSolver::integrate_coordinatewise(CSpan z, CSpan x, bool reversed) const {
    const int d = model_.d, m = model_.m;
    Result acc;
    acc.u.assign(x.begin(), x.end());
    acc.du.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int k = 0; k < d; ++k) acc.du[static_cast<std::size_t>(k) * d + k] = 1.0;
    for (int step = 0; step < m; ++step) {
        const int i = reversed ? m - 1 - step : step;
        Vec zi(static_cast<std::size_t>(m), 0.0);
        zi[i] = z[i];
        Result r = integrate_ray(zi, acc.u);
        const Eigen::MatrixXd J = as_matrix(r.du, d) * as_matrix(acc.du, d);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) r.du[static_cast<std::size_t>(a) * d + b] = J(a, b);
        acc = std::move(r);
    }
    return acc;
}

ConjugationSolver::Result ConjugationSolver::solve_u(CSpan z, CSpan x) const {
    if (static_cast<int>(z.size()) != model_.m || static_cast<int>(x.size()) != model_.d)
        throw DomainError("solve_u: dimension mismatch");
    const std::string key = cache_key(z, x);
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++hits_;
            return it->second;
        }
    }
    Result r = integrate_ray(z, x);
    const int d = model_.d;

    bool spot_check = false;
    if (model_.m > 1) {
        std::lock_guard lock(mutex_);
        spot_check = commutativity_checks_ < 16;
        if (spot_check) ++commutativity_checks_;
    }
    if (spot_check) {
        const Result a = integrate_coordinatewise(z, x, false);
        const Result b = integrate_coordinatewise(z, x, true);
        for (int k = 0; k < d; ++k)
            if (std::abs(a.u[k] - b.u[k]) > 1e-8 * (1.0 + std::abs(a.u[k])))
                throw CommutativityError("diffusion fields do not commute: integration order changes u(z, x)");
    }

    const double det = as_matrix(r.du, d).determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-300)
        throw DiffeomorphismError("d_x u is singular at the evaluated point");

    std::lock_guard lock(mutex_);
    if (cache_.size() >= kMaxCacheEntries) cache_.clear();
    cache_.emplace(key, r);
    return r;
}

std::size_t ConjugationSolver::cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

std::size_t ConjugationSolver::cache_hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
}

void ConjugationSolver::clear_cache() const {
    std::lock_guard lock(mutex_);
    cache_.clear();
    hits_ = 0;
}

Vec ConjugationSolver::conjugate(const OUPath& z, double t, CSpan x) const {
    return solve_u(z.value(z.index_of(t)), x).u;
}

Vec ConjugationSolver::conjugate_inverse(const OUPath& z, double t, CSpan y) const {
    return invert(z.value(z.index_of(t)), y);
}

Vec ConjugationSolver::invert(CSpan z, CSpan y) const {
    const int d = model_.d;
    // The reversed flow u(-z, .) is the analytic inverse; Newton only polishes it.
    Vec zneg(z.begin(), z.end());
    for (double& v : zneg) v = -v;
    Vec x = solve_u(zneg, y).u;
    double scale = 1.0;
    for (double v : y) scale = std::max(scale, std::abs(v));
    constexpr int kMaxIterations = 50;
    double res_norm = 0.0;
    for (int it = 0; it < kMaxIterations; ++it) {
        const Result r = solve_u(z, x);
        Eigen::VectorXd res(d);
        for (int k = 0; k < d; ++k) res[k] = r.u[k] - y[k];
        res_norm = res.norm();
        if (res_norm <= 1e-13 * scale) return x;
        const Eigen::VectorXd step = as_matrix(r.du, d).partialPivLu().solve(res);
        double damping = 1.0;
        for (int ls = 0; ls < 30; ++ls, damping *= 0.5) {
            Vec trial = x;
            for (int k = 0; k < d; ++k) trial[k] -= damping * step[k];
            const Result rt = solve_u(z, trial);
            double n2 = 0.0;
            for (int k = 0; k < d; ++k) n2 += (rt.u[k] - y[k]) * (rt.u[k] - y[k]);
            if (std::sqrt(n2) < res_norm || ls == 29) {
                x = std::move(trial);
                break;
            }
        }
    }
    if (res_norm <= 1e-9 * scale) return x;
    throw InversionError("Newton inversion of u(z, .) did not converge (residual " + std::to_string(res_norm) + ")");
}

Vec ConjugationSolver::rhs(CSpan z, CSpan x, CSpan law, double eta) const {
    const int d = model_.d, m = model_.m;
    const Result r = solve_u(z, x);
    Vec b(static_cast<std::size_t>(d)), sig(static_cast<std::size_t>(d) * m);
    model_.drift(r.u, law, b);
    model_.diffusion(r.u, sig);
    Eigen::VectorXd v(d);
    for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += sig[static_cast<std::size_t>(j) * m + i] * z[i];
        v[j] = b[j] + eta * acc;
    }
    if (d == 1) return Vec{v[0] / r.du[0]};
    const Eigen::VectorXd g = as_matrix(r.du, d).partialPivLu().solve(v);
    return Vec(g.data(), g.data() + d);
}

Vec ConjugationSolver::random_ode_rhs(const OUPath& z, double t, CSpan x, CSpan law) const {
    return rhs(z.value(z.index_of(t)), x, law, z.eta());
}

std::vector<Vec> integrate_chi(const ConjugationSolver& solver, const OUPath& z, const sode::LawPath& law, CSpan x0,
                               std::span<const double> t_grid, double guard) {
    if (t_grid.empty()) throw DomainError("time grid is empty");
    const int d = solver.model().d;
    const double dt = z.dt(), eta = z.eta();
    std::vector<std::int64_t> idx;
    for (double t : t_grid) idx.push_back(z.index_of(t));
    Vec x(x0.begin(), x0.end()), tmp(static_cast<std::size_t>(d));
    std::vector<Vec> out;
    std::size_t next = 0;
    auto record = [&](std::int64_t i) {
        while (next < idx.size() && idx[next] == i) {
            out.push_back(x);
            ++next;
        }
    };
    for (std::int64_t i = idx.front(); i < idx.back(); ++i) {
        record(i);
        const CSpan zi = z.value(i);
        const CSpan li = law.at(i);
        const Vec k1 = solver.rhs(zi, x, li, eta);
        for (int k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * dt * k1[k];
        const Vec k2 = solver.rhs(zi, tmp, li, eta);
        for (int k = 0; k < d; ++k) tmp[k] = x[k] + 0.5 * dt * k2[k];
        const Vec k3 = solver.rhs(zi, tmp, li, eta);
        for (int k = 0; k < d; ++k) tmp[k] = x[k] + dt * k3[k];
        const Vec k4 = solver.rhs(zi, tmp, li, eta);
        double r2 = 0.0;
        for (int k = 0; k < d; ++k) {
            x[k] += dt / 6.0 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
            r2 += x[k] * x[k];
        }
        if (!std::isfinite(r2) || r2 > guard * guard) throw SimulationDiverged("random ODE left the guard radius", z.time(i + 1));
    }
    record(idx.back());
    return out;
}

ConjugacyReport conjugacy_residual(const ConjugationSolver& solver, const WienerPath& path, double eta,
                                   const EmpiricalMeasure& mu0, CSpan x0, double t_end, int n_report) {
    if (n_report < 1) throw DomainError("n_report must be >= 1");
    const auto times = grid::linspace(0.0, t_end, n_report);
    const auto& model = solver.model();
    const double flow_grid[] = {0.0, t_end};
    const auto flow = sode::simulate_measure_flow(model, mu0, path, flow_grid);

    sode::FrozenFlowOptions heun;
    heun.scheme = sode::Scheme::heun_stratonovich;
    const auto X = sode::simulate_frozen_law_flow(model, x0, flow.law, path, times, heun);

    const OUPath z = ou_path(path, eta);
    const Vec chi0 = solver.conjugate_inverse(z, 0.0, x0);
    const auto chi = integrate_chi(solver, z, flow.law, chi0, times);

    ConjugacyReport rep;
    rep.times = times;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const Vec y = solver.conjugate(z, times[k], chi[k]);
        double r2 = 0.0;
        for (int j = 0; j < model.d; ++j) r2 += (y[j] - X[k][j]) * (y[j] - X[k][j]);
        rep.z.push_back(z.value(z.index_of(times[k]), 0));
        rep.residual.push_back(std::sqrt(r2));
        rep.max_residual = std::max(rep.max_residual, rep.residual.back());
    }
    rep.terminal = rep.residual.back();
    return rep;
}

void gauss_hermite_rule(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw DomainError("Gauss-Hermite needs n >= 1");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    nodes.resize(static_cast<std::size_t>(n));
    weights.resize(static_cast<std::size_t>(n));
    const double mass = std::sqrt(std::numbers::pi);
    for (int k = 0; k < n; ++k) {
        nodes[k] = es.eigenvalues()[k];
        const double v0 = es.eigenvectors()(0, k);
        weights[k] = mass * v0 * v0;
    }
}

double gauss_hermite_expectation(const std::function<double(CSpan)>& f, int m, double var, int n) {
    if (m < 1) throw DomainError("Gauss-Hermite expectation needs m >= 1");
    std::vector<double> x, w;
    gauss_hermite_rule(n, x, w);
    const double scale = std::sqrt(2.0 * var);
    const double norm = std::pow(std::numbers::pi, -0.5 * m);
    std::vector<int> digit(static_cast<std::size_t>(m), 0);
    Vec z(static_cast<std::size_t>(m));
    double acc = 0.0;
    while (true) {
        double weight = norm;
        for (int i = 0; i < m; ++i) {
            z[i] = scale * x[digit[i]];
            weight *= w[digit[i]];
        }
        acc += weight * f(z);
        int i = 0;
        while (i < m && ++digit[i] == n) digit[i++] = 0;
        if (i == m) break;
    }
    return acc;
}

BirkhoffResult birkhoff_average(const std::function<double(CSpan)>& K, const OUPath& z, double T_horizon) {
    if (!(T_horizon > 0.0)) throw DomainError("birkhoff horizon must be positive");
    const std::int64_t i0 = z.index_of(-T_horizon);
    if (i0 < z.i_min() || 0 > z.i_max()) throw DomainError("OU path does not cover [-T, 0]");
    const std::int64_t n = -i0;
    if (n < 1) throw DomainError("birkhoff horizon shorter than one grid step");
    std::vector<double> k(static_cast<std::size_t>(n + 1));
    for (std::int64_t i = i0; i <= 0; ++i) k[static_cast<std::size_t>(i - i0)] = K(z.value(i));

    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
        const double w = (j == 0 || j + 1 == k.size()) ? 0.5 : 1.0;
        num += w * k[j];
        den += w;
    }
    BirkhoffResult r;
    r.time_average = num / den;

    constexpr int kBatches = 20;
    if (n >= 2 * kBatches) {
        double s = 0.0, s2 = 0.0;
        for (int b = 0; b < kBatches; ++b) {
            const std::size_t lo = static_cast<std::size_t>(n * b / kBatches);
            const std::size_t hi = static_cast<std::size_t>(n * (b + 1) / kBatches);
            double m = 0.0;
            for (std::size_t j = lo; j < hi; ++j) m += k[j];
            m /= static_cast<double>(hi - lo);
            s += m;
            s2 += m * m;
        }
        const double mean = s / kBatches;
        r.standard_error = std::sqrt(std::max(0.0, (s2 / kBatches - mean * mean) / (kBatches - 1)));
    }
    r.gaussian_expectation = gauss_hermite_expectation(K, z.dim(), 1.0 / (2.0 * z.eta()), z.dim() == 1 ? 64 : 16);
    return r;
}

RadiusResult random_radius(const std::function<double(CSpan)>& K, const std::function<double(CSpan)>& L,
                           const OUPath& z, double T_trunc) {
    if (!(T_trunc > 0.0)) throw DomainError("truncation horizon must be positive");
    const std::int64_t i0 = z.index_of(-T_trunc);
    if (i0 < z.i_min() || 0 > z.i_max()) throw DomainError("OU path does not cover [-T, 0]");
    const double dt = z.dt();
    double integral_K = 0.0, k_prev = K(z.value(0)), l_prev = L(z.value(0));
    double f_prev = l_prev, gamma = 0.0, sum_k = 0.5 * k_prev, sum_l = 0.5 * l_prev;
    for (std::int64_t i = -1; i >= i0; --i) {
        const double k = K(z.value(i)), l = L(z.value(i));
        integral_K += 0.5 * dt * (k + k_prev);
        const double f = std::exp(integral_K) * l;
        gamma += 0.5 * dt * (f + f_prev);
        const double w = (i == i0) ? 0.5 : 1.0;
        sum_k += w * k;
        sum_l += w * l;
        k_prev = k;
        f_prev = f;
    }
    const double n = static_cast<double>(-i0);
    RadiusResult r;
    r.gamma = gamma;
    r.birkhoff_K = sum_k / n;
    const double mean_L = sum_l / n;
    r.convergent = r.birkhoff_K < 0.0;
    r.tail_bound = r.convergent ? std::exp(integral_K) * mean_L / -r.birkhoff_K
                                : std::numeric_limits<double>::infinity();
    return r;
}

double example_K1(CSpan z) {
    const double a = std::abs(z[0]);
    return std::exp(a) * (a + 1.0);
}

double example_K2(CSpan z) {
    const double a = std::abs(z[0]);
    return a == 0.0 ? 1.0 : std::expm1(6.0 * a);
}

std::vector<DissipativityEntry> dissipativity_scan(const WienerPath& base, std::span<const double> etas,
                                                   std::span<const double> deltas, double alpha, double T_horizon) {
    std::vector<DissipativityEntry> out;
    for (double eta : etas) {
        const OUPath z = ou_path(base, eta);
        for (double delta : deltas) {
            auto kbar = [&](CSpan v) { return delta * eta * example_K1(v) + example_K2(v) - alpha; };
            const auto b = birkhoff_average(kbar, z, T_horizon);
            out.push_back({eta, delta, b.time_average, b.gaussian_expectation});
        }
    }
    return out;
}

}  // namespace mvlab::conj
