#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvlab/mv_sode.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::conj {

using sode::CSpan;
using sode::Vec;

/// u(z, x) solving du/dz_i = sigma_i(u), u(0, x) = x, together with d_x u.
///
/// Integration runs along the ray s -> s z with adaptive Dormand-Prince
/// stepping; results are cached on the exact (z, x) bit patterns.
class ConjugationSolver {
public:
    struct Result {
        Vec u;   ///< d
        Vec du;  ///< d x d, row-major
    };

    explicit ConjugationSolver(const sode::SodeModel& model, double z_tolerance = 1e-10);

    Result solve_u(CSpan z, CSpan x) const;

    /// T_t(omega) x = u(z(t), x).
    Vec conjugate(const OUPath& z, double t, CSpan x) const;
    /// T_t(omega)^{-1} y.
    Vec conjugate_inverse(const OUPath& z, double t, CSpan y) const;
    /// Inverse of x -> u(z, x).
    Vec invert(CSpan z, CSpan y) const;

    /// g = (d_x u)^{-1} [b(u, law) + eta sum_i sigma_i(u) z_i].
    Vec rhs(CSpan z, CSpan x, CSpan law, double eta) const;
    /// rhs at z = z(t) with eta taken from the OU path.
    Vec random_ode_rhs(const OUPath& z, double t, CSpan x, CSpan law) const;

    const sode::SodeModel& model() const noexcept { return model_; }
    std::size_t cache_size() const;
    std::size_t cache_hits() const;
    void clear_cache() const;

private:
    Result integrate_ray(CSpan z, CSpan x) const;
    Result integrate_coordinatewise(CSpan z, CSpan x, bool reversed) const;

    sode::SodeModel model_;
    double tol_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, Result> cache_;
    mutable std::size_t hits_ = 0;
    mutable int commutativity_checks_ = 0;
};

/// chi_t(omega, x0) at every time of t_grid: classical RK4 on the random ODE with
/// z frozen at the left grid node and the law features at the left node.
std::vector<Vec> integrate_chi(const ConjugationSolver& solver, const OUPath& z, const sode::LawPath& law,
                               CSpan x0, std::span<const double> t_grid, double guard = 1e8);

struct ConjugacyReport {
    std::vector<double> times;
    std::vector<double> z;          ///< first OU coordinate at each time
    std::vector<double> residual;   ///< ||T(theta_t omega) chi_t - X_t||
    double terminal = 0.0;
    double max_residual = 0.0;
};

/// Compares the SDE solution X (stochastic Heun on the Stratonovich form) with
/// T(theta_t omega) chi_t(omega, T(omega)^{-1} x0) on a common omega.
/// The law is the measure flow of mu0 on the same grid.
ConjugacyReport conjugacy_residual(const ConjugationSolver& solver, const WienerPath& path, double eta,
                                   const EmpiricalMeasure& mu0, CSpan x0, double t_end, int n_report = 10);

struct BirkhoffResult {
    double time_average = 0.0;
    double gaussian_expectation = 0.0;  ///< int K dN(0, I/(2 eta)) by Gauss-Hermite
    double standard_error = 0.0;        ///< batch-means error of the time average
};

/// (1/T) int_{-T}^0 K(z(r)) dr by the trapezoid rule.
BirkhoffResult birkhoff_average(const std::function<double(CSpan)>& K, const OUPath& z, double T_horizon);

/// E[f(Z)] for Z ~ N(0, var I_m) by tensor Gauss-Hermite with n nodes per axis.
double gauss_hermite_expectation(const std::function<double(CSpan)>& f, int m, double var, int n = 40);

/// Nodes and weights of the n-point physicists' Gauss-Hermite rule (Golub-Welsch).
void gauss_hermite_rule(int n, std::vector<double>& nodes, std::vector<double>& weights);

struct RadiusResult {
    double gamma = 0.0;
    double birkhoff_K = 0.0;  ///< time average of K over the window
    double tail_bound = 0.0;  ///< estimate of the neglected integral beyond -T_trunc
    bool convergent = true;   ///< false when the Birkhoff average of K is nonnegative
};

/// gamma(omega) = int_{-T}^0 exp(int_r^0 K(z(u)) du) L(z(r)) dr, accumulated backward from 0.
RadiusResult random_radius(const std::function<double(CSpan)>& K, const std::function<double(CSpan)>& L,
                           const OUPath& z, double T_trunc);

/// K_1(z) = e^{|z|}(|z| + 1) and K_2(z) = e^{6|z|} - 1 (K_2(0) = 1) of the worked example.
double example_K1(CSpan z);
double example_K2(CSpan z);

struct DissipativityEntry {
    double eta = 0.0;
    double delta = 0.0;
    double time_average = 0.0;          ///< Birkhoff average of delta eta K_1 + K_2 - alpha
    double gaussian_expectation = 0.0;  ///< same functional under the stationary law
};

/// Scans (eta, delta) for the worked example; one OU path per eta, built from `base`.
std::vector<DissipativityEntry> dissipativity_scan(const WienerPath& base, std::span<const double> etas,
                                                   std::span<const double> deltas, double alpha, double T_horizon);

}  // namespace mvlab::conj
