#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mvlab/attractor.hpp"
#include "mvlab/measures.hpp"
#include "mvlab/mv_sode.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::rd {

/// Coefficients a_1..a_K of u = sum_k a_k e_k, e_k(x) = sqrt(2/pi) sin(k x) on (0, pi).
using SpectralField = std::vector<double>;

/// McKean-Vlasov reaction-diffusion system with Stokes drag on (0, pi), Dirichlet boundary.
///
/// dX = (Laplacian X + c0 (X - mean(L_Y))) dt + dW, W = sum_k q_k beta_k e_k.
struct RdConfig {
    int k_modes = 16;
    double c0 = 0.1;
    double noise_decay = 2.0;  ///< q_k = k^{-noise_decay}
    bool noise = true;
    double dt = 1e-3;
    int n_particles = 2048;
    int n_omega = 256;
    std::vector<double> pullback_times{1.0, 2.0, 4.0, 8.0, 16.0};

    /// First Dirichlet eigenvalue of the Laplacian on (0, pi).
    double lambda_star() const noexcept { return 1.0; }
    /// Constant on W2^2 in the monotonicity bound of F.
    double C1() const noexcept { return c0; }
    /// Constant on the state term in the monotonicity bound of F.
    double C2() const noexcept { return 3.0 * c0; }
    /// 2 lambda* - C1 - C2.
    double contraction_rate() const noexcept { return 2.0 * lambda_star() - C1() - C2(); }
    /// Noise coefficient of mode k (1-based); 0 when noise is off.
    double q(int k) const;

    /// Throws ConfigurationError naming the offending key.
    void validate() const;
};

/// sum_k a_k^2 (H-norm squared by Parseval).
double h_norm_sq(std::span<const double> a);
/// sum_k (1 + k^2) a_k^2.
double v_norm_sq(std::span<const double> a);
/// Point value u(x).
double evaluate(std::span<const double> a, double x);

/// Per mode: -k^2 a_k + c0 (a_k - mean_k).
SpectralField rd_drift(const RdConfig& cfg, std::span<const double> a, std::span<const double> mean);
SpectralField rd_drift(const RdConfig& cfg, std::span<const double> a, const EmpiricalMeasure& mu);

/// Cloud of n particles representing mu: a single atom or a uniform cloud whose
/// size divides n is repeated; an n-particle cloud is returned unchanged.
EmpiricalMeasure replicate(const EmpiricalMeasure& mu, std::size_t n);

struct RdMeasureFlow {
    std::vector<double> times;
    std::vector<EmpiricalMeasure> snapshots;
    sode::LawPath law;  ///< mean coefficients at every grid step
};

/// Particle system for P*_t mu with the exponential Euler step
/// a_k <- e^{-k^2 dt} (a_k + dt c0 (a_k - mean_k) + q_k dbeta_k).
/// Particle i draws noise from path.stream_increment(particle_seed(path.seed(), i), k - 1, .).
RdMeasureFlow simulate_rd_measure_flow(const RdConfig& cfg, const EmpiricalMeasure& mu0, const WienerPath& path,
                                       std::span<const double> t_grid, double guard = 1e8);

/// X_{s,t}^{x,mu} driven by omega's own increments (or a particle stream), the
/// law given by its mean path; returns the state at each time of t_grid.
std::vector<SpectralField> simulate_rd_state_flow(const RdConfig& cfg, std::span<const double> x0,
                                                  const sode::LawPath& law, const WienerPath& omega,
                                                  std::span<const double> t_grid,
                                                  std::optional<std::uint64_t> noise_stream = std::nullopt,
                                                  double guard = 1e8);

/// Cocycle adapter; states are compared in the H-norm and measures by exact W2.
attractor::CocycleAdapter make_adapter(const RdConfig& cfg);

/// Exact W2 on coefficient clouds (assignment on replicated uniform clouds when
/// small enough, the automatic rule otherwise).
double h_wasserstein(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

struct ContractionResult {
    std::vector<double> times;
    std::vector<double> w2_sq;  ///< synchronous-coupling cost, an upper bound on W2^2
    double slope = 0.0;
    double intercept = 0.0;
    int fitted_points = 0;
    double bound = 0.0;  ///< -(2 lambda* - C1 - C2)
    double tolerance = 0.2;
    double margin = 0.0;  ///< bound + tolerance - slope
    attractor::Status status = attractor::Status::inconclusive;
};

/// Runs mu and nu on common particle streams (particles paired by an optimal
/// coupling of the initial clouds) and fits log w2_sq against t.
/// Points at or below `floor` end the fit; fewer than 3 points is inconclusive.
ContractionResult contraction_test(const RdConfig& cfg, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                   const WienerPath& path, std::span<const double> t_grid, double tolerance = 0.2,
                                   double floor = 1e-20);

struct XiEstimate {
    SpectralField xi;  ///< centroid of the terminal cloud
    double diameter = 0.0;
    attractor::PullbackReport report;
};

/// Pullback runs from -t_n to 0 on omega for every (state, measure) probe pair.
XiEstimate pullback_xi(const RdConfig& cfg, const WienerPath& omega, std::span<const double> pullback_times,
                       std::span<const SpectralField> probe_states, std::span<const EmpiricalMeasure> probe_measures);

struct RdProbes {
    std::vector<SpectralField> states;
    std::vector<EmpiricalMeasure> measures;
};

/// Five states (zero, +-2 e_1, two random fields) and three measures (delta_0,
/// delta_{e_1}, a Gaussian cloud), each measure with cfg.n_particles particles.
RdProbes default_probes(const RdConfig& cfg, std::uint64_t seed);

struct LawOfXiResult {
    EmpiricalMeasure xi_cloud;
    EmpiricalMeasure mu_inf;
    EmpiricalMeasure mu_inf_control;  ///< independent second estimate
    double horizon = 0.0;             ///< pullback horizon for xi and run length for mu_inf
    double distance = 0.0;            ///< W2(xi cloud, mu_inf)
    double control_distance = 0.0;    ///< W2(mu_inf, mu_inf_control)
    /// W2(first n_omega particles of mu_inf_control, mu_inf): the same comparison
    /// for a cloud of the ensemble's size drawn from the law itself.
    double null_distance = 0.0;
    double tolerance = 0.1;
    bool consistent = false;  ///< control_distance <= distance + 0.05
    attractor::Status status = attractor::Status::inconclusive;
};

/// xi(omega_i) = X_{-T,0}^{0,delta_0}(omega_i) for n_omega independent omegas
/// sharing one law run, compared with two independent long measure-flow runs.
LawOfXiResult law_of_xi_test(const RdConfig& cfg, int n_omega, std::uint64_t seed, double tolerance = 0.1);

}  // namespace mvlab::rd
