#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvlab/attractor.hpp"
#include "mvlab/measures.hpp"
#include "mvlab/mv_sode.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::ns {

using Complex = std::complex<double>;
/// Packed real coordinates of a divergence-free field (see NsSpace).
using State = std::vector<double>;

enum class ForceKind { none, stokes_drag, saturated_norm };
std::string to_string(ForceKind k);
/// Throws ConfigurationError (key "f_kind") on an unknown name.
ForceKind force_kind_from_string(const std::string& name);

/// McKean-Vlasov stochastic 2D Navier-Stokes system on the torus [0, 2 pi)^2:
///
/// dX = (A X + B(X, X) + F(X, L_Y)) dt + sum_i phi_i dW_i, A = nu_c Laplacian.
///
/// F is c0 (u - mean(mu)) for Stokes drag and h_amp tanh(int min(|v|, n_sat) dmu) u
/// for the saturated norm force.
struct NsConfig {
    int k_modes = 16;  ///< grid of 2 k_modes points per axis
    double nu_c = 1.0;
    int d_noise = 4;
    double eta = 4.0;
    ForceKind f_kind = ForceKind::stokes_drag;
    double c0 = 0.1;
    double h_amp = 0.1;
    double n_sat = 1.0;
    double p_moment = 6.0;
    double dt = 1e-2;
    int n_particles = 512;
    bool noise = true;
    bool nonlinear = true;
    double probe_radius = 4.0;
    std::vector<double> pullback_times{8.0, 16.0};

    /// floor(2 k_modes / 3): largest retained |k|_inf.
    int dealiased_modes() const noexcept { return 2 * k_modes / 3; }
    /// Poincare constant gamma^2 for zero-mean fields on the 2 pi torus.
    double gamma_sq() const noexcept { return 1.0; }
    /// Constants of 2 <F(u, mu), u> <= lambda1 |u|^2 + lambda2 mu(|.|^2) + C.
    double lambda1() const noexcept;
    double lambda2() const noexcept;
    /// (2 nu_c - lambda1') gamma^2 - lambda1 with lambda1' = 0.
    double lambda2_prime() const noexcept { return 2.0 * nu_c * gamma_sq() - lambda1(); }
    /// p (lambda2' - lambda2) / 2: supremum of admissible moment decay rates.
    double moment_rate_bound(double p) const noexcept { return p * (lambda2_prime() - lambda2()) / 2.0; }

    /// Throws ConfigurationError naming the offending key.
    void validate() const;
};

/// Complex coefficients u_hat(k) in C^2 for |k|_inf <= k_modes, u(x) = sum_k u_hat(k) e^{i k.x}.
class FourierVelocityField {
public:
    FourierVelocityField() = default;
    /// Zero field.
    explicit FourierVelocityField(int k_modes);

    int k_modes() const noexcept { return k_; }
    bool contains(int kx, int ky) const noexcept { return std::abs(kx) <= k_ && std::abs(ky) <= k_; }
    std::array<Complex, 2>& operator()(int kx, int ky) { return c_[index(kx, ky)]; }
    const std::array<Complex, 2>& operator()(int kx, int ky) const { return c_[index(kx, ky)]; }

private:
    std::size_t index(int kx, int ky) const;
    int k_ = 0;
    std::vector<std::array<Complex, 2>> c_;
};

/// <u, v> with respect to the normalized measure on the torus: sum_k Re(conj(u_hat) . v_hat).
double inner(const FourierVelocityField& u, const FourierVelocityField& v);
double h_norm_sq(const FourierVelocityField& u);
/// sum_k |k|^2 |u_hat(k)|^2.
double v_norm_sq(const FourierVelocityField& u);
/// max_k |k . u_hat(k)|.
double max_divergence(const FourierVelocityField& u);
/// max_k |u_hat(-k) - conj(u_hat(k))|.
double max_reality_defect(const FourierVelocityField& u);

/// Per mode u_hat -> (I - k k^T / |k|^2) u_hat; the zero mode is zeroed.
FourierVelocityField leray_project(const FourierVelocityField& w);

/// One row per mode 0 < |k|_inf <= k_modes: kx, ky, re_u1, im_u1, re_u2, im_u2.
void write_coefficients_csv(std::ostream& out, const FourierVelocityField& u);

/// Pseudospectral machinery on a 2K x 2K grid with 2/3-rule dealiasing.
///
/// A state is packed over the half-plane modes (ky > 0, or ky = 0 and kx > 0)
/// with 0 < |k|_inf <= floor(2K/3): u_hat(k) = alpha (-ky, kx) / |k| and the
/// pair (sqrt(2) Re alpha, sqrt(2) Im alpha) is stored, so the Euclidean norm
/// of the packed vector is the H-norm and every packed vector is divergence-free.
/// Modes are ordered by |k|^2, then ky, then kx.
class NsSpace {
public:
    struct Mode {
        int kx = 0;
        int ky = 0;
        double k_sq = 0.0;
    };

    explicit NsSpace(int k_modes);

    int k_modes() const noexcept { return k_; }
    int grid() const noexcept { return 2 * k_; }
    int dealiased_modes() const noexcept { return kd_; }
    /// Number of packed coordinates (twice the number of modes).
    std::size_t dim() const noexcept { return 2 * modes_.size(); }
    const std::vector<Mode>& modes() const noexcept { return modes_; }
    /// |k|^2 of packed coordinate j.
    double k_sq(std::size_t j) const noexcept { return modes_[j / 2].k_sq; }

    FourierVelocityField unpack(std::span<const double> y) const;
    /// Leray projection onto the retained modes, in packed coordinates.
    State pack(const FourierVelocityField& u) const;

    /// B(u, v) = -P_H[(u . grad) v] with inputs and outputs restricted to the retained modes.
    FourierVelocityField nonlinearity(const FourierVelocityField& u, const FourierVelocityField& v) const;
    /// B(u, u) through the rotational form -P_H[omega (-u2, u1)], omega = d_x u2 - d_y u1.
    FourierVelocityField self_nonlinearity(const FourierVelocityField& u) const;
    /// B(y, y) in packed coordinates.
    void self_nonlinearity(std::span<const double> y, std::span<double> out) const;

    /// Real grid values (u1, u2) at x_i = 2 pi i / M, y_j = 2 pi j / M, index i * M + j.
    std::array<std::vector<double>, 2> to_grid(const FourierVelocityField& u) const;

    /// FFTW plans for the 2K x 2K grid (defined in the implementation).
    struct Plans;

private:
    int k_ = 0;
    int kd_ = 0;
    std::vector<Mode> modes_;
    std::shared_ptr<const Plans> plans_;
};

/// sum_j k_sq(j) y_j^2.
double v_norm_sq(const NsSpace& space, std::span<const double> y);
/// |<B(y, y), y>| / (|y| |y|_V^2); 0 for y = 0.
double flux_residual(const NsSpace& space, std::span<const double> y);

/// Random packed state with coefficient scale 1 / |k|^2 on shells up to max_shell
/// (all retained modes when max_shell <= 0), rescaled to H-norm `radius`.
State random_state(const NsSpace& space, std::uint64_t seed, std::uint64_t index, double radius, int max_shell = 0);

/// phi_i for i < d_noise: unit packed coordinate vectors on the lowest modes
/// (sqrt(2) cos(k.x) and -sqrt(2) sin(k.x) times (-ky, kx)/|k|).
FourierVelocityField phi_field(const NsSpace& space, int i);

/// z^I_t = sum_i phi_i z_i(t) in packed coordinates.
State ou_state(const NsSpace& space, const OUPath& z, std::int64_t i);
FourierVelocityField ou_field(const NsSpace& space, const OUPath& z, double t);

/// Law features the force needs: the mean (Stokes drag), int min(|v|, n_sat) dmu
/// (saturated norm) or nothing.
std::vector<double> law_features(const NsConfig& cfg, const EmpiricalMeasure& mu);
/// F(u, mu) in packed coordinates given the law features.
void force(const NsConfig& cfg, std::span<const double> u, std::span<const double> features, std::span<double> out);

struct NsMeasureFlow {
    std::vector<double> times;
    std::vector<EmpiricalMeasure> snapshots;
    sode::LawPath law;  ///< law features at every grid step
};

/// Particle system with the exponential Euler step
/// y <- e^{A dt} (y + dt (B(y, y) + F(y, mu)) + sum_i phi_i dW_i).
/// Particle p draws noise from path.stream_increment(particle_seed(path.seed(), p), i, .).
NsMeasureFlow simulate_ns_measure_flow(const NsSpace& space, const NsConfig& cfg, const EmpiricalMeasure& mu0,
                                       const WienerPath& path, std::span<const double> t_grid, double guard = 1e6);

/// X_{s,t}^{x,mu} with the same step on omega's increments (or a particle stream).
std::vector<State> simulate_ns_state_flow(const NsSpace& space, const NsConfig& cfg, std::span<const double> x0,
                                          const sode::LawPath& law, const WienerPath& omega,
                                          std::span<const double> t_grid,
                                          std::optional<std::uint64_t> noise_stream = std::nullopt,
                                          double guard = 1e6);

struct ZTrajectory {
    std::vector<double> times;
    std::vector<State> z;  ///< Z = X - z^I
    std::vector<State> x;  ///< reconstructed X = Z + z^I (x0 at the start time)
};

/// Z <- e^{A dt} (Z + dt (B(Z + z^I) + F(Z + z^I, mu) + eta z^I + A z^I)), with z^I
/// the stationary OU field built from omega at rate cfg.eta.
ZTrajectory integrate_Z(const NsSpace& space, const NsConfig& cfg, std::span<const double> x0,
                        const sode::LawPath& law, const WienerPath& omega, std::span<const double> t_grid,
                        double guard = 1e6);

/// Cocycle adapter over the direct X flow; measures are compared by exact W2.
attractor::CocycleAdapter make_adapter(const NsConfig& cfg);

struct MomentDecayResult {
    std::vector<double> times;
    std::vector<double> moments;          ///< E |Y_t|^p
    std::vector<double> standard_errors;  ///< Monte Carlo standard error of each moment
    std::vector<double> envelope;         ///< E |Y_0|^p e^{-rate t} + max(offset, 0)
    double p = 2.0;
    double rate = 0.0;        ///< fitted lambda in a e^{-lambda t} + c
    double amplitude = 0.0;   ///< a
    double offset = 0.0;      ///< c
    double rate_bound = 0.0;  ///< p (lambda2' - lambda2) / 2
    double slack_se = 4.0;
    bool dominated = false;  ///< moments <= envelope + slack_se standard errors at every sample
    int transient_samples = 0;
    double flux_residual = 0.0;  ///< max over terminal particles
    attractor::Status status = attractor::Status::inconclusive;
};

/// Fits E|Y_t|^p to a e^{-lambda t} + c (relative least squares) and compares the
/// curve with the envelope E|Y_0|^p e^{-lambda t} + c. PASS iff lambda > 0, a > 0
/// and the envelope dominates within slack_se standard errors; fewer than 3
/// samples above 1.1 times the plateau level (mean of the last quarter) is inconclusive.
MomentDecayResult moment_decay_test(const NsConfig& cfg, const EmpiricalMeasure& mu0, const WienerPath& path,
                                    std::span<const double> t_grid, double p, double slack_se = 4.0);

struct AbsorbingProbes {
    std::vector<State> states;
    std::vector<EmpiricalMeasure> measures;
};

/// Five states (zero, two basis directions and two random fields of norm radius)
/// and two measures (delta_0 and a cloud on the sphere of radius `radius`), giving 10 probes.
AbsorbingProbes default_probes(const NsSpace& space, const NsConfig& cfg, std::uint64_t seed, double radius);

struct RadiusScan {
    double C = 0.0;
    double exponent_average = 0.0;  ///< time average of -lambda2'/8 + g1 over the window
    bool convergent = false;
    double r_sq = 0.0;
};

struct AbsorbingResult {
    std::vector<double> pullback_times;
    std::vector<std::vector<double>> z_sq;  ///< [time][probe] |Z_{-t,-t0}|^2, measure-major probes
    std::vector<double> max_z_sq;           ///< per pullback time
    std::vector<double> cloud_radius;       ///< per pullback time, max |X_{-t,-t0}|
    std::vector<RadiusScan> scan;
    double lambda2_prime = 0.0;
    double selected_C = 0.0;
    double r_sq = 0.0;  ///< estimate for selected_C
    double flux_residual = 0.0;
    attractor::Status status = attractor::Status::inconclusive;
};

/// Runs every (state, measure) probe from -t to -t0 on omega for each pullback time
/// and evaluates the absorbing radius
/// R^2 = 2 + 2 sup_s |z_s|^2 e^{G(s)} + int e^{G(r)} g2(r) dr, G(s) = int_s^{-t0} (-lambda2'/8 + g1),
/// g1 = C sum_i |z_i| (|z_i| + 1), g2 = C (1 + sum_i z_i^4), over omega's window.
/// A C is convergent when the average exponent is negative. PASS iff some
/// convergent C gives R^2 >= the terminal max |Z|^2; FAIL if none does;
/// INCONCLUSIVE when no C is convergent.
AbsorbingResult absorbing_radius_estimate(const NsConfig& cfg, const WienerPath& omega, double t0,
                                          std::span<const double> pullback_times, const AbsorbingProbes& probes,
                                          std::span<const double> c_values = std::array{0.1, 1.0, 10.0});

}  // namespace mvlab::ns
