#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mvlab/attractor.hpp"
#include "mvlab/measures.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::sode {

using Vec = std::vector<double>;
using CSpan = std::span<const double>;
using Span = std::span<double>;

/// Coefficient bundle of dX = b(X, L_Y) dt + sigma(X) o dW.
///
/// The law enters b and V only through a finite feature vector computed by
/// `law_features` (for the worked example, the second moment). Matrices are
/// row-major: sigma is d x m, dsigma[(j*m + i)*d + k] = d sigma_{ji} / d x_k.
struct SodeModel {
    int d = 1;
    int m = 1;

    std::function<Vec(const EmpiricalMeasure&)> law_features;
    std::function<void(CSpan x, CSpan law, Span out)> drift;
    std::function<void(CSpan x, Span sigma)> diffusion;
    std::function<void(CSpan x, Span dsigma)> diffusion_jacobian;

    /// Lyapunov function and its closed-form derivatives.
    std::function<double(CSpan x, CSpan law)> V;
    std::function<void(CSpan x, CSpan law, Span out)> dV_dx;           ///< d
    std::function<void(CSpan x, CSpan law, Span out)> d2V_dxx;         ///< d x d
    std::function<void(CSpan x, CSpan law, CSpan y, Span out)> dmu_V;  ///< d
    std::function<void(CSpan x, CSpan law, CSpan y, Span out)> dy_dmu_V;  ///< d x d
    double alpha = 0.0;
    double M = 0.0;

    Vec features(const EmpiricalMeasure& mu) const { return law_features ? law_features(mu) : Vec{}; }
};

/// Piecewise diffusion of the worked example with C^1 cubic Hermite bands.
class ExampleSigma {
public:
    explicit ExampleSigma(double M_cut = 2.0, double eps = 0.5);

    double operator()(double x) const noexcept;
    double derivative(double x) const noexcept;
    double M_cut() const noexcept { return M_; }
    double eps() const noexcept { return eps_; }

private:
    struct Band {
        double a, b, va, vb, sa, sb;
        double value(double x) const noexcept;
        double slope(double x) const noexcept;
    };
    double M_, eps_;
    Band lower_, upper_;
};

/// b(x, mu) = -x^3 m2(mu)^5 - 10 x, sigma as in ExampleSigma,
/// V(x, mu) = x^8 + m2(mu)^45 with alpha = 8, M = 0.
SodeModel example_model(double M_cut = 2.0, double eps = 0.5);

/// sigma/dsigma consistency: max central-difference error over the probe points.
double diffusion_jacobian_error(const SodeModel& model, std::span<const Vec> probes, double h = 1e-6);

/// b_bar = b + 1/2 sum_i (d_x sigma_i) sigma_i.
void ito_drift(const SodeModel& model, CSpan x, CSpan law, Span out);
Vec ito_drift(const SodeModel& model, CSpan x, const EmpiricalMeasure& mu);

/// How each particle's Brownian stream is keyed.
enum class SeedKeying {
    particle_index,   ///< particle i uses stream i
    sorted_position,  ///< particles are reordered by initial position; stream = rank
};

/// Law features at every grid step of a run, starting at grid index i_start.
struct LawPath {
    std::int64_t i_start = 0;
    std::vector<Vec> features;

    std::int64_t i_end() const noexcept { return i_start + static_cast<std::int64_t>(features.size()) - 1; }
    CSpan at(std::int64_t i) const;
};

struct MeasureFlowOptions {
    SeedKeying keying = SeedKeying::particle_index;
    double guard = 1e8;
};

/// P*_t mu approximants at the requested times plus the per-step law features.
struct MeasureFlow {
    std::vector<double> times;
    std::vector<EmpiricalMeasure> snapshots;
    LawPath law;
};

/// Euler-Maruyama on the Ito form of the Y-particle system. Particle i draws
/// noise from path.stream_increment(particle_seed(path.seed(), key_i), ...).
MeasureFlow simulate_measure_flow(const SodeModel& model, const EmpiricalMeasure& mu0, const WienerPath& path,
                                  std::span<const double> t_grid, const MeasureFlowOptions& options = {});

enum class Scheme { euler_ito, heun_stratonovich };

struct FrozenFlowOptions {
    Scheme scheme = Scheme::euler_ito;
    double guard = 1e8;
    /// When set, noise comes from this particle stream instead of the path's own increments.
    std::optional<std::uint64_t> noise_stream;
};

/// X_{s,t}^{x,mu} on the grid between t_grid.front() and t_grid.back();
/// returns the state at each time of t_grid (d values per time).
std::vector<Vec> simulate_frozen_law_flow(const SodeModel& model, CSpan x0, const LawPath& law,
                                          const WienerPath& path, std::span<const double> t_grid,
                                          const FrozenFlowOptions& options = {});

/// Same, with the law given as one measure per grid step from t_grid.front() to t_grid.back().
std::vector<Vec> simulate_frozen_law_flow(const SodeModel& model, CSpan x0,
                                          std::span<const EmpiricalMeasure> law_path, const WienerPath& path,
                                          std::span<const double> t_grid, const FrozenFlowOptions& options = {});

/// ||X_{s,t} - X_{r,t} o X_{s,r}|| + W2(P*_{s,t} mu, P*_{r,t} P*_{s,r} mu) under common increments.
double check_flow_property(const SodeModel& model, CSpan x0, const EmpiricalMeasure& mu0, const WienerPath& path,
                           double s, double r, double t);

/// Generator LV(x, mu) with the mu-integrals evaluated as weighted particle sums.
double lyapunov_generator(const SodeModel& model, CSpan x, const EmpiricalMeasure& mu);

struct LyapunovProbe {
    Vec x;
    EmpiricalMeasure mu;
};

/// max over probes of LV + alpha V - M; <= 0 certifies the drift condition on the probes.
double lyapunov_drift_residual(const SodeModel& model, std::span<const LyapunovProbe> probes, double alpha, double M);

/// Probe set for the worked example: x on a uniform grid in [-x_max, x_max],
/// measures uniform on {-a, a} with a^2 = m2 on a uniform grid in [0, m2_max].
std::vector<LyapunovProbe> example_probe_grid(int nx = 81, double x_max = 10.0, int nm = 21, double m2_max = 10.0);

/// Cocycle adapter: the measure runs through simulate_measure_flow, each state
/// through simulate_frozen_law_flow on omega's own increments.
attractor::CocycleAdapter make_adapter(const SodeModel& model, Scheme scheme = Scheme::euler_ito);

}  // namespace mvlab::sode
