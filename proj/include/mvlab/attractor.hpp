#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvlab/measures.hpp"
#include "mvlab/noise_paths.hpp"

namespace mvlab::attractor {

using State = std::vector<double>;

/// Batch view of the skew-product cocycle Phi(t, omega)(mu, x).
struct CocycleAdapter {
    struct Output {
        EmpiricalMeasure mu;
        std::vector<State> states;
    };
    /// Runs mu and every state from t0 to t1 on omega (same omega for all states).
    std::function<Output(double t0, double t1, const WienerPath& omega, const EmpiricalMeasure& mu,
                         const std::vector<State>& states)>
        advance;
    /// Defaults to the Euclidean norm of the difference.
    std::function<double(const State&, const State&)> state_distance;
    /// Defaults to W2.
    std::function<double(const EmpiricalMeasure&, const EmpiricalMeasure&)> measure_distance;

    double distance(const State& a, const State& b) const;
    double distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b) const;
};

double euclidean(const State& a, const State& b);

/// Max pairwise distance; 0 for a single point.
double diameter(std::span<const State> cloud, const std::function<double(const State&, const State&)>& dist = euclidean);

/// Symmetric Hausdorff distance; throws DomainError on an empty cloud.
double hausdorff(std::span<const State> a, std::span<const State> b,
                 const std::function<double(const State&, const State&)>& dist = euclidean);

struct PullbackCloud {
    std::vector<State> points;               ///< states at time 0, measure-major order
    std::vector<EmpiricalMeasure> measures;  ///< P*_{t_n} mu per initial measure
};

/// {Phi(t_n, theta_{-t_n} omega)(mu, x)} for all (mu, x) pairs, run from -t_n to 0 on omega.
PullbackCloud pullback_cloud(const CocycleAdapter& adapter, const WienerPath& omega, double t_n,
                             std::span<const State> initial_states, std::span<const EmpiricalMeasure> initial_measures);

struct PullbackReport {
    std::vector<double> pullback_times;
    std::vector<std::vector<State>> clouds;
    std::vector<double> diameters;
    std::vector<double> hausdorff_to_final;
    /// measure_trajectory[n][j]: P*_{t_n} of initial measure j.
    std::vector<std::vector<EmpiricalMeasure>> measure_trajectory;
    /// cauchy_increments[n][j]: distance between P*_{t_n} mu_j and P*_{t_{n-1}} mu_j (0 for n = 0).
    std::vector<std::vector<double>> cauchy_increments;
};

PullbackReport run_pullback(const CocycleAdapter& adapter, const WienerPath& omega, std::span<const double> times,
                            std::span<const State> initial_states, std::span<const EmpiricalMeasure> initial_measures);

/// Distance between advancing [s, t] directly and through r (states and measure summed).
double cocycle_residual(const CocycleAdapter& adapter, const WienerPath& omega, double s, double r, double t,
                        const EmpiricalMeasure& mu, const std::vector<State>& states);

enum class Status { pass, fail, inconclusive };
std::string to_string(Status s);

struct MeasureAttractorEstimate {
    Status status = Status::inconclusive;
    std::vector<EmpiricalMeasure> measures;  ///< final iterate per seed
    std::vector<double> times;               ///< checkpoint times
    std::vector<double> max_increment;       ///< max over seeds of the Cauchy increment at each checkpoint
    double spread = 0.0;                     ///< max pairwise distance between final iterates
    double converged_at = -1.0;
};

/// Iterates `step` (advancing a measure by one checkpoint interval starting at time t)
/// from every seed; converged once the max Cauchy increment stays below tol for 3 checkpoints.
MeasureAttractorEstimate measure_attractor_estimate(
    const std::function<EmpiricalMeasure(const EmpiricalMeasure&, double t)>& step,
    std::span<const EmpiricalMeasure> seeds, double tol, double interval, double t_max,
    const std::function<double(const EmpiricalMeasure&, const EmpiricalMeasure&)>& dist = {});

struct SingletonResult {
    bool singleton = false;
    double margin = 0.0;  ///< threshold - terminal diameter
    bool eventually_decreasing = false;
};

/// True iff the terminal diameter is below threshold and diameters are
/// nonincreasing over the second half of the schedule.
SingletonResult singleton_test(const PullbackReport& report, double threshold);
SingletonResult singleton_test(std::span<const double> diameters, double threshold);

/// Nonincreasing over the last `count` entries.
bool nonincreasing_tail(std::span<const double> v, std::size_t count);

}  // namespace mvlab::attractor
