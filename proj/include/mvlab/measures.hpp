#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvlab {

/// Weighted particle cloud in R^d; the stand-in for a measure in P_p.
///
/// Particles are stored row-major (particle, coordinate). Weights are
/// nonnegative and sum to one within 1e-12.
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;

    /// Uniform weights.
    EmpiricalMeasure(int dim, std::vector<double> particles);
    EmpiricalMeasure(int dim, std::vector<double> particles, std::vector<double> weights);

    static EmpiricalMeasure dirac(std::span<const double> point);
    static EmpiricalMeasure dirac(double point) { return dirac(std::span<const double>(&point, 1)); }

    /// Rescales nonnegative weights to sum to one.
    static EmpiricalMeasure normalized(int dim, std::vector<double> particles, std::vector<double> weights);

    int dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return weights_.size(); }
    bool uniform() const noexcept { return uniform_; }

    std::span<const double> particle(std::size_t i) const noexcept {
        return {particles_.data() + i * dim_, static_cast<std::size_t>(dim_)};
    }
    std::span<double> particle(std::size_t i) noexcept {
        return {particles_.data() + i * dim_, static_cast<std::size_t>(dim_)};
    }
    double weight(std::size_t i) const noexcept { return weights_[i]; }

    const std::vector<double>& particles() const noexcept { return particles_; }
    std::vector<double>& particles() noexcept { return particles_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

private:
    int dim_ = 1;
    std::vector<double> particles_;
    std::vector<double> weights_;
    bool uniform_ = true;
};

/// sum_i w_i |x_i|^p
double moment(const EmpiricalMeasure& mu, double p);
std::vector<double> mean(const EmpiricalMeasure& mu);
/// m2(mu) = sum_i w_i |x_i|^2
double second_moment(const EmpiricalMeasure& mu);

/// Push-forward by x -> s x.
EmpiricalMeasure scaled(const EmpiricalMeasure& mu, double s);

enum class WassersteinBackend {
    unique_coupling,  ///< one side is a single atom; exact
    quantile_1d,      ///< sorted-sample coupling in one dimension; exact
    assignment,       ///< optimal assignment for equal-size uniform clouds; exact
    entropic,         ///< debiased Sinkhorn divergence; approximate
};

std::string to_string(WassersteinBackend b);

struct WassersteinResult {
    double value = 0.0;
    WassersteinBackend backend = WassersteinBackend::quantile_1d;
    double epsilon = 0.0;  ///< entropic regularization (0 for exact backends)
    int iterations = 0;
    bool exact() const noexcept { return backend != WassersteinBackend::entropic; }
};

/// Largest equal-size uniform cloud handled by the exact assignment backend.
inline constexpr std::size_t kAssignmentMaxSize = 512;
/// Largest lcm(|mu|, |nu|) accepted when the assignment backend is forced on
/// uniform clouds of different sizes (both are replicated to that size).
inline constexpr std::size_t kReplicatedAssignmentMaxSize = 4096;

/// Backend selected for (mu, nu) by the automatic rule.
WassersteinBackend select_backend(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// W_p with explicit backend reporting; `force` overrides the automatic rule
/// (throws DomainError when the forced backend does not apply).
WassersteinResult wasserstein_detailed(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p,
                                       std::optional<WassersteinBackend> force = std::nullopt);

inline double wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double p) {
    return wasserstein_detailed(mu, nu, p).value;
}

/// Optimal assignment (minimum total cost) of an n x n row-major cost matrix.
/// Returns the column assigned to each row.
std::vector<int> solve_assignment(std::span<const double> cost, int n);

/// One row per particle: weight, x_1..x_d.
void write_csv(std::ostream& out, const EmpiricalMeasure& mu);

}  // namespace mvlab
