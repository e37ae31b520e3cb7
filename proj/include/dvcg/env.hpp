#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace dvcg {

using Rng = std::mt19937_64;

/// Number of resource kinds in a slice: bandwidth, compute, cache.
inline constexpr int kResources = 3;

/// Tolerance on per-resource column sums.
inline constexpr double kFeasibilityEps = 1e-9;

using Slice = Eigen::Vector3d;

/// Ground-truth parameters of one vehicle service provider.
struct VspProfile
{
  int             id          = 0;
  double          beta        = 100.0;  // utility scale
  Eigen::Vector3d xi          = Eigen::Vector3d::Ones();
  double          alpha       = 1.0;  // currency per welfare unit
  double          noise_mean  = 0.0;
  double          noise_std   = 5.0;
  double          deploy_cost = 0.0;

  /// Throws ValidationError if any invariant is broken.
  void validate() const;
};

/// Resource shares, one column per VSP, one row per resource kind.
class Allocation
{
public:
  Allocation() = default;

  /// Validates entries in [0,1] and row sums <= 1 + kFeasibilityEps.
  explicit Allocation(Eigen::Matrix3Xd shares);

  static Allocation zeros(int num_vsps);
  static Allocation uniform(int num_vsps);

  int                    num_vsps() const { return static_cast<int>(shares_.cols()); }
  Slice                  slice(int vsp) const { return shares_.col(vsp); }
  double                 share(int resource, int vsp) const { return shares_(resource, vsp); }
  Eigen::Matrix3Xd const &shares() const { return shares_; }

  /// Invariant check that does not throw (used by run verification).
  static bool is_feasible(Eigen::Matrix3Xd const &shares, double eps = kFeasibilityEps);

  bool operator==(Allocation const &other) const { return shares_ == other.shares_; }

private:
  Eigen::Matrix3Xd shares_;
};

/// Full result of one auction round.
struct RoundOutcome
{
  int                 round = 0;
  Allocation          allocation;
  std::vector<double> bids;
  std::vector<double> loans;
  std::vector<double> estimated_utilities;
  std::vector<double> interests;
  std::vector<double> impacts;
  std::vector<double> taxes;
  std::vector<double> utilities;
  std::vector<double> gross_profits;
  std::vector<double> net_profits;
  double              realized_welfare = 0.0;
  double              pool             = 0.0;
  double              sw_star          = 0.0;
  double              perturbation     = 0.0;
  bool                warmup           = false;
};

/// Utility curve of the simulated VSPs: beta * (1 - exp(-xi . s)).
double utility(VspProfile const &profile, Slice const &slice);

/// Pluggable utility, used where a bidder's valuation is not the built-in curve.
using UtilityFn = std::function<double(Slice const &)>;

/// alpha * U + w with w ~ Normal(noise_mean, noise_std^2), one draw from rng.
double gross_profit(VspProfile const &profile, double utility, Rng &rng);

double social_welfare(std::span<VspProfile const> profiles, Allocation const &alloc);

/// Clip negatives, then divide each resource row by max(1, row sum).
Allocation normalize(Eigen::Matrix3Xd raw);

struct OracleResult
{
  Allocation       allocation;
  double           welfare = 0.0;
  std::vector<int> units;  // 3*N integer unit counts, VSP-major
};

/// Number of units per resource for a grid step; throws unless 1/step is integral.
int units_for_step(double grid_step);

/// Dynamic-programming work (lattice transitions) for N agents on an M-unit grid.
double lattice_work(int num_vsps, int units);

/// Default ceiling on lattice transitions before the oracle refuses to run.
inline constexpr double kOracleWorkLimit = 2e9;

/// Best feasible allocation on the grid {0, step, ..., 1}^(3N), exact.
/// Ties resolve to the lexicographically smallest allocation (VSP 0 first).
OracleResult oracle_optimal_allocation(std::span<VspProfile const> profiles, double grid_step,
                                       double work_limit = kOracleWorkLimit);

/// Upper bound on the continuous optimum, from the Lagrangian dual over the
/// three resource prices. Valid for every grid.
double continuous_welfare_bound(std::span<VspProfile const> profiles);

struct ProfileSampling
{
  double beta_lo  = 100.0;
  double beta_hi  = 200.0;
  double xi_lo    = 0.0;
  double xi_hi    = 10.0;
  double alpha_lo = 0.5;
  double alpha_hi = 2.0;
  double noise_mean  = 0.0;
  double noise_std   = 5.0;
  double deploy_cost = 0.0;
};

/// Independent child seed for a named stream (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

std::vector<VspProfile> sample_profiles(int num_vsps, std::uint64_t seed,
                                        ProfileSampling const &sampling = {});

}  // namespace dvcg
