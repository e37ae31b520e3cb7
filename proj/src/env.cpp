#include "dvcg/env.hpp"

#include "dvcg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dvcg {

void VspProfile::validate() const
{
  auto fail = [this](std::string const &what) {
    throw ValidationError("vsp " + std::to_string(id) + ": " + what);
  };
  if (!(beta > 0.0) || !std::isfinite(beta))
  {
    fail("beta must be positive");
  }
  if (!xi.allFinite() || (xi.array() < 0.0).any())
  {
    fail("xi components must be nonnegative");
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha))
  {
    fail("alpha must be positive");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_mean))
  {
    fail("noise_std must be nonnegative");
  }
  if (!(deploy_cost >= 0.0))
  {
    fail("deploy_cost must be nonnegative");
  }
}

bool Allocation::is_feasible(Eigen::Matrix3Xd const &shares, double eps)
{
  if (!shares.allFinite())
  {
    return false;
  }
  if ((shares.array() < 0.0).any() || (shares.array() > 1.0 + eps).any())
  {
    return false;
  }
  return (shares.rowwise().sum().array() <= 1.0 + eps).all();
}

Allocation::Allocation(Eigen::Matrix3Xd shares)
  : shares_(std::move(shares))
{
  if (!is_feasible(shares_))
  {
    throw ValidationError("allocation violates share bounds or resource capacity");
  }
}

Allocation Allocation::zeros(int num_vsps)
{
  return Allocation(Eigen::Matrix3Xd::Zero(kResources, num_vsps));
}

Allocation Allocation::uniform(int num_vsps)
{
  if (num_vsps <= 0)
  {
    throw ValidationError("uniform allocation needs at least one VSP");
  }
  return Allocation(Eigen::Matrix3Xd::Constant(kResources, num_vsps, 1.0 / num_vsps));
}

double utility(VspProfile const &profile, Slice const &slice)
{
  if ((slice.array() < 0.0).any())
  {
    throw std::domain_error("utility: negative slice component");
  }
  return profile.beta * -std::expm1(-profile.xi.dot(slice));
}

double gross_profit(VspProfile const &profile, double utility, Rng &rng)
{
  double noise = profile.noise_mean;
  if (profile.noise_std > 0.0)
  {
    std::normal_distribution<double> dist(profile.noise_mean, profile.noise_std);
    noise = dist(rng);
  }
  return profile.alpha * utility + noise;
}

double social_welfare(std::span<VspProfile const> profiles, Allocation const &alloc)
{
  if (static_cast<int>(profiles.size()) != alloc.num_vsps())
  {
    throw ValidationError("social_welfare: " + std::to_string(profiles.size()) +
                          " profiles for " + std::to_string(alloc.num_vsps()) + " columns");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < profiles.size(); ++i)
  {
    total += utility(profiles[i], alloc.slice(static_cast<int>(i)));
  }
  return total;
}

namespace {
constexpr double kRowSlack = 1e-12;
}

Allocation normalize(Eigen::Matrix3Xd raw)
{
  raw = raw.cwiseMax(0.0);
  for (int r = 0; r < kResources; ++r)
  {
    double const total = raw.row(r).sum();
    // Rows a few ulps over 1 are left alone so normalize stays idempotent.
    if (total > 1.0 + kRowSlack)
    {
      raw.row(r) /= total;
    }
  }
  return Allocation(raw.cwiseMin(1.0));
}

int units_for_step(double grid_step)
{
  if (!(grid_step > 0.0) || grid_step > 1.0)
  {
    throw ValidationError("grid step must lie in (0, 1]");
  }
  double const inverse = 1.0 / grid_step;
  long const   units   = std::lround(inverse);
  if (std::abs(inverse - static_cast<double>(units)) > 1e-6)
  {
    throw ValidationError("grid step must divide 1 evenly");
  }
  return static_cast<int>(units);
}

double lattice_work(int num_vsps, int units)
{
  double const pairs = 0.5 * (units + 1.0) * (units + 2.0);
  return num_vsps * pairs * pairs * pairs;
}

namespace {

struct Lattice
{
  int side;

  explicit Lattice(int units)
    : side(units + 1)
  {}

  std::size_t size() const { return static_cast<std::size_t>(side) * side * side; }

  std::size_t index(int a, int b, int c) const
  {
    return (static_cast<std::size_t>(a) * side + b) * side + c;
  }
};

}  // namespace

OracleResult oracle_optimal_allocation(std::span<VspProfile const> profiles, double grid_step,
                                       double work_limit)
{
  int const n = static_cast<int>(profiles.size());
  if (n == 0)
  {
    throw ValidationError("oracle needs at least one profile");
  }
  int const units = units_for_step(grid_step);
  if (lattice_work(n, units) > work_limit)
  {
    throw EnumerationLimitError("oracle grid too fine for " + std::to_string(n) +
                                " VSPs; use a coarser grid step");
  }

  Lattice const lat(units);
  double const  step = 1.0 / units;

  std::vector<std::vector<double>> value_of(n, std::vector<double>(lat.size()));
  for (int i = 0; i < n; ++i)
  {
    for (int a = 0; a <= units; ++a)
    {
      for (int b = 0; b <= units; ++b)
      {
        for (int c = 0; c <= units; ++c)
        {
          value_of[i][lat.index(a, b, c)] = utility(profiles[i], Slice(a * step, b * step, c * step));
        }
      }
    }
  }

  // best[k][cap] = best welfare of VSPs k..n-1 given remaining capacity cap.
  std::vector<std::vector<double>> best(n + 1, std::vector<double>(lat.size(), 0.0));
  for (int k = n - 1; k >= 0; --k)
  {
    auto const &u    = value_of[k];
    auto const &next = best[k + 1];
    auto       &cur  = best[k];
    for (int ca = 0; ca <= units; ++ca)
    {
      for (int cb = 0; cb <= units; ++cb)
      {
        for (int cc = 0; cc <= units; ++cc)
        {
          double top = -std::numeric_limits<double>::infinity();
          for (int a = 0; a <= ca; ++a)
          {
            for (int b = 0; b <= cb; ++b)
            {
              std::size_t const ub = lat.index(a, b, 0);
              std::size_t const nb = lat.index(ca - a, cb - b, cc);
              for (int c = 0; c <= cc; ++c)
              {
                double const v = u[ub + c] + next[nb - c];
                top            = std::max(top, v);
              }
            }
          }
          cur[lat.index(ca, cb, cc)] = top;
        }
      }
    }
  }

  OracleResult result;
  result.units.assign(static_cast<std::size_t>(kResources) * n, 0);
  Eigen::Matrix3Xd shares = Eigen::Matrix3Xd::Zero(kResources, n);
  int              ra = units, rb = units, rc = units;
  for (int k = 0; k < n; ++k)
  {
    double const target = best[k][lat.index(ra, rb, rc)];
    bool         found  = false;
    for (int a = 0; a <= ra && !found; ++a)
    {
      for (int b = 0; b <= rb && !found; ++b)
      {
        for (int c = 0; c <= rc && !found; ++c)
        {
          double const v = value_of[k][lat.index(a, b, c)] + best[k + 1][lat.index(ra - a, rb - b, rc - c)];
          if (v == target)
          {
            result.units[3 * k]     = a;
            result.units[3 * k + 1] = b;
            result.units[3 * k + 2] = c;
            shares.col(k) << a * step, b * step, c * step;
            ra -= a;
            rb -= b;
            rc -= c;
            found = true;
          }
        }
      }
    }
  }
  result.allocation = Allocation(shares);
  result.welfare    = social_welfare(profiles, result.allocation);
  return result;
}

namespace {

// Dual function of the welfare problem at resource prices p.
double dual_value(std::span<VspProfile const> profiles, Eigen::Vector3d const &price)
{
  double total = price.sum();
  for (auto const &profile : profiles)
  {
    double unit_cost = std::numeric_limits<double>::infinity();
    for (int r = 0; r < kResources; ++r)
    {
      if (profile.xi[r] > 0.0)
      {
        unit_cost = std::min(unit_cost, price[r] / profile.xi[r]);
      }
    }
    if (unit_cost <= 0.0)
    {
      total += profile.beta;
    }
    else if (unit_cost < profile.beta)
    {
      total += profile.beta - unit_cost - unit_cost * std::log(profile.beta / unit_cost);
    }
  }
  return total;
}

template <typename F>
double golden_min(F &&f, double lo, double hi, int iterations)
{
  double const ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double       x1    = hi - ratio * (hi - lo);
  double       x2    = lo + ratio * (hi - lo);
  double       f1    = f(x1);
  double       f2    = f(x2);
  for (int it = 0; it < iterations; ++it)
  {
    if (f1 <= f2)
    {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = f(x1);
    }
    else
    {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = f(x2);
    }
  }
  return std::min({f1, f2, f(lo), f(hi)});
}

}  // namespace

double continuous_welfare_bound(std::span<VspProfile const> profiles)
{
  Eigen::Vector3d upper = Eigen::Vector3d::Zero();
  for (auto const &p : profiles)
  {
    upper = upper.cwiseMax(p.beta * p.xi);
  }
  upper = upper.cwiseMax(1e-9);
  // Partial minimization preserves convexity, so nested line searches find the
  // dual minimum. Any price vector already gives a valid bound.
  constexpr int kIters = 60;
  Eigen::Vector3d price;
  return golden_min(
      [&](double p0) {
        price[0] = p0;
        return golden_min(
            [&](double p1) {
              price[1] = p1;
              return golden_min(
                  [&](double p2) {
                    price[2] = p2;
                    return dual_value(profiles, price);
                  },
                  0.0, upper[2], kIters);
            },
            0.0, upper[1], kIters);
      },
      0.0, upper[0], kIters);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z               = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z               = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<VspProfile> sample_profiles(int num_vsps, std::uint64_t seed, ProfileSampling const &sampling)
{
  if (num_vsps <= 0)
  {
    throw ValidationError("sample_profiles: need at least one VSP");
  }
  Rng                                    rng(seed);
  std::uniform_real_distribution<double> beta(sampling.beta_lo, sampling.beta_hi);
  std::uniform_real_distribution<double> xi(sampling.xi_lo, sampling.xi_hi);
  std::uniform_real_distribution<double> alpha(sampling.alpha_lo, sampling.alpha_hi);

  std::vector<VspProfile> out(num_vsps);
  for (int i = 0; i < num_vsps; ++i)
  {
    auto &p = out[i];
    p.id    = i;
    p.beta  = beta(rng);
    for (int r = 0; r < kResources; ++r)
    {
      p.xi[r] = xi(rng);
    }
    p.alpha       = alpha(rng);
    p.noise_mean  = sampling.noise_mean;
    p.noise_std   = sampling.noise_std;
    p.deploy_cost = sampling.deploy_cost;
    p.validate();
  }
  return out;
}

}  // namespace dvcg
