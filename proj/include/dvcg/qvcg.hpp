#pragma once

#include "dvcg/env.hpp"

#include <span>
#include <vector>

namespace dvcg {

/// Reported cumulative values of one bidder on the (M+1)^3 unit lattice.
/// Entry (a, b, c) is the reported utility of the slice (a/M, b/M, c/M).
class QvcgBidTensor
{
public:
  QvcgBidTensor(int owner, int units, double alpha, std::vector<double> values);

  int    owner() const { return owner_; }
  int    units() const { return units_; }
  int    side() const { return units_ + 1; }
  double alpha() const { return alpha_; }

  double at(int a, int b, int c) const { return values_[index(a, b, c)]; }
  std::size_t index(int a, int b, int c) const
  {
    return (static_cast<std::size_t>(a) * side() + b) * side() + c;
  }

  std::vector<double> const &values() const { return values_; }

  /// Nondecreasing along every axis and zero at the origin.
  bool is_monotone() const;

  /// Same tensor with every entry multiplied by factor (a misreport).
  QvcgBidTensor scaled(double factor) const;

private:
  int                 owner_;
  int                 units_;
  double              alpha_;
  std::vector<double> values_;
};

/// Truthful tensor from the profile's utility curve.
QvcgBidTensor qvcg_build_bids(VspProfile const &profile, double alpha_known, int units);

/// Truthful tensor from an arbitrary valuation.
QvcgBidTensor qvcg_build_bids(UtilityFn const &value, int owner, double alpha_known, int units);

enum class QvcgSolver
{
  kAuto,    // exact when within the work limit, otherwise greedy
  kExact,   // lattice dynamic program; throws past the work limit
  kGreedy,  // marginal-unit greedy followed by unit-move local search
};

struct QvcgResult
{
  Allocation          allocation;
  std::vector<int>    units;     // 3*N, VSP-major
  std::vector<double> payments;  // VCG pivot payments in reported-value units
  std::vector<double> reported_values;
  double              reported_welfare = 0.0;
  bool                exact            = true;
};

inline constexpr double kQvcgWorkLimit = 2e9;

QvcgResult qvcg_allocate(std::span<QvcgBidTensor const> tensors, QvcgSolver solver = QvcgSolver::kAuto,
                         double work_limit = kQvcgWorkLimit);

/// Currency profit of a bidder: alpha * (true utility - payment).
double qvcg_profit(VspProfile const &profile, Slice const &slice, double payment);

}  // namespace dvcg
