#include "dvcg/qvcg.hpp"

#include "dvcg/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace dvcg {

QvcgBidTensor::QvcgBidTensor(int owner, int units, double alpha, std::vector<double> values)
  : owner_(owner)
  , units_(units)
  , alpha_(alpha)
  , values_(std::move(values))
{
  if (units_ < 1)
  {
    throw ValidationError("qvcg: need at least one unit per resource");
  }
  std::size_t const expected = static_cast<std::size_t>(side()) * side() * side();
  if (values_.size() != expected)
  {
    throw ValidationError("qvcg: tensor has " + std::to_string(values_.size()) + " entries, expected " +
                          std::to_string(expected));
  }
}

bool QvcgBidTensor::is_monotone() const
{
  if (values_[0] != 0.0)
  {
    return false;
  }
  for (int a = 0; a <= units_; ++a)
  {
    for (int b = 0; b <= units_; ++b)
    {
      for (int c = 0; c <= units_; ++c)
      {
        double const v = at(a, b, c);
        if ((a > 0 && at(a - 1, b, c) > v) || (b > 0 && at(a, b - 1, c) > v) || (c > 0 && at(a, b, c - 1) > v))
        {
          return false;
        }
      }
    }
  }
  return true;
}

QvcgBidTensor QvcgBidTensor::scaled(double factor) const
{
  std::vector<double> values = values_;
  for (auto &v : values)
  {
    v *= factor;
  }
  return QvcgBidTensor(owner_, units_, alpha_, std::move(values));
}

QvcgBidTensor qvcg_build_bids(UtilityFn const &value, int owner, double alpha_known, int units)
{
  if (units < 1)
  {
    throw ValidationError("qvcg_build_bids: M must be at least 1");
  }
  int const           side = units + 1;
  double const        step = 1.0 / units;
  std::vector<double> values(static_cast<std::size_t>(side) * side * side);
  std::size_t         k = 0;
  for (int a = 0; a <= units; ++a)
  {
    for (int b = 0; b <= units; ++b)
    {
      for (int c = 0; c <= units; ++c)
      {
        values[k++] = value(Slice(a * step, b * step, c * step));
      }
    }
  }
  return QvcgBidTensor(owner, units, alpha_known, std::move(values));
}

QvcgBidTensor qvcg_build_bids(VspProfile const &profile, double alpha_known, int units)
{
  return qvcg_build_bids([&profile](Slice const &s) { return utility(profile, s); }, profile.id, alpha_known,
                         units);
}

double qvcg_profit(VspProfile const &profile, Slice const &slice, double payment)
{
  return profile.alpha * (utility(profile, slice) - payment);
}

namespace {

using Bundle = std::array<int, kResources>;

// out[c] = max over m <= c of v[m] + table[c - m], on the unit lattice.
void max_plus(QvcgBidTensor const &v, std::vector<double> const &table, std::vector<double> &out)
{
  int const units = v.units();
  out.assign(table.size(), 0.0);
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
            std::size_t const vb = v.index(a, b, 0);
            std::size_t const tb = v.index(ca - a, cb - b, cc);
            for (int c = 0; c <= cc; ++c)
            {
              top = std::max(top, v.values()[vb + c] + table[tb - c]);
            }
          }
        }
        out[v.index(ca, cb, cc)] = top;
      }
    }
  }
}

struct Solution
{
  std::vector<Bundle> bundles;
  double              welfare = 0.0;
};

QvcgResult finish(std::span<QvcgBidTensor const> tensors, std::vector<Bundle> const &bundles,
                  std::vector<double> const &without, bool exact)
{
  int const  n     = static_cast<int>(tensors.size());
  int const  units = tensors[0].units();
  QvcgResult result;
  result.exact = exact;
  result.units.resize(static_cast<std::size_t>(kResources) * n);
  result.reported_values.resize(n);
  Eigen::Matrix3Xd shares(kResources, n);
  for (int i = 0; i < n; ++i)
  {
    auto const &m = bundles[i];
    for (int r = 0; r < kResources; ++r)
    {
      result.units[kResources * i + r] = m[r];
      shares(r, i)                      = static_cast<double>(m[r]) / units;
    }
    result.reported_values[i] = tensors[i].at(m[0], m[1], m[2]);
    result.reported_welfare += result.reported_values[i];
  }
  result.allocation = Allocation(shares);
  result.payments.resize(n);
  for (int i = 0; i < n; ++i)
  {
    double const others_here = result.reported_welfare - result.reported_values[i];
    result.payments[i]       = std::max(without[i] - others_here, 0.0);
  }
  return result;
}

QvcgResult solve_exact(std::span<QvcgBidTensor const> tensors)
{
  int const         n     = static_cast<int>(tensors.size());
  int const         units = tensors[0].units();
  std::size_t const size  = tensors[0].values().size();

  std::vector<std::vector<double>> backward(n + 1, std::vector<double>(size, 0.0));
  for (int k = n - 1; k >= 0; --k)
  {
    max_plus(tensors[k], backward[k + 1], backward[k]);
  }
  std::vector<std::vector<double>> forward(n + 1, std::vector<double>(size, 0.0));
  for (int k = 0; k < n; ++k)
  {
    max_plus(tensors[k], forward[k], forward[k + 1]);
  }

  std::vector<Bundle> bundles(n, Bundle{0, 0, 0});
  Bundle              left{units, units, units};
  for (int k = 0; k < n; ++k)
  {
    auto const  &v      = tensors[k];
    double const target = backward[k][v.index(left[0], left[1], left[2])];
    bool         found  = false;
    for (int a = 0; a <= left[0] && !found; ++a)
    {
      for (int b = 0; b <= left[1] && !found; ++b)
      {
        for (int c = 0; c <= left[2] && !found; ++c)
        {
          double const value = v.at(a, b, c) + backward[k + 1][v.index(left[0] - a, left[1] - b, left[2] - c)];
          if (value == target)
          {
            bundles[k] = {a, b, c};
            left[0] -= a;
            left[1] -= b;
            left[2] -= c;
            found = true;
          }
        }
      }
    }
  }

  // Welfare without i: best split of capacity between VSPs before and after i.
  std::vector<double> without(n, 0.0);
  for (int i = 0; i < n; ++i)
  {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < size; ++c)
    {
      top = std::max(top, forward[i][c] + backward[i + 1][size - 1 - c]);
    }
    without[i] = top;
  }
  return finish(tensors, bundles, without, true);
}

double bundle_value(QvcgBidTensor const &v, Bundle const &m)
{
  return v.at(m[0], m[1], m[2]);
}

// Greedy unit assignment over the active bidders, then first-improvement
// local search over single-unit moves and cross-resource unit exchanges.
Solution solve_greedy(std::span<QvcgBidTensor const> tensors, int skip)
{
  int const n     = static_cast<int>(tensors.size());
  int const units = tensors[0].units();

  Solution sol;
  sol.bundles.assign(n, Bundle{0, 0, 0});
  Bundle left{units, units, units};

  for (;;)
  {
    double best_gain = 0.0;
    int    best_i = -1, best_r = -1;
    for (int i = 0; i < n; ++i)
    {
      if (i == skip)
      {
        continue;
      }
      auto const  &m    = sol.bundles[i];
      double const base = bundle_value(tensors[i], m);
      for (int r = 0; r < kResources; ++r)
      {
        if (left[r] == 0)
        {
          continue;
        }
        Bundle up = m;
        ++up[r];
        double const gain = bundle_value(tensors[i], up) - base;
        if (gain > best_gain)
        {
          best_gain = gain;
          best_i    = i;
          best_r    = r;
        }
      }
    }
    if (best_i < 0)
    {
      break;
    }
    ++sol.bundles[best_i][best_r];
    --left[best_r];
  }

  double scale = 1.0;
  for (int i = 0; i < n; ++i)
  {
    if (i != skip)
    {
      scale += std::abs(tensors[i].values().back());
    }
  }
  double const tol = 1e-12 * scale;

  constexpr int kMaxPasses = 100000;
  for (int pass = 0; pass < kMaxPasses; ++pass)
  {
    bool improved = false;
    for (int i = 0; i < n; ++i)
    {
      if (i == skip)
      {
        continue;
      }
      for (int j = 0; j < n; ++j)
      {
        if (j == i || j == skip)
        {
          continue;
        }
        for (int r = 0; r < kResources; ++r)
        {
          if (sol.bundles[i][r] == 0)
          {
            continue;
          }
          // Move one unit of r from i to j.
          Bundle mi = sol.bundles[i], mj = sol.bundles[j];
          --mi[r];
          ++mj[r];
          double const before = bundle_value(tensors[i], sol.bundles[i]) + bundle_value(tensors[j], sol.bundles[j]);
          double       after  = bundle_value(tensors[i], mi) + bundle_value(tensors[j], mj);
          if (after > before + tol)
          {
            sol.bundles[i] = mi;
            sol.bundles[j] = mj;
            improved       = true;
            continue;
          }
          // Exchange: i gives r to j, j gives q back to i.
          for (int q = 0; q < kResources; ++q)
          {
            if (q == r || mj[q] == 0)
            {
              continue;
            }
            Bundle ei = mi, ej = mj;
            ++ei[q];
            --ej[q];
            after = bundle_value(tensors[i], ei) + bundle_value(tensors[j], ej);
            if (after > before + tol)
            {
              sol.bundles[i] = ei;
              sol.bundles[j] = ej;
              improved       = true;
              break;
            }
          }
        }
      }
    }
    if (!improved)
    {
      break;
    }
  }

  for (int i = 0; i < n; ++i)
  {
    if (i != skip)
    {
      sol.welfare += bundle_value(tensors[i], sol.bundles[i]);
    }
  }
  return sol;
}

}  // namespace

QvcgResult qvcg_allocate(std::span<QvcgBidTensor const> tensors, QvcgSolver solver, double work_limit)
{
  if (tensors.empty())
  {
    throw ValidationError("qvcg_allocate: no bidders");
  }
  int const units = tensors[0].units();
  for (auto const &t : tensors)
  {
    if (t.units() != units)
    {
      throw ValidationError("qvcg_allocate: bid tensors disagree on M");
    }
  }
  int const    n        = static_cast<int>(tensors.size());
  double const work     = 2.0 * lattice_work(n, units);
  bool const   in_limit = work <= work_limit;
  if (solver == QvcgSolver::kExact && !in_limit)
  {
    throw EnumerationLimitError("qvcg_allocate: exact search for N=" + std::to_string(n) +
                                ", M=" + std::to_string(units) + " exceeds the work limit");
  }
  if (solver == QvcgSolver::kExact || (solver == QvcgSolver::kAuto && in_limit))
  {
    return solve_exact(tensors);
  }

  Solution const      main = solve_greedy(tensors, -1);
  std::vector<double> without(n, 0.0);
  for (int i = 0; i < n; ++i)
  {
    without[i] = n > 1 ? solve_greedy(tensors, i).welfare : 0.0;
  }
  return finish(tensors, main.bundles, without, false);
}

}  // namespace dvcg
