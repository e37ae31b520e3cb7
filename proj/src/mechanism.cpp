#include "dvcg/mechanism.hpp"

#include "dvcg/errors.hpp"

#include <cmath>
#include <numeric>

namespace dvcg {

VcPool issue_currency(std::span<double const> voi_estimates, int round)
{
  VcPool pool;
  pool.round = round;
  for (double v : voi_estimates)
  {
    pool.amount += std::max(v, 0.0);
  }
  return pool;
}

std::vector<double> grant_loans(VcPool const &pool, std::span<double const> bids)
{
  std::vector<double> loans(bids.size(), 0.0);
  double              total = 0.0;
  for (double x : bids)
  {
    if (x < 0.0 || !std::isfinite(x))
    {
      throw ValidationError("grant_loans: bids must be finite and nonnegative");
    }
    total += x;
  }
  if (total <= 0.0)
  {
    return loans;
  }
  for (std::size_t i = 0; i < bids.size(); ++i)
  {
    loans[i] = pool.amount * bids[i] / total;
  }
  return loans;
}

double perturbation_scale(std::span<double const> bids, double sw_star)
{
  if (bids.empty())
  {
    return 0.0;
  }
  double const total = std::accumulate(bids.begin(), bids.end(), 0.0);
  return std::max(total - sw_star, 0.0) / static_cast<double>(bids.size());
}

Allocation perturbed_allocation(Allocation const &s_star, double noise_std, Rng &rng)
{
  if (!(noise_std > 0.0))
  {
    return normalize(s_star.shares());
  }
  std::normal_distribution<double> noise(0.0, noise_std);
  Eigen::Matrix3Xd                 raw = s_star.shares();
  // Column-major draw order: VSP by VSP, resource within VSP.
  for (Eigen::Index c = 0; c < raw.cols(); ++c)
  {
    for (int r = 0; r < kResources; ++r)
    {
      raw(r, c) += noise(rng);
    }
  }
  return normalize(std::move(raw));
}

Allocation perturbed_allocation(Allocation const &s_star, std::span<double const> bids, double sw_star,
                                Rng &rng, NoiseUnits units)
{
  double delta = perturbation_scale(bids, sw_star);
  if (units == NoiseUnits::kPoolFraction && delta > 0.0)
  {
    delta = sw_star > 0.0 ? delta / sw_star : 1.0;
  }
  return perturbed_allocation(s_star, delta, rng);
}

double compute_interest(double loan, double u_star)
{
  return std::abs(loan - u_star);
}

double compute_impact(double sw_minus_i_opt, double sw_minus_i_realized)
{
  return std::max(sw_minus_i_opt - sw_minus_i_realized, 0.0);
}

double compute_tax(double alpha_hat, double impact, double interest)
{
  if (!(alpha_hat > 0.0))
  {
    throw ValidationError("compute_tax: alpha estimate must be positive");
  }
  return alpha_hat * (std::max(impact, 0.0) + std::max(interest, 0.0));
}

double estimate_alpha(Bill const &bill, int vsp, double u_floor)
{
  double      sum   = 0.0;
  std::size_t count = 0;
  for (auto const &record : bill.records())
  {
    if (record.report.empty())
    {
      continue;
    }
    if (vsp < 0 || static_cast<std::size_t>(vsp) >= record.report.utilities.size())
    {
      throw ValidationError("estimate_alpha: vsp index out of range");
    }
    double const u = record.report.utilities[vsp];
    if (u > u_floor)
    {
      sum += record.report.gross_profits[vsp] / u;
      ++count;
    }
  }
  if (count == 0)
  {
    throw ColdStartError("estimate_alpha: no qualifying reports for vsp " + std::to_string(vsp));
  }
  return sum / static_cast<double>(count);
}

}  // namespace dvcg
