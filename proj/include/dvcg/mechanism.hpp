#pragma once

#include "dvcg/bill.hpp"
#include "dvcg/env.hpp"

#include <span>
#include <vector>

namespace dvcg {

/// VoI currency held by the bank for one round.
struct VcPool
{
  double amount = 0.0;
  int    round  = 0;
};

/// Pool equal to the summed (clipped at zero) VoI estimates.
VcPool issue_currency(std::span<double const> voi_estimates, int round = 0);

/// Proportional loans K_i = pool * x_i / sum(x). All-zero bids give zero loans.
std::vector<double> grant_loans(VcPool const &pool, std::span<double const> bids);

/// max(sum(bids) - sw_star, 0) / N, in VC.
double perturbation_scale(std::span<double const> bids, double sw_star);

/// Unit of the Gaussian noise added to the optimal shares.
enum class NoiseUnits
{
  kCurrency,      // standard deviation = Delta
  kPoolFraction,  // standard deviation = Delta / sw_star
};

/// normalize(s_star + N(0, std^2)) i.i.d. per entry; no draw at all when std is 0.
Allocation perturbed_allocation(Allocation const &s_star, double noise_std, Rng &rng);

Allocation perturbed_allocation(Allocation const &s_star, std::span<double const> bids, double sw_star,
                                Rng &rng, NoiseUnits units = NoiseUnits::kCurrency);

double compute_interest(double loan, double u_star);

/// Welfare others lose because of the VSP, floored at zero.
double compute_impact(double sw_minus_i_opt, double sw_minus_i_realized);

double compute_tax(double alpha_hat, double impact, double interest);

inline constexpr double kDefaultUtilityFloor = 0.1;

/// Mean of G_i / U_i over reports with U_i > u_floor.
/// Throws ColdStartError when no report qualifies.
double estimate_alpha(Bill const &bill, int vsp, double u_floor = kDefaultUtilityFloor);

}  // namespace dvcg
