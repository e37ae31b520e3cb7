#include "dvcg/bill.hpp"
#include "dvcg/errors.hpp"
#include "dvcg/marl.hpp"
#include "dvcg/mechanism.hpp"
#include "dvcg/qvcg.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace dvcg;

namespace {

BillRecord record_with_report(int round, std::vector<double> utilities, std::vector<double> gross)
{
  int const  n = static_cast<int>(utilities.size());
  BillRecord r;
  r.round       = round;
  r.observation = Allocation::uniform(n).shares();
  r.allocation  = r.observation;
  r.actions.assign(n, ActionIndex{3, 3, 3});
  r.bids.assign(n, 1.0);
  r.loans.assign(n, 1.0);
  r.estimated_utilities.assign(n, 1.0);
  r.impacts.assign(n, 0.0);
  r.interests.assign(n, 0.0);
  r.taxes.assign(n, 0.0);
  r.report = FinancialReport{round - 1, std::move(utilities), std::move(gross)};
  return r;
}

}  // namespace

TEST(IssueCurrency, SumsEstimates)
{
  std::vector<double> e{10, 20, 30};
  EXPECT_EQ(issue_currency(e).amount, 60.0);
  std::vector<double> z{0, 0};
  EXPECT_EQ(issue_currency(z).amount, 0.0);
  std::vector<double> neg{-5, 5};
  EXPECT_EQ(issue_currency(neg).amount, 5.0);
}

TEST(Loans, Examples)
{
  std::vector<double> a{25, 75}, b{1, 3}, c{7, 7};
  EXPECT_EQ(grant_loans({100, 0}, a), (std::vector<double>{25, 75}));
  EXPECT_EQ(grant_loans({100, 0}, b), (std::vector<double>{25, 75}));
  EXPECT_EQ(grant_loans({100, 0}, c), (std::vector<double>{50, 50}));
  std::vector<double> zero{0, 0, 0};
  EXPECT_EQ(grant_loans({100, 0}, zero), (std::vector<double>{0, 0, 0}));
}

TEST(Loans, BudgetExactProperty)
{
  Rng                                    rng(13);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int k = 0; k < 1000; ++k)
  {
    std::vector<double> bids(1 + k % 40);
    for (auto &x : bids)
      x = u(rng);
    double const pool  = u(rng) * 10;
    auto const   loans = grant_loans({pool, 0}, bids);
    EXPECT_NEAR(std::accumulate(loans.begin(), loans.end(), 0.0), pool, 1e-9 * std::max(1.0, pool));
  }
}

TEST(Loans, RejectsNegativeBids)
{
  std::vector<double> bids{1, -1};
  EXPECT_THROW(grant_loans({10, 0}, bids), ValidationError);
}

TEST(Perturbation, ScaleClampsAtZero)
{
  std::vector<double> low{10, 20};
  EXPECT_EQ(perturbation_scale(low, 100), 0.0);
  std::vector<double> bids{24, 24, 24, 24, 24};
  EXPECT_DOUBLE_EQ(perturbation_scale(bids, 100), 4.0);
}

TEST(Perturbation, ZeroScaleIsExactAndDrawsNothing)
{
  Allocation const s(Eigen::Matrix3Xd::Constant(3, 4, 0.2));
  std::vector<double> bids{10, 10, 10, 10};
  Rng                 rng(1), untouched(1);
  EXPECT_EQ(perturbed_allocation(s, bids, 100.0, rng), s);
  EXPECT_EQ(rng(), untouched());
}

TEST(Perturbation, NoiseScaleMonteCarlo)
{
  // Delta = 0.01 in share units; entries stay inside [0, 1] with feasible rows.
  Allocation const    s(Eigen::Matrix3Xd::Constant(3, 2, 0.25));
  std::vector<double> bids{50.01, 50.01};
  Rng                 rng(77);
  double              delta = perturbation_scale(bids, 100.0);
  ASSERT_NEAR(delta, 0.01, 1e-12);
  Eigen::ArrayXXd sum = Eigen::ArrayXXd::Zero(3, 2), sq = Eigen::ArrayXXd::Zero(3, 2);
  int const       draws = 1000;
  for (int k = 0; k < draws; ++k)
  {
    Eigen::ArrayXXd const d = perturbed_allocation(s, bids, 100.0, rng, NoiseUnits::kCurrency).shares().array() - 0.25;
    sum += d;
    sq += d * d;
  }
  Eigen::ArrayXXd const mean = sum / draws;
  Eigen::ArrayXXd const sd   = (sq / draws - mean * mean).sqrt();
  EXPECT_TRUE(((sd - delta).abs() < 0.1 * delta).all()) << sd;
}

TEST(Perturbation, PoolFractionUnits)
{
  Allocation const    s(Eigen::Matrix3Xd::Constant(3, 2, 0.25));
  std::vector<double> bids{150, 150};
  Rng                 a(5), b(5);
  // Delta = 50, pool fraction 0.25 of sw_star = 200
  EXPECT_EQ(perturbed_allocation(s, bids, 200.0, a, NoiseUnits::kPoolFraction), perturbed_allocation(s, 0.25, b));
}

TEST(Interest, Examples)
{
  EXPECT_EQ(compute_interest(40, 40), 0.0);
  EXPECT_EQ(compute_interest(50, 40), 10.0);
  EXPECT_EQ(compute_interest(30, 40), 10.0);
}

TEST(Impact, Examples)
{
  EXPECT_EQ(compute_impact(70, 70), 0.0);
  EXPECT_EQ(compute_impact(100, 90), 10.0);
  EXPECT_EQ(compute_impact(90, 100), 0.0);
}

TEST(Tax, Examples)
{
  EXPECT_EQ(compute_tax(1.3, 0, 0), 0.0);
  EXPECT_EQ(compute_tax(2, 3, 1), 8.0);
  EXPECT_EQ(compute_tax(1, 10, 0), 10.0);
  EXPECT_THROW(compute_tax(0, 1, 1), ValidationError);
}

TEST(Tax, TruthfulNoExternalityComposesToZero)
{
  double const u_star = 37.5;
  double const tax    = compute_tax(1.7, compute_impact(80, 80), compute_interest(u_star, u_star));
  EXPECT_EQ(tax, 0.0);
}

TEST(Tax, NonnegativeProperty)
{
  Rng                                    rng(3);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int k = 0; k < 1000; ++k)
  {
    double const z = compute_tax(0.1 + std::abs(u(rng)), compute_impact(u(rng), u(rng)), compute_interest(u(rng), u(rng)));
    EXPECT_GE(z, 0.0);
  }
}

TEST(SwMinusIClamp, Bounds)
{
  EXPECT_EQ(clamp_sw_minus_i(30, 10, 50), 30.0);
  EXPECT_EQ(clamp_sw_minus_i(80, 10, 50), 50.0);
  EXPECT_EQ(clamp_sw_minus_i(-3, 10, 50), 10.0);
  Rng                                    rng(4);
  std::uniform_real_distribution<double> u(-1000, 1000);
  for (int k = 0; k < 1000; ++k)
  {
    double lo = u(rng), hi = u(rng);
    if (lo > hi)
      std::swap(lo, hi);
    double const v = clamp_sw_minus_i(u(rng), lo, hi);
    EXPECT_GE(v, lo);
    EXPECT_LE(v, hi);
  }
}

TEST(AlphaEstimate, ConstantAndMeanRatios)
{
  Bill bill(100);
  for (int r = 1; r <= 3; ++r)
    bill.append(record_with_report(r, {10.0, 5.0}, {20.0, 9.5 + r * 0.0}));
  EXPECT_DOUBLE_EQ(estimate_alpha(bill, 0), 2.0);
  Bill two(100);
  two.append(record_with_report(1, {10.0}, {19.0}));
  two.append(record_with_report(2, {10.0}, {21.0}));
  EXPECT_DOUBLE_EQ(estimate_alpha(two, 0), 2.0);
  EXPECT_NEAR(two.alpha_estimate(0), 2.0, 1e-12);
}

TEST(AlphaEstimate, ColdStartAndFloor)
{
  Bill empty(10);
  EXPECT_THROW(estimate_alpha(empty, 0), ColdStartError);
  Bill tiny(10);
  tiny.append(record_with_report(1, {0.05}, {1.0}));
  EXPECT_THROW(estimate_alpha(tiny, 0), ColdStartError);
  EXPECT_THROW(tiny.alpha_estimate(0), ColdStartError);
}

TEST(AlphaEstimate, MonteCarloConsistency)
{
  Bill                                   bill(20000);
  Rng                                    rng(30);
  std::uniform_real_distribution<double> u(50, 150);
  std::normal_distribution<double>       w(0, 5);
  for (int r = 1; r <= 10000; ++r)
  {
    double const util = u(rng);
    bill.append(record_with_report(r, {util}, {1.5 * util + w(rng)}));
  }
  EXPECT_NEAR(estimate_alpha(bill, 0), 1.5, 0.01);
  EXPECT_NEAR(bill.alpha_estimate(0), estimate_alpha(bill, 0), 1e-9);
}

TEST(Bill, FifoEvictionAndStats)
{
  Bill bill(3);
  for (int r = 1; r <= 5; ++r)
    bill.append(record_with_report(r, {double(r), 10.0 - r}, {0, 0}));
  EXPECT_EQ(bill.size(), 3u);
  EXPECT_EQ(bill.appended(), 5u);
  EXPECT_EQ(bill.at(0).round, 3);
  EXPECT_EQ(bill.back().round, 5);
  auto const s = bill.stats();
  EXPECT_EQ(s.welfare_max, 10.0);
  EXPECT_EQ(s.others_max[0], 7.0);  // max of 10 - r over r = 3..5
  EXPECT_EQ(s.others_max[1], 5.0);
}

TEST(Bill, RecordRoundTrip)
{
  auto               r = record_with_report(4, {1.25, 2.5}, {3.0, 4.0});
  r.actions[1]         = {0, 6, 2};
  r.pool               = 12.5;
  std::ostringstream out;
  write_record(out, r);
  auto const back = read_record(out.str());
  EXPECT_EQ(back.round, 4);
  EXPECT_EQ(back.actions[1], (ActionIndex{0, 6, 2}));
  EXPECT_EQ(back.report.utilities, r.report.utilities);
  EXPECT_EQ(back.allocation, r.allocation);
  EXPECT_EQ(back.pool, 12.5);
}

TEST(QvcgBids, SingleUnitTensor)
{
  VspProfile p;
  p.beta      = 100;
  p.xi        = {2, 3, 4};
  auto const t = qvcg_build_bids(p, 1.0, 1);
  EXPECT_EQ(t.side(), 2);
  EXPECT_EQ(t.at(1, 1, 1), utility(p, Slice::Ones()));
  EXPECT_EQ(t.at(0, 0, 0), 0.0);
}

TEST(QvcgBids, LinearUtilityIncrements)
{
  auto const t = qvcg_build_bids([](Slice const &s) { return s.sum(); }, 0, 1.0, 10);
  for (int a = 0; a < 10; ++a)
  {
    EXPECT_NEAR(t.at(a + 1, 3, 7) - t.at(a, 3, 7), 0.1, 1e-12);
    EXPECT_NEAR(t.at(2, a + 1, 7) - t.at(2, a, 7), 0.1, 1e-12);
    EXPECT_NEAR(t.at(2, 3, a + 1) - t.at(2, 3, a), 0.1, 1e-12);
  }
  EXPECT_TRUE(t.is_monotone());
}

TEST(QvcgBids, SpotEntry)
{
  VspProfile p;
  p.beta = 100;
  p.xi   = {10, 0, 0};
  EXPECT_NEAR(qvcg_build_bids(p, 1.0, 10).at(5, 0, 0), 99.32620530009145, 1e-9);
}

TEST(Qvcg, SingleBidderTakesAll)
{
  auto const ps = sample_profiles(1, 3);
  std::vector<QvcgBidTensor> t{qvcg_build_bids(ps[0], 1.0, 4)};
  auto const r = qvcg_allocate(t);
  EXPECT_EQ(r.allocation.slice(0), Slice::Ones());
  EXPECT_EQ(r.payments[0], 0.0);
}

TEST(Qvcg, IdenticalBiddersSplitEvenly)
{
  VspProfile p;
  p.beta = 150;
  p.xi   = {3, 5, 7};
  std::vector<QvcgBidTensor> t{qvcg_build_bids(p, 1.0, 4), qvcg_build_bids(p, 1.0, 4)};
  t[1] = QvcgBidTensor(1, 4, 1.0, t[1].values());
  auto const r = qvcg_allocate(t, QvcgSolver::kExact);
  // Utility depends on xi . s only, so several lattice points tie with the even split.
  double const even = utility(p, Slice::Constant(0.5));
  EXPECT_NEAR(utility(p, r.allocation.slice(0)), even, 1e-9);
  EXPECT_NEAR(utility(p, r.allocation.slice(1)), even, 1e-9);
  EXPECT_NEAR(r.payments[0], r.payments[1], 1e-9);
}

TEST(Qvcg, MatchesGridOracleSeed42)
{
  auto const                 ps = sample_profiles(3, 42);
  std::vector<QvcgBidTensor> t;
  for (auto const &p : ps)
    t.push_back(qvcg_build_bids(p, p.alpha, 5));
  auto const r = qvcg_allocate(t, QvcgSolver::kExact);
  EXPECT_DOUBLE_EQ(social_welfare(ps, r.allocation), oracle_optimal_allocation(ps, 0.2).welfare);
  EXPECT_TRUE(r.exact);
}

TEST(Qvcg, PaymentsBoundedByReportedValue)
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
  {
    auto const                 ps = sample_profiles(4, seed);
    std::vector<QvcgBidTensor> t;
    for (auto const &p : ps)
      t.push_back(qvcg_build_bids(p, p.alpha, 4));
    auto const r = qvcg_allocate(t);
    for (int i = 0; i < 4; ++i)
    {
      EXPECT_GE(r.payments[i], -1e-9);
      EXPECT_LE(r.payments[i], r.reported_values[i] + 1e-9);
    }
  }
}

TEST(Qvcg, WelfareNondecreasingOnNestedGrids)
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
  {
    auto const ps = sample_profiles(3, seed);
    auto       w  = [&](int m) {
      std::vector<QvcgBidTensor> t;
      for (auto const &p : ps)
        t.push_back(qvcg_build_bids(p, p.alpha, m));
      return social_welfare(ps, qvcg_allocate(t, QvcgSolver::kExact).allocation);
    };
    EXPECT_GE(w(6) + 1e-9, w(3));
    EXPECT_GE(w(8) + 1e-9, w(4));
  }
}

TEST(Qvcg, GreedyNeverBeatsExact)
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
  {
    auto const                 ps = sample_profiles(3, seed);
    std::vector<QvcgBidTensor> t;
    for (auto const &p : ps)
      t.push_back(qvcg_build_bids(p, p.alpha, 6));
    double const exact  = qvcg_allocate(t, QvcgSolver::kExact).reported_welfare;
    auto const   greedy = qvcg_allocate(t, QvcgSolver::kGreedy);
    EXPECT_LE(greedy.reported_welfare, exact + 1e-9);
    EXPECT_GE(greedy.reported_welfare, 0.97 * exact);
    EXPECT_FALSE(greedy.exact);
  }
}

TEST(Qvcg, GuardAndValidation)
{
  auto const                 ps = sample_profiles(5, 1);
  std::vector<QvcgBidTensor> t;
  for (auto const &p : ps)
    t.push_back(qvcg_build_bids(p, p.alpha, 40));
  EXPECT_THROW(qvcg_allocate(t, QvcgSolver::kExact), EnumerationLimitError);
  std::vector<QvcgBidTensor> none;
  EXPECT_THROW(qvcg_allocate(none), ValidationError);
  EXPECT_THROW(QvcgBidTensor(0, 2, 1.0, std::vector<double>(5)), ValidationError);
}
