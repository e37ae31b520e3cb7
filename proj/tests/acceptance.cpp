// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (default: all ten)

#include "dvcg/bill.hpp"
#include "dvcg/env.hpp"
#include "dvcg/experiments.hpp"
#include "dvcg/marl.hpp"
#include "dvcg/mechanism.hpp"
#include "dvcg/qvcg.hpp"
#include "dvcg/run_dir.hpp"
#include "dvcg/scenario.hpp"

#include "gradcheck.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace dvcg;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
  bool        pass = false;
  std::string detail;
};

std::string fmt(char const *f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PretrainCache &shared_cache()
{
  static PretrainCache cache;
  return cache;
}

RunOptions options()
{
  RunOptions o;
  o.cache = &shared_cache();
  if (std::getenv("DVCG_ACCEPTANCE_VERBOSE") != nullptr)
  {
    o.progress = [](std::string const &msg) { std::cerr << "  .. " << msg << '\n'; };
  }
  return o;
}

ExperimentResult run_builtin(std::string const &name)
{
  Scenario const s      = resolve_scenario(name);
  auto const     result = run_experiment(s, options());
  std::cerr << "  " << name << " verdict: " << result.verdict.dump() << '\n';
  return result;
}

Outcome table2_exact()
{
  std::vector<std::vector<std::uint64_t>> const reference{
      {5000, 10000, 15000, 20000, 25000},
      {80000, 160000, 240000, 320000, 400000},
      {10000000, 20000000, 30000000, 40000000, 50000000}};
  auto const rows  = table2({10, 20, 30, 40, 50}, 500, {0.05, 0.01});
  int        exact = 0;
  for (std::size_t r = 0; r < rows.size() && r < reference.size(); ++r)
    for (std::size_t c = 0; c < reference[r].size() && c < rows[r].floats.size(); ++c)
      exact += rows[r].floats[c] == reference[r][c] ? 1 : 0;
  return {exact == 15, std::to_string(exact) + "/15 cells exact"};
}

Outcome oracle_equivalence()
{
  bool   coarse = true;
  double worst  = 0.0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5, 42})
  {
    auto const                 ps = sample_profiles(3, seed);
    std::vector<QvcgBidTensor> t;
    for (auto const &p : ps)
      t.push_back(qvcg_build_bids(p, p.alpha, 5));
    double const q = social_welfare(ps, qvcg_allocate(t, QvcgSolver::kExact).allocation);
    double const o = oracle_optimal_allocation(ps, 0.2).welfare;
    worst          = std::max(worst, std::abs(q - o) / std::max(1.0, o));
    coarse         = coarse && std::abs(q - o) <= 1e-12 * std::max(1.0, o);
  }
  // The M = 100 lattice oracle is out of reach at N = 5; the continuous dual
  // bound sits above it, so clearing 98% of the bound clears 98% of the oracle.
  double lowest = 1.0;
  for (std::uint64_t seed : {1, 2, 3, 4, 5, 42})
  {
    auto const                 ps = sample_profiles(5, seed);
    std::vector<QvcgBidTensor> t;
    for (auto const &p : ps)
      t.push_back(qvcg_build_bids(p, p.alpha, 100));
    double const q = social_welfare(ps, qvcg_allocate(t).allocation);
    lowest         = std::min(lowest, q / continuous_welfare_bound(ps));
  }
  return {coarse && lowest >= 0.98,
          "N=3 M=5 max rel diff " + fmt("%.2e", worst) + "; N=5 M=100 min ratio to bound " + fmt("%.6f", lowest)};
}

Outcome gradient_oracle()
{
  double      worst = 0.0;
  std::string worst_name;
  for (auto const &arch : dvcg::testing::trained_architectures())
  {
    double const e = dvcg::testing::directional_gradient_error(arch, 100, 2024);
    if (e >= worst)
    {
      worst      = e;
      worst_name = arch.name;
    }
  }
  return {worst < 1e-5, "max relative error " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

Outcome welfare_property()
{
  auto const   r = run_builtin("convergence_n10");
  std::string  detail;
  for (auto const &[name, v] : r.verdict["variants"].items())
  {
    detail += name + " max " + fmt("%.3f", v["median_max_smoothed"].get<double>()) + " e90 " +
              fmt("%.0f", v["median_episodes_to_90"].get<double>()) + "; ";
  }
  return {r.pass(), detail};
}

Outcome dsic_probe()
{
  auto const r = run_builtin("dsic_n5");
  return {r.pass(), "median z over " + fmt("%.2f", r.verdict["median_z_over"].get<double>()) + ", under " +
                        fmt("%.2f", r.verdict["median_z_under"].get<double>())};
}

Outcome collusion_dvcg()
{
  auto const r = run_builtin("collusion_dvcg_n5");
  return {r.pass(), "median bid ratio " + fmt("%.3f", r.verdict["median_bid_ratio"].get<double>()) +
                        ", profit excess " + fmt("%.4f", r.verdict["median_profit_excess"].get<double>())};
}

Outcome collusion_qvcg()
{
  auto const r = run_builtin("collusion_qvcg_n5");
  auto const w = r.verdict["witness"];
  if (w.is_null())
  {
    return {false, "no witness among " + std::to_string(r.verdict["deviations"].get<int>()) + " deviations"};
  }
  return {r.pass() && r.verdict["deviations"].get<int>() == 25,
          "witness factors " + w["factors"].dump() + " profit gain " + fmt("%.3f", w["profit_gain"].get<double>()) +
              " welfare loss " + fmt("%.3f", w["welfare_loss"].get<double>())};
}

Outcome ablation_nvi()
{
  auto const r = run_builtin("ablation_nvi_n5");
  return {r.pass(), "median profit gain " + fmt("%.4f", r.verdict["median_profit_gain"].get<double>()) +
                        ", welfare drop " + fmt("%.4f", r.verdict["median_welfare_drop"].get<double>())};
}

BillRecord report_record(int round, double u, double g)
{
  BillRecord r;
  r.round       = round;
  r.observation = Allocation::uniform(1).shares();
  r.allocation  = r.observation;
  r.actions.assign(1, ActionIndex{3, 3, 3});
  r.bids.assign(1, 1.0);
  r.loans.assign(1, 1.0);
  r.estimated_utilities.assign(1, 1.0);
  r.impacts.assign(1, 0.0);
  r.interests.assign(1, 0.0);
  r.taxes.assign(1, 0.0);
  r.report = FinancialReport{round - 1, {u}, {g}};
  return r;
}

Outcome mechanism_suite()
{
  std::vector<std::string> failed;
  auto check = [&](bool ok, char const *name) {
    if (!ok)
      failed.emplace_back(name);
  };
  Rng                                    rng(9);
  std::uniform_real_distribution<double> u(0.0, 200.0);

  bool budget = true;
  for (int k = 0; k < 2000; ++k)
  {
    std::vector<double> bids(1 + k % 50);
    for (auto &x : bids)
      x = u(rng);
    double const pool  = 10 * u(rng);
    auto const   loans = grant_loans({pool, 0}, bids);
    budget = budget && std::abs(std::accumulate(loans.begin(), loans.end(), 0.0) - pool) <= 1e-9 * std::max(1.0, pool);
  }
  std::vector<double> const pair{1, 3};
  auto const                loans = grant_loans({100, 0}, pair);
  budget = budget && std::abs(loans[0] - 25) < 1e-12 && std::abs(loans[1] - 75) < 1e-12;
  budget = budget && grant_loans({100, 0}, std::vector<double>{0, 0}) == std::vector<double>{0, 0};
  check(budget, "budget_exactness");

  std::vector<double> const under{10, 20}, over{24, 24, 24, 24, 24};
  Allocation const          s(Eigen::Matrix3Xd::Constant(3, 2, 0.25));
  Rng                       a(1), b(1);
  bool clamp = perturbation_scale(under, 100) == 0.0 && perturbation_scale(over, 100) == 4.0;
  clamp      = clamp && perturbed_allocation(s, under, 100.0, a) == s && a() == b();
  check(clamp, "delta_clamp");

  bool tax = compute_tax(2, 3, 1) == 8.0 && compute_tax(1, 10, 0) == 10.0 && compute_tax(1.3, 0, 0) == 0.0;
  tax      = tax && compute_tax(1.7, compute_impact(80, 80), compute_interest(37.5, 37.5)) == 0.0;
  for (int k = 0; k < 2000; ++k)
  {
    double const z = compute_tax(0.1 + u(rng), compute_impact(u(rng), u(rng)), compute_interest(u(rng), u(rng)));
    tax            = tax && z >= 0.0;
  }
  check(tax, "tax_composition");

  bool bounds = clamp_sw_minus_i(30, 10, 50) == 30 && clamp_sw_minus_i(80, 10, 50) == 50 &&
                clamp_sw_minus_i(-3, 10, 50) == 10;
  for (int k = 0; k < 2000; ++k)
  {
    double lo = u(rng) - 100, hi = u(rng) - 100;
    if (lo > hi)
      std::swap(lo, hi);
    double const v = clamp_sw_minus_i(3 * u(rng) - 300, lo, hi);
    bounds         = bounds && v >= lo && v <= hi;
  }
  check(bounds, "clamp_bounds");

  Bill                                   bill(20000);
  std::uniform_real_distribution<double> util(50, 150);
  std::normal_distribution<double>       noise(0, 5);
  for (int r = 1; r <= 10000; ++r)
  {
    double const x = util(rng);
    bill.append(report_record(r, x, 1.5 * x + noise(rng)));
  }
  double const alpha = estimate_alpha(bill, 0);
  check(std::abs(alpha - 1.5) <= 0.01 && std::abs(bill.alpha_estimate(0) - alpha) < 1e-9, "alpha_estimator");

  std::string detail = failed.empty() ? "budget, delta clamp, tax, clamp bounds, alpha " + fmt("%.4f", alpha) : "";
  for (auto const &f : failed)
    detail += f + " failed; ";
  return {failed.empty(), detail};
}

std::string slurp(fs::path const &p)
{
  std::ifstream     in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Outcome determinism()
{
  fs::path const root = fs::temp_directory_path() / ("dvcg_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);

  auto reduced = [](std::string const &name) {
    Scenario s                         = *builtin_scenario(name);
    s.seeds                            = 2;
    s.pretrain_episodes                = 6;
    s.probe_rounds                     = 80;
    s.collusion_rounds                 = 80;
    s.converged_window                 = 40;
    s.eval_rounds                      = 10;
    s.grid_step                        = 0.25;
    s.qvcg_units                       = {2, 4};
    s.population_sizes                 = {3, 4};
    s.market.warmup_rounds             = 10;
    s.market.mdp.episodes              = 6;
    s.market.mdp.rounds_per_episode    = 5;
    s.market.mdp.batch_size            = 8;
    s.market.learner.batch_size        = 8;
    s.market.deviation.round_a         = 30;
    s.market.deviation.round_b         = 55;
    if (s.num_vsps > 5)
      s.num_vsps = 4;
    return s;
  };

  std::vector<std::string> names{"smoke", "convergence_n10", "welfare_sweep", "dsic_n5", "collusion_dvcg_n5",
                                 "collusion_qvcg_n5", "ablation_nvi_n5"};
  int         identical = 0;
  std::string differs;
  for (auto const &name : names)
  {
    Scenario const s    = name == "smoke" || name == "collusion_qvcg_n5" ? *builtin_scenario(name) : reduced(name);
    fs::path const file = root / (name + ".json");
    std::ofstream(file) << scenario_to_json(s).dump(2);
    std::vector<std::string> metrics;
    for (char const *copy : {"a", "b"})
    {
      RunConfig c;
      c.scenario      = file.string();
      c.out           = root / (name + "_" + copy);
      c.deterministic = true;
      cmd_run(c);
      std::string blob = slurp(c.out / "metrics.jsonl");
      for (auto const &entry : fs::directory_iterator(c.out / "series"))
        blob += entry.path().filename().string() + slurp(entry.path());
      metrics.push_back(std::move(blob));
    }
    if (metrics[0] == metrics[1] && !metrics[0].empty())
      ++identical;
    else
      differs += name + " ";
  }
  fs::remove_all(root);
  return {identical == static_cast<int>(names.size()),
          std::to_string(identical) + "/" + std::to_string(names.size()) + " scenarios byte-identical" +
              (differs.empty() ? "" : "; differ: " + differs)};
}

struct Criterion
{
  int                      id;
  char const              *name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char **argv)
{
  std::vector<Criterion> const all{
      {1, "information exchange table exact", table2_exact},
      {2, "QVCG matches grid oracle", oracle_equivalence},
      {3, "backprop matches finite differences", gradient_oracle},
      {4, "DVCG variants reach 85% of oracle, MF no slower than independent", welfare_property},
      {5, "truthful bidding beats both scripted deviations", dsic_probe},
      {6, "DVCG coalition bids stay truthful", collusion_dvcg},
      {7, "QVCG coalition misreport witness", collusion_qvcg},
      {8, "removing interest helps the coalition and hurts welfare", ablation_nvi},
      {9, "mechanism arithmetic suite", mechanism_suite},
      {10, "deterministic reruns are byte-identical", determinism},
  };

  std::set<int> wanted;
  for (int k = 1; k < argc; ++k)
    wanted.insert(std::atoi(argv[k]));

  int failures = 0;
  for (auto const &c : all)
  {
    if (!wanted.empty() && wanted.count(c.id) == 0)
      continue;
    auto const t0 = std::chrono::steady_clock::now();
    Outcome    o;
    try
    {
      o = c.run();
    }
    catch (std::exception const &e)
    {
      o = {false, std::string("exception: ") + e.what()};
    }
    double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += o.pass ? 0 : 1;
    std::printf("criterion %2d: %s  %s [%s] (%.1fs)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
