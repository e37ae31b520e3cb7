#include "dvcg/errors.hpp"
#include "dvcg/experiments.hpp"
#include "dvcg/run_dir.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>

namespace {

enum Exit
{
  kOk         = 0,
  kValidation = 1,
  kNumeric    = 2,
  kVerdict    = 3,
};

int print_table2(std::vector<int> const &ns, int rounds, std::vector<double> const &quantizations, bool raw)
{
  auto const rows = dvcg::table2(ns, rounds, quantizations);
  std::printf("%-14s", raw ? "floats" : "floats x1e6");
  for (int n : ns)
  {
    std::printf("%14d", n);
  }
  std::printf("\n");
  for (auto const &row : rows)
  {
    std::printf("%-14s", row.label.c_str());
    for (auto v : row.floats)
    {
      if (raw)
      {
        std::printf("%14llu", static_cast<unsigned long long>(v));
      }
      else
      {
        std::printf("%14g", static_cast<double>(v) / 1e6);
      }
    }
    std::printf("\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Dual-currency VCG market simulator"};
  app.require_subcommand(1);

  dvcg::RunConfig run;
  std::string     out;
  std::uint64_t   seed = 0;
  auto           *cmd_run = app.add_subcommand("run", "Run a scenario and write a run directory");
  cmd_run->add_option("--scenario", run.scenario, "Built-in scenario name or scenario file")->required();
  auto *seed_opt = cmd_run->add_option("--seed", seed, "Seed override");
  cmd_run->add_option("--out", out, "Run directory (default: $DVCG_OUT_ROOT or runs/, then <name>-s<seed>)");
  cmd_run->add_flag("--deterministic", run.deterministic, "Use the scenario seed when --seed is absent");
  cmd_run->add_flag("--force", run.force, "Replace a completed run directory");
  cmd_run->add_option("--checkpoint-every", run.checkpoint_every, "Save network weights every K training episodes")
      ->check(CLI::NonNegativeNumber);
  auto *verbose = cmd_run->add_flag("-v,--verbose", "Print progress");
  cmd_run->add_flag("--test-inject-overallocation", run.inject_overallocation)->group("");

  std::vector<int>    ns{10, 20, 30, 40, 50};
  int                 rounds = 500;
  std::vector<double> quantizations{0.05, 0.01};
  bool                raw = false;
  auto *cmd_table = app.add_subcommand("table2", "Print information-exchange volumes");
  cmd_table->add_option("--ns", ns, "Population sizes")->delimiter(',');
  cmd_table->add_option("--rounds", rounds, "DVCG rounds");
  cmd_table->add_option("--quantizations", quantizations, "QVCG grid steps")->delimiter(',');
  cmd_table->add_flag("--raw", raw, "Print float counts instead of millions");

  std::string verify_dir;
  auto       *cmd_verify = app.add_subcommand("verify", "Re-check the invariants of a finished run");
  cmd_verify->add_option("dir", verify_dir, "Run directory")->required();

  auto *cmd_list = app.add_subcommand("scenarios", "List built-in scenarios");

  try
  {
    app.parse(argc, argv);
  }
  catch (CLI::ParseError const &e)
  {
    int const code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try
  {
    if (*cmd_run)
    {
      if (*seed_opt)
      {
        run.seed = seed;
      }
      run.out     = out;
      run.verbose = static_cast<int>(verbose->count());
      auto const summary = dvcg::cmd_run(run, &std::cerr);
      std::cout << summary.dir.string() << '\n' << (summary.pass ? "verdict: pass" : "verdict: fail") << '\n';
      return summary.pass ? kOk : kVerdict;
    }
    if (*cmd_table)
    {
      return print_table2(ns, rounds, quantizations, raw);
    }
    if (*cmd_verify)
    {
      auto const violations = dvcg::verify_run(verify_dir);
      for (auto const &v : violations)
      {
        std::cerr << v << '\n';
      }
      std::cout << (violations.empty() ? "ok" : "invariant violations found") << '\n';
      return violations.empty() ? kOk : kVerdict;
    }
    if (*cmd_list)
    {
      for (auto const &name : dvcg::builtin_scenarios())
      {
        std::cout << name << '\n';
      }
      return kOk;
    }
  }
  catch (dvcg::ValidationError const &e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  catch (dvcg::NumericError const &e)
  {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  }
  catch (std::exception const &e)
  {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kOk;
}
