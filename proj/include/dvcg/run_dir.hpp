#pragma once

#include "dvcg/experiments.hpp"
#include "dvcg/scenario.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dvcg {

inline constexpr char const *kOutRootEnv = "DVCG_OUT_ROOT";

struct RunConfig
{
  std::string                  scenario;  // built-in name or file path
  std::filesystem::path        out;       // empty: <root>/<scenario name>-s<seed>
  std::optional<std::uint64_t> seed;
  bool                         deterministic    = false;
  bool                         force            = false;
  int                          checkpoint_every = 0;  // episodes; 0 disables
  int                          verbose          = 0;
  bool                         inject_overallocation = false;  // test hook: corrupts the written bill
};

/// $DVCG_OUT_ROOT, else "runs".
std::filesystem::path default_output_root();

/// Effective seed: the override, the scenario seed in deterministic mode, otherwise fresh entropy.
std::uint64_t effective_seed(RunConfig const &config, Scenario const &scenario);

/// Throws ValidationError when dir holds a completed run and force is off.
void check_run_target(std::filesystem::path const &dir, bool force);

struct RunSummary
{
  std::filesystem::path dir;
  bool                  pass = false;
};

/// Loads, runs and writes every artifact; the directory appears atomically.
RunSummary cmd_run(RunConfig const &config, std::ostream *log = nullptr);

/// Invariant violations found in a finished run directory, empty when valid.
std::vector<std::string> verify_run(std::filesystem::path const &dir);

/// Writes result files into dir (which must exist).
void write_artifacts(std::filesystem::path const &dir, Scenario const &scenario, ExperimentResult const &result);

}  // namespace dvcg
