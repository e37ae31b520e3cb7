#pragma once

#include "dvcg/env.hpp"
#include "dvcg/market.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dvcg {

inline constexpr char const *kScenarioSchema = "dvcg.scenario/1";
inline constexpr char const *kProfilesSchema = "dvcg.profiles/1";

enum class Experiment
{
  kConvergence,
  kWelfareSweep,
  kDsic,
  kCollusionDvcg,
  kCollusionQvcg,
  kAblationNvi,
};

std::string to_string(Experiment e);
Experiment  experiment_from_string(std::string const &name);

/// Everything a runner needs. Runs are pure functions of this value in
/// deterministic mode.
struct Scenario
{
  std::string             name       = "custom";
  Experiment              experiment = Experiment::kConvergence;
  std::uint64_t           seed       = 1;
  int                     seeds      = 5;  // seed, seed + 1, ...
  int                     num_vsps   = 10;
  std::vector<int>        population_sizes{10, 20, 30, 40, 50};
  std::vector<CriticKind> variants{CriticKind::kMeanField, CriticKind::kJoint, CriticKind::kIndependent};
  bool                    learned_bidders    = false;  // convergence: train against learned bidders
  int                     pretrain_episodes  = 300;
  int                     probe_rounds       = 1000;
  int                     eval_rounds        = 500;
  int                     collusion_rounds   = 4000;
  int                     converged_window   = 1500;
  bool                    mechanism_learning = false;  // keep training the allocator during probes
  std::vector<int>        coalition{0, 1};
  int                     deviator  = 1;
  double                  grid_step = 0.05;
  int                     qvcg_units_collusion = 5;
  std::vector<int>        qvcg_units{20, 100};
  std::vector<double>     collusion_factors{0.6, 0.8, 1.0, 1.2, 1.4};
  int                     smoothing = 20;  // episodes in the moving average of convergence curves
  ProfileSampling         sampling;
  MarketConfig            market;
  std::optional<std::vector<VspProfile>> profiles;  // fixed instance instead of sampling

  /// Throws ValidationError naming the offending field.
  void validate() const;

  /// Profiles of the k-th seed: the fixed list when given, else sampled.
  std::vector<VspProfile> profiles_for(std::uint64_t run_seed, int num_vsps) const;

  std::uint64_t seed_at(int k) const { return seed + static_cast<std::uint64_t>(k); }
};

/// Strict parse: unknown keys and wrong types are ValidationErrors.
Scenario              scenario_from_json(nlohmann::ordered_json const &j);
nlohmann::ordered_json scenario_to_json(Scenario const &s);

Scenario load_scenario(std::string const &path);

/// Built-in scenario names; see docs/formats.md.
std::vector<std::string> builtin_scenarios();

/// A built-in by name, or the file at that path.
Scenario resolve_scenario(std::string const &name_or_path);
std::optional<Scenario> builtin_scenario(std::string const &name);

nlohmann::ordered_json  profiles_to_json(std::vector<VspProfile> const &profiles);
std::vector<VspProfile> profiles_from_json(nlohmann::ordered_json const &j);

}  // namespace dvcg
