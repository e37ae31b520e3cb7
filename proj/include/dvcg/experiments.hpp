#pragma once

#include "dvcg/market.hpp"
#include "dvcg/scenario.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dvcg {

/// Floats a DVCG run sends: one bid per VSP per round.
std::uint64_t info_exchange_dvcg(int num_vsps, int rounds);

/// Floats a QVCG run sends: one M^3 value tensor per VSP, once.
std::uint64_t info_exchange_qvcg(int num_vsps, int units);

struct Table2Row
{
  std::string                label;
  std::vector<std::uint64_t> floats;  // one per population size
};

/// Rows DVCG-MFMARL, then QVCG-<q> per quantization q; M = round(1/q).
std::vector<Table2Row> table2(std::vector<int> const &population_sizes, int rounds,
                              std::vector<double> const &quantizations);

/// Output of a runner. Metrics and series are deterministic given the scenario.
struct ExperimentResult
{
  std::string                                            experiment;
  std::vector<nlohmann::ordered_json>                    metrics;  // one record per line of metrics.jsonl
  nlohmann::ordered_json                                 verdict;  // holds "pass"
  std::map<std::string, std::vector<std::array<double, 2>>> series;  // file stem -> two-column rows
  std::uint64_t                                          floats_exchanged = 0;

  bool pass() const { return verdict.value("pass", false); }
};

/// Trained markets keyed by seed and configuration, reused across runners.
class PretrainCache
{
public:
  Market const *find(std::string const &key) const;
  void          put(std::string const &key, Market market);

private:
  std::map<std::string, Market> markets_;
};

struct RunOptions
{
  std::function<void(std::string const &)> progress;
  PretrainCache                           *cache = nullptr;
  /// Called with every market once its run is over, tagged by run and seed.
  std::function<void(std::string const &, Market const &)> market_done;
  /// Called every checkpoint_every training episodes when positive.
  int                                                            checkpoint_every = 0;
  std::function<void(std::string const &, int, Market const &)> checkpoint;
};

ExperimentResult run_experiment(Scenario const &scenario, RunOptions const &options = {});

ExperimentResult run_convergence(Scenario const &scenario, RunOptions const &options = {});
ExperimentResult run_welfare_sweep(Scenario const &scenario, RunOptions const &options = {});
ExperimentResult run_dsic(Scenario const &scenario, RunOptions const &options = {});
ExperimentResult run_collusion_dvcg(Scenario const &scenario, RunOptions const &options = {});
ExperimentResult run_collusion_qvcg(Scenario const &scenario, RunOptions const &options = {});
ExperimentResult run_ablation_nvi(Scenario const &scenario, RunOptions const &options = {});

/// Trailing moving averages of one training curve (ratios to the oracle), taken
/// once the window is full; a curve shorter than the window counts as one window.
struct CurveSummary
{
  double max_smoothed   = 0.0;
  double final_smoothed = 0.0;
  int    episodes_to_90 = -1;  // last episode (1-based) of the first window averaging >= 0.9; -1 if never
};

CurveSummary summarize_curve(std::vector<double> const &ratios, int window);

/// Mean and standard error of a sample.
struct SampleStats
{
  double      mean = 0.0;
  double      se   = 0.0;
  std::size_t n    = 0;
};

SampleStats sample_stats(std::vector<double> const &values);

double median(std::vector<double> values);

/// Outcome of one collusion run pair at a seed (collusive vs truthful coalition).
struct CollusionOutcome
{
  double bid_ratio          = 0.0;  // sum of coalition bids / sum of truthful bids, converged window
  double coalition_profit   = 0.0;  // mean per round, converged window
  double truthful_profit    = 0.0;  // same window of the paired truthful run
  double welfare            = 0.0;
  double truthful_welfare   = 0.0;
};

/// QVCG misreport evaluation: coalition members' tensors scaled by factors.
struct QvcgDeviation
{
  std::vector<double> factors;
  double              coalition_profit = 0.0;
  double              welfare          = 0.0;
};

std::vector<QvcgDeviation> qvcg_collusion_search(std::vector<VspProfile> const &profiles, int units,
                                                 std::vector<int> const &coalition,
                                                 std::vector<double> const &factors);

}  // namespace dvcg
