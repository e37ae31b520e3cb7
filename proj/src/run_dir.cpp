#include "dvcg/run_dir.hpp"

#include "dvcg/bill.hpp"
#include "dvcg/errors.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace dvcg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

fs::path default_output_root()
{
  char const *root = std::getenv(kOutRootEnv);
  return root != nullptr && *root != '\0' ? fs::path(root) : fs::path("runs");
}

std::uint64_t effective_seed(RunConfig const &config, Scenario const &scenario)
{
  if (config.seed)
  {
    return *config.seed;
  }
  if (config.deterministic)
  {
    return scenario.seed;
  }
  std::random_device entropy;
  return (static_cast<std::uint64_t>(entropy()) << 32) ^ entropy();
}

void check_run_target(fs::path const &dir, bool force)
{
  if (fs::exists(dir / "verdict.json") && !force)
  {
    throw ValidationError("out: '" + dir.string() + "' holds a completed run (use --force to replace it)");
  }
  if (fs::exists(dir) && !fs::is_directory(dir))
  {
    throw ValidationError("out: '" + dir.string() + "' exists and is not a directory");
  }
}

namespace {

void write_text(fs::path const &path, std::string const &text)
{
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
  {
    throw std::runtime_error("cannot write " + path.string());
  }
}

std::string number(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ordered_json profile_instances(Scenario const &s)
{
  ordered_json list = ordered_json::array();
  auto add = [&](std::uint64_t seed, int n) {
    list.push_back({{"seed", seed}, {"n", n}, {"profiles", profiles_to_json(s.profiles_for(seed, n))}});
  };
  if (s.experiment == Experiment::kCollusionQvcg)
  {
    add(s.seed, s.num_vsps);
  }
  else if (s.experiment == Experiment::kWelfareSweep)
  {
    for (int n : s.population_sizes)
    {
      for (int k = 0; k < s.seeds; ++k)
      {
        add(s.seed_at(k), n);
      }
    }
  }
  else
  {
    for (int k = 0; k < s.seeds; ++k)
    {
      add(s.seed_at(k), s.num_vsps);
    }
  }
  return {{"instances", list}};
}

void write_bill(fs::path const &path, Bill const &bill)
{
  std::ofstream out(path, std::ios::binary);
  for (auto const &record : bill.records())
  {
    write_record(out, record);
  }
}

void write_checkpoints(fs::path const &dir, Market const &market)
{
  fs::create_directories(dir);
  auto const &alloc = market.allocator();
  for (int i = 0; i < alloc.num_agents(); ++i)
  {
    auto const &a = alloc.agent(i);
    std::pair<char const *, Mlp const *> const nets[] = {{"actor", &a.actor_online},
                                                         {"critic", &a.critic_online},
                                                         {"voi", &a.voi}};
    for (auto const &[name, net] : nets)
    {
      std::ofstream out(dir / ("agent" + std::to_string(i) + "_" + name + ".ckpt"), std::ios::binary);
      write_checkpoint(out, *net);
    }
  }
}

void corrupt_bill(fs::path const &path)
{
  std::ifstream            in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
  {
    lines.push_back(line);
  }
  in.close();
  if (lines.empty())
  {
    return;
  }
  BillRecord record = read_record(lines.back());
  record.allocation.row(0).setConstant(1.0);
  std::ostringstream out;
  write_record(out, record);
  lines.back() = out.str();
  lines.back().pop_back();
  std::ofstream rewrite(path, std::ios::binary | std::ios::trunc);
  for (auto const &line : lines)
  {
    rewrite << line << '\n';
  }
}

}  // namespace

void write_artifacts(fs::path const &dir, Scenario const &scenario, ExperimentResult const &result)
{
  write_text(dir / "scenario.json", scenario_to_json(scenario).dump(2) + "\n");
  write_text(dir / "profiles.json", profile_instances(scenario).dump(2) + "\n");
  std::string metrics;
  for (auto const &record : result.metrics)
  {
    metrics += record.dump();
    metrics += '\n';
  }
  write_text(dir / "metrics.jsonl", metrics);
  fs::create_directories(dir / "series");
  for (auto const &[stem, rows] : result.series)
  {
    std::string text;
    for (auto const &row : rows)
    {
      text += number(row[0]) + '\t' + number(row[1]) + '\n';
    }
    write_text(dir / "series" / (stem + ".tsv"), text);
  }
  write_text(dir / "verdict.json", result.verdict.dump(2) + "\n");
}

RunSummary cmd_run(RunConfig const &config, std::ostream *log)
{
  Scenario scenario = resolve_scenario(config.scenario);
  scenario.seed     = effective_seed(config, scenario);
  scenario.validate();
  if (config.checkpoint_every < 0)
  {
    throw ValidationError("checkpoint-every: must be nonnegative");
  }

  fs::path const dir =
      config.out.empty() ? default_output_root() / (scenario.name + "-s" + std::to_string(scenario.seed)) : config.out;
  check_run_target(dir, config.force);
  fs::path const parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  fs::create_directories(parent);
  fs::path const staging = parent / ("." + dir.filename().string() + ".partial");
  fs::remove_all(staging);
  fs::create_directories(staging);

  RunOptions options;
  if (log != nullptr && config.verbose > 0)
  {
    options.progress = [log](std::string const &message) { *log << message << std::endl; };
  }
  bool bill_written = false;
  options.market_done = [&](std::string const &, Market const &market) {
    if (!bill_written)
    {
      write_bill(staging / "bill.jsonl", market.bill());
      bill_written = true;
    }
  };
  options.checkpoint_every = config.checkpoint_every;
  options.checkpoint       = [&](std::string const &tag, int episode, Market const &market) {
    write_checkpoints(staging / "checkpoints" / (tag + "_ep" + std::to_string(episode)), market);
  };
  PretrainCache cache;
  options.cache = &cache;

  ExperimentResult result;
  try
  {
    auto const start = std::chrono::steady_clock::now();
    result           = run_experiment(scenario, options);
    double const wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_artifacts(staging, scenario, result);
    write_text(staging / "timing.json", ordered_json{{"wall_seconds", wall}}.dump(2) + "\n");
    if (config.inject_overallocation && bill_written)
    {
      corrupt_bill(staging / "bill.jsonl");
    }
  }
  catch (...)
  {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(dir);
  fs::rename(staging, dir);
  return {dir, result.pass()};
}

namespace {

class Violations
{
public:
  void add(std::string const &invariant, std::string const &detail)
  {
    if (++counts_[invariant] <= 3)
    {
      list_.push_back(invariant + ": " + detail);
    }
  }
  std::vector<std::string> take() { return std::move(list_); }

private:
  std::map<std::string, int> counts_;
  std::vector<std::string>   list_;
};

bool close(double a, double b, double rel = 1e-9)
{
  return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
}

void verify_bill(fs::path const &path, std::size_t capacity, int n, Violations &v)
{
  std::ifstream           in(path);
  std::vector<BillRecord> records;
  std::size_t             line_no = 0;
  for (std::string line; std::getline(in, line);)
  {
    ++line_no;
    try
    {
      records.push_back(read_record(line));
    }
    catch (std::exception const &e)
    {
      v.add("bill_parse", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.size() > capacity)
  {
    v.add("buffer_fifo", "bill holds " + std::to_string(records.size()) + " records, capacity " +
                             std::to_string(capacity));
  }
  double welfare_max = 0.0;
  bool const full_history = !records.empty() && records.front().round == 0;
  for (std::size_t k = 0; k < records.size(); ++k)
  {
    auto const       &r   = records[k];
    std::string const at  = "round " + std::to_string(r.round);
    if (r.num_vsps() != n || r.allocation.cols() != n)
    {
      v.add("dimensions", at + ": expected " + std::to_string(n) + " VSPs");
      continue;
    }
    if (k > 0 && r.round != records[k - 1].round + 1)
    {
      v.add("buffer_fifo", at + " follows round " + std::to_string(records[k - 1].round));
    }
    if (!r.report.empty() && r.report.round != r.round - 1)
    {
      v.add("report_lag", at + " carries the report of round " + std::to_string(r.report.round));
    }
    if (!Allocation::is_feasible(r.allocation))
    {
      v.add("feasibility", at + ": shares outside [0,1] or a resource over-allocated");
    }
    double bids = 0.0, loans = 0.0, est = 0.0;
    for (int i = 0; i < n; ++i)
    {
      bids += r.bids[i];
      loans += r.loans[i];
      est += r.estimated_utilities[i];
      if (!close(r.interests[i], std::abs(r.loans[i] - r.estimated_utilities[i]), 1e-9))
      {
        v.add("interest", at + " VSP " + std::to_string(i));
      }
      if (r.impacts[i] < 0.0 || r.taxes[i] < 0.0)
      {
        v.add("tax_composition", at + " VSP " + std::to_string(i) + ": negative impact or tax");
      }
      if (!r.warmup && (full_history || k >= capacity) && r.impacts[i] > welfare_max * (1.0 + 1e-9) + 1e-9)
      {
        v.add("clamp_bounds", at + " VSP " + std::to_string(i) + ": impact above the historical welfare maximum");
      }
    }
    if (bids > 0.0 && !close(loans, r.pool))
    {
      v.add("budget_exactness", at + ": loans " + std::to_string(loans) + " vs pool " + std::to_string(r.pool));
    }
    if (!close(est, r.sw_star))
    {
      v.add("sw_star", at + ": estimated utilities do not sum to sw_star");
    }
    if (!r.report.empty())
    {
      double total = 0.0;
      for (double u : r.report.utilities)
      {
        total += u;
      }
      welfare_max = std::max(welfare_max, total);
    }
  }
}

}  // namespace

std::vector<std::string> verify_run(fs::path const &dir)
{
  Violations v;
  auto load = [&](char const *name) -> std::optional<ordered_json> {
    std::ifstream in(dir / name);
    if (!in)
    {
      v.add("artifacts", std::string(name) + " missing");
      return std::nullopt;
    }
    try
    {
      return ordered_json::parse(in);
    }
    catch (std::exception const &e)
    {
      v.add("artifacts", std::string(name) + ": " + e.what());
      return std::nullopt;
    }
  };
  auto const scenario_json = load("scenario.json");
  auto const profiles_json = load("profiles.json");
  auto const verdict       = load("verdict.json");
  if (!scenario_json || !profiles_json || !verdict)
  {
    return v.take();
  }
  Scenario scenario;
  try
  {
    scenario = scenario_from_json(*scenario_json);
  }
  catch (std::exception const &e)
  {
    v.add("scenario", e.what());
    return v.take();
  }

  std::map<std::pair<std::uint64_t, int>, double> bounds;
  try
  {
    for (auto const &inst : profiles_json->at("instances"))
    {
      auto const profiles = profiles_from_json(inst.at("profiles"));
      bounds[{inst.at("seed").get<std::uint64_t>(), inst.at("n").get<int>()}] = continuous_welfare_bound(profiles);
    }
  }
  catch (std::exception const &e)
  {
    v.add("profiles", e.what());
  }

  if (!verdict->is_object() || !verdict->contains("pass") || !(*verdict)["pass"].is_boolean())
  {
    v.add("verdict", "missing boolean 'pass'");
  }
  else if (verdict->contains("floats_expected") &&
           (*verdict)["floats_expected"] != (*verdict)["floats_exchanged"])
  {
    v.add("info_exchange", "instrumented float count differs from the analytic count");
  }

  std::ifstream metrics(dir / "metrics.jsonl");
  if (!metrics)
  {
    v.add("artifacts", "metrics.jsonl missing");
  }
  std::size_t line_no = 0;
  for (std::string line; std::getline(metrics, line);)
  {
    ++line_no;
    std::string const at = "metrics line " + std::to_string(line_no);
    ordered_json      rec;
    try
    {
      rec = ordered_json::parse(line);
    }
    catch (std::exception const &e)
    {
      v.add("metrics_parse", at + ": " + e.what());
      continue;
    }
    if (!rec.is_object())
    {
      v.add("metrics_parse", at + ": not an object");
      continue;
    }
    try
    {
      std::uint64_t const seed = rec.contains("seed") ? rec["seed"].get<std::uint64_t>() : scenario.seed;
      int const           n    = rec.contains("n") ? rec["n"].get<int>() : scenario.num_vsps;
      auto const          b    = bounds.find({seed, n});
      auto                over = [&](double value, double limit) {
        return !std::isfinite(value) || value > limit * (1.0 + 1e-9) + 1e-9;
      };
      if (b != bounds.end())
      {
        if (rec.contains("welfare") && over(rec["welfare"].get<double>(), b->second))
        {
          v.add("oracle_bound", at + ": welfare above the welfare upper bound");
        }
        if (rec.contains("cumulative_welfare") &&
            over(rec["cumulative_welfare"].get<double>(), b->second * scenario.eval_rounds))
        {
          v.add("oracle_bound", at + ": cumulative welfare above the welfare upper bound");
        }
      }
      if (rec.contains("bids") && static_cast<int>(rec["bids"].size()) != n)
      {
        v.add("dimensions", at + ": bid vector length");
      }
      if (rec.contains("taxes"))
      {
        for (auto const &t : rec["taxes"])
        {
          if (!(t.get<double>() >= 0.0))
          {
            v.add("tax_composition", at + ": negative or non-finite tax");
          }
        }
      }
    }
    catch (std::exception const &e)
    {
      v.add("metrics_parse", at + ": " + e.what());
    }
  }

  if (fs::exists(dir / "series"))
  {
    for (auto const &entry : fs::directory_iterator(dir / "series"))
    {
      std::ifstream in(entry.path());
      std::size_t   row = 0;
      for (std::string line; std::getline(in, line);)
      {
        ++row;
        std::istringstream fields(line);
        double             x = 0.0, y = 0.0;
        std::string        rest;
        if (!(fields >> x >> y) || (fields >> rest))
        {
          v.add("series", entry.path().filename().string() + " row " + std::to_string(row) + ": not two numbers");
          break;
        }
      }
    }
  }

  if (fs::exists(dir / "bill.jsonl"))
  {
    int const n = scenario.experiment == Experiment::kWelfareSweep ? scenario.population_sizes.front()
                                                                   : scenario.num_vsps;
    verify_bill(dir / "bill.jsonl", scenario.market.mdp.buffer_capacity, n, v);
  }
  return v.take();
}

}  // namespace dvcg
