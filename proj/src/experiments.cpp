#include "dvcg/experiments.hpp"

#include "dvcg/errors.hpp"
#include "dvcg/qvcg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dvcg {

using nlohmann::ordered_json;

std::uint64_t info_exchange_dvcg(int num_vsps, int rounds)
{
  if (num_vsps < 0 || rounds < 0)
  {
    throw ValidationError("info_exchange: negative population or round count");
  }
  return static_cast<std::uint64_t>(num_vsps) * static_cast<std::uint64_t>(rounds);
}

std::uint64_t info_exchange_qvcg(int num_vsps, int units)
{
  if (num_vsps < 0 || units < 1)
  {
    throw ValidationError("info_exchange: need num_vsps >= 0 and units >= 1");
  }
  auto const m = static_cast<std::uint64_t>(units);
  return static_cast<std::uint64_t>(num_vsps) * m * m * m;
}

namespace {

std::string format_number(double v)
{
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

std::vector<Table2Row> table2(std::vector<int> const &population_sizes, int rounds,
                              std::vector<double> const &quantizations)
{
  std::vector<Table2Row> rows;
  Table2Row              dvcg{"DVCG-MFMARL", {}};
  for (int n : population_sizes)
  {
    dvcg.floats.push_back(info_exchange_dvcg(n, rounds));
  }
  rows.push_back(std::move(dvcg));
  for (double q : quantizations)
  {
    if (!(q > 0.0 && q <= 1.0))
    {
      throw ValidationError("table2: quantization must be in (0, 1]");
    }
    int const units = static_cast<int>(std::lround(1.0 / q));
    Table2Row row{"QVCG-" + format_number(q), {}};
    for (int n : population_sizes)
    {
      row.floats.push_back(info_exchange_qvcg(n, units));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Market const *PretrainCache::find(std::string const &key) const
{
  auto it = markets_.find(key);
  return it == markets_.end() ? nullptr : &it->second;
}

void PretrainCache::put(std::string const &key, Market market)
{
  markets_.insert_or_assign(key, std::move(market));
}

CurveSummary summarize_curve(std::vector<double> const &ratios, int window)
{
  if (window < 1)
  {
    throw ValidationError("summarize_curve: window must be positive");
  }
  CurveSummary out;
  double       sum  = 0.0;
  bool         seen = false;
  for (std::size_t e = 0; e < ratios.size(); ++e)
  {
    sum += ratios[e];
    if (e >= static_cast<std::size_t>(window))
    {
      sum -= ratios[e - window];
    }
    bool const full = e + 1 >= static_cast<std::size_t>(window) || e + 1 == ratios.size();
    if (!full)
    {
      continue;
    }
    double const avg   = sum / static_cast<double>(std::min<std::size_t>(e + 1, window));
    out.max_smoothed   = seen ? std::max(out.max_smoothed, avg) : avg;
    out.final_smoothed = avg;
    seen               = true;
    if (out.episodes_to_90 < 0 && avg >= 0.9)
    {
      out.episodes_to_90 = static_cast<int>(e) + 1;
    }
  }
  return out;
}

SampleStats sample_stats(std::vector<double> const &values)
{
  SampleStats s;
  s.n = values.size();
  if (s.n == 0)
  {
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1)
  {
    double ss = 0.0;
    for (double v : values)
    {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.se = std::sqrt(ss / static_cast<double>(s.n - 1) / static_cast<double>(s.n));
  }
  return s;
}

double median(std::vector<double> values)
{
  if (values.empty())
  {
    throw ValidationError("median of an empty sample");
  }
  std::sort(values.begin(), values.end());
  std::size_t const mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

namespace {

struct Reference
{
  double      welfare = 0.0;
  std::string kind;  // "grid_oracle" or "dual_bound"
  double      bound   = 0.0;
};

Reference reference_welfare(std::vector<VspProfile> const &profiles, double grid_step)
{
  Reference ref;
  ref.bound = continuous_welfare_bound(profiles);
  int const units = units_for_step(grid_step);
  if (lattice_work(static_cast<int>(profiles.size()), units) <= kOracleWorkLimit)
  {
    ref.welfare = oracle_optimal_allocation(profiles, grid_step).welfare;
    ref.kind    = "grid_oracle";
  }
  else
  {
    ref.welfare = ref.bound;
    ref.kind    = "dual_bound";
  }
  return ref;
}

void report(RunOptions const &options, std::string const &message)
{
  if (options.progress)
  {
    options.progress(message);
  }
}

ordered_json vec(std::vector<double> const &v)
{
  return ordered_json(v);
}

ordered_json round_record(std::string const &run, std::uint64_t seed, int round, RoundOutcome const &o)
{
  ordered_json j;
  j["run"]     = run;
  j["seed"]    = seed;
  j["round"]   = round;
  j["welfare"] = o.realized_welfare;
  j["bids"]    = vec(o.bids);
  j["taxes"]   = vec(o.taxes);
  j["profits"] = vec(o.net_profits);
  return j;
}

MarketConfig market_config(Scenario const &s, CriticKind critic, int episodes)
{
  MarketConfig c  = s.market;
  c.critic        = critic;
  c.mdp.episodes  = episodes;
  return c;
}

void train_episodes(Market &market, int episodes, std::string const &tag, RunOptions const &options,
                    ExperimentResult *result)
{
  int const rpe = market.config().mdp.rounds_per_episode;
  for (int e = 0; e < episodes; ++e)
  {
    for (int r = 0; r < rpe; ++r)
    {
      RoundOutcome const o = market.step();
      if (result != nullptr)
      {
        result->floats_exchanged += o.bids.size();
      }
    }
    if (options.checkpoint && options.checkpoint_every > 0 && (e + 1) % options.checkpoint_every == 0)
    {
      options.checkpoint(tag, e + 1, market);
    }
  }
}

void done(RunOptions const &options, std::string const &tag, Market const &market)
{
  if (options.market_done)
  {
    options.market_done(tag, market);
  }
}

std::string pretrain_key(Scenario const &s, std::uint64_t seed, CriticKind critic)
{
  ordered_json const j = scenario_to_json(s);
  ordered_json       key;
  key["seed"]     = seed;
  key["n"]        = s.num_vsps;
  key["critic"]   = to_string(critic);
  key["episodes"] = s.pretrain_episodes;
  key["sampling"] = j["sampling"];
  key["mdp"]      = j["mdp"];
  key["market"]   = j["market"];
  key["learner"]  = j["learner"];
  if (j.contains("profiles"))
  {
    key["profiles"] = j["profiles"];
  }
  return key.dump();
}

// Market trained with truthful bidders, ready for probing.
Market pretrained_market(Scenario const &s, std::uint64_t seed, RunOptions const &options)
{
  CriticKind const critic = s.variants.front();
  std::string const key   = pretrain_key(s, seed, critic);
  if (options.cache != nullptr)
  {
    if (Market const *hit = options.cache->find(key))
    {
      return *hit;
    }
  }
  report(options, "pretraining seed " + std::to_string(seed));
  Market market(s.profiles_for(seed, s.num_vsps), {}, market_config(s, critic, s.pretrain_episodes), seed);
  train_episodes(market, s.pretrain_episodes, "pretrain_s" + std::to_string(seed), options, nullptr);
  if (options.cache != nullptr)
  {
    options.cache->put(key, market);
  }
  return market;
}

void freeze(Market &market, Scenario const &s)
{
  market.set_train_allocator(s.mechanism_learning);
  if (!s.mechanism_learning)
  {
    market.set_temperature(s.market.mdp.temperature_end);
  }
}

std::string seed_tag(std::uint64_t seed)
{
  return "s" + std::to_string(seed);
}

}  // namespace

ExperimentResult run_convergence(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  int const episodes = s.market.mdp.episodes;
  int const rpe      = s.market.mdp.rounds_per_episode;

  ordered_json variants = ordered_json::object();
  std::map<CriticKind, std::vector<double>> e90, maxima, finals;
  for (CriticKind critic : s.variants)
  {
    std::string const name = to_string(critic);
    ordered_json      per_seed = ordered_json::array();
    for (int k = 0; k < s.seeds; ++k)
    {
      std::uint64_t const seed     = s.seed_at(k);
      auto const          profiles = s.profiles_for(seed, s.num_vsps);
      Reference const     ref      = reference_welfare(profiles, s.grid_step);
      std::vector<BidderAssignment> bidders;
      if (s.learned_bidders)
      {
        for (int i = 0; i < s.num_vsps; ++i)
        {
          bidders.push_back({BidderKind::kLearned, i});
        }
      }
      Market market(profiles, bidders, market_config(s, critic, episodes), seed);
      report(options, "convergence " + name + " seed " + std::to_string(seed));

      std::vector<double> ratios;
      auto               &rows = result.series["convergence_" + name + "_" + seed_tag(seed)];
      for (int e = 0; e < episodes; ++e)
      {
        double welfare = 0.0, bids = 0.0, taxes = 0.0, profit = 0.0;
        for (int r = 0; r < rpe; ++r)
        {
          RoundOutcome const o = market.step();
          result.floats_exchanged += o.bids.size();
          welfare += o.realized_welfare;
          bids += std::accumulate(o.bids.begin(), o.bids.end(), 0.0);
          taxes += std::accumulate(o.taxes.begin(), o.taxes.end(), 0.0);
          profit += std::accumulate(o.net_profits.begin(), o.net_profits.end(), 0.0);
        }
        double const ratio = welfare / rpe / ref.welfare;
        ratios.push_back(ratio);
        rows.push_back({static_cast<double>(e + 1), ratio});
        ordered_json rec;
        rec["variant"]     = name;
        rec["seed"]        = seed;
        rec["episode"]     = e + 1;
        rec["welfare"]     = welfare / rpe;
        rec["ratio"]       = ratio;
        rec["bid_sum"]     = bids / rpe;
        rec["tax_sum"]     = taxes / rpe;
        rec["profit_sum"]  = profit / rpe;
        result.metrics.push_back(std::move(rec));
        if (options.checkpoint && options.checkpoint_every > 0 && (e + 1) % options.checkpoint_every == 0)
        {
          options.checkpoint(name + "_" + seed_tag(seed), e + 1, market);
        }
      }
      done(options, name + "_" + seed_tag(seed), market);
      CurveSummary const c = summarize_curve(ratios, s.smoothing);
      int const reach = c.episodes_to_90 < 0 ? episodes + 1 : c.episodes_to_90;
      e90[critic].push_back(reach);
      maxima[critic].push_back(c.max_smoothed);
      finals[critic].push_back(c.final_smoothed);
      per_seed.push_back({{"seed", seed},
                          {"reference", ref.welfare},
                          {"reference_kind", ref.kind},
                          {"max_smoothed", c.max_smoothed},
                          {"final_smoothed", c.final_smoothed},
                          {"episodes_to_90", reach}});
    }
    variants[name] = {{"median_max_smoothed", median(maxima[critic])},
                      {"median_final_smoothed", median(finals[critic])},
                      {"median_episodes_to_90", median(e90[critic])},
                      {"reaches_85", median(maxima[critic]) >= 0.85},
                      {"seeds", per_seed}};
  }

  bool pass = true;
  for (CriticKind critic : s.variants)
  {
    pass = pass && median(maxima[critic]) >= 0.85;
  }
  ordered_json checks = ordered_json::object();
  if (e90.count(CriticKind::kMeanField) && e90.count(CriticKind::kIndependent))
  {
    bool const ordered = median(e90[CriticKind::kMeanField]) <= median(e90[CriticKind::kIndependent]);
    checks["mean_field_not_slower_than_independent"] = ordered;
    pass = pass && ordered;
  }
  if (finals.count(CriticKind::kMeanField) && finals.count(CriticKind::kJoint))
  {
    // reported only
    checks["joint_final_ge_mean_field"] = median(finals[CriticKind::kJoint]) >= median(finals[CriticKind::kMeanField]);
  }
  result.verdict = {{"experiment", result.experiment},
                    {"pass", pass},
                    {"threshold", 0.85},
                    {"variants", variants},
                    {"checks", checks},
                    {"floats_exchanged", result.floats_exchanged},
                    {"floats_expected",
                     info_exchange_dvcg(s.num_vsps, episodes * rpe) * s.variants.size() * s.seeds}};
  return result;
}

ExperimentResult run_welfare_sweep(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  int const episodes = s.market.mdp.episodes;

  std::map<std::string, std::map<int, std::vector<double>>> finals;  // algorithm -> n -> ratios
  bool bounded = true, quantization_ordered = true;
  for (int n : s.population_sizes)
  {
    // cumulative normalized welfare per round, summed over seeds
    std::map<std::string, std::vector<double>> curves;
    for (int k = 0; k < s.seeds; ++k)
    {
      std::uint64_t const seed     = s.seed_at(k);
      auto const          profiles = s.profiles_for(seed, n);
      Reference const     ref      = reference_welfare(profiles, s.grid_step);
      auto accumulate_curve = [&](std::string const &algo, std::vector<double> const &welfare) {
        auto &curve = curves[algo];
        curve.resize(welfare.size(), 0.0);
        double cum = 0.0;
        for (std::size_t r = 0; r < welfare.size(); ++r)
        {
          cum += welfare[r];
          curve[r] += cum / (static_cast<double>(r + 1) * ref.welfare);
          bounded = bounded && welfare[r] <= ref.bound * (1.0 + 1e-9);
        }
        double const ratio = cum / (static_cast<double>(welfare.size()) * ref.welfare);
        finals[algo][n].push_back(ratio);
        result.metrics.push_back({{"algorithm", algo},
                                  {"n", n},
                                  {"seed", seed},
                                  {"reference", ref.welfare},
                                  {"reference_kind", ref.kind},
                                  {"bound", ref.bound},
                                  {"cumulative_welfare", cum},
                                  {"ratio", ratio}});
      };

      for (CriticKind critic : s.variants)
      {
        report(options, "sweep " + to_string(critic) + " n " + std::to_string(n) + " seed " + std::to_string(seed));
        std::string const tag = to_string(critic) + "_n" + std::to_string(n) + "_" + seed_tag(seed);
        Market            market(profiles, {}, market_config(s, critic, episodes), seed);
        train_episodes(market, episodes, tag, options, &result);
        market.set_train_allocator(false);
        market.set_temperature(s.market.mdp.temperature_end);
        std::vector<double> welfare;
        for (int r = 0; r < s.eval_rounds; ++r)
        {
          RoundOutcome const o = market.step();
          result.floats_exchanged += o.bids.size();
          welfare.push_back(o.realized_welfare);
        }
        done(options, tag, market);
        accumulate_curve("dvcg_" + to_string(critic), welfare);
      }

      double previous = -1.0;
      for (int units : s.qvcg_units)
      {
        report(options, "sweep qvcg m " + std::to_string(units) + " n " + std::to_string(n));
        std::vector<QvcgBidTensor> tensors;
        for (auto const &p : profiles)
        {
          tensors.push_back(qvcg_build_bids(p, p.alpha, units));
          result.floats_exchanged += tensors.back().values().size();
        }
        QvcgResult const q = qvcg_allocate(tensors);
        double const     w = social_welfare(profiles, q.allocation);
        if (previous >= 0.0 && units > s.qvcg_units.front())
        {
          quantization_ordered = quantization_ordered && w >= previous - 1e-9;
        }
        previous = w;
        accumulate_curve("qvcg_m" + std::to_string(units), std::vector<double>(s.eval_rounds, w));
      }
    }
    for (auto &[algo, curve] : curves)
    {
      auto &rows = result.series["sweep_" + algo + "_n" + std::to_string(n)];
      for (std::size_t r = 0; r < curve.size(); ++r)
      {
        rows.push_back({static_cast<double>(r + 1), curve[r] / s.seeds});
      }
    }
  }

  ordered_json table = ordered_json::object();
  for (auto const &[algo, by_n] : finals)
  {
    ordered_json row = ordered_json::object();
    for (auto const &[n, ratios] : by_n)
    {
      row[std::to_string(n)] = median(ratios);
    }
    table[algo] = row;
  }
  bool pass = bounded && quantization_ordered;
  ordered_json checks = {{"bounded_by_dual", bounded}, {"finer_quantization_not_worse", quantization_ordered}};
  auto mf = finals.find("dvcg_mean_field");
  if (mf != finals.end() && mf->second.count(10))
  {
    bool const ok                 = median(mf->second.at(10)) >= 0.85;
    checks["mean_field_n10_85"] = ok;
    pass                          = pass && ok;
  }
  result.verdict = {{"experiment", result.experiment},
                    {"pass", pass},
                    {"median_ratio", table},
                    {"checks", checks},
                    {"floats_exchanged", result.floats_exchanged}};
  return result;
}

ExperimentResult run_dsic(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  auto const  &dev   = s.market.deviation;
  int const    i     = s.deviator;
  int const    skip  = s.market.warmup_rounds;
  std::vector<double> z_over, z_under, control_z;
  ordered_json        per_seed = ordered_json::array();

  for (int k = 0; k < s.seeds; ++k)
  {
    std::uint64_t const seed = s.seed_at(k);
    Market const        base = pretrained_market(s, seed, options);
    std::array<std::array<SampleStats, 3>, 2> phases;
    for (int mode = 0; mode < 2; ++mode)
    {
      std::string const run = mode == 0 ? "control" : "deviation";
      Market            market = base;
      std::vector<BidderAssignment> bidders(s.num_vsps);
      if (mode == 1)
      {
        bidders[i].kind = BidderKind::kScriptedDeviation;
      }
      market.set_bidders(bidders, derive_seed(seed, 3));
      freeze(market, s);
      market.set_schedule_origin(market.round());
      report(options, "dsic " + run + " seed " + std::to_string(seed));

      std::array<std::vector<double>, 3> profit;
      auto &rows = result.series["dsic_" + run + "_" + seed_tag(seed)];
      for (int r = 0; r < s.probe_rounds; ++r)
      {
        RoundOutcome const o = market.step();
        result.floats_exchanged += o.bids.size();
        int const phase = r < dev.round_a ? 0 : (r < dev.round_b ? 1 : 2);
        if (r >= skip)
        {
          profit[phase].push_back(o.net_profits[i]);
        }
        rows.push_back({static_cast<double>(r), o.net_profits[i]});
        result.metrics.push_back(round_record(run, seed, r, o));
      }
      done(options, run + "_" + seed_tag(seed), market);
      for (int p = 0; p < 3; ++p)
      {
        phases[mode][p] = sample_stats(profit[p]);
      }
    }
    auto z = [](SampleStats const &a, SampleStats const &b) {
      double const pooled = std::sqrt(a.se * a.se + b.se * b.se);
      return pooled > 0.0 ? (a.mean - b.mean) / pooled : (a.mean > b.mean ? INFINITY : -INFINITY);
    };
    auto const &d = phases[1];
    z_over.push_back(z(d[0], d[1]));
    z_under.push_back(z(d[0], d[2]));
    control_z.push_back(std::max(std::abs(z(phases[0][0], phases[0][1])), std::abs(z(phases[0][0], phases[0][2]))));
    ordered_json phase_json = ordered_json::array();
    for (int mode = 0; mode < 2; ++mode)
    {
      for (int p = 0; p < 3; ++p)
      {
        phase_json.push_back({{"run", mode == 0 ? "control" : "deviation"},
                              {"phase", p == 0 ? "truthful" : (p == 1 ? "over" : "under")},
                              {"mean", phases[mode][p].mean},
                              {"se", phases[mode][p].se},
                              {"n", phases[mode][p].n}});
      }
    }
    per_seed.push_back({{"seed", seed},
                        {"z_over", z_over.back()},
                        {"z_under", z_under.back()},
                        {"control_max_abs_z", control_z.back()},
                        {"phases", phase_json}});
  }
  double const mo = median(z_over), mu = median(z_under);
  result.verdict = {{"experiment", result.experiment},
                    {"pass", mo >= 1.0 && mu >= 1.0},
                    {"deviator", i},
                    {"median_z_over", mo},
                    {"median_z_under", mu},
                    {"median_control_max_abs_z", median(control_z)},
                    {"seeds", per_seed},
                    {"floats_exchanged", result.floats_exchanged}};
  return result;
}

namespace {

struct ProbeTotals
{
  double coalition_bids     = 0.0;
  double coalition_truthful = 0.0;
  double coalition_profit   = 0.0;
  double welfare            = 0.0;
  int    rounds             = 0;
};

// Runs a probe from the pretrained market and averages over the converged window.
ProbeTotals collusion_probe(Scenario const &s, Market market, std::uint64_t seed, bool collusive, bool interest,
                            std::string const &run, RunOptions const &options, ExperimentResult &result)
{
  std::vector<BidderAssignment> bidders(s.num_vsps);
  if (collusive)
  {
    for (int m : s.coalition)
    {
      bidders[m] = {s.coalition.size() == 1 ? BidderKind::kLearned : BidderKind::kCollusive, 0};
    }
  }
  market.set_bidders(bidders, derive_seed(seed, 4));
  market.set_interest(interest);
  freeze(market, s);

  ProbeTotals t;
  int const   start = s.collusion_rounds - s.converged_window;
  auto       &rows  = result.series["collusion_" + run + "_" + seed_tag(seed)];
  for (int r = 0; r < s.collusion_rounds; ++r)
  {
    std::vector<double> const truthful = market.truthful_bids();
    RoundOutcome const        o        = market.step();
    result.floats_exchanged += o.bids.size();
    double bids = 0.0, honest = 0.0, profit = 0.0;
    for (int m : s.coalition)
    {
      bids += o.bids[m];
      honest += truthful[m];
      profit += o.net_profits[m];
    }
    rows.push_back({static_cast<double>(r), honest > 0.0 ? bids / honest : 0.0});
    if (r >= start)
    {
      t.coalition_bids += bids;
      t.coalition_truthful += honest;
      t.coalition_profit += profit;
      t.welfare += o.realized_welfare;
      ++t.rounds;
    }
    if (r % 10 == 0 || r >= start)
    {
      ordered_json rec = round_record(run, seed, r, o);
      rec["truthful_bids"] = truthful;
      result.metrics.push_back(std::move(rec));
    }
  }
  done(options, run + "_" + seed_tag(seed), market);
  return t;
}

CollusionOutcome collusion_pair(Scenario const &s, std::uint64_t seed, bool interest, RunOptions const &options,
                                ExperimentResult &result)
{
  Market const      base = pretrained_market(s, seed, options);
  std::string const tag  = interest ? "dvcg" : "nvi";
  report(options, "collusion " + tag + " seed " + std::to_string(seed));
  ProbeTotals const col = collusion_probe(s, base, seed, true, interest, tag + "_collusive", options, result);
  ProbeTotals const tru = collusion_probe(s, base, seed, false, interest, tag + "_truthful", options, result);
  CollusionOutcome  out;
  out.bid_ratio        = col.coalition_truthful > 0.0 ? col.coalition_bids / col.coalition_truthful : 0.0;
  out.coalition_profit = col.coalition_profit / col.rounds;
  out.truthful_profit  = tru.coalition_profit / tru.rounds;
  out.welfare          = col.welfare / col.rounds;
  out.truthful_welfare = tru.welfare / tru.rounds;
  return out;
}

ordered_json outcome_json(std::uint64_t seed, CollusionOutcome const &o)
{
  return {{"seed", seed},
          {"bid_ratio", o.bid_ratio},
          {"coalition_profit", o.coalition_profit},
          {"truthful_coalition_profit", o.truthful_profit},
          {"welfare", o.welfare},
          {"truthful_welfare", o.truthful_welfare}};
}

}  // namespace

ExperimentResult run_collusion_dvcg(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  std::vector<double> ratios, excess, welfare_gap;
  ordered_json        per_seed = ordered_json::array();
  for (int k = 0; k < s.seeds; ++k)
  {
    std::uint64_t const    seed = s.seed_at(k);
    CollusionOutcome const o    = collusion_pair(s, seed, s.market.interest, options, result);
    ratios.push_back(o.bid_ratio);
    excess.push_back((o.coalition_profit - o.truthful_profit) / std::max(std::abs(o.truthful_profit), 1e-12));
    welfare_gap.push_back(std::abs(o.welfare - o.truthful_welfare) / std::max(std::abs(o.truthful_welfare), 1e-12));
    per_seed.push_back(outcome_json(seed, o));
  }
  double const ratio = median(ratios), gain = median(excess);
  result.verdict = {{"experiment", result.experiment},
                    {"pass", ratio >= 0.9 && ratio <= 1.1 && gain <= 0.02},
                    {"median_bid_ratio", ratio},
                    {"median_profit_excess", gain},
                    {"median_welfare_gap", median(welfare_gap)},
                    {"checks", {{"welfare_within_5pct", median(welfare_gap) <= 0.05}}},
                    {"seeds", per_seed},
                    {"floats_exchanged", result.floats_exchanged}};
  return result;
}

ExperimentResult run_ablation_nvi(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  std::vector<double> profit_gain, welfare_drop;
  ordered_json        per_seed = ordered_json::array();
  for (int k = 0; k < s.seeds; ++k)
  {
    std::uint64_t const    seed = s.seed_at(k);
    CollusionOutcome const with = collusion_pair(s, seed, true, options, result);
    CollusionOutcome const nvi  = collusion_pair(s, seed, false, options, result);
    profit_gain.push_back(nvi.coalition_profit - with.coalition_profit);
    welfare_drop.push_back(with.welfare - nvi.welfare);
    per_seed.push_back({{"seed", seed},
                        {"dvcg", outcome_json(seed, with)},
                        {"nvi", outcome_json(seed, nvi)},
                        {"profit_gain", profit_gain.back()},
                        {"welfare_drop", welfare_drop.back()}});
  }
  double const gain = median(profit_gain), drop = median(welfare_drop);
  result.verdict = {{"experiment", result.experiment},
                    {"pass", gain > 0.0 && drop > 0.0},
                    {"median_profit_gain", gain},
                    {"median_welfare_drop", drop},
                    {"checks", {{"profit_gain_positive", gain > 0.0}, {"welfare_drop_positive", drop > 0.0}}},
                    {"seeds", per_seed},
                    {"floats_exchanged", result.floats_exchanged}};
  return result;
}

std::vector<QvcgDeviation> qvcg_collusion_search(std::vector<VspProfile> const &profiles, int units,
                                                 std::vector<int> const &coalition,
                                                 std::vector<double> const &factors)
{
  for (int m : coalition)
  {
    if (m < 0 || m >= static_cast<int>(profiles.size()))
    {
      throw ValidationError("coalition member out of range");
    }
  }
  std::vector<QvcgDeviation> out;
  if (factors.empty() || coalition.empty())
  {
    return out;
  }
  std::vector<QvcgBidTensor> truthful;
  for (auto const &p : profiles)
  {
    truthful.push_back(qvcg_build_bids(p, p.alpha, units));
  }
  std::vector<std::size_t> digits(coalition.size(), 0);
  while (true)
  {
    QvcgDeviation d;
    auto          tensors = truthful;
    for (std::size_t c = 0; c < coalition.size(); ++c)
    {
      d.factors.push_back(factors[digits[c]]);
      tensors[coalition[c]] = truthful[coalition[c]].scaled(factors[digits[c]]);
    }
    QvcgResult const q = qvcg_allocate(tensors);
    d.welfare          = social_welfare(profiles, q.allocation);
    for (int m : coalition)
    {
      d.coalition_profit += qvcg_profit(profiles[m], q.allocation.slice(m), q.payments[m]);
    }
    out.push_back(std::move(d));

    std::size_t c = coalition.size();
    while (c > 0 && ++digits[c - 1] == factors.size())
    {
      digits[--c] = 0;
    }
    if (c == 0)
    {
      break;
    }
  }
  return out;
}

ExperimentResult run_collusion_qvcg(Scenario const &s, RunOptions const &options)
{
  s.validate();
  ExperimentResult result;
  result.experiment = to_string(s.experiment);
  auto const profiles = s.profiles_for(s.seed, s.num_vsps);
  report(options, "qvcg collusion search");

  std::vector<QvcgBidTensor> truthful;
  for (auto const &p : profiles)
  {
    truthful.push_back(qvcg_build_bids(p, p.alpha, s.qvcg_units_collusion));
    result.floats_exchanged += truthful.back().values().size();
  }
  QvcgResult const base = qvcg_allocate(truthful);
  double const     base_welfare = social_welfare(profiles, base.allocation);
  double           base_profit  = 0.0;
  for (int m : s.coalition)
  {
    base_profit += qvcg_profit(profiles[m], base.allocation.slice(m), base.payments[m]);
  }

  auto const   deviations = qvcg_collusion_search(profiles, s.qvcg_units_collusion, s.coalition, s.collusion_factors);
  ordered_json witness;
  double       best_gain = 0.0;
  auto        &gains     = result.series["qvcg_profit_gain"];
  auto        &losses    = result.series["qvcg_welfare_change"];
  for (std::size_t k = 0; k < deviations.size(); ++k)
  {
    auto const  &d     = deviations[k];
    double const gain  = d.coalition_profit - base_profit;
    double const delta = d.welfare - base_welfare;
    gains.push_back({static_cast<double>(k), gain});
    losses.push_back({static_cast<double>(k), delta});
    result.metrics.push_back({{"index", k},
                              {"factors", d.factors},
                              {"coalition_profit", d.coalition_profit},
                              {"welfare", d.welfare},
                              {"profit_gain", gain},
                              {"welfare_change", delta}});
    if (gain > 0.0 && delta < 0.0 && gain > best_gain)
    {
      best_gain = gain;
      witness   = {{"index", k}, {"factors", d.factors}, {"profit_gain", gain}, {"welfare_loss", -delta}};
    }
  }
  bool const found = !witness.is_null();
  result.verdict   = {{"experiment", result.experiment},
                      {"pass", found},
                      {"inconclusive", deviations.empty()},
                      {"units", s.qvcg_units_collusion},
                      {"truthful_coalition_profit", base_profit},
                      {"truthful_welfare", base_welfare},
                      {"deviations", deviations.size()},
                      {"witness", witness},
                      {"floats_exchanged", result.floats_exchanged},
                      {"floats_expected",
                       static_cast<std::uint64_t>(s.num_vsps) *
                           static_cast<std::uint64_t>(s.qvcg_units_collusion + 1) * (s.qvcg_units_collusion + 1) *
                           (s.qvcg_units_collusion + 1)}};
  return result;
}

ExperimentResult run_experiment(Scenario const &s, RunOptions const &options)
{
  switch (s.experiment)
  {
  case Experiment::kConvergence:
    return run_convergence(s, options);
  case Experiment::kWelfareSweep:
    return run_welfare_sweep(s, options);
  case Experiment::kDsic:
    return run_dsic(s, options);
  case Experiment::kCollusionDvcg:
    return run_collusion_dvcg(s, options);
  case Experiment::kCollusionQvcg:
    return run_collusion_qvcg(s, options);
  case Experiment::kAblationNvi:
    return run_ablation_nvi(s, options);
  }
  throw ValidationError("unknown experiment");
}

}  // namespace dvcg
