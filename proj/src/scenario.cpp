#include "dvcg/scenario.hpp"

#include "dvcg/errors.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace dvcg {

using nlohmann::ordered_json;

std::string to_string(Experiment e)
{
  switch (e)
  {
  case Experiment::kConvergence:
    return "convergence";
  case Experiment::kWelfareSweep:
    return "welfare_sweep";
  case Experiment::kDsic:
    return "dsic";
  case Experiment::kCollusionDvcg:
    return "collusion_dvcg";
  case Experiment::kCollusionQvcg:
    return "collusion_qvcg";
  case Experiment::kAblationNvi:
    return "ablation_nvi";
  }
  return "unknown";
}

Experiment experiment_from_string(std::string const &name)
{
  for (auto e : {Experiment::kConvergence, Experiment::kWelfareSweep, Experiment::kDsic, Experiment::kCollusionDvcg,
                 Experiment::kCollusionQvcg, Experiment::kAblationNvi})
  {
    if (to_string(e) == name)
    {
      return e;
    }
  }
  throw ValidationError("experiment: unknown value '" + name + "'");
}

namespace {

std::string noise_units_name(NoiseUnits u)
{
  return u == NoiseUnits::kCurrency ? "currency" : "pool_fraction";
}

NoiseUnits noise_units_from(std::string const &name)
{
  if (name == "currency")
  {
    return NoiseUnits::kCurrency;
  }
  if (name == "pool_fraction")
  {
    return NoiseUnits::kPoolFraction;
  }
  throw ValidationError("market.noise_units: expected 'currency' or 'pool_fraction'");
}

// Strict view of one JSON object: every key must be consumed.
class Fields
{
public:
  Fields(ordered_json const &j, std::string path)
    : j_(j)
    , path_(std::move(path))
  {
    if (!j_.is_object())
    {
      throw ValidationError(where("") + ": expected an object");
    }
  }

  template <typename T>
  void get(char const *key, T &out)
  {
    if (!j_.contains(key))
    {
      return;
    }
    used_.insert(key);
    try
    {
      out = j_.at(key).get<T>();
    }
    catch (nlohmann::json::exception const &e)
    {
      throw ValidationError(where(key) + ": wrong type (" + e.what() + ")");
    }
  }

  bool has(char const *key) const { return j_.contains(key); }

  ordered_json const &child(char const *key)
  {
    used_.insert(key);
    return j_.at(key);
  }

  std::string where(std::string const &key) const { return path_.empty() ? key : path_ + (key.empty() ? "" : "." + key); }

  void finish() const
  {
    for (auto it = j_.begin(); it != j_.end(); ++it)
    {
      if (!used_.count(it.key()))
      {
        throw ValidationError(where(it.key()) + ": unknown key");
      }
    }
  }

private:
  ordered_json const   &j_;
  std::string           path_;
  std::set<std::string> used_;
};

VspProfile profile_from(ordered_json const &j, std::string const &path)
{
  Fields              f(j, path);
  VspProfile          p;
  std::vector<double> xi{p.xi[0], p.xi[1], p.xi[2]};
  f.get("id", p.id);
  f.get("beta", p.beta);
  f.get("xi", xi);
  f.get("alpha", p.alpha);
  f.get("noise_mean", p.noise_mean);
  f.get("noise_std", p.noise_std);
  f.get("deploy_cost", p.deploy_cost);
  f.finish();
  if (xi.size() != kResources)
  {
    throw ValidationError(path + ".xi: expected 3 components");
  }
  p.xi = Eigen::Vector3d(xi[0], xi[1], xi[2]);
  p.validate();
  return p;
}

ordered_json profile_to(VspProfile const &p)
{
  ordered_json j;
  j["id"]          = p.id;
  j["beta"]        = p.beta;
  j["xi"]          = {p.xi[0], p.xi[1], p.xi[2]};
  j["alpha"]       = p.alpha;
  j["noise_mean"]  = p.noise_mean;
  j["noise_std"]   = p.noise_std;
  j["deploy_cost"] = p.deploy_cost;
  return j;
}

void read_mdp(ordered_json const &j, MdpConfig &m)
{
  Fields f(j, "mdp");
  f.get("gamma", m.gamma);
  f.get("learning_rate", m.learning_rate);
  f.get("episodes", m.episodes);
  f.get("rounds_per_episode", m.rounds_per_episode);
  f.get("batch_size", m.batch_size);
  f.get("buffer_capacity", m.buffer_capacity);
  f.get("tau", m.tau);
  f.get("temperature_start", m.temperature_start);
  f.get("temperature_end", m.temperature_end);
  f.get("anneal_fraction", m.anneal_fraction);
  f.get("relax_temperature", m.relax_temperature);
  f.get("action_floor", m.action_floor);
  f.get("utility_scale", m.utility_scale);
  f.get("actor_hidden", m.actor_hidden);
  f.get("critic_hidden", m.critic_hidden);
  f.get("voi_hidden", m.voi_hidden);
  f.finish();
}

ordered_json write_mdp(MdpConfig const &m)
{
  ordered_json j;
  j["gamma"]              = m.gamma;
  j["learning_rate"]      = m.learning_rate;
  j["episodes"]           = m.episodes;
  j["rounds_per_episode"] = m.rounds_per_episode;
  j["batch_size"]         = m.batch_size;
  j["buffer_capacity"]    = m.buffer_capacity;
  j["tau"]                = m.tau;
  j["temperature_start"]  = m.temperature_start;
  j["temperature_end"]    = m.temperature_end;
  j["anneal_fraction"]    = m.anneal_fraction;
  j["relax_temperature"]  = m.relax_temperature;
  j["action_floor"]       = m.action_floor;
  j["utility_scale"]      = m.utility_scale;
  j["actor_hidden"]       = m.actor_hidden;
  j["critic_hidden"]      = m.critic_hidden;
  j["voi_hidden"]         = m.voi_hidden;
  return j;
}

void read_learner(ordered_json const &j, LearnerConfig &l)
{
  Fields f(j, "learner");
  f.get("learning_rate", l.learning_rate);
  f.get("batch_size", l.batch_size);
  f.get("updates_per_step", l.updates_per_step);
  f.get("buffer_capacity", l.buffer_capacity);
  f.get("noise_start", l.noise_start);
  f.get("noise_end", l.noise_end);
  f.get("noise_decay", l.noise_decay);
  f.get("cap_factor", l.cap_factor);
  f.get("actor_hidden", l.actor_hidden);
  f.get("critic_hidden", l.critic_hidden);
  f.finish();
}

ordered_json write_learner(LearnerConfig const &l)
{
  ordered_json j;
  j["learning_rate"]    = l.learning_rate;
  j["batch_size"]       = l.batch_size;
  j["updates_per_step"] = l.updates_per_step;
  j["buffer_capacity"]  = l.buffer_capacity;
  j["noise_start"]      = l.noise_start;
  j["noise_end"]        = l.noise_end;
  j["noise_decay"]      = l.noise_decay;
  j["cap_factor"]       = l.cap_factor;
  j["actor_hidden"]     = l.actor_hidden;
  j["critic_hidden"]    = l.critic_hidden;
  return j;
}

void read_market(ordered_json const &j, MarketConfig &m)
{
  Fields      f(j, "market");
  std::string units = noise_units_name(m.noise_units);
  f.get("interest", m.interest);
  f.get("warmup_rounds", m.warmup_rounds);
  f.get("noise_units", units);
  f.get("train_every", m.train_every);
  f.get("utility_floor", m.utility_floor);
  f.finish();
  m.noise_units = noise_units_from(units);
}

ordered_json write_market(MarketConfig const &m)
{
  ordered_json j;
  j["interest"]      = m.interest;
  j["warmup_rounds"] = m.warmup_rounds;
  j["noise_units"]   = noise_units_name(m.noise_units);
  j["train_every"]   = m.train_every;
  j["utility_floor"] = m.utility_floor;
  return j;
}

void read_deviation(ordered_json const &j, DeviationSchedule &d)
{
  Fields f(j, "deviation");
  f.get("round_a", d.round_a);
  f.get("factor_a", d.factor_a);
  f.get("round_b", d.round_b);
  f.get("factor_b", d.factor_b);
  f.finish();
}

void read_sampling(ordered_json const &j, ProfileSampling &s)
{
  Fields f(j, "sampling");
  f.get("beta_lo", s.beta_lo);
  f.get("beta_hi", s.beta_hi);
  f.get("xi_lo", s.xi_lo);
  f.get("xi_hi", s.xi_hi);
  f.get("alpha_lo", s.alpha_lo);
  f.get("alpha_hi", s.alpha_hi);
  f.get("noise_mean", s.noise_mean);
  f.get("noise_std", s.noise_std);
  f.get("deploy_cost", s.deploy_cost);
  f.finish();
}

ordered_json write_sampling(ProfileSampling const &s)
{
  ordered_json j;
  j["beta_lo"]     = s.beta_lo;
  j["beta_hi"]     = s.beta_hi;
  j["xi_lo"]       = s.xi_lo;
  j["xi_hi"]       = s.xi_hi;
  j["alpha_lo"]    = s.alpha_lo;
  j["alpha_hi"]    = s.alpha_hi;
  j["noise_mean"]  = s.noise_mean;
  j["noise_std"]   = s.noise_std;
  j["deploy_cost"] = s.deploy_cost;
  return j;
}

}  // namespace

void Scenario::validate() const
{
  auto fail = [](std::string const &field, std::string const &why) { throw ValidationError(field + ": " + why); };
  if (seeds < 1)
  {
    fail("seeds", "must be at least 1");
  }
  if (num_vsps < 1)
  {
    fail("num_vsps", "must be at least 1");
  }
  if (profiles && static_cast<int>(profiles->size()) != num_vsps)
  {
    fail("profiles", "length must equal num_vsps");
  }
  if (population_sizes.empty())
  {
    fail("population_sizes", "must not be empty");
  }
  for (int n : population_sizes)
  {
    if (n < 1)
    {
      fail("population_sizes", "entries must be positive");
    }
  }
  if (variants.empty())
  {
    fail("variants", "must not be empty");
  }
  if (pretrain_episodes < 0 || probe_rounds < 1 || eval_rounds < 1 || collusion_rounds < 1)
  {
    fail("rounds", "pretrain_episodes >= 0 and probe/eval/collusion rounds >= 1 required");
  }
  if (converged_window < 1 || converged_window > collusion_rounds)
  {
    fail("converged_window", "must lie in [1, collusion_rounds]");
  }
  std::set<int> members(coalition.begin(), coalition.end());
  if (members.size() != coalition.size())
  {
    fail("coalition", "members must be distinct");
  }
  for (int m : coalition)
  {
    if (m < 0 || m >= num_vsps)
    {
      fail("coalition", "member out of range");
    }
  }
  if (deviator < 0 || deviator >= num_vsps)
  {
    fail("deviator", "out of range");
  }
  try
  {
    units_for_step(grid_step);
  }
  catch (ValidationError const &e)
  {
    fail("grid_step", e.what());
  }
  if (qvcg_units_collusion < 1)
  {
    fail("qvcg_units_collusion", "must be at least 1");
  }
  for (int m : qvcg_units)
  {
    if (m < 1)
    {
      fail("qvcg_units", "entries must be positive");
    }
  }
  for (double f : collusion_factors)
  {
    if (!(f >= 0.0) || !std::isfinite(f))
    {
      fail("collusion_factors", "entries must be finite and nonnegative");
    }
  }
  if (smoothing < 1)
  {
    fail("smoothing", "must be at least 1");
  }
  if (!(sampling.beta_lo > 0.0 && sampling.beta_hi >= sampling.beta_lo && sampling.xi_lo >= 0.0 &&
        sampling.xi_hi >= sampling.xi_lo && sampling.alpha_lo > 0.0 && sampling.alpha_hi >= sampling.alpha_lo &&
        sampling.noise_std >= 0.0 && sampling.deploy_cost >= 0.0))
  {
    fail("sampling", "ranges must be ordered and positive where required");
  }
  market.validate();
}

std::vector<VspProfile> Scenario::profiles_for(std::uint64_t run_seed, int n) const
{
  if (profiles && n == num_vsps)
  {
    return *profiles;
  }
  return sample_profiles(n, run_seed, sampling);
}

Scenario scenario_from_json(ordered_json const &j)
{
  Fields      f(j, "");
  std::string schema;
  f.get("schema", schema);
  if (schema != kScenarioSchema)
  {
    throw ValidationError(std::string("schema: expected '") + kScenarioSchema + "', got '" + schema + "'");
  }
  Scenario                 s;
  std::string              experiment = to_string(s.experiment);
  std::vector<std::string> variants;
  for (auto v : s.variants)
  {
    variants.push_back(to_string(v));
  }
  f.get("name", s.name);
  f.get("experiment", experiment);
  f.get("seed", s.seed);
  f.get("seeds", s.seeds);
  f.get("num_vsps", s.num_vsps);
  f.get("population_sizes", s.population_sizes);
  f.get("variants", variants);
  f.get("learned_bidders", s.learned_bidders);
  f.get("pretrain_episodes", s.pretrain_episodes);
  f.get("probe_rounds", s.probe_rounds);
  f.get("eval_rounds", s.eval_rounds);
  f.get("collusion_rounds", s.collusion_rounds);
  f.get("converged_window", s.converged_window);
  f.get("mechanism_learning", s.mechanism_learning);
  f.get("coalition", s.coalition);
  f.get("deviator", s.deviator);
  f.get("grid_step", s.grid_step);
  f.get("qvcg_units_collusion", s.qvcg_units_collusion);
  f.get("qvcg_units", s.qvcg_units);
  f.get("collusion_factors", s.collusion_factors);
  f.get("smoothing", s.smoothing);
  if (f.has("sampling"))
  {
    read_sampling(f.child("sampling"), s.sampling);
  }
  if (f.has("mdp"))
  {
    read_mdp(f.child("mdp"), s.market.mdp);
  }
  if (f.has("learner"))
  {
    read_learner(f.child("learner"), s.market.learner);
  }
  if (f.has("market"))
  {
    read_market(f.child("market"), s.market);
  }
  if (f.has("deviation"))
  {
    read_deviation(f.child("deviation"), s.market.deviation);
  }
  if (f.has("profiles"))
  {
    ordered_json const &list = f.child("profiles");
    if (!list.is_array())
    {
      throw ValidationError("profiles: expected an array");
    }
    std::vector<VspProfile> profiles;
    for (std::size_t k = 0; k < list.size(); ++k)
    {
      profiles.push_back(profile_from(list[k], "profiles[" + std::to_string(k) + "]"));
    }
    s.profiles = std::move(profiles);
  }
  f.finish();
  s.experiment = experiment_from_string(experiment);
  s.variants.clear();
  for (auto const &v : variants)
  {
    s.variants.push_back(critic_kind_from_string(v));
  }
  s.validate();
  return s;
}

ordered_json scenario_to_json(Scenario const &s)
{
  ordered_json j;
  j["schema"]     = kScenarioSchema;
  j["name"]       = s.name;
  j["experiment"] = to_string(s.experiment);
  j["seed"]       = s.seed;
  j["seeds"]      = s.seeds;
  j["num_vsps"]   = s.num_vsps;
  j["population_sizes"] = s.population_sizes;
  ordered_json variants = ordered_json::array();
  for (auto v : s.variants)
  {
    variants.push_back(to_string(v));
  }
  j["variants"]             = variants;
  j["learned_bidders"]      = s.learned_bidders;
  j["pretrain_episodes"]    = s.pretrain_episodes;
  j["probe_rounds"]         = s.probe_rounds;
  j["eval_rounds"]          = s.eval_rounds;
  j["collusion_rounds"]     = s.collusion_rounds;
  j["converged_window"]     = s.converged_window;
  j["mechanism_learning"]   = s.mechanism_learning;
  j["coalition"]            = s.coalition;
  j["deviator"]             = s.deviator;
  j["grid_step"]            = s.grid_step;
  j["qvcg_units_collusion"] = s.qvcg_units_collusion;
  j["qvcg_units"]           = s.qvcg_units;
  j["collusion_factors"]    = s.collusion_factors;
  j["smoothing"]            = s.smoothing;
  j["sampling"]             = write_sampling(s.sampling);
  j["mdp"]                  = write_mdp(s.market.mdp);
  j["learner"]              = write_learner(s.market.learner);
  j["market"]               = write_market(s.market);
  j["deviation"]            = {{"round_a", s.market.deviation.round_a},
                               {"factor_a", s.market.deviation.factor_a},
                               {"round_b", s.market.deviation.round_b},
                               {"factor_b", s.market.deviation.factor_b}};
  if (s.profiles)
  {
    ordered_json list = ordered_json::array();
    for (auto const &p : *s.profiles)
    {
      list.push_back(profile_to(p));
    }
    j["profiles"] = list;
  }
  return j;
}

Scenario load_scenario(std::string const &path)
{
  std::ifstream in(path);
  if (!in)
  {
    throw ValidationError("scenario: cannot open '" + path + "'");
  }
  ordered_json j;
  try
  {
    j = ordered_json::parse(in);
  }
  catch (nlohmann::json::parse_error const &e)
  {
    throw ValidationError("scenario: " + path + " is not valid JSON (" + e.what() + ")");
  }
  return scenario_from_json(j);
}

std::vector<std::string> builtin_scenarios()
{
  return {"convergence_n10", "convergence_n30",   "welfare_sweep",   "dsic_n5",
          "collusion_dvcg_n5", "collusion_qvcg_n5", "ablation_nvi_n5", "smoke"};
}

std::optional<Scenario> builtin_scenario(std::string const &name)
{
  Scenario s;
  s.name = name;
  if (name == "convergence_n10" || name == "convergence_n30")
  {
    s.experiment = Experiment::kConvergence;
    s.num_vsps   = name == "convergence_n10" ? 10 : 30;
  }
  else if (name == "welfare_sweep")
  {
    s.experiment = Experiment::kWelfareSweep;
    s.variants   = {CriticKind::kMeanField, CriticKind::kJoint, CriticKind::kIndependent};
  }
  else if (name == "dsic_n5")
  {
    s.experiment = Experiment::kDsic;
    s.num_vsps   = 5;
  }
  else if (name == "collusion_dvcg_n5")
  {
    s.experiment = Experiment::kCollusionDvcg;
    s.num_vsps   = 5;
  }
  else if (name == "ablation_nvi_n5")
  {
    s.experiment = Experiment::kAblationNvi;
    s.num_vsps   = 5;
  }
  else if (name == "collusion_qvcg_n5")
  {
    s.experiment = Experiment::kCollusionQvcg;
    s.num_vsps   = 5;
    s.seed       = 42;
    s.seeds      = 1;
  }
  else if (name == "smoke")
  {
    s.experiment                    = Experiment::kConvergence;
    s.num_vsps                      = 3;
    s.seeds                         = 1;
    s.variants                      = {CriticKind::kMeanField};
    s.market.warmup_rounds          = 10;
    s.market.mdp.episodes           = 20;
    s.market.mdp.rounds_per_episode = 5;
    s.market.mdp.batch_size         = 16;
    s.smoothing                     = 5;
  }
  else
  {
    return std::nullopt;
  }
  return s;
}

Scenario resolve_scenario(std::string const &name_or_path)
{
  if (auto s = builtin_scenario(name_or_path))
  {
    s->validate();
    return *s;
  }
  return load_scenario(name_or_path);
}

ordered_json profiles_to_json(std::vector<VspProfile> const &profiles)
{
  ordered_json list = ordered_json::array();
  for (auto const &p : profiles)
  {
    list.push_back(profile_to(p));
  }
  return ordered_json{{"schema", kProfilesSchema}, {"profiles", list}};
}

std::vector<VspProfile> profiles_from_json(ordered_json const &j)
{
  Fields      f(j, "");
  std::string schema;
  f.get("schema", schema);
  if (schema != kProfilesSchema)
  {
    throw ValidationError(std::string("schema: expected '") + kProfilesSchema + "'");
  }
  if (!f.has("profiles") || !j.at("profiles").is_array())
  {
    throw ValidationError("profiles: expected an array");
  }
  ordered_json const     &list = f.child("profiles");
  std::vector<VspProfile> out;
  for (std::size_t k = 0; k < list.size(); ++k)
  {
    out.push_back(profile_from(list[k], "profiles[" + std::to_string(k) + "]"));
  }
  f.finish();
  return out;
}

}  // namespace dvcg
