#include "dvcg/market.hpp"

#include "dvcg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace dvcg {

void MarketConfig::validate() const
{
  mdp.validate();
  learner.validate();
  if (warmup_rounds < 0 || train_every < 1)
  {
    throw ValidationError("market: warmup_rounds must be >= 0 and train_every >= 1");
  }
  if (!(utility_floor >= 0.0))
  {
    throw ValidationError("market: utility_floor must be nonnegative");
  }
  if (deviation.round_b < deviation.round_a || !(deviation.factor_a >= 0.0) || !(deviation.factor_b >= 0.0))
  {
    throw ValidationError("market: deviation schedule must have round_a <= round_b and factors >= 0");
  }
}

Market::Market(std::vector<VspProfile> profiles, std::vector<BidderAssignment> bidders, MarketConfig config,
               std::uint64_t seed)
  : profiles_(std::move(profiles))
  , config_(std::move(config))
  , rng_(derive_seed(seed, 0))
  , bill_(config_.mdp.buffer_capacity, config_.utility_floor)
  , allocator_(static_cast<int>(profiles_.size()), config_.critic, config_.mdp, derive_seed(seed, 1))
{
  config_.validate();
  for (auto const &p : profiles_)
  {
    p.validate();
  }
  int const n = num_vsps();
  state_      = Allocation::uniform(n).shares();
  prev_tax_.assign(n, 0.0);
  prev_loan_.assign(n, 0.0);
  prev_interest_.assign(n, 0.0);
  if (bidders.empty())
  {
    bidders.assign(n, BidderAssignment{});
  }
  set_bidders(std::move(bidders), derive_seed(seed, 2));
}

void Market::set_bidders(std::vector<BidderAssignment> bidders, std::uint64_t seed)
{
  int const n = num_vsps();
  if (static_cast<int>(bidders.size()) != n)
  {
    throw ValidationError("market: one bidder assignment per VSP required");
  }
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i)
  {
    auto const &b       = bidders[i];
    bool const  learner = b.kind == BidderKind::kLearned || b.kind == BidderKind::kCollusive;
    if (learner != (b.group >= 0))
    {
      throw ValidationError("vsp " + std::to_string(i) + ": learned and collusive bidders need a group, others none");
    }
    if (learner)
    {
      groups[b.group].push_back(i);
    }
  }
  learners_.clear();
  group_of_learner_.clear();
  std::uint64_t stream = 0;
  for (auto const &[group, members] : groups)
  {
    BidderKind const kind = bidders[members.front()].kind;
    for (int m : members)
    {
      if (bidders[m].kind != kind)
      {
        throw ValidationError("group " + std::to_string(group) + " mixes bidder kinds");
      }
    }
    if (kind == BidderKind::kCollusive && members.size() < 2)
    {
      throw ValidationError("collusive group " + std::to_string(group) + " needs at least two members");
    }
    if (kind == BidderKind::kLearned && members.size() != 1)
    {
      throw ValidationError("learned group " + std::to_string(group) + " must have exactly one member");
    }
    std::vector<double> caps;
    for (int m : members)
    {
      caps.push_back(config_.learner.cap_factor * profiles_[m].beta);
    }
    learners_.emplace_back(members, caps, config_.learner, derive_seed(seed, stream++));
    group_of_learner_.push_back(group);
  }
  bidders_ = std::move(bidders);
  learner_obs_.assign(learners_.size(), {});
  learner_bids_.assign(learners_.size(), {});
}

int Market::episode() const
{
  return round_ / config_.mdp.rounds_per_episode;
}

std::vector<double> Market::truthful_bids() const
{
  std::vector<double> out(num_vsps());
  for (int i = 0; i < num_vsps(); ++i)
  {
    out[i] = truthful_bid(profiles_[i], state_.col(i));
  }
  return out;
}

std::vector<double> Market::collect_bids(bool)
{
  std::vector<double> bids = truthful_bids();
  for (int i = 0; i < num_vsps(); ++i)
  {
    if (bidders_[i].kind == BidderKind::kScriptedDeviation)
    {
      bids[i] = scripted_deviation_bid(bids[i], round_ - schedule_origin_, config_.deviation);
    }
  }
  for (std::size_t l = 0; l < learners_.size(); ++l)
  {
    auto &obs = learner_obs_[l];
    obs.clear();
    for (int m : learners_[l].members())
    {
      obs.push_back({state_.col(m), prev_tax_[m], prev_loan_[m], prev_interest_[m]});
    }
    learner_bids_[l] = learners_[l].bid(obs, train_bidders_);
    for (std::size_t k = 0; k < obs.size(); ++k)
    {
      bids[learners_[l].members()[k]] = learner_bids_[l][k];
    }
  }
  for (int i = 0; i < num_vsps(); ++i)
  {
    if (!std::isfinite(bids[i]) || bids[i] < 0.0)
    {
      throw NumericError("round " + std::to_string(round_) + ", vsp " + std::to_string(i) + ": invalid bid");
    }
  }
  return bids;
}

std::vector<ActionIndex> Market::choose_actions(bool warmup)
{
  int const n = num_vsps();
  if (warmup)
  {
    std::uniform_int_distribution<int> level(0, kLevels - 1);
    std::vector<ActionIndex>           actions(n);
    for (auto &a : actions)
    {
      for (auto &k : a)
      {
        k = level(rng_);
      }
    }
    return actions;
  }
  double const t = temperature_ ? *temperature_ : config_.mdp.temperature(episode());
  return allocator_.select_actions(state_, t, &rng_);
}

RoundOutcome Market::step()
{
  int const  n             = num_vsps();
  int const  t             = round_;
  bool const episode_start = t % config_.mdp.rounds_per_episode == 0;
  bool const warmup        = in_warmup();
  Eigen::Matrix3Xd const obs = state_;

  RoundOutcome out;
  out.round  = t;
  out.warmup = warmup;
  out.bids   = collect_bids(episode_start);

  double pool = 0.0;
  if (warmup)
  {
    pool = std::accumulate(out.bids.begin(), out.bids.end(), 0.0);
  }
  else if (episode_start)
  {
    auto const est = allocator_.estimate_utilities(obs);
    pool           = std::accumulate(est.begin(), est.end(), 0.0);
  }
  else
  {
    pool = sw_star_prev_;
  }
  out.pool  = issue_currency(std::span<double const>(&pool, 1), t).amount;
  out.loans = grant_loans(VcPool{out.pool, t}, out.bids);

  std::vector<ActionIndex> const actions = choose_actions(warmup);
  Allocation const               s_star  = apply_actions(Allocation(obs), actions, config_.mdp.action_floor);
  out.estimated_utilities                = allocator_.estimate_utilities(s_star.shares());
  out.sw_star = std::accumulate(out.estimated_utilities.begin(), out.estimated_utilities.end(), 0.0);

  if (warmup)
  {
    out.allocation = s_star;
  }
  else
  {
    out.perturbation = perturbation_scale(out.bids, out.sw_star);
    out.allocation   = perturbed_allocation(s_star, out.bids, out.sw_star, rng_, config_.noise_units);
  }

  out.utilities.resize(n);
  out.interests.resize(n);
  out.impacts.assign(n, 0.0);
  out.taxes.assign(n, 0.0);
  out.gross_profits.resize(n);
  out.net_profits.resize(n);
  for (int i = 0; i < n; ++i)
  {
    out.utilities[i] = utility(profiles_[i], out.allocation.slice(i));
    out.interests[i] = compute_interest(out.loans[i], out.estimated_utilities[i]);
  }
  out.realized_welfare = std::accumulate(out.utilities.begin(), out.utilities.end(), 0.0);

  if (!warmup)
  {
    BillStats const     stats    = bill_.stats();
    std::vector<double> realized = allocator_.estimate_utilities(out.allocation.shares());
    double const        total    = std::accumulate(realized.begin(), realized.end(), 0.0);
    for (int i = 0; i < n; ++i)
    {
      double const optimum = allocator_.estimate_sw_minus_i(i, obs, actions, stats);
      out.impacts[i]       = compute_impact(optimum, total - realized[i]);
      double alpha_hat     = 1.0;
      try
      {
        // Noisy reports near the utility floor can average out non-positive.
        double const estimate = bill_.alpha_estimate(i);
        if (estimate > 0.0)
        {
          alpha_hat = estimate;
        }
      }
      catch (ColdStartError const &)
      {
      }
      out.taxes[i] = compute_tax(alpha_hat, out.impacts[i], config_.interest ? out.interests[i] : 0.0);
    }
  }
  for (int i = 0; i < n; ++i)
  {
    out.gross_profits[i] = gross_profit(profiles_[i], out.utilities[i], rng_);
    out.net_profits[i]   = out.gross_profits[i] - out.taxes[i] - profiles_[i].deploy_cost;
  }

  BillRecord record;
  record.round               = t;
  record.episode             = episode();
  record.episode_start       = episode_start;
  record.warmup              = warmup;
  record.observation         = obs;
  record.actions             = actions;
  record.allocation          = out.allocation.shares();
  record.bids                = out.bids;
  record.loans               = out.loans;
  record.estimated_utilities = out.estimated_utilities;
  record.impacts             = out.impacts;
  record.interests           = out.interests;
  record.taxes               = out.taxes;
  record.pool                = out.pool;
  record.sw_star             = out.sw_star;
  record.report              = pending_report_;
  bill_.append(std::move(record));
  pending_report_ = FinancialReport{t, out.utilities, out.gross_profits};

  state_         = out.allocation.shares();
  sw_star_prev_  = out.sw_star;
  prev_tax_      = out.taxes;
  prev_loan_     = out.loans;
  prev_interest_ = out.interests;

  learn(out);
  ++round_;
  if (round_ % config_.mdp.rounds_per_episode == 0)
  {
    state_ = Allocation::uniform(n).shares();
  }
  return out;
}

void Market::learn(RoundOutcome const &outcome)
{
  if (train_bidders_)
  {
    for (std::size_t l = 0; l < learners_.size(); ++l)
    {
      double reward = 0.0;
      for (int m : learners_[l].members())
      {
        reward += outcome.net_profits[m];
      }
      learners_[l].update(learner_obs_[l], learner_bids_[l], reward);
    }
  }

  int const since = round_ - config_.warmup_rounds;
  if (!train_allocator_ || since < 0 || since % config_.train_every != 0)
  {
    return;
  }
  try
  {
    if (!normalizer_ready_)
    {
      double      total = 0.0;
      std::size_t count = 0;
      for (std::size_t k = 0; k + 1 < bill_.size(); ++k)
      {
        if (bill_.has_transition(k))
        {
          total += reward(bill_.at(k + 1).bids);
          ++count;
        }
      }
      if (count == 0)
      {
        return;
      }
      double const mean = total / static_cast<double>(count);
      allocator_.set_normalizer({mean, std::max(mean, 1.0)});
      normalizer_ready_ = true;
    }
    ReplayBatch const batch = sample_batch(bill_, config_.mdp.batch_size, rng_);
    last_losses_            = allocator_.train_round(batch);
  }
  catch (ColdStartError const &)
  {
  }
  catch (NumericError const &e)
  {
    throw NumericError("round " + std::to_string(round_) + ": " + e.what());
  }
}

}  // namespace dvcg
