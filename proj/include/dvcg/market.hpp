#pragma once

#include "dvcg/bidder.hpp"
#include "dvcg/bill.hpp"
#include "dvcg/env.hpp"
#include "dvcg/marl.hpp"
#include "dvcg/mechanism.hpp"

#include <optional>
#include <vector>

namespace dvcg {

struct MarketConfig
{
  CriticKind        critic        = CriticKind::kMeanField;
  MdpConfig         mdp;
  bool              interest      = true;  // false gives the NVI ablation: Z = alpha_hat * I
  int               warmup_rounds = 50;
  NoiseUnits        noise_units   = NoiseUnits::kPoolFraction;
  int               train_every   = 1;
  double            utility_floor = kDefaultUtilityFloor;
  LearnerConfig     learner;
  DeviationSchedule deviation;

  void validate() const;
};

/// One VSP's bidding strategy. Learned and collusive VSPs name a learner group;
/// VSPs sharing a group are one coalition.
struct BidderAssignment
{
  BidderKind kind  = BidderKind::kTruthful;
  int        group = -1;
};

/// Repeated dual-currency auction: bank, NSP allocator, and bidders.
class Market
{
public:
  Market(std::vector<VspProfile> profiles, std::vector<BidderAssignment> bidders, MarketConfig config,
         std::uint64_t seed);

  /// Runs one auction round and, when enabled, one learning step.
  RoundOutcome step();

  int                            num_vsps() const { return static_cast<int>(profiles_.size()); }
  int                            round() const { return round_; }
  int                            episode() const;
  bool                           in_warmup() const { return round_ < config_.warmup_rounds; }
  std::vector<VspProfile> const &profiles() const { return profiles_; }
  MarketConfig const            &config() const { return config_; }
  Bill const                    &bill() const { return bill_; }
  MarlAllocator const           &allocator() const { return allocator_; }
  std::vector<LearnedBidder> const &learners() const { return learners_; }
  std::vector<BidderAssignment> const &bidders() const { return bidders_; }
  LossReport const              &last_losses() const { return last_losses_; }

  /// Replaces the bidding strategies; learners are created fresh for new groups.
  void set_bidders(std::vector<BidderAssignment> bidders, std::uint64_t seed);

  void set_train_allocator(bool on) { train_allocator_ = on; }
  void set_train_bidders(bool on) { train_bidders_ = on; }
  void set_interest(bool on) { config_.interest = on; }

  /// Fixed exploration temperature; nullopt restores the episode schedule.
  void set_temperature(std::optional<double> t) { temperature_ = t; }

  /// Round from which the scripted deviation schedule is counted.
  void set_schedule_origin(int round) { schedule_origin_ = round; }

  /// Truthful bids against the current state (what honest VSPs would send).
  std::vector<double> truthful_bids() const;

  Eigen::Matrix3Xd const &state() const { return state_; }

private:
  std::vector<double>      collect_bids(bool episode_start);
  std::vector<ActionIndex> choose_actions(bool warmup);
  void                     learn(RoundOutcome const &outcome);

  std::vector<VspProfile>       profiles_;
  std::vector<BidderAssignment> bidders_;
  MarketConfig                  config_;
  Rng                           rng_;
  Bill                          bill_;
  MarlAllocator                 allocator_;
  std::vector<LearnedBidder>    learners_;
  std::vector<int>              group_of_learner_;

  Eigen::Matrix3Xd    state_;  // allocation served last round
  double              sw_star_prev_ = 0.0;
  std::vector<double> prev_tax_, prev_loan_, prev_interest_;
  FinancialReport     pending_report_;
  std::vector<std::vector<BidderObservation>> learner_obs_;
  std::vector<std::vector<double>>            learner_bids_;

  int                   round_           = 0;
  int                   schedule_origin_ = 0;
  bool                  normalizer_ready_ = false;
  bool                  train_allocator_ = true;
  bool                  train_bidders_   = true;
  std::optional<double> temperature_;
  LossReport            last_losses_;
};

}  // namespace dvcg
