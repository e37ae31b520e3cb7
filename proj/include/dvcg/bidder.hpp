#pragma once

#include "dvcg/env.hpp"
#include "dvcg/nn.hpp"

#include <deque>
#include <span>
#include <string>
#include <vector>

namespace dvcg {

enum class BidderKind
{
  kTruthful,
  kScriptedDeviation,
  kLearned,
  kCollusive,
};

std::string to_string(BidderKind kind);
BidderKind  bidder_kind_from_string(std::string const &name);

/// Bid = u_i(expected slice); the previous award stands in for the expectation.
double truthful_bid(VspProfile const &profile, Slice const &expected_slice);

struct DeviationSchedule
{
  int    round_a  = 400;
  double factor_a = 1.2;
  int    round_b  = 650;
  double factor_b = 0.8;
};

/// base before round_a, base * factor_a in [round_a, round_b), base * factor_b after.
double scripted_deviation_bid(double base, int round, DeviationSchedule const &schedule = {});

/// What a learning bidder sees about one member VSP: its previous slice and
/// the previous round's tax, loan and interest.
struct BidderObservation
{
  Slice  slice    = Slice::Zero();
  double tax      = 0.0;
  double loan     = 0.0;
  double interest = 0.0;
};

struct LearnerConfig
{
  double           learning_rate   = 1e-3;
  int              batch_size      = 64;
  int              updates_per_step = 4;
  std::size_t      buffer_capacity = 2000;
  double           noise_start     = 0.1;
  double           noise_end       = 0.02;
  int              noise_decay     = 1000;  // updates until noise_end is reached
  double           cap_factor      = 1.5;   // bid cap = cap_factor * beta
  std::vector<int> actor_hidden{32, 32};
  std::vector<int> critic_hidden{64, 64};

  void validate() const;
};

/// Myopic deterministic actor-critic bidder (discount zero): the critic fits
/// the round's net profit, the actor ascends it. With several members it is a
/// coalition's single joint decision maker trained on summed net profit.
class LearnedBidder
{
public:
  LearnedBidder(std::vector<int> members, std::vector<double> caps, LearnerConfig config, std::uint64_t seed);

  std::vector<int> const    &members() const { return members_; }
  std::vector<double> const &caps() const { return caps_; }
  LearnerConfig const       &config() const { return config_; }
  long                       updates() const { return updates_; }
  double                     noise() const;

  /// One bid per member, in [0, cap]. Exploration adds Gaussian noise to the
  /// squashed action.
  std::vector<double> bid(std::span<BidderObservation const> observations, bool explore);

  /// Records the transition and takes one critic and one actor step once the
  /// buffer holds a batch. A non-finite reward is dropped and false returned.
  bool update(std::span<BidderObservation const> observations, std::span<double const> bids, double reward);

  Mlp const &actor() const { return actor_; }
  Mlp const &critic() const { return critic_; }

private:
  Eigen::VectorXd encode(std::span<BidderObservation const> observations) const;
  void            train_step();

  struct Sample
  {
    Eigen::VectorXd state;
    Eigen::VectorXd action;  // bids / caps
    double          reward;
  };

  std::vector<int>    members_;
  std::vector<double> caps_;
  LearnerConfig       config_;
  Rng                 rng_;
  Mlp                 actor_;
  Mlp                 critic_;
  Adam                actor_opt_;
  Adam                critic_opt_;
  std::deque<Sample>  buffer_;
  double              reward_scale_ = 1.0;
  long                updates_      = 0;
};

/// Fixed point of the coalition's zero-interest condition with outsiders
/// truthful: solves A x = b over the members for the given estimated utilities.
struct CollusionFixedPoint
{
  std::vector<double> bids;
  int                 rank      = 0;
  bool                full_rank = false;
  double              max_gap   = 0.0;  // max |x_m - U_m| over members
};

CollusionFixedPoint collusion_fixed_point(std::span<double const> utilities, std::span<int const> coalition);

}  // namespace dvcg
