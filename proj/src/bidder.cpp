#include "dvcg/bidder.hpp"

#include "dvcg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dvcg {

std::string to_string(BidderKind kind)
{
  switch (kind)
  {
  case BidderKind::kTruthful:
    return "truthful";
  case BidderKind::kScriptedDeviation:
    return "scripted_deviation";
  case BidderKind::kLearned:
    return "learned";
  case BidderKind::kCollusive:
    return "collusive";
  }
  return "unknown";
}

BidderKind bidder_kind_from_string(std::string const &name)
{
  for (auto kind : {BidderKind::kTruthful, BidderKind::kScriptedDeviation, BidderKind::kLearned,
                    BidderKind::kCollusive})
  {
    if (to_string(kind) == name)
    {
      return kind;
    }
  }
  throw ValidationError("unknown bidder kind '" + name + "'");
}

double truthful_bid(VspProfile const &profile, Slice const &expected_slice)
{
  return utility(profile, expected_slice);
}

double scripted_deviation_bid(double base, int round, DeviationSchedule const &schedule)
{
  if (round < schedule.round_a)
  {
    return base;
  }
  if (round < schedule.round_b)
  {
    return base * schedule.factor_a;
  }
  return base * schedule.factor_b;
}

void LearnerConfig::validate() const
{
  if (!(learning_rate > 0.0) || batch_size < 1 || updates_per_step < 1 || buffer_capacity < static_cast<std::size_t>(batch_size))
  {
    throw ValidationError("learner: learning_rate, batch_size or buffer_capacity out of range");
  }
  if (!(noise_start >= 0.0 && noise_end >= 0.0) || noise_decay < 1)
  {
    throw ValidationError("learner: exploration noise settings out of range");
  }
  if (!(cap_factor >= 0.0))
  {
    throw ValidationError("learner: cap_factor must be nonnegative");
  }
}

namespace {

constexpr int kStateWidth = kResources + 3;

std::vector<int> layer_dims(int in, std::vector<int> const &hidden, int out)
{
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

LearnedBidder::LearnedBidder(std::vector<int> members, std::vector<double> caps, LearnerConfig config,
                             std::uint64_t seed)
  : members_(std::move(members))
  , caps_(std::move(caps))
  , config_(std::move(config))
  , rng_(seed)
{
  if (members_.empty() || members_.size() != caps_.size())
  {
    throw ValidationError("learned bidder needs one cap per member");
  }
  if (std::set<int>(members_.begin(), members_.end()).size() != members_.size())
  {
    throw ValidationError("coalition members must be distinct");
  }
  for (double cap : caps_)
  {
    if (!(cap >= 0.0) || !std::isfinite(cap))
    {
      throw ValidationError("bid caps must be finite and nonnegative");
    }
  }
  config_.validate();
  int const k = static_cast<int>(members_.size());
  actor_      = Mlp(layer_dims(kStateWidth * k, config_.actor_hidden, k), Activation::kTanh, Activation::kSigmoid);
  critic_     = Mlp(layer_dims(kStateWidth * k + k, config_.critic_hidden, 1));
  actor_.init(rng_);
  critic_.init(rng_);
  actor_opt_    = Adam(actor_, config_.learning_rate);
  critic_opt_   = Adam(critic_, config_.learning_rate);
  reward_scale_ = std::max(1.0, std::accumulate(caps_.begin(), caps_.end(), 0.0));
}

double LearnedBidder::noise() const
{
  double const frac = std::min(1.0, static_cast<double>(updates_) / config_.noise_decay);
  return config_.noise_start + (config_.noise_end - config_.noise_start) * frac;
}

Eigen::VectorXd LearnedBidder::encode(std::span<BidderObservation const> observations) const
{
  if (observations.size() != members_.size())
  {
    throw ValidationError("learned bidder: one observation per member required");
  }
  Eigen::VectorXd state(kStateWidth * members_.size());
  for (std::size_t m = 0; m < members_.size(); ++m)
  {
    double const scale = caps_[m] > 0.0 ? caps_[m] : 1.0;
    auto const  &o     = observations[m];
    state.segment<kStateWidth>(kStateWidth * m) << o.slice, o.tax / scale, o.loan / scale, o.interest / scale;
  }
  return state;
}

std::vector<double> LearnedBidder::bid(std::span<BidderObservation const> observations, bool explore)
{
  Eigen::VectorXd action = actor_.forward(encode(observations));
  if (explore)
  {
    std::normal_distribution<double> jitter(0.0, 1.0);
    double const                     sigma = noise();
    for (Eigen::Index k = 0; k < action.size(); ++k)
    {
      action[k] = std::clamp(action[k] + sigma * jitter(rng_), 0.0, 1.0);
    }
  }
  std::vector<double> bids(members_.size());
  for (std::size_t m = 0; m < members_.size(); ++m)
  {
    bids[m] = action[static_cast<Eigen::Index>(m)] * caps_[m];
  }
  return bids;
}

bool LearnedBidder::update(std::span<BidderObservation const> observations, std::span<double const> bids,
                           double reward)
{
  if (!std::isfinite(reward))
  {
    return false;
  }
  if (bids.size() != members_.size())
  {
    throw ValidationError("learned bidder: one bid per member required");
  }
  Sample sample{encode(observations), Eigen::VectorXd(bids.size()), reward / reward_scale_};
  for (std::size_t m = 0; m < bids.size(); ++m)
  {
    sample.action[static_cast<Eigen::Index>(m)] = caps_[m] > 0.0 ? bids[m] / caps_[m] : 0.0;
  }
  buffer_.push_back(std::move(sample));
  if (buffer_.size() > config_.buffer_capacity)
  {
    buffer_.pop_front();
  }
  if (buffer_.size() < static_cast<std::size_t>(config_.batch_size))
  {
    return true;
  }

  for (int u = 0; u < config_.updates_per_step; ++u)
  {
    train_step();
  }
  ++updates_;
  return true;
}

void LearnedBidder::train_step()
{
  int const b     = config_.batch_size;
  int const k     = static_cast<int>(members_.size());
  int const width = kStateWidth * k;
  Eigen::MatrixXd    states(width, b), inputs(width + k, b);
  Eigen::RowVectorXd targets(b);
  std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
  for (int s = 0; s < b; ++s)
  {
    Sample const &draw = buffer_[pick(rng_)];
    states.col(s)      = draw.state;
    inputs.col(s) << draw.state, draw.action;
    targets[s] = draw.reward;
  }

  ForwardTape              tape;
  Eigen::RowVectorXd const diff = critic_.forward(inputs, &tape).row(0) - targets;
  critic_opt_.step(critic_, critic_.backward(tape, (2.0 / b) * diff));

  ForwardTape           actor_tape;
  Eigen::MatrixXd const actions = actor_.forward(states, &actor_tape);
  inputs.bottomRows(k)          = actions;
  ForwardTape        q_tape;
  Eigen::MatrixXd const q = critic_.forward(inputs, &q_tape);
  MlpGradients const qg   = critic_.backward(q_tape, Eigen::MatrixXd::Constant(1, b, -1.0 / b));
  actor_opt_.step(actor_, actor_.backward(actor_tape, qg.input.bottomRows(k)));

  if (!diff.allFinite() || !q.allFinite())
  {
    throw NumericError("learned bidder: non-finite training value");
  }
}

CollusionFixedPoint collusion_fixed_point(std::span<double const> utilities, std::span<int const> coalition)
{
  int const n = static_cast<int>(utilities.size());
  int const k = static_cast<int>(coalition.size());
  if (k == 0)
  {
    throw ValidationError("collusion_fixed_point: empty coalition");
  }
  std::set<int> members;
  for (int m : coalition)
  {
    if (m < 0 || m >= n || !members.insert(m).second)
    {
      throw ValidationError("collusion_fixed_point: coalition members must be distinct VSP ids");
    }
  }
  double const total    = std::accumulate(utilities.begin(), utilities.end(), 0.0);
  double       outsider = total;
  for (int m : coalition)
  {
    outsider -= utilities[m];
  }

  // x_i * sum_{j != i} U_j - U_i * sum_{m != i} x_m = U_i * outsiders
  Eigen::MatrixXd a(k, k);
  Eigen::VectorXd rhs(k);
  for (int r = 0; r < k; ++r)
  {
    double const u_i = utilities[coalition[r]];
    for (int c = 0; c < k; ++c)
    {
      a(r, c) = r == c ? total - u_i : -u_i;
    }
    rhs[r] = u_i * outsider;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  CollusionFixedPoint                         out;
  out.rank      = static_cast<int>(qr.rank());
  out.full_rank = out.rank == k;
  Eigen::VectorXd const x = qr.solve(rhs);
  out.bids.assign(x.data(), x.data() + k);
  for (int r = 0; r < k; ++r)
  {
    out.max_gap = std::max(out.max_gap, std::abs(x[r] - utilities[coalition[r]]));
  }
  return out;
}

}  // namespace dvcg
