#include "dvcg/marl.hpp"

#include "dvcg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dvcg {

std::string to_string(CriticKind kind)
{
  switch (kind)
  {
  case CriticKind::kMeanField:
    return "mean_field";
  case CriticKind::kJoint:
    return "joint";
  case CriticKind::kIndependent:
    return "independent";
  }
  return "unknown";
}

CriticKind critic_kind_from_string(std::string const &name)
{
  if (name == "mean_field")
  {
    return CriticKind::kMeanField;
  }
  if (name == "joint")
  {
    return CriticKind::kJoint;
  }
  if (name == "independent")
  {
    return CriticKind::kIndependent;
  }
  throw ValidationError("unknown critic kind '" + name + "'");
}

double MdpConfig::temperature(int episode) const
{
  double const span = anneal_fraction * episodes;
  if (span <= 0.0 || episode >= span)
  {
    return temperature_end;
  }
  double const frac = std::max(0.0, episode / span);
  return temperature_start + (temperature_end - temperature_start) * frac;
}

void MdpConfig::validate() const
{
  if (!(gamma >= 0.0 && gamma < 1.0))
  {
    throw ValidationError("mdp: gamma must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0))
  {
    throw ValidationError("mdp: learning_rate must be positive");
  }
  if (episodes < 1 || rounds_per_episode < 1)
  {
    throw ValidationError("mdp: episodes and rounds_per_episode must be positive");
  }
  if (batch_size < 1 || buffer_capacity < 2)
  {
    throw ValidationError("mdp: batch_size and buffer_capacity too small");
  }
  if (!(tau > 0.0 && tau <= 1.0))
  {
    throw ValidationError("mdp: tau must lie in (0, 1]");
  }
  if (!(temperature_start >= 0.0 && temperature_end >= 0.0 && relax_temperature > 0.0))
  {
    throw ValidationError("mdp: temperatures must be nonnegative");
  }
  if (!(action_floor >= 0.0 && action_floor < 1.0) || !(utility_scale > 0.0))
  {
    throw ValidationError("mdp: action_floor or utility_scale out of range");
  }
}

Observation observe(Eigen::Matrix3Xd const &prev_allocation, int agent)
{
  int const n = static_cast<int>(prev_allocation.cols());
  if (agent < 0 || agent >= n)
  {
    throw ValidationError("observe: agent index out of range");
  }
  Observation obs;
  obs.own = prev_allocation.col(agent);
  if (n > 1)
  {
    obs.others = (prev_allocation.rowwise().sum() - obs.own) / static_cast<double>(n - 1);
  }
  return obs;
}

Eigen::Matrix<double, kActionWidth, 1> one_hot(ActionIndex const &action)
{
  Eigen::Matrix<double, kActionWidth, 1> code = Eigen::Matrix<double, kActionWidth, 1>::Zero();
  for (int h = 0; h < kResources; ++h)
  {
    if (action[h] < 0 || action[h] >= kLevels)
    {
      throw ValidationError("action level index out of range");
    }
    code[h * kLevels + action[h]] = 1.0;
  }
  return code;
}

MeanFieldEmbedding mean_field_embed(Eigen::Matrix3Xd const &observations, std::span<ActionIndex const> actions,
                                    int agent)
{
  int const n = static_cast<int>(observations.cols());
  if (static_cast<int>(actions.size()) != n || agent < 0 || agent >= n)
  {
    throw ValidationError("mean_field_embed: shape mismatch");
  }
  MeanFieldEmbedding out;
  if (n == 1)
  {
    out.degenerate = true;
    return out;
  }
  for (int j = 0; j < n; ++j)
  {
    if (j == agent)
    {
      continue;
    }
    out.values.head<kActionWidth>() += one_hot(actions[j]);
    out.values.tail<kResources>() += observations.col(j);
  }
  out.values /= static_cast<double>(n - 1);
  return out;
}

Allocation apply_actions(Allocation const &prev, std::span<ActionIndex const> actions, double floor)
{
  int const n = prev.num_vsps();
  if (static_cast<int>(actions.size()) != n)
  {
    throw ValidationError("apply_actions: one action per VSP required");
  }
  Eigen::Matrix3Xd next = prev.shares();
  for (int i = 0; i < n; ++i)
  {
    for (int r = 0; r < kResources; ++r)
    {
      int const k = actions[i][r];
      if (k < 0 || k >= kLevels)
      {
        throw ValidationError("apply_actions: level index out of range");
      }
      double const level = kActionLevels[k];
      double       entry = next(r, i);
      if (level > 0.0)
      {
        entry = std::max(entry, floor);
      }
      next(r, i) = entry * (1.0 + level);
    }
  }
  return normalize(std::move(next));
}

double reward(std::span<double const> bids)
{
  return std::accumulate(bids.begin(), bids.end(), 0.0);
}

ActionIndex greedy_action(Eigen::VectorXd const &logits)
{
  if (logits.size() != kActionWidth)
  {
    throw ValidationError("greedy_action: expected 21 logits");
  }
  ActionIndex out{};
  for (int h = 0; h < kResources; ++h)
  {
    int best = kNeutralLevel;
    for (int k = 0; k < kLevels; ++k)
    {
      double const v = logits[h * kLevels + k];
      double const b = logits[h * kLevels + best];
      if (v > b || (v == b && std::abs(k - kNeutralLevel) < std::abs(best - kNeutralLevel)))
      {
        best = k;
      }
    }
    out[h] = best;
  }
  return out;
}

ActionIndex sample_action(Eigen::VectorXd const &logits, double temperature, Rng &rng)
{
  if (temperature <= 1e-12)
  {
    return greedy_action(logits);
  }
  if (logits.size() != kActionWidth)
  {
    throw ValidationError("sample_action: expected 21 logits");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ActionIndex                            out{};
  for (int h = 0; h < kResources; ++h)
  {
    Eigen::Matrix<double, kLevels, 1> z = logits.segment<kLevels>(h * kLevels) / temperature;
    z                                   = (z.array() - z.maxCoeff()).exp();
    double const u                      = unit(rng) * z.sum();
    double       acc                    = 0.0;
    int          pick                   = kLevels - 1;
    for (int k = 0; k < kLevels; ++k)
    {
      acc += z[k];
      if (u < acc)
      {
        pick = k;
        break;
      }
    }
    out[h] = pick;
  }
  return out;
}

double clamp_sw_minus_i(double raw, double lower, double upper)
{
  return std::min(upper, std::max(raw, lower));
}

ActionIndex act(AgentNets const &agent, Observation const &obs, double temperature, Rng *rng)
{
  Eigen::VectorXd input(2 * kResources);
  input << obs.own, obs.others;
  Eigen::VectorXd const logits = agent.actor_online.forward(input);
  if (rng == nullptr || temperature <= 0.0)
  {
    return greedy_action(logits);
  }
  return sample_action(logits, temperature, *rng);
}

ReplayBatch sample_batch(Bill const &bill, int batch_size, Rng &rng)
{
  std::vector<std::size_t> valid;
  for (std::size_t k = 0; k + 1 < bill.size(); ++k)
  {
    if (bill.has_transition(k) && !bill.at(k + 1).report.empty())
    {
      valid.push_back(k);
    }
  }
  if (valid.empty())
  {
    throw ColdStartError("sample_batch: bill holds no complete transitions");
  }
  std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
  ReplayBatch                                batch;
  for (int b = 0; b < batch_size; ++b)
  {
    std::size_t const k    = valid[pick(rng)];
    auto const       &cur  = bill.at(k);
    auto const       &next = bill.at(k + 1);
    batch.observations.push_back(cur.observation);
    batch.actions.push_back(cur.actions);
    batch.rewards.push_back(reward(next.bids));
    batch.next_observations.push_back(cur.allocation);
    batch.utilities.push_back(next.report.utilities);
  }
  return batch;
}

MarlAllocator::MarlAllocator(int num_agents, CriticKind kind, MdpConfig config, std::uint64_t seed)
  : num_agents_(num_agents)
  , kind_(kind)
  , config_(std::move(config))
{
  if (num_agents_ < 1)
  {
    throw ValidationError("allocator needs at least one agent");
  }
  config_.validate();
  Rng  rng(seed);
  auto dims = [](int in, std::vector<int> const &hidden, int out) {
    std::vector<int> d{in};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(out);
    return d;
  };
  for (int i = 0; i < num_agents_; ++i)
  {
    AgentNets a;
    a.id           = i;
    a.actor_online = Mlp(dims(2 * kResources, config_.actor_hidden, kActionWidth));
    a.actor_online.init(rng);
    a.actor_target  = a.actor_online;
    a.critic_online = Mlp(dims(critic_input_dim(), config_.critic_hidden, 1));
    a.critic_online.init(rng);
    a.critic_target = a.critic_online;
    a.voi           = Mlp(dims(kResources, config_.voi_hidden, 1));
    a.voi.init(rng);
    actor_opt_.emplace_back(a.actor_online, config_.learning_rate);
    critic_opt_.emplace_back(a.critic_online, config_.learning_rate);
    voi_opt_.emplace_back(a.voi, config_.learning_rate);
    agents_.push_back(std::move(a));
  }
}

int MarlAllocator::critic_input_dim() const
{
  switch (kind_)
  {
  case CriticKind::kMeanField:
    return num_agents_ > 1 ? kResources + kActionWidth + kEmbeddingWidth : kResources + kActionWidth;
  case CriticKind::kJoint:
    return num_agents_ * (kResources + kActionWidth);
  case CriticKind::kIndependent:
    return kResources + kActionWidth;
  }
  return 0;
}

int MarlAllocator::own_action_offset(int agent) const
{
  if (kind_ == CriticKind::kJoint)
  {
    return num_agents_ * kResources + agent * kActionWidth;
  }
  return kResources;
}

void MarlAllocator::fill_critic_input(int agent, Eigen::Matrix3Xd const &obs, Eigen::MatrixXd const &codes,
                                      Eigen::Ref<Eigen::VectorXd> column) const
{
  int const n = num_agents_;
  switch (kind_)
  {
  case CriticKind::kJoint:
    for (int j = 0; j < n; ++j)
    {
      column.segment<kResources>(j * kResources) = obs.col(j);
      column.segment<kActionWidth>(n * kResources + j * kActionWidth) = codes.col(j);
    }
    return;
  case CriticKind::kIndependent:
    column.head<kResources>()                    = obs.col(agent);
    column.segment<kActionWidth>(kResources)     = codes.col(agent);
    return;
  case CriticKind::kMeanField:
    column.head<kResources>()                = obs.col(agent);
    column.segment<kActionWidth>(kResources) = codes.col(agent);
    if (n > 1)
    {
      double const inv = 1.0 / (n - 1);
      column.segment<kActionWidth>(kResources + kActionWidth) =
          (codes.rowwise().sum() - codes.col(agent)) * inv;
      column.segment<kResources>(kResources + 2 * kActionWidth) =
          (obs.rowwise().sum() - obs.col(agent)) * inv;
    }
    return;
  }
}

Eigen::VectorXd MarlAllocator::actor_input(Eigen::Matrix3Xd const &obs, int agent) const
{
  Observation const o = observe(obs, agent);
  Eigen::VectorXd   in(2 * kResources);
  in << o.own, o.others;
  return in;
}

Eigen::MatrixXd MarlAllocator::target_action_codes(Eigen::Matrix3Xd const &obs) const
{
  Eigen::MatrixXd codes(kActionWidth, num_agents_);
  for (int j = 0; j < num_agents_; ++j)
  {
    codes.col(j) = one_hot(greedy_action(agents_[j].actor_target.forward(actor_input(obs, j))));
  }
  return codes;
}

std::vector<ActionIndex> MarlAllocator::select_actions(Eigen::Matrix3Xd const &observations, double temperature,
                                                       Rng *rng) const
{
  if (observations.cols() != num_agents_)
  {
    throw ValidationError("select_actions: observation width mismatch");
  }
  std::vector<ActionIndex> out(num_agents_);
  for (int i = 0; i < num_agents_; ++i)
  {
    out[i] = act(agents_[i], observe(observations, i), temperature, rng);
  }
  return out;
}

double MarlAllocator::estimate_utility(int agent, Slice const &slice) const
{
  Eigen::VectorXd const out = agents_.at(agent).voi.forward(Eigen::VectorXd(slice));
  return std::max(0.0, out[0] * config_.utility_scale);
}

std::vector<double> MarlAllocator::estimate_utilities(Eigen::Matrix3Xd const &allocation) const
{
  std::vector<double> out(num_agents_);
  for (int i = 0; i < num_agents_; ++i)
  {
    out[i] = estimate_utility(i, allocation.col(i));
  }
  return out;
}

double MarlAllocator::sw_minus_i_unclamped(int agent, Eigen::Matrix3Xd const &observations,
                                           Eigen::Matrix3Xd const &next_observations) const
{
  auto const &critic = agents_.at(agent).critic_target;

  Eigen::Matrix3Xd now = observations;
  now.col(agent).setZero();
  Eigen::MatrixXd now_codes = target_action_codes(now);
  now_codes.col(agent)      = one_hot({kNeutralLevel, kNeutralLevel, kNeutralLevel});

  // Zeroing column i leaves agent i's view of the others unchanged, so the
  // target actor's pick for i is its action at the empty slice.
  Eigen::Matrix3Xd next = next_observations;
  next.col(agent).setZero();
  Eigen::MatrixXd const next_codes = target_action_codes(next);

  Eigen::MatrixXd input(critic_input_dim(), 2);
  fill_critic_input(agent, now, now_codes, input.col(0));
  fill_critic_input(agent, next, next_codes, input.col(1));
  Eigen::MatrixXd const q = critic.forward(input);
  return normalizer_.from_critic(q(0, 0) - config_.gamma * q(0, 1));
}

double MarlAllocator::estimate_sw_minus_i(int agent, Eigen::Matrix3Xd const &observations,
                                          std::span<ActionIndex const> actions, BillStats const &stats) const
{
  if (static_cast<std::size_t>(agent) >= stats.others_max.size())
  {
    throw ColdStartError("estimate_sw_minus_i: bill statistics missing for agent");
  }
  Allocation const next = apply_actions(Allocation(observations), actions, config_.action_floor);
  double const     raw  = sw_minus_i_unclamped(agent, observations, next.shares());
  return clamp_sw_minus_i(raw, stats.others_max[agent], stats.welfare_max);
}

LossReport MarlAllocator::train_round(ReplayBatch const &batch)
{
  int const b = batch.size();
  int const n = num_agents_;
  if (b == 0)
  {
    throw ColdStartError("train_round: empty batch");
  }
  double const gamma = config_.gamma;
  double const temp  = config_.relax_temperature;

  std::vector<Eigen::MatrixXd> codes(b, Eigen::MatrixXd(kActionWidth, n));
  std::vector<Eigen::MatrixXd> next_codes(b, Eigen::MatrixXd(kActionWidth, n));
  Eigen::RowVectorXd           rewards(b);
  for (int s = 0; s < b; ++s)
  {
    for (int j = 0; j < n; ++j)
    {
      codes[s].col(j) = one_hot(batch.actions[s][j]);
    }
    rewards[s] = normalizer_.to_critic(batch.rewards[s]);
  }
  for (int j = 0; j < n; ++j)
  {
    Eigen::MatrixXd in(2 * kResources, b);
    for (int s = 0; s < b; ++s)
    {
      in.col(s) = actor_input(batch.next_observations[s], j);
    }
    Eigen::MatrixXd const logits = agents_[j].actor_target.forward(in);
    for (int s = 0; s < b; ++s)
    {
      next_codes[s].col(j) = one_hot(greedy_action(logits.col(s)));
    }
  }

  LossReport report;
  int const  dim = critic_input_dim();
  for (int i = 0; i < n; ++i)
  {
    auto &agent = agents_[i];

    Eigen::MatrixXd x(dim, b), x_next(dim, b), actor_in(2 * kResources, b), slices(kResources, b);
    Eigen::RowVectorXd voi_target(b);
    for (int s = 0; s < b; ++s)
    {
      fill_critic_input(i, batch.observations[s], codes[s], x.col(s));
      fill_critic_input(i, batch.next_observations[s], next_codes[s], x_next.col(s));
      actor_in.col(s) = actor_input(batch.observations[s], i);
      slices.col(s)   = batch.next_observations[s].col(i);
      voi_target[s]   = batch.utilities[s].at(i) / config_.utility_scale;
    }

    // Critic: regress onto r + gamma * Q'(o', mu'(o'), m').
    Eigen::RowVectorXd const y = rewards + gamma * agent.critic_target.forward(x_next).row(0);
    ForwardTape              tape;
    Eigen::RowVectorXd const diff        = agent.critic_online.forward(x, &tape).row(0) - y;
    double const             critic_loss = diff.squaredNorm() / b;
    MlpGradients const       cg          = agent.critic_online.backward(tape, (2.0 / b) * diff);
    critic_opt_[i].step(agent.critic_online, cg);

    // Actor: ascend Q through the softmax relaxation of each head.
    ForwardTape           actor_tape;
    Eigen::MatrixXd const logits = agent.actor_online.forward(actor_in, &actor_tape);
    Eigen::MatrixXd       probs(kActionWidth, b);
    for (int s = 0; s < b; ++s)
    {
      for (int h = 0; h < kResources; ++h)
      {
        auto z                            = (logits.col(s).segment<kLevels>(h * kLevels) / temp).eval();
        z                                 = (z.array() - z.maxCoeff()).exp();
        probs.col(s).segment<kLevels>(h * kLevels) = z / z.sum();
      }
    }
    int const       offset = own_action_offset(i);
    Eigen::MatrixXd x_relaxed = x;
    x_relaxed.middleRows(offset, kActionWidth) = probs;
    ForwardTape              relaxed_tape;
    Eigen::RowVectorXd const q          = agent.critic_online.forward(x_relaxed, &relaxed_tape).row(0);
    double const             actor_loss = -q.mean();
    MlpGradients const       qg =
        agent.critic_online.backward(relaxed_tape, Eigen::MatrixXd::Constant(1, b, -1.0 / b));
    Eigen::MatrixXd const dprob = qg.input.middleRows(offset, kActionWidth);
    Eigen::MatrixXd       dlogits(kActionWidth, b);
    for (int s = 0; s < b; ++s)
    {
      for (int h = 0; h < kResources; ++h)
      {
        auto const p   = probs.col(s).segment<kLevels>(h * kLevels);
        auto const dp  = dprob.col(s).segment<kLevels>(h * kLevels);
        double const dot = p.dot(dp);
        dlogits.col(s).segment<kLevels>(h * kLevels) = (p.array() * (dp.array() - dot) / temp).matrix();
      }
    }
    actor_opt_[i].step(agent.actor_online, agent.actor_online.backward(actor_tape, dlogits));

    // VoI net: regress realized utility on the served slice.
    ForwardTape              voi_tape;
    Eigen::RowVectorXd const vdiff    = agent.voi.forward(slices, &voi_tape).row(0) - voi_target;
    double const             voi_loss = vdiff.squaredNorm() / b;
    voi_opt_[i].step(agent.voi, agent.voi.backward(voi_tape, (2.0 / b) * vdiff));

    if (!std::isfinite(critic_loss) || !std::isfinite(actor_loss) || !std::isfinite(voi_loss))
    {
      throw NumericError("agent " + std::to_string(i) + ": non-finite training loss");
    }

    soft_update(agent.actor_target, agent.actor_online, config_.tau);
    soft_update(agent.critic_target, agent.critic_online, config_.tau);

    report.critic.push_back(critic_loss);
    report.actor.push_back(actor_loss);
    report.voi.push_back(voi_loss * config_.utility_scale * config_.utility_scale);
  }
  return report;
}

}  // namespace dvcg
