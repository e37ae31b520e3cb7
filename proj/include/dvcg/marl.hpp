#pragma once

#include "dvcg/bill.hpp"
#include "dvcg/env.hpp"
#include "dvcg/nn.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace dvcg {

inline constexpr int kLevels       = 7;
inline constexpr int kNeutralLevel = 3;
inline constexpr int kActionWidth  = kResources * kLevels;  // one-hot width of one agent's action
inline constexpr int kEmbeddingWidth = kActionWidth + kResources;

/// Relative adjustment applied to a share, per level index.
inline constexpr std::array<double, kLevels> kActionLevels{-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3};

/// What the critic of agent i sees besides its own observation and action.
enum class CriticKind
{
  kMeanField,    // averaged neighbour one-hot actions and observations
  kJoint,        // every agent's observation and action (MADDPG)
  kIndependent,  // nothing else
};

std::string to_string(CriticKind kind);
CriticKind  critic_kind_from_string(std::string const &name);

struct MdpConfig
{
  double           gamma              = 0.99;
  double           learning_rate      = 1e-3;
  int              episodes           = 1000;
  int              rounds_per_episode = 10;
  int              batch_size         = 128;
  std::size_t      buffer_capacity    = 10000;
  double           tau                = 0.005;
  double           temperature_start  = 1.0;
  double           temperature_end    = 0.05;
  double           anneal_fraction    = 0.6;
  double           relax_temperature  = 1.0;
  double           action_floor       = 0.01;
  double           utility_scale      = 100.0;
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> voi_hidden{32};

  /// Exploration temperature: linear from start to end over the first
  /// anneal_fraction of the episodes, then flat.
  double temperature(int episode) const;

  void validate() const;
};

struct Observation
{
  Slice own    = Slice::Zero();
  Slice others = Slice::Zero();  // mean slice of every other VSP
};

Observation observe(Eigen::Matrix3Xd const &prev_allocation, int agent);

/// Averaged one-hot neighbour actions (3 heads x 7 bins) then averaged
/// neighbour observations; neighbours are all other agents.
struct MeanFieldEmbedding
{
  Eigen::Matrix<double, kEmbeddingWidth, 1> values = Eigen::Matrix<double, kEmbeddingWidth, 1>::Zero();
  bool                                      degenerate = false;
};

MeanFieldEmbedding mean_field_embed(Eigen::Matrix3Xd const &observations, std::span<ActionIndex const> actions,
                                    int agent);

Eigen::Matrix<double, kActionWidth, 1> one_hot(ActionIndex const &action);

/// entry * (1 + level); increases start from at least floor so empty
/// entries can grow again. The result is normalized.
Allocation apply_actions(Allocation const &prev, std::span<ActionIndex const> actions, double floor = 0.01);

/// Shared reward: the sum of all bids.
double reward(std::span<double const> bids);

/// Per-head argmax; ties go to the level nearest the neutral one, then the lower.
ActionIndex greedy_action(Eigen::VectorXd const &logits);

/// Per-head draw from softmax(logits / temperature).
ActionIndex sample_action(Eigen::VectorXd const &logits, double temperature, Rng &rng);

/// min(upper, max(raw, lower)).
double clamp_sw_minus_i(double raw, double lower, double upper);

struct AgentNets
{
  int id = 0;
  Mlp actor_online;
  Mlp actor_target;
  Mlp critic_online;
  Mlp critic_target;
  Mlp voi;
};

/// Greedy when temperature <= 0 or no rng is given.
ActionIndex act(AgentNets const &agent, Observation const &obs, double temperature, Rng *rng);

/// Transitions drawn uniformly from the bill.
struct ReplayBatch
{
  std::vector<Eigen::Matrix3Xd>         observations;
  std::vector<std::vector<ActionIndex>> actions;
  std::vector<double>                   rewards;  // raw sum of the next round's bids
  std::vector<Eigen::Matrix3Xd>         next_observations;
  std::vector<std::vector<double>>      utilities;  // realized utilities at next_observations

  int size() const { return static_cast<int>(rewards.size()); }
};

/// Throws ColdStartError when the bill has no transitions.
ReplayBatch sample_batch(Bill const &bill, int batch_size, Rng &rng);

struct LossReport
{
  std::vector<double> critic;
  std::vector<double> actor;
  std::vector<double> voi;
};

/// Affine map between raw rewards and the critic's training scale.
struct RewardNormalizer
{
  double baseline = 0.0;
  double scale    = 1.0;

  double to_critic(double raw) const { return (raw - baseline) / scale; }
  double from_critic(double normalized) const { return normalized * scale + baseline; }
};

/// NSP allocator and bank-side estimators: per-agent actor/critic pairs and VoI nets.
class MarlAllocator
{
public:
  MarlAllocator(int num_agents, CriticKind kind, MdpConfig config, std::uint64_t seed);

  int        num_agents() const { return num_agents_; }
  CriticKind kind() const { return kind_; }
  int        critic_input_dim() const;

  MdpConfig const       &config() const { return config_; }
  AgentNets const       &agent(int i) const { return agents_.at(i); }
  AgentNets             &agent(int i) { return agents_.at(i); }
  RewardNormalizer const &normalizer() const { return normalizer_; }
  void                   set_normalizer(RewardNormalizer n) { normalizer_ = n; }

  std::vector<ActionIndex> select_actions(Eigen::Matrix3Xd const &observations, double temperature,
                                          Rng *rng) const;

  /// VoI estimate f_i of VSP i's utility at a slice, clipped at zero.
  double              estimate_utility(int agent, Slice const &slice) const;
  std::vector<double> estimate_utilities(Eigen::Matrix3Xd const &allocation) const;

  /// Counterfactual welfare of everyone but agent i from the target critic,
  /// before clamping. next_observations is the allocation the actions lead to.
  double sw_minus_i_unclamped(int agent, Eigen::Matrix3Xd const &observations,
                              Eigen::Matrix3Xd const &next_observations) const;

  /// Clamped into [others_max_i, welfare_max].
  double estimate_sw_minus_i(int agent, Eigen::Matrix3Xd const &observations,
                             std::span<ActionIndex const> actions, BillStats const &stats) const;

  /// One critic, actor and VoI step per agent, then soft target updates.
  /// Throws NumericError when a loss is not finite.
  LossReport train_round(ReplayBatch const &batch);

private:
  void fill_critic_input(int agent, Eigen::Matrix3Xd const &obs, Eigen::MatrixXd const &action_codes,
                         Eigen::Ref<Eigen::VectorXd> column) const;
  int  own_action_offset(int agent) const;
  Eigen::VectorXd actor_input(Eigen::Matrix3Xd const &obs, int agent) const;
  Eigen::MatrixXd target_action_codes(Eigen::Matrix3Xd const &obs) const;

  int                    num_agents_;
  CriticKind             kind_;
  MdpConfig              config_;
  std::vector<AgentNets> agents_;
  std::vector<Adam>      actor_opt_, critic_opt_, voi_opt_;
  RewardNormalizer       normalizer_;
};

}  // namespace dvcg
