#pragma once

#include "dvcg/env.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <vector>

namespace dvcg {

enum class Activation : unsigned char
{
  kLinear  = 0,
  kTanh    = 1,
  kSigmoid = 2,
};

struct DenseLayer
{
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

/// Activations kept by a forward pass, consumed by backward().
struct ForwardTape
{
  std::vector<Eigen::MatrixXd> activations;  // layer inputs, then the output; one column per sample
};

struct MlpGradients
{
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  Eigen::MatrixXd              input;  // d loss / d input, one column per sample
};

/// Fully connected network. Hidden layers share one activation; the output
/// layer has its own.
class Mlp
{
public:
  Mlp() = default;
  Mlp(std::vector<int> layer_dims, Activation hidden = Activation::kTanh,
      Activation output = Activation::kLinear);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  void init(Rng &rng);
  void zero();

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::vector<int> const &dims() const { return dims_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t parameter_count() const;

  std::vector<DenseLayer>       &layers() { return layers_; }
  std::vector<DenseLayer> const &layers() const { return layers_; }

  Eigen::VectorXd forward(Eigen::VectorXd const &input) const;

  /// Batched forward; columns are samples. Fills tape when given.
  Eigen::MatrixXd forward(Eigen::MatrixXd const &input, ForwardTape *tape = nullptr) const;

  /// Gradients of sum(upstream .* output) w.r.t. parameters and input.
  MlpGradients backward(ForwardTape const &tape, Eigen::MatrixXd const &upstream) const;

  bool same_shape(Mlp const &other) const;

  Eigen::VectorXd flat_parameters() const;
  void            set_flat_parameters(Eigen::VectorXd const &flat);

private:
  std::vector<int>        dims_;
  Activation              hidden_ = Activation::kTanh;
  Activation              output_ = Activation::kLinear;
  std::vector<DenseLayer> layers_;
};

/// Adaptive-moment optimizer state for one network.
class Adam
{
public:
  Adam() = default;
  explicit Adam(Mlp const &net, double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  /// Descends along the gradient.
  void step(Mlp &net, MlpGradients const &grads);

  double learning_rate() const { return learning_rate_; }
  long   steps() const { return steps_; }

private:
  double                       learning_rate_ = 1e-3;
  double                       beta1_         = 0.9;
  double                       beta2_         = 0.999;
  double                       epsilon_       = 1e-8;
  long                         steps_         = 0;
  std::vector<Eigen::MatrixXd> m_w_, v_w_;
  std::vector<Eigen::VectorXd> m_b_, v_b_;
};

/// target <- tau * online + (1 - tau) * target.
void soft_update(Mlp &target, Mlp const &online, double tau);

/// Binary checkpoint; layout documented in docs/formats.md.
void write_checkpoint(std::ostream &out, Mlp const &net);
Mlp  read_checkpoint(std::istream &in);

}  // namespace dvcg
