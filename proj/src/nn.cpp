#include "dvcg/nn.hpp"

#include "dvcg/errors.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

namespace dvcg {

namespace {

void apply(Activation act, Eigen::MatrixXd &z)
{
  switch (act)
  {
  case Activation::kLinear:
    break;
  case Activation::kTanh:
    z = z.array().tanh();
    break;
  case Activation::kSigmoid:
    z = (1.0 + (-z.array()).exp()).inverse();
    break;
  }
}

// Derivative expressed through the activation output y.
void scale_by_derivative(Activation act, Eigen::MatrixXd const &y, Eigen::MatrixXd &delta)
{
  switch (act)
  {
  case Activation::kLinear:
    break;
  case Activation::kTanh:
    delta.array() *= 1.0 - y.array().square();
    break;
  case Activation::kSigmoid:
    delta.array() *= y.array() * (1.0 - y.array());
    break;
  }
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden, Activation output)
  : dims_(std::move(layer_dims))
  , hidden_(hidden)
  , output_(output)
{
  if (dims_.size() < 2)
  {
    throw ValidationError("mlp needs an input and an output width");
  }
  for (int d : dims_)
  {
    if (d <= 0)
    {
      throw ValidationError("mlp layer widths must be positive");
    }
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
  {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]), Eigen::VectorXd::Zero(dims_[l + 1])});
  }
}

void Mlp::init(Rng &rng)
{
  for (auto &layer : layers_)
  {
    double const                           bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
    {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      {
        layer.weights(r, c) = dist(rng);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
    {
      layer.bias[r] = dist(rng);
    }
  }
}

void Mlp::zero()
{
  for (auto &layer : layers_)
  {
    layer.weights.setZero();
    layer.bias.setZero();
  }
}

std::size_t Mlp::parameter_count() const
{
  std::size_t n = 0;
  for (auto const &layer : layers_)
  {
    n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return n;
}

Eigen::VectorXd Mlp::forward(Eigen::VectorXd const &input) const
{
  Eigen::MatrixXd out = forward(Eigen::MatrixXd(input), nullptr);
  return out.col(0);
}

Eigen::MatrixXd Mlp::forward(Eigen::MatrixXd const &input, ForwardTape *tape) const
{
  if (input.rows() != input_dim())
  {
    throw ValidationError("mlp forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                          std::to_string(input_dim()));
  }
  if (tape)
  {
    tape->activations.clear();
    tape->activations.push_back(input);
  }
  Eigen::MatrixXd x = input;
  for (std::size_t l = 0; l < layers_.size(); ++l)
  {
    Eigen::MatrixXd z = layers_[l].weights * x;
    z.colwise() += layers_[l].bias;
    apply(l + 1 == layers_.size() ? output_ : hidden_, z);
    x = std::move(z);
    if (tape)
    {
      tape->activations.push_back(x);
    }
  }
  return x;
}

MlpGradients Mlp::backward(ForwardTape const &tape, Eigen::MatrixXd const &upstream) const
{
  if (tape.activations.size() != layers_.size() + 1)
  {
    throw ValidationError("mlp backward: no matching forward pass");
  }
  Eigen::MatrixXd const &out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
  {
    throw ValidationError("mlp backward: upstream gradient shape mismatch");
  }
  MlpGradients grads;
  grads.weights.resize(layers_.size());
  grads.bias.resize(layers_.size());

  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = layers_.size(); l-- > 0;)
  {
    scale_by_derivative(l + 1 == layers_.size() ? output_ : hidden_, tape.activations[l + 1], delta);
    grads.weights[l].noalias() = delta * tape.activations[l].transpose();
    grads.bias[l]              = delta.rowwise().sum();
    Eigen::MatrixXd prev       = layers_[l].weights.transpose() * delta;
    delta                      = std::move(prev);
  }
  grads.input = std::move(delta);
  return grads;
}

bool Mlp::same_shape(Mlp const &other) const
{
  return dims_ == other.dims_ && hidden_ == other.hidden_ && output_ == other.output_;
}

Eigen::VectorXd Mlp::flat_parameters() const
{
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index    k = 0;
  for (auto const &layer : layers_)
  {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
    {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
      {
        flat[k++] = layer.weights(r, c);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
    {
      flat[k++] = layer.bias[r];
    }
  }
  return flat;
}

void Mlp::set_flat_parameters(Eigen::VectorXd const &flat)
{
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
  {
    throw ValidationError("mlp: flat parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (auto &layer : layers_)
  {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
    {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
      {
        layer.weights(r, c) = flat[k++];
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
    {
      layer.bias[r] = flat[k++];
    }
  }
}

Adam::Adam(Mlp const &net, double learning_rate, double beta1, double beta2, double epsilon)
  : learning_rate_(learning_rate)
  , beta1_(beta1)
  , beta2_(beta2)
  , epsilon_(epsilon)
{
  for (auto const &layer : net.layers())
  {
    m_w_.push_back(Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()));
    v_w_.push_back(Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()));
    m_b_.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
    v_b_.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
  }
}

void Adam::step(Mlp &net, MlpGradients const &grads)
{
  auto &layers = net.layers();
  if (layers.size() != m_w_.size() || grads.weights.size() != layers.size())
  {
    throw ValidationError("adam: optimizer state does not match the network");
  }
  ++steps_;
  double const c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  double const c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t l = 0; l < layers.size(); ++l)
  {
    m_w_[l] = beta1_ * m_w_[l] + (1.0 - beta1_) * grads.weights[l];
    v_w_[l] = beta2_ * v_w_[l] + (1.0 - beta2_) * grads.weights[l].cwiseAbs2();
    m_b_[l] = beta1_ * m_b_[l] + (1.0 - beta1_) * grads.bias[l];
    v_b_[l] = beta2_ * v_b_[l] + (1.0 - beta2_) * grads.bias[l].cwiseAbs2();
    layers[l].weights.array() -=
        learning_rate_ * (m_w_[l].array() / c1) / ((v_w_[l].array() / c2).sqrt() + epsilon_);
    layers[l].bias.array() -= learning_rate_ * (m_b_[l].array() / c1) / ((v_b_[l].array() / c2).sqrt() + epsilon_);
  }
}

void soft_update(Mlp &target, Mlp const &online, double tau)
{
  if (!target.same_shape(online))
  {
    throw ValidationError("soft_update: architectures differ");
  }
  if (!(tau > 0.0 && tau <= 1.0))
  {
    throw ValidationError("soft_update: tau must lie in (0, 1]");
  }
  auto &dst = target.layers();
  for (std::size_t l = 0; l < dst.size(); ++l)
  {
    auto const &src = online.layers()[l];
    if (tau == 1.0)
    {
      dst[l] = src;
      continue;
    }
    dst[l].weights = tau * src.weights + (1.0 - tau) * dst[l].weights;
    dst[l].bias    = tau * src.bias + (1.0 - tau) * dst[l].bias;
  }
}

namespace {

constexpr std::array<char, 8> kMagic{'D', 'V', 'C', 'G', 'M', 'L', 'P', '1'};

template <typename T>
void put(std::ostream &out, T value)
{
  out.write(reinterpret_cast<char const *>(&value), sizeof(T));
}

template <typename T>
T get(std::istream &in)
{
  T value{};
  in.read(reinterpret_cast<char *>(&value), sizeof(T));
  if (!in)
  {
    throw ValidationError("checkpoint: truncated stream");
  }
  return value;
}

}  // namespace

void write_checkpoint(std::ostream &out, Mlp const &net)
{
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims())
  {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  put<std::uint8_t>(out, static_cast<std::uint8_t>(net.hidden_activation()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(net.output_activation()));
  Eigen::VectorXd const flat = net.flat_parameters();
  for (Eigen::Index k = 0; k < flat.size(); ++k)
  {
    put<double>(out, flat[k]);
  }
}

Mlp read_checkpoint(std::istream &in)
{
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic)
  {
    throw ValidationError("checkpoint: bad magic");
  }
  auto const count = get<std::uint32_t>(in);
  if (count < 2 || count > 64)
  {
    throw ValidationError("checkpoint: implausible layer count");
  }
  std::vector<int> dims(count);
  for (auto &d : dims)
  {
    d = static_cast<int>(get<std::uint32_t>(in));
  }
  auto const hidden_code = get<std::uint8_t>(in);
  auto const output_code = get<std::uint8_t>(in);
  if (hidden_code > 2 || output_code > 2)
  {
    throw ValidationError("checkpoint: unknown activation code");
  }
  auto const hidden = static_cast<Activation>(hidden_code);
  auto const output = static_cast<Activation>(output_code);
  Mlp        net(dims, hidden, output);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(net.parameter_count()));
  for (Eigen::Index k = 0; k < flat.size(); ++k)
  {
    flat[k] = get<double>(in);
  }
  net.set_flat_parameters(flat);
  return net;
}

}  // namespace dvcg
