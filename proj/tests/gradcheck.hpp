#pragma once

#include "dvcg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dvcg::testing {

struct Architecture
{
  std::string      name;
  std::vector<int> dims;
  Activation       hidden = Activation::kTanh;
  Activation       output = Activation::kLinear;
};

/// Every network shape the simulator trains, at N = 10 and a two-member coalition.
inline std::vector<Architecture> trained_architectures()
{
  return {
      {"allocator_actor", {6, 64, 64, 21}},
      {"critic_mean_field", {48, 64, 64, 1}},
      {"critic_joint_n10", {240, 64, 64, 1}},
      {"critic_independent", {24, 64, 64, 1}},
      {"voi", {3, 32, 1}},
      {"bidder_actor", {12, 32, 32, 2}, Activation::kTanh, Activation::kSigmoid},
      {"bidder_critic", {14, 64, 64, 1}},
  };
}

/// Same row-major layout as Mlp::flat_parameters.
inline Eigen::VectorXd flatten(MlpGradients const &g)
{
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l)
  {
    for (Eigen::Index r = 0; r < g.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < g.weights[l].cols(); ++c)
        out.push_back(g.weights[l](r, c));
    out.insert(out.end(), g.bias[l].data(), g.bias[l].data() + g.bias[l].size());
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// Worst relative error between analytic and central-difference directional
/// derivatives over random probes. Each probe draws parameters, a batch of
/// inputs, an upstream weighting and a direction in parameter and input space.
inline double directional_gradient_error(Architecture const &arch, int probes, std::uint64_t seed, double h = 1e-5)
{
  Rng                                    rng(seed);
  std::normal_distribution<double>       normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Mlp                                    net(arch.dims, arch.hidden, arch.output);
  double                                 worst = 0.0;
  int const                              batch = 3;
  for (int p = 0; p < probes; ++p)
  {
    net.init(rng);
    Eigen::MatrixXd x(arch.dims.front(), batch), up(arch.dims.back(), batch);
    for (Eigen::Index k = 0; k < x.size(); ++k)
      x.data()[k] = unit(rng);
    for (Eigen::Index k = 0; k < up.size(); ++k)
      up.data()[k] = normal(rng);

    Eigen::VectorXd const theta = net.flat_parameters();
    Eigen::VectorXd       d_theta(theta.size());
    Eigen::MatrixXd       d_x(x.rows(), x.cols());
    for (Eigen::Index k = 0; k < d_theta.size(); ++k)
      d_theta[k] = normal(rng);
    for (Eigen::Index k = 0; k < d_x.size(); ++k)
      d_x.data()[k] = normal(rng);

    ForwardTape tape;
    net.forward(x, &tape);
    MlpGradients const g        = net.backward(tape, up);
    double const       analytic = flatten(g).dot(d_theta) + (g.input.array() * d_x.array()).sum();

    auto loss = [&](double t) {
      Mlp moved = net;
      moved.set_flat_parameters(theta + t * d_theta);
      return (moved.forward(Eigen::MatrixXd(x + t * d_x)).array() * up.array()).sum();
    };
    double const numeric = (loss(h) - loss(-h)) / (2.0 * h);
    double const scale   = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    worst                = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

}  // namespace dvcg::testing
