#include "dvcg/errors.hpp"
#include "dvcg/nn.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace dvcg;

TEST(Mlp, ZeroNetGivesZero)
{
  Mlp net({4, 8, 3});
  net.zero();
  EXPECT_TRUE(net.forward(Eigen::VectorXd(Eigen::VectorXd::Random(4))).isZero(0.0));
}

TEST(Mlp, IdentityLinearLayer)
{
  Mlp net({3, 3}, Activation::kTanh, Activation::kLinear);
  net.zero();
  net.layers()[0].weights = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd x(3);
  x << 0.3, -2.0, 7.5;
  EXPECT_EQ(net.forward(x), x);
}

TEST(Mlp, MatchesHandWrittenForward)
{
  Rng rng(1);
  Mlp net({3, 5, 2});
  net.init(rng);
  Eigen::VectorXd x(3);
  x << 1, 2, 3;
  auto const &l0 = net.layers()[0];
  auto const &l1 = net.layers()[1];
  Eigen::VectorXd out(2);
  for (int o = 0; o < 2; ++o)
  {
    double acc = l1.bias[o];
    for (int h = 0; h < 5; ++h)
    {
      double z = l0.bias[h];
      for (int i = 0; i < 3; ++i)
        z += l0.weights(h, i) * x[i];
      acc += l1.weights(o, h) * std::tanh(z);
    }
    out[o] = acc;
  }
  EXPECT_LT((net.forward(x) - out).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, InitIsFanInScaled)
{
  Rng rng(2);
  Mlp net({50, 10, 1});
  net.init(rng);
  EXPECT_LE(net.layers()[0].weights.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(50.0));
  EXPECT_LE(net.layers()[1].weights.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(10.0));
}

TEST(Mlp, DimensionMismatchThrows)
{
  Mlp net({3, 2});
  EXPECT_THROW(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(4))), ValidationError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients)
{
  Rng rng(3);
  Mlp net({4, 6, 2});
  net.init(rng);
  ForwardTape tape;
  net.forward(Eigen::MatrixXd::Random(4, 5), &tape);
  auto const g = net.backward(tape, Eigen::MatrixXd::Zero(2, 5));
  EXPECT_TRUE(dvcg::testing::flatten(g).isZero(0.0));
}

TEST(Backward, SingleLinearNeuron)
{
  Mlp net({1, 1});
  net.zero();
  net.layers()[0].weights(0, 0) = 0.7;
  ForwardTape tape;
  net.forward(Eigen::MatrixXd::Constant(1, 1, 2.5), &tape);
  auto const g = net.backward(tape, Eigen::MatrixXd::Ones(1, 1));
  EXPECT_EQ(g.weights[0](0, 0), 2.5);
  EXPECT_EQ(g.bias[0][0], 1.0);
  EXPECT_EQ(g.input(0, 0), 0.7);
}

TEST(Backward, CoordinateFiniteDifferences)
{
  Rng rng(4);
  Mlp net({3, 4, 4, 2}, Activation::kTanh, Activation::kSigmoid);
  net.init(rng);
  Eigen::MatrixXd const x  = Eigen::MatrixXd::Random(3, 2);
  Eigen::MatrixXd const up = Eigen::MatrixXd::Random(2, 2);
  ForwardTape           tape;
  net.forward(x, &tape);
  Eigen::VectorXd const analytic = dvcg::testing::flatten(net.backward(tape, up));
  Eigen::VectorXd const theta    = net.flat_parameters();
  double const          h        = 1e-5;
  for (Eigen::Index k = 0; k < theta.size(); ++k)
  {
    Mlp a = net, b = net;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    a.set_flat_parameters(tp);
    b.set_flat_parameters(tm);
    double const numeric = ((a.forward(x).array() * up.array()).sum() - (b.forward(x).array() * up.array()).sum()) / (2 * h);
    EXPECT_NEAR(analytic[k], numeric, 1e-5 * std::max(1.0, std::abs(numeric))) << "parameter " << k;
  }
}

TEST(Backward, DirectionalProbesOnTrainedShapes)
{
  for (auto const &arch : dvcg::testing::trained_architectures())
  {
    EXPECT_LT(dvcg::testing::directional_gradient_error(arch, 20, 99), 1e-5) << arch.name;
  }
}

TEST(SoftUpdate, TauOneCopies)
{
  Rng rng(5);
  Mlp online({3, 4, 1}), target({3, 4, 1});
  online.init(rng);
  target.init(rng);
  soft_update(target, online, 1.0);
  EXPECT_EQ(target.flat_parameters(), online.flat_parameters());
}

TEST(SoftUpdate, FixedPointAndArithmetic)
{
  Rng rng(6);
  Mlp online({2, 2});
  online.init(rng);
  Mlp target = online;
  soft_update(target, online, 0.005);
  EXPECT_EQ(target.flat_parameters(), online.flat_parameters());

  Mlp one({1, 1}), zero({1, 1});
  one.zero();
  zero.zero();
  one.layers()[0].weights(0, 0) = 1.0;
  soft_update(zero, one, 0.005);
  EXPECT_DOUBLE_EQ(zero.layers()[0].weights(0, 0), 0.005);
}

TEST(SoftUpdate, Contraction)
{
  Rng rng(7);
  Mlp online({4, 5, 2}), target({4, 5, 2});
  online.init(rng);
  target.init(rng);
  Eigen::VectorXd const before = target.flat_parameters() - online.flat_parameters();
  soft_update(target, online, 0.3);
  Eigen::VectorXd const after = target.flat_parameters() - online.flat_parameters();
  EXPECT_LT((after - 0.7 * before).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SoftUpdate, Validation)
{
  Mlp a({2, 3, 1}), b({2, 4, 1});
  EXPECT_THROW(soft_update(a, b, 0.5), ValidationError);
  EXPECT_THROW(soft_update(a, a, 0.0), ValidationError);
}

TEST(Adam, DescendsQuadratic)
{
  Mlp net({1, 1});
  net.zero();
  Adam opt(net, 0.05);
  Eigen::MatrixXd const x = Eigen::MatrixXd::Ones(1, 1);
  for (int k = 0; k < 500; ++k)
  {
    ForwardTape  tape;
    double const y = net.forward(x, &tape)(0, 0);
    opt.step(net, net.backward(tape, Eigen::MatrixXd::Constant(1, 1, 2.0 * (y - 3.0))));
  }
  EXPECT_NEAR(net.forward(Eigen::VectorXd(Eigen::VectorXd::Ones(1)))[0], 3.0, 1e-2);
  EXPECT_EQ(opt.steps(), 500);
}

TEST(Determinism, SameSeedSameTrajectory)
{
  auto run = [] {
    Rng rng(10);
    Mlp net({3, 8, 1});
    net.init(rng);
    Adam opt(net);
    for (int k = 0; k < 50; ++k)
    {
      Eigen::MatrixXd x(3, 4);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        x.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
      ForwardTape tape;
      net.forward(x, &tape);
      opt.step(net, net.backward(tape, Eigen::MatrixXd::Ones(1, 4)));
    }
    return net.flat_parameters();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsExact)
{
  Rng rng(11);
  Mlp net({5, 7, 3}, Activation::kTanh, Activation::kSigmoid);
  net.init(rng);
  std::stringstream buf;
  write_checkpoint(buf, net);
  Mlp const back = read_checkpoint(buf);
  EXPECT_EQ(back.dims(), net.dims());
  EXPECT_EQ(back.output_activation(), Activation::kSigmoid);
  EXPECT_EQ(back.flat_parameters(), net.flat_parameters());
}

TEST(Checkpoint, RejectsGarbage)
{
  std::stringstream buf("not a checkpoint at all");
  EXPECT_THROW(read_checkpoint(buf), ValidationError);
}
