#include "mnlab/network.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace mnlab;

Batch random_batch(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Batch b{Tensor::matrix(n, d), std::vector<int>(n)};
  for (double& v : b.inputs.data()) v = unit(rng);
  for (int& y : b.labels) y = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
  return b;
}

Network identity_net(std::size_t d) {
  Dense l{Tensor::matrix(d, d), Tensor({d}), Activation::Identity};
  for (std::size_t i = 0; i < d; ++i) l.weights.at(i, i) = 1.0;
  return Network({l});
}

TEST(Forward, IdentityNetReturnsInput) {
  const Network net = identity_net(3);
  const Batch b = random_batch(4, 3, 3, 1);
  EXPECT_EQ(forward(net, b.inputs), b.inputs);
}

TEST(Forward, ZeroWeightsGiveBias) {
  Dense l{Tensor::matrix(3, 2), Tensor({2}, std::vector<double>{0.25, -1.5}),
          Activation::Identity};
  const Network net({l});
  const Tensor logits = forward(net, random_batch(5, 3, 2, 2).inputs);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(logits.at(r, 0), 0.25);
    EXPECT_EQ(logits.at(r, 1), -1.5);
  }
}

TEST(Forward, HandComputedTwoLayer) {
  // h = relu(x W1 + b1), logits = h W2 + b2 with x = (1, 2).
  Dense l1{Tensor({2, 2}, std::vector<double>{1.0, -1.0, 0.5, 2.0}),
           Tensor({2}, std::vector<double>{0.0, -6.0}), Activation::ReLU};
  Dense l2{Tensor({2, 2}, std::vector<double>{2.0, 0.0, 1.0, 1.0}),
           Tensor({2}, std::vector<double>{0.5, -0.5}), Activation::Identity};
  const Network net({l1, l2});
  const Tensor x({1, 2}, std::vector<double>{1.0, 2.0});
  // z1 = (1 + 1, -1 + 4 - 6) = (2, -3) -> h = (2, 0); logits = (4.5, -0.5)
  const Tensor logits = forward(net, x);
  EXPECT_DOUBLE_EQ(logits.at(0, 0), 4.5);
  EXPECT_DOUBLE_EQ(logits.at(0, 1), -0.5);
}

TEST(Forward, ShapeMismatch) {
  const Network net = Network::mlp({3, 4, 2}, Activation::ReLU, 1);
  EXPECT_THROW(forward(net, Tensor::matrix(2, 5)), ShapeMismatch);
}

TEST(Forward, RowsAreIndependentOfBatchComposition) {
  const Network net = Network::mlp({6, 16, 16, 3}, Activation::Softplus, 4);
  const Batch b = random_batch(9, 6, 3, 5);
  const Tensor all = forward(net, b.inputs);
  for (std::size_t r = 0; r < 9; ++r) {
    const std::size_t idx[] = {r};
    const Tensor one = forward(net, b.subset(idx).inputs);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(one.at(0, j), all.at(r, j));
  }
}

TEST(Forward, ScalingInputsAndFirstLayerIsConsistent) {
  Network net = Network::mlp({4, 3, 2}, Activation::Identity, 9);
  const Batch b = random_batch(3, 4, 2, 3);
  const Tensor base = forward(net, b.inputs);
  Tensor scaled = b.inputs;
  for (double& v : scaled.data()) v *= 4.0;
  for (double& w : net.layers()[0].weights.data()) w *= 0.25;
  const Tensor after = forward(net, scaled);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(after[i], base[i]);
}

TEST(Network, RejectsBadArchitectures) {
  Dense hidden{Tensor::matrix(2, 2), Tensor({2}), Activation::ReLU};
  EXPECT_THROW(Network({hidden}), ShapeMismatch);
  Dense a{Tensor::matrix(2, 3), Tensor({3}), Activation::ReLU};
  Dense b{Tensor::matrix(4, 2), Tensor({2}), Activation::Identity};
  EXPECT_THROW(Network({a, b}), ShapeMismatch);
  Dense single{Tensor::matrix(2, 1), Tensor({1}), Activation::Identity};
  EXPECT_THROW(Network({single}), ShapeMismatch);
  const std::size_t dims[] = {2, 2, 2, 2, 2, 2, 2, 2};
  EXPECT_THROW(Network::mlp(dims, Activation::ReLU, 0), ShapeMismatch);
}

TEST(Network, GlorotInitBounds) {
  const Network net = Network::mlp({20, 64, 2}, Activation::ReLU, 3);
  const double limit = std::sqrt(6.0 / 84.0);
  for (double w : net.layers()[0].weights.data()) EXPECT_LE(std::abs(w), limit);
  for (double b : net.layers()[0].bias.data()) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(net.arch(), "mlp:20-64-2:relu");
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor logits = Tensor::matrix(3, 2);
  const std::vector<int> y{0, 1, 1};
  EXPECT_NEAR(cross_entropy_loss(logits, y).loss, std::log(2.0), 1e-15);
}

TEST(CrossEntropy, SaturatesAtLargeMargin) {
  const Tensor logits({1, 2}, std::vector<double>{800.0, -800.0});
  const std::vector<int> y{0};
  const auto r = cross_entropy_loss(logits, y);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(CrossEntropy, ScalarValue) {
  const Tensor logits({1, 2}, std::vector<double>{1.0, 0.0});
  const std::vector<int> y{0};
  const auto r = cross_entropy_loss(logits, y);
  EXPECT_NEAR(r.loss, 0.31326168751822286, 1e-14);
  const double s0 = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(r.grad.at(0, 0), s0 - 1.0, 1e-15);
  EXPECT_NEAR(r.grad.at(0, 1), 1.0 - s0, 1e-15);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const Tensor logits = Tensor::matrix(1, 2);
  const std::vector<int> y{2};
  EXPECT_THROW(cross_entropy_loss(logits, y), ShapeMismatch);
}

TEST(Backward, LinearNetInputGradientClosedForm) {
  const Network net = Network::mlp({4, 3}, Activation::Identity, 21);
  const Batch b = random_batch(5, 4, 3, 22);
  const Gradients g = backward(net, b);
  const auto ce = cross_entropy_loss(forward(net, b.inputs), b.labels);
  const Tensor& w = net.layers()[0].weights;
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t i = 0; i < 4; ++i) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 3; ++j) expect += ce.grad.at(r, j) * w.at(i, j);
      EXPECT_NEAR(g.inputs.at(r, i), expect, 1e-15);
    }
  }
}

TEST(Backward, ZeroGradientAtMinimum) {
  // Two points, one per class, duplicated with both labels: the loss is
  // minimized by equal logits, which zero weights and bias provide.
  Dense l{Tensor::matrix(2, 2), Tensor({2}), Activation::Identity};
  const Network net({l});
  const Batch b{Tensor({2, 2}, std::vector<double>{0.3, 0.7, 0.3, 0.7}), {0, 1}};
  const Gradients g = backward(net, b);
  for (const Tensor& t : g.params) {
    for (double v : t.data()) EXPECT_NEAR(v, 0.0, 1e-16);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  const Network net = Network::mlp({2, 8, 8, 3}, Activation::Softplus, 31);
  const Batch b = random_batch(6, 2, 3, 32);
  EXPECT_LT(grad_check(net, b, 1e-5), 1e-4);
}

TEST(Backward, Deterministic) {
  const Network net = Network::mlp({5, 7, 3}, Activation::ReLU, 41);
  const Batch b = random_batch(8, 5, 3, 42);
  const Gradients g1 = backward(net, b);
  const Gradients g2 = backward(net, b);
  EXPECT_EQ(g1.loss, g2.loss);
  EXPECT_EQ(g1.inputs, g2.inputs);
  ASSERT_EQ(g1.params.size(), g2.params.size());
  for (std::size_t i = 0; i < g1.params.size(); ++i) EXPECT_EQ(g1.params[i], g2.params[i]);
}

TEST(Backward, InputGradientsArePerExampleScaled) {
  const Network net = Network::mlp({5, 7, 3}, Activation::Softplus, 51);
  const Batch b = random_batch(4, 5, 3, 52);
  const Gradients g = backward(net, b);
  const InputGradients ig = input_gradients(net, b.inputs, b.labels);
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    EXPECT_NEAR(ig.grad[i], 4.0 * g.inputs[i], 1e-14);
  }
  double mean = 0.0;
  for (double l : ig.losses) mean += l / 4.0;
  EXPECT_NEAR(mean, g.loss, 1e-14);
}

TEST(GradCheck, IdentityNetLinearLoss) {
  const Network net = identity_net(2);
  const Batch b = random_batch(3, 2, 2, 61);
  EXPECT_LT(grad_check(net, b, 1e-6), 1e-8);
}

TEST(GradCheck, ReluNetAwayFromKinks) {
  // Large biases keep every pre-activation far from zero.
  Network net = Network::mlp({3, 6, 2}, Activation::ReLU, 71);
  for (std::size_t j = 0; j < 6; ++j) net.layers()[0].bias[j] = (j % 2 ? -3.0 : 3.0);
  const Batch b = random_batch(5, 3, 2, 72);
  EXPECT_LT(grad_check(net, b, 1e-5), 1e-4);
}

}  // namespace
