#include "mnlab/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mnlab/dataset.hpp"
#include "mnlab/sweep.hpp"

namespace {

using namespace mnlab;

const ThreatUnion kUnion{{Norm::Linf, 0.03}, {Norm::L2, 0.1}, {Norm::L1, 0.3}};

Batch random_batch(std::size_t n, std::size_t d, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Batch b{Tensor::matrix(n, d), std::vector<int>(n)};
  for (double& v : b.inputs.data()) v = unit(rng);
  for (int& y : b.labels) y = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
  return b;
}

TEST(Scheme, ParseRoundTrip) {
  for (const char* s : {"single-linf", "single-l2", "single-l1", "sat", "avg", "max", "msd", "eat",
                        "eat-uniform"}) {
    EXPECT_EQ(to_string(parse_scheme(s)), s);
  }
  EXPECT_THROW(parse_scheme("trades"), InvalidConfig);
}

TEST(Scheme, UnionRequirements) {
  const ThreatUnion extremes{{Norm::Linf, 0.03}, {Norm::L1, 0.3}};
  EXPECT_NO_THROW(check_scheme_union({SchemeKind::EAT}, extremes));
  EXPECT_THROW(check_scheme_union({SchemeKind::MAX}, extremes), InvalidConfig);
  EXPECT_THROW(check_scheme_union({SchemeKind::MSD}, extremes), InvalidConfig);
  EXPECT_THROW(check_scheme_union(Scheme::single(Norm::L2), extremes), InvalidConfig);
  EXPECT_THROW(check_scheme_union({SchemeKind::EAT}, ThreatUnion{{Norm::L2, 0.1}}), InvalidConfig);
}

TEST(LearningRate, Piecewise) {
  const auto s = LrSchedule::piecewise(0.05, 70);
  EXPECT_DOUBLE_EQ(lr_at(s, 69, 0, 10, 100), 0.05);
  EXPECT_DOUBLE_EQ(lr_at(s, 71, 0, 10, 100), 0.005);
}

TEST(LearningRate, Thirds) {
  const auto s = LrSchedule::thirds(0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 5, 10, 3), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 1, 0, 10, 3), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(s, 2, 9, 10, 3), 0.0001);
  // single epoch: the drops happen inside it
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 0, 9, 1), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 3, 9, 1), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 8, 9, 1), 0.0001);
}

TEST(LearningRate, Cyclic) {
  const auto s = LrSchedule::cyclic(0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 0, 0, 10, 30), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 15, 0, 10, 30), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 30, 0, 10, 30), 0.0);
  EXPECT_NEAR(lr_at(s, 7, 5, 10, 30), 0.05, 1e-15);
  EXPECT_NEAR(lr_at(s, 22, 5, 10, 30), 0.05, 1e-15);
}

TEST(EatSampling, Probabilities) {
  RunningRobustError r;
  EXPECT_EQ(eat_sampling_probability(r), (std::pair{0.5, 0.5}));
  r.add(Norm::L1, 0.6);
  r.add(Norm::Linf, 0.4);
  auto [p1, pinf] = eat_sampling_probability(r);
  EXPECT_DOUBLE_EQ(p1, 0.6);
  EXPECT_DOUBLE_EQ(pinf, 0.4);
  RunningRobustError z;
  z.add(Norm::L1, 0.0);
  z.add(Norm::Linf, 0.0);
  EXPECT_EQ(eat_sampling_probability(z), (std::pair{0.5, 0.5}));
  RunningRobustError eq;
  eq.add(Norm::L1, 0.3);
  eq.add(Norm::Linf, 0.3);
  EXPECT_EQ(eat_sampling_probability(eq), (std::pair{0.5, 0.5}));
}

TEST(EatSampling, RunningAverageUsesOnlyOwnBatches) {
  RunningRobustError r;
  r.add(Norm::L1, 0.2);
  r.add(Norm::L1, 0.4);
  r.add(Norm::Linf, 0.9);
  EXPECT_DOUBLE_EQ(r.rerr(Norm::L1), 0.3);
  EXPECT_DOUBLE_EQ(r.rerr(Norm::Linf), 0.9);
  EXPECT_DOUBLE_EQ(r.rerr(Norm::L2), 1.0);
  r.reset();
  EXPECT_EQ(r.count, (std::array<std::size_t, 3>{0, 0, 0}));
}

TEST(EatSampling, FrozenErrorFrequencies) {
  RunningRobustError r;
  r.add(Norm::L1, 0.8);
  r.add(Norm::Linf, 0.2);
  std::mt19937_64 rng(1);
  int l1 = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) l1 += sample_eat_norm(r, rng) == Norm::L1;
  EXPECT_NEAR(static_cast<double>(l1) / n, 0.8, 0.02);
}

TEST(EatSampling, ZeroLinfErrorAlwaysPicksL1) {
  RunningRobustError r;
  r.add(Norm::Linf, 0.0);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_eat_norm(r, rng), Norm::L1);

  const Network net = Network::mlp({4, 6, 2}, Activation::ReLU, 1);
  const Batch b = random_batch(8, 4, 2, 3);
  AttackConfig cfg{2, std::nullopt, 1};
  const auto out = generate_batch_perturbation({SchemeKind::EAT}, net, b, kUnion, cfg, rng, r);
  EXPECT_EQ(out.sampled, Norm::L1);
  EXPECT_EQ(r.count[static_cast<int>(Norm::L1)], 1u);
  EXPECT_DOUBLE_EQ(r.sum_err[static_cast<int>(Norm::L1)],
                   *out.robust_error[static_cast<int>(Norm::L1)]);
  EXPECT_EQ(out.telemetry[static_cast<int>(Norm::L2)], 0u);
}

TEST(Perturbation, SatFrequencies) {
  const Network net = Network::mlp({2, 2}, Activation::Identity, 1);
  const Batch b = random_batch(1, 2, 2, 4);
  AttackConfig cfg{1, std::nullopt, 1};
  std::mt19937_64 rng(5);
  RunningRobustError r;
  std::array<int, 3> hits{0, 0, 0};
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    const auto out = generate_batch_perturbation({SchemeKind::SAT}, net, b, kUnion, cfg, rng, r);
    ++hits[static_cast<std::size_t>(*out.sampled)];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / n, 1.0 / 3.0, 0.01);
}

TEST(Perturbation, MaxKeepsArgmaxLossCopy) {
  const Network net = Network::mlp({5, 10, 3}, Activation::Softplus, 7);
  const Batch b = random_batch(30, 5, 3, 8);
  AttackConfig cfg{5, std::nullopt, 1};
  std::mt19937_64 rng(1);
  RunningRobustError r;
  const auto out = generate_batch_perturbation({SchemeKind::MAX}, net, b, kUnion, cfg, rng, r, true);
  ASSERT_EQ(out.max_trace.chosen.size(), b.size());
  const auto kept = cross_entropy_per_example(forward(net, out.batch.inputs), b.labels);
  std::array<std::size_t, 3> counts{0, 0, 0};
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& l = out.max_trace.losses[i];
    const std::size_t c = out.max_trace.chosen[i];
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_GE(l[c], l[k]);
      if (k < c) EXPECT_GT(l[c], l[k]);  // ties go to the earlier norm
    }
    EXPECT_EQ(kept[i], l[c]);
    ++counts[c];
  }
  EXPECT_EQ(counts, out.telemetry);
}

TEST(Perturbation, AvgStacksThreeCopies) {
  const Network net = Network::mlp({4, 6, 2}, Activation::ReLU, 3);
  const Batch b = random_batch(10, 4, 2, 9);
  std::mt19937_64 rng(1);
  RunningRobustError r;
  const auto out =
      generate_batch_perturbation({SchemeKind::AVG}, net, b, kUnion, AttackConfig{3, std::nullopt, 1}, rng, r);
  ASSERT_EQ(out.batch.size(), 30u);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(out.batch.labels[k * 10 + i], b.labels[i]);
  }
  // the k-th block lies in the k-th ball
  for (std::size_t k = 0; k < 3; ++k) {
    const ThreatSpec t = kUnion.specs()[k];
    for (std::size_t i = 0; i < 10; ++i) {
      std::vector<double> d(4);
      for (std::size_t j = 0; j < 4; ++j) d[j] = out.batch.inputs.at(k * 10 + i, j) - b.inputs.at(i, j);
      EXPECT_LE(norm_of(d, t.p), t.eps * (1 + 1e-12));
    }
  }
  EXPECT_EQ(out.telemetry, (std::array<std::size_t, 3>{10, 10, 10}));
}

TEST(Perturbation, MsdTelemetryCountsSteps) {
  const Network net = Network::mlp({4, 6, 2}, Activation::ReLU, 3);
  const Batch b = random_batch(10, 4, 2, 9);
  std::mt19937_64 rng(1);
  RunningRobustError r;
  AttackConfig cfg{4, std::nullopt, 2};
  const auto out = generate_batch_perturbation({SchemeKind::MSD}, net, b, kUnion, cfg, rng, r);
  EXPECT_EQ(out.telemetry[0] + out.telemetry[1] + out.telemetry[2], 4u * 2u * 10u);
}

TEST(Sgd, PlainGradientStep) {
  Network net = Network::mlp({2, 2}, Activation::Identity, 1);
  const Network before = net;
  std::vector<Tensor> g{Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}), Tensor({2}, {0.5, -0.5})};
  SgdState st;
  sgd_step(net, g, 0.1, 0.0, 0.0, st);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(net.layers()[0].weights[i], before.layers()[0].weights[i] - 0.1 * g[0][i]);
  }
  EXPECT_DOUBLE_EQ(net.layers()[0].bias[0], -0.05);
}

TEST(Sgd, QuadraticConvergesWithMomentum) {
  // loss = 0.5 * (θ - c)^2 per parameter
  Network net = Network::mlp({1, 2}, Activation::Identity, 4);
  const double c = 0.7;
  SgdState st;
  for (int it = 0; it < 100; ++it) {
    std::vector<Tensor> g;
    for (const Tensor* p : std::as_const(net).parameters()) {
      Tensor t(p->shape());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = (*p)[i] - c;
      g.push_back(std::move(t));
    }
    sgd_step(net, g, 0.5, 0.5, 0.0, st);
  }
  for (const Tensor* p : std::as_const(net).parameters()) {
    for (double v : p->data()) EXPECT_NEAR(v, c, 1e-6);
  }
}

TEST(Sgd, WeightDecayShrinksGeometrically) {
  Network net = Network::mlp({3, 2}, Activation::Identity, 5);
  const Network init = net;
  std::vector<Tensor> zero{Tensor({3, 2}), Tensor({2})};
  SgdState st;
  const double lr = 0.1;
  const double wd = 0.01;
  for (int it = 0; it < 10; ++it) sgd_step(net, zero, lr, 0.0, wd, st);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(net.layers()[0].weights[i], init.layers()[0].weights[i] * std::pow(1 - lr * wd, 10), 1e-15);
  }
}

TrainConfig small_config(Scheme s) {
  TrainConfig c;
  c.scheme = s;
  c.threats = ThreatUnion{{Norm::Linf, 0.02}, {Norm::L2, 0.05}, {Norm::L1, 0.1}};
  c.epochs = 2;
  c.batch_size = 32;
  c.lr = LrSchedule::piecewise(0.05, 100);
  c.attack = AttackConfig{3, std::nullopt, 1};
  c.seed = 3;
  return c;
}

TEST(Train, SeparableGaussiansOneEpoch) {
  const Dataset ds = generate(GaussiansSpec{2, 2, 4.0, 500}, 1);
  TrainConfig c = small_config(Scheme::single(Norm::Linf));
  c.epochs = 1;
  c.lr = LrSchedule::piecewise(0.1, 100);
  const Network init = Network::mlp({2, 16, 2}, Activation::ReLU, 2);
  const TrainResult r = train(init, ds.train, c);
  EXPECT_GT(detail::accuracy(r.net, ds.test), 0.95);
  ASSERT_EQ(r.history.size(), 1u);
}

TEST(Train, HistoryAndTelemetryBookkeeping) {
  const Dataset ds = generate(RingsSpec{100, 4}, 2);
  const Network init = Network::mlp({4, 16, 2}, Activation::ReLU, 2);
  const TrainResult eat = train(init, ds.train, small_config({SchemeKind::EAT}));
  ASSERT_EQ(eat.history.size(), 2u);
  std::size_t total = 0;
  for (const auto& h : eat.history) {
    EXPECT_EQ(h.rerr_count_at_start, (std::array<std::size_t, 3>{0, 0, 0}));
    EXPECT_TRUE(std::isnan(h.robust_error[1]));
  }
  for (const auto& e : eat.telemetry.per_epoch) {
    EXPECT_EQ(e[1], 0u);
    total += e[0] + e[1] + e[2];
  }
  EXPECT_EQ(total, 2 * ds.train.size());

  const TrainResult mx = train(init, ds.train, small_config({SchemeKind::MAX}));
  for (const auto& row : telemetry_summary(mx.telemetry).rows) {
    EXPECT_NEAR(row.fractions[0] + row.fractions[1] + row.fractions[2], 1.0, 1e-12);
  }
  for (const auto& e : mx.telemetry.per_epoch) EXPECT_EQ(e[0] + e[1] + e[2], ds.train.size());
}

TEST(Train, BitReproducibleAndThreadInvariant) {
  const Dataset ds = generate(RingsSpec{60, 6}, 3);
  const Network init = Network::mlp({6, 12, 2}, Activation::ReLU, 2);
  const TrainConfig c = small_config({SchemeKind::EAT});
  set_num_threads(1);
  const TrainResult a = train(init, ds.train, c);
  set_num_threads(4);
  const TrainResult b = train(init, ds.train, c);
  set_num_threads(0);
  EXPECT_TRUE(a.net == b.net);
  EXPECT_EQ(a.telemetry.per_epoch, b.telemetry.per_epoch);
}

TEST(Train, BestSelectionPicksHighestValidationUnion) {
  const Dataset ds = generate(RingsSpec{60, 4}, 4);
  TrainConfig c = small_config(Scheme::single(Norm::L2));
  c.epochs = 3;
  c.selection = CheckpointSelection::Best;
  const TrainResult r = train(Network::mlp({4, 12, 2}, Activation::ReLU, 1), ds.train, c);
  ASSERT_EQ(r.validation_union.size(), 3u);
  const auto best = std::max_element(r.validation_union.begin(), r.validation_union.end());
  EXPECT_EQ(r.selected_epoch, static_cast<int>(best - r.validation_union.begin()));
}

TEST(Train, InvalidConfigRejected) {
  const Batch b = random_batch(10, 2, 2, 1);
  const Network net = Network::mlp({2, 2}, Activation::Identity, 1);
  TrainConfig c = small_config(Scheme::single(Norm::Linf));
  c.epochs = 0;
  EXPECT_THROW(train(net, b, c), InvalidConfig);
  c = small_config(Scheme::single(Norm::Linf));
  c.momentum = 1.0;
  EXPECT_THROW(train(net, b, c), InvalidConfig);
  c = small_config(Scheme::single(Norm::Linf));
  c.weight_decay = -1;
  EXPECT_THROW(train(net, b, c), InvalidConfig);
}

TEST(Finetune, ZeroLearningRateIsIdentity) {
  const Dataset ds = generate(RingsSpec{40, 4}, 5);
  const Network net = Network::mlp({4, 8, 2}, Activation::ReLU, 6);
  TrainConfig c = finetune_config({SchemeKind::EAT}, small_config({SchemeKind::EAT}).threats, 0.0);
  c.attack = AttackConfig{2, std::nullopt, 1};
  const TrainResult r = finetune(net, ds.train, c);
  EXPECT_TRUE(r.net == net);
  EXPECT_EQ(r.history.size(), 3u);
  EXPECT_DOUBLE_EQ(r.history[1].lr, 0.0);
}

TEST(Finetune, ArchitectureMismatch) {
  const Dataset ds = generate(RingsSpec{20, 4}, 5);
  const Network net = Network::mlp({5, 8, 2}, Activation::ReLU, 6);
  EXPECT_THROW(finetune(net, ds.train, finetune_config({SchemeKind::EAT}, kUnion)), ArchMismatch);
}

TEST(RadiiSweep, ConstantGeometricMeanGivesNearConstantPrediction) {
  const double c2 = 12.0 * 8.0 / 255.0;
  std::vector<RadiiPair> pairs;
  for (double k : {4.0, 8.0, 12.0, 16.0}) pairs.push_back({k / 255.0, c2 / (k / 255.0)});
  const auto r = predicted_l2_radii(pairs, 3072);
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  EXPECT_LT(*hi / *lo - 1.0, 0.02);
  EXPECT_THROW(predicted_l2_radii({{0.1, 0.05}}, 20), DomainError);
}

TEST(RadiiSweep, SinglePairIsFinetunePlusCurve) {
  const Dataset ds = generate(RingsSpec{40, 4}, 6);
  const Network net = Network::mlp({4, 8, 2}, Activation::ReLU, 6);
  TrainConfig ft = finetune_config({SchemeKind::EAT}, kUnion, 0.01);
  ft.attack = AttackConfig{2, std::nullopt, 1};
  const std::vector<double> grid{0.0, 0.05, 0.1};
  const auto res = radii_sweep(net, ds.train, ds.test, {{0.02, 0.06}}, ft, grid, AttackConfig{});
  ASSERT_EQ(res.size(), 1u);
  ft.threats = ThreatUnion{{Norm::Linf, 0.02}, {Norm::L1, 0.06}};
  const Network tuned = finetune(net, ds.train, ft).net;
  const auto curve = robustness_curve(tuned, ds.test, Norm::L2, grid, AttackConfig{});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_EQ(res[0].curve[k].robust_accuracy, curve[k].robust_accuracy);
  }
  EXPECT_DOUBLE_EQ(res[0].predicted_eps2, geometry::min_lp_outside_hull({0.06, 0.02, 4}, 2.0).radius);
}

}  // namespace
