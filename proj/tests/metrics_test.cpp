/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "exfuzz/coverage.hpp"
#include "exfuzz/dataset.hpp"
#include "exfuzz/metrics.hpp"
#include "exfuzz/training.hpp"
#include "reference.hpp"

namespace exfuzz {
namespace {

using testing::FillUniform;
using testing::RandomInput;
using testing::RandomMlp;

using testing::BisectDistortion;
using testing::Linear;
using testing::MidInput;
using testing::Unit;
using testing::W;

TEST(AccuracyTest, ConstantPredictorAndArithmetic) {
  Network m(Shape{2}, {LayerSpec::Dense(2, 3), LayerSpec::Softmax()}, 3);
  m.params()[0][6] = 1.0f;  // bias of class 0
  std::vector<Tensor> x(4, Tensor(Shape{2}, {0.3f, 0.7f}));
  EXPECT_EQ(Accuracy(m, x, std::vector<int>{0, 0, 0, 0}), 1.0);
  EXPECT_EQ(Accuracy(m, x, std::vector<int>{0, 0, 2, 0}), 0.75);
}

TEST(AccuracyTest, MatchesRecordedTestAccuracy) {
  const Dataset d = SyntheticBlobs(200, 3, 5);
  const auto arch = ArchitectureLayers("mlp64", d.shape, d.class_count);
  DefectSpec spec;
  spec.epochs = 5;
  const Network m = TrainModel(d, arch, spec, 3);
  EXPECT_EQ(Accuracy(m, d, Split::kTest), m.metadata()["test_accuracy"].get<double>());
}

TEST(AttackTest, FgsmZeroEpsilonIsIdentity) {
  Rng rng(1);
  const Network m = RandomMlp(rng, 6, 5, 3);
  const Tensor x = RandomInput(Shape{6}, rng);
  const Tensor a = AttackFgsm(m, x, 1, 0.0);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), x.values().begin()));
  EXPECT_THROW(AttackFgsm(m, x, 1, -0.1), UsageError);
}

TEST(AttackTest, FgsmOnBinaryLinearFollowsWeightDifference) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const Network m = Linear(8, 2, rng);
    const Tensor x = MidInput(8, rng);
    const int label = Predict(m, x);
    const int other = 1 - label;
    const Tensor a = AttackFgsm(m, x, label, 0.1);
    for (int i = 0; i < 8; ++i) {
      const double diff = W(m, other, i) - W(m, label, i);
      const double expect = diff > 0 ? 0.1 : (diff < 0 ? -0.1 : 0.0);
      EXPECT_NEAR(a[static_cast<std::size_t>(i)] - x[static_cast<std::size_t>(i)], expect, 1e-6);
    }
  }
}

TEST(AttackTest, PgdStaysInBallAndRange) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Network m = RandomMlp(rng, 10, 8, 4);
    const Tensor x = RandomInput(Shape{10}, rng);
    PgdConfig cfg;
    cfg.epsilon = 0.05 * (t + 1);
    cfg.steps = 15;
    cfg.step_size = 0.02;
    cfg.random_start = t % 2 == 1;
    cfg.seed = static_cast<std::uint64_t>(t);
    const Tensor a = AttackPgd(m, x, 0, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(a[i] - x[i]), cfg.epsilon + 1e-6);
      EXPECT_GE(a[i], 0.0f);
      EXPECT_LE(a[i], 1.0f);
    }
  }
}

TEST(AttackTest, PgdRaisesLossOnLinearModel) {
  Rng rng(4);
  const Network m = Linear(8, 3, rng);
  const Tensor x = MidInput(8, rng);
  const int label = Predict(m, x);
  PgdConfig cfg;
  cfg.epsilon = 0.1;
  const Tensor a = AttackPgd(m, x, label, cfg);
  EXPECT_GT(Loss(m, a, label), Loss(m, x, label));
}

TEST(AttackTest, SuccessRateArithmetic) {
  Network m(Shape{1}, {LayerSpec::Dense(1, 2), LayerSpec::Softmax()}, 2);
  m.params()[0][2] = 1.0f;  // always class 0
  std::vector<Tensor> xs(10, Tensor(Shape{1}, {0.5f}));
  EXPECT_EQ(AttackSuccessRate(m, xs, std::vector<int>(10, 0)), 0.0);
  std::vector<int> labels = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(AttackSuccessRate(m, xs, labels), 0.7);
  EXPECT_THROW(AttackSuccessRate(m, std::vector<Tensor>{}, std::vector<int>{}), UsageError);
}

CleverConfig SmallClever(double radius, std::uint64_t seed) {
  CleverConfig c;
  c.batches = 40;
  c.samples_per_batch = 64;
  c.radius = radius;
  c.seed = seed;
  return c;
}

TEST(CleverTest, LinearModelsMatchClosedForm) {
  Rng rng(5);
  for (int t = 0; t < 5; ++t) {
    const Network m = Linear(10, t % 2 ? 2 : 4, rng);
    const Tensor x = MidInput(10, rng);
    const int c = Predict(m, x);
    double expect = INFINITY;
    const auto logits = ComputeLogitJacobian(m, x).logits;
    for (int j = 0; j < m.class_count(); ++j) {
      if (j == c) continue;
      double sq = 0.0;
      for (int i = 0; i < 10; ++i) sq += std::pow(W(m, c, i) - W(m, j, i), 2);
      expect = std::min(expect, (logits[static_cast<std::size_t>(c)] -
                                 logits[static_cast<std::size_t>(j)]) / std::sqrt(sq));
    }
    for (auto est : {LipschitzEstimator::kMaxOfBatchMaxima, LipschitzEstimator::kReverseWeibull}) {
      CleverConfig cfg = SmallClever(0.5, 9);
      cfg.estimator = est;
      const CleverEstimate e = CleverL2(m, x, c, cfg);
      EXPECT_NEAR(e.score, expect, 0.05 * expect);
      EXPECT_GE(e.score, 0.0);
    }
  }
}

TEST(CleverTest, LinearScoreIsBelowBisectedDistortion) {
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    const Network m = Linear(6, 3, rng);
    const Tensor x = MidInput(6, rng);
    const int c = Predict(m, x);
    const CleverEstimate e = CleverL2(m, x, c, SmallClever(0.5, 1));
    double best = INFINITY;
    for (int j = 0; j < 3; ++j) {
      if (j == c) continue;
      std::vector<double> dir(6);
      for (int i = 0; i < 6; ++i) dir[static_cast<std::size_t>(i)] = W(m, j, i) - W(m, c, i);
      best = std::min(best, BisectDistortion(m, x, c, Unit(dir)));
    }
    EXPECT_GE(best, 0.95 * e.score);
  }
}

TEST(CleverTest, NonlinearScoreBoundedByBisection) {
  Rng rng(7);
  int checked = 0;
  for (int t = 0; t < 20; ++t) {
    const Network m = RandomMlp(rng, 6, 8, 3);
    const Tensor x = MidInput(6, rng);
    const int c = Predict(m, x);
    const LogitJacobian jac = ComputeLogitJacobian(m, x);
    double best = INFINITY;
    for (int j = 0; j < 3; ++j) {
      if (j == c) continue;
      std::vector<double> dir(6);
      for (std::size_t i = 0; i < 6; ++i) {
        dir[i] = jac.rows[static_cast<std::size_t>(j)][i] - jac.rows[static_cast<std::size_t>(c)][i];
      }
      best = std::min(best, BisectDistortion(m, x, c, Unit(dir)));
    }
    if (!std::isfinite(best) || best > 0.6) continue;
    const CleverEstimate e = CleverL2(m, x, c, SmallClever(std::max(best, 0.05), 2));
    EXPECT_LE(e.score, 1.05 * best) << "model " << t;
    ++checked;
  }
  EXPECT_GE(checked, 5);
}

TEST(CleverTest, DeterministicAndValidated) {
  Rng rng(8);
  const Network m = RandomMlp(rng, 5, 6, 3);
  const Tensor x = MidInput(5, rng);
  const int c = Predict(m, x);
  const CleverEstimate a = CleverL2(m, x, c, SmallClever(0.3, 4));
  const CleverEstimate b = CleverL2(m, x, c, SmallClever(0.3, 4));
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.lipschitz, b.lipschitz);
  EXPECT_EQ(a.target_class.size(), 2u);
  EXPECT_THROW(CleverL2(m, x, (c + 1) % 3, SmallClever(0.3, 4)), UsageError);
  EXPECT_THROW(CleverL2(m, x, c, SmallClever(0.0, 4)), UsageError);
  CleverConfig zero = SmallClever(0.3, 4);
  zero.batches = 0;
  EXPECT_THROW(CleverL2(m, x, c, zero), UsageError);
  const CleverConfig defaults;
  EXPECT_EQ(defaults.batches, 500);
  EXPECT_EQ(defaults.samples_per_batch, 1024);
}

TestCase Case(int seed, int label, Tensor generated) {
  TestCase t;
  t.seed_index = seed;
  t.true_label = label;
  t.generated = std::move(generated);
  return t;
}

TEST(SuiteReportTest, ConstructedSuiteAccounting) {
  // One input unit; the predicted class is the bias-free argmax of w * x.
  Network m(Shape{1}, {LayerSpec::Dense(1, 3), LayerSpec::Softmax()}, 3);
  // logits: [0, x - 0.3, 2x - 1.2]: class 0 below 0.3, 1 in (0.3, 0.9), 2 above.
  m.params()[0][1] = 1.0f;
  m.params()[0][2] = 2.0f;
  m.params()[0][4] = -0.3f;
  m.params()[0][5] = -1.2f;
  auto at = [](float v) { return Tensor(Shape{1}, {v}); };
  ASSERT_EQ(Predict(m, at(0.1f)), 0);
  ASSERT_EQ(Predict(m, at(0.5f)), 1);
  ASSERT_EQ(Predict(m, at(0.95f)), 2);
  const std::vector<TestCase> cases = {
      Case(0, 0, at(0.5f)),                                              // {B}
      Case(1, 0, at(0.5f)), Case(1, 0, at(0.95f)), Case(1, 0, at(0.6f)),  // {B, C}
      Case(2, 0, at(0.1f))};                                             // {}
  const SuiteReport r = MakeSuiteReport(m, cases, 3);
  EXPECT_EQ(r.test_error_count, 4u);
  EXPECT_EQ(r.error_categories, (std::set<std::pair<int, int>>{{0, 1}, {0, 2}}));
  EXPECT_DOUBLE_EQ(r.average_categories_per_seed, 1.0);
  EXPECT_LE(r.error_categories.size(), r.test_error_count);

  const SuiteReport clean = MakeSuiteReport(m, std::vector<TestCase>{Case(0, 0, at(0.1f))}, 1);
  EXPECT_EQ(clean.test_error_count, 0u);
  EXPECT_TRUE(clean.error_categories.empty());
  EXPECT_EQ(clean.average_categories_per_seed, 0.0);
}

TEST(SuiteReportTest, InvariantsOnRandomSuites) {
  Rng rng(9);
  const Network m = RandomMlp(rng, 4, 6, 5);
  for (int t = 0; t < 20; ++t) {
    std::vector<TestCase> cases;
    const int seeds = 1 + static_cast<int>(rng.Below(6));
    for (int s = 0; s < seeds; ++s) {
      const int label = static_cast<int>(rng.Below(5));
      for (int k = 0; k < 4; ++k) cases.push_back(Case(s, label, RandomInput(Shape{4}, rng)));
    }
    const SuiteReport r = MakeSuiteReport(m, cases, static_cast<std::size_t>(seeds));
    std::size_t seeds_with_error = 0;
    for (const SeedBreakdown& b : r.per_seed) seeds_with_error += b.errors > 0 ? 1 : 0;
    EXPECT_GE(r.test_error_count, seeds_with_error);
    EXPECT_LE(r.error_categories.size(), r.test_error_count);
    EXPECT_LE(r.average_categories_per_seed, 4.0);
  }
}

TEST(ProfileTest, MinMaxAndMonotonicity) {
  Rng rng(10);
  const Network m = RandomMlp(rng, 4, 5, 3);
  const std::vector<Tensor> corpus = {RandomInput(Shape{4}, rng), RandomInput(Shape{4}, rng)};
  const CoverageProfile one = BuildProfile(m, std::span(corpus).first(1));
  EXPECT_EQ(one.low, one.high);
  const CoverageProfile two = BuildProfile(m, corpus);
  const auto t0 = Forward(m, corpus[0]).trace.values;
  const auto t1 = Forward(m, corpus[1]).trace.values;
  for (std::size_t i = 0; i < t0.size(); ++i) {
    EXPECT_EQ(two.low[i], std::min(t0[i], t1[i]));
    EXPECT_EQ(two.high[i], std::max(t0[i], t1[i]));
  }
  CoverageProfile grow = two;
  for (int k = 0; k < 30; ++k) {
    const CoverageProfile before = grow;
    grow.Extend(Forward(m, RandomInput(Shape{4}, rng)).trace);
    for (std::size_t i = 0; i < grow.low.size(); ++i) {
      EXPECT_LE(grow.low[i], before.low[i]);
      EXPECT_GE(grow.high[i], before.high[i]);
    }
  }
  EXPECT_EQ(grow.corpus_size, 32u);
  EXPECT_EQ(kDefaultProfileCorpus, 1000u);
  EXPECT_THROW(BuildProfile(m, std::vector<Tensor>{}), UsageError);
}

}  // namespace
}  // namespace exfuzz
