// Copyright 2026 The datatk Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "datatk/model_lab.hpp"
#include "oracle.hpp"

namespace lab = datatk::lab;
using datatk::ErrorKind;
using datatk::Vector;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const datatk::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no datatk::Error thrown";
  return ErrorKind::InvalidArgument;
}

double loss_at(const lab::LabModel& m, const Vector& x, std::uint8_t y) {
  return lab::binary_nll(m.logit(x), y);
}

// Adapters with nonzero `up` so every adapter entry has a live gradient.
lab::LabModel live_adapters(std::uint64_t seed) {
  auto m = lab::attach_adapters(lab::make_base_model(5, 4, seed), 2, seed + 1);
  std::mt19937_64 rng(seed + 2);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto& a : m.adapters) {
    for (Eigen::Index i = 0; i < a.up.size(); ++i) a.up.data()[i] = normal(rng);
  }
  return m;
}

}  // namespace

TEST(TaskTest, DeterministicAndBalanced) {
  const auto a = lab::generate_task(7, 40, 3, 2.0, 20, 1.5);
  const auto b = lab::generate_task(7, 40, 3, 2.0, 20, 1.5);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.test_features, b.test_features);
  EXPECT_EQ(a.n_train(), 40u);
  EXPECT_EQ(a.n_test(), 20u);
  EXPECT_EQ(a.dim(), 3u);
  EXPECT_EQ(std::accumulate(a.labels.begin(), a.labels.end(), 0), 20);
  EXPECT_EQ(std::accumulate(a.test_labels.begin(), a.test_labels.end(), 0), 10);
  EXPECT_EQ(std::accumulate(a.flip_mask.begin(), a.flip_mask.end(), 0), 0);
  const auto c = lab::generate_task(8, 40, 3, 2.0, 20, 1.5);
  EXPECT_NE(a.features, c.features);
  EXPECT_EQ(lab::generate_task(7, 40, 3, 2.0).n_test(), 40u);
}

TEST(TaskTest, ClassMeansAreSeparatedAndOffset) {
  const double sep = 4.0, offset = 3.0;
  const auto t = lab::generate_task(1, 4000, 4, sep, 2, offset);
  Vector m0 = Vector::Zero(4), m1 = Vector::Zero(4);
  for (Eigen::Index i = 0; i < 4000; ++i) {
    (t.labels[i] ? m1 : m0) += t.features.row(i).transpose() / 2000.0;
  }
  EXPECT_NEAR((m1 - m0).norm(), sep, 0.15);
  const Vector mid = (m0 + m1) / 2.0;
  EXPECT_NEAR(mid.norm(), offset, 0.15);
  EXPECT_NEAR(mid.dot((m1 - m0).normalized()), 0.0, 0.15);
}

TEST(TaskTest, InvalidArguments) {
  EXPECT_EQ(kind_of([] { lab::generate_task(0, 3, 2, 1.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { lab::generate_task(0, 5, 2, 1.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { lab::generate_task(0, 4, 0, 1.0); }), ErrorKind::InvalidArgument);
  const auto t = lab::generate_task(0, 10, 2, 1.0);
  EXPECT_EQ(kind_of([&] { lab::flip_labels(t, 1.0, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { lab::flip_labels(t, -0.1, 0); }), ErrorKind::InvalidArgument);
  const std::vector<std::size_t> bad{10};
  EXPECT_EQ(kind_of([&] { lab::subset_task(t, bad); }), ErrorKind::IndexOutOfRange);
}

TEST(TaskTest, FlipsExactCountAndIsAnInvolution) {
  const auto t = lab::generate_task(3, 50, 2, 2.0);
  const auto f = lab::flip_labels(t, 0.2, 11);
  std::size_t flipped = 0, masked = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    flipped += f.labels[i] != t.labels[i];
    masked += f.flip_mask[i];
    EXPECT_EQ(f.flip_mask[i] != 0, f.labels[i] != t.labels[i]);
  }
  EXPECT_EQ(flipped, 10u);
  EXPECT_EQ(masked, 10u);
  const auto back = lab::flip_labels(f, 0.2, 11);
  EXPECT_EQ(back.labels, t.labels);
  EXPECT_EQ(back.flip_mask, t.flip_mask);
  EXPECT_EQ(lab::flip_labels(t, 0.0, 11).labels, t.labels);
}

TEST(TaskTest, SubsetKeepsOrderAndTestSplit) {
  const auto t = lab::flip_labels(lab::generate_task(3, 12, 2, 2.0), 0.25, 1);
  const std::vector<std::size_t> idx{5, 0, 5};
  const auto s = lab::subset_task(t, idx);
  ASSERT_EQ(s.n_train(), 3u);
  EXPECT_EQ(s.features.row(0), t.features.row(5));
  EXPECT_EQ(s.features.row(1), t.features.row(0));
  EXPECT_EQ(s.labels[2], t.labels[5]);
  EXPECT_EQ(s.flip_mask[0], t.flip_mask[5]);
  EXPECT_EQ(s.test_features, t.test_features);
}

TEST(ModelTest, AdapterShapesAndZeroInitialForward) {
  const auto base = lab::make_base_model(6, 5, 1);
  ASSERT_EQ(base.num_layers(), 2u);
  EXPECT_EQ(base.input_dim(), 6u);
  EXPECT_FALSE(base.has_adapters());
  const auto m = lab::attach_adapters(base, 3, 2);
  EXPECT_EQ(m.adapter_dims(), (std::vector<std::size_t>{3 * (6 + 5), 3 * (5 + 1)}));
  const Vector x = Vector::LinSpaced(6, -1.0, 1.0);
  EXPECT_EQ(m.logit(x), base.logit(x));
  EXPECT_EQ(kind_of([&] { lab::attach_adapters(base, 0, 2); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(lab::make_base_model(6, 0, 1).num_layers(), 1u);
}

TEST(ModelTest, ParameterRoundTrip) {
  auto m = live_adapters(3);
  auto params = lab::adapter_parameters(m);
  ASSERT_EQ(params.size(), 2u);
  for (std::size_t l = 0; l < params.size(); ++l) {
    EXPECT_EQ(static_cast<std::size_t>(params[l].size()), m.adapter_dims()[l]);
    params[l].array() += 1.0;
  }
  lab::set_adapter_parameters(m, params);
  EXPECT_EQ(lab::adapter_parameters(m), params);
}

TEST(ModelTest, BinaryNllIsStableWhenSaturated) {
  EXPECT_NEAR(lab::binary_nll(0.0, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(lab::binary_nll(800.0, 1), 0.0, 1e-300);
  EXPECT_NEAR(lab::binary_nll(800.0, 0), 800.0, 1e-9);
  EXPECT_NEAR(lab::binary_nll(-800.0, 1), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(lab::binary_nll(-1e6, 1)));
}

TEST(GradientTest, AdapterGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = live_adapters(seed);
    const Vector x = Vector::LinSpaced(5, -1.0, 1.5) * (1.0 + 0.1 * static_cast<double>(seed));
    for (std::uint8_t y : {std::uint8_t{0}, std::uint8_t{1}}) {
      const auto g = lab::adapter_gradient(m, x, y);
      const auto params = lab::adapter_parameters(m);
      for (std::size_t l = 0; l < params.size(); ++l) {
        for (Eigen::Index k = 0; k < params[l].size(); ++k) {
          const double h = 1e-5;
          auto plus = params, minus = params;
          plus[l][k] += h;
          minus[l][k] -= h;
          auto mp = m, mm = m;
          lab::set_adapter_parameters(mp, plus);
          lab::set_adapter_parameters(mm, minus);
          const double fd = (loss_at(mp, x, y) - loss_at(mm, x, y)) / (2.0 * h);
          EXPECT_NEAR(g[l][k], fd, 1e-4 * std::max(1.0, std::abs(fd)))
              << "layer " << l << " entry " << k;
        }
      }
    }
  }
}

TEST(GradientTest, WeightGradientsMatchFiniteDifferencesAndFactor) {
  const auto m = live_adapters(4);
  auto task = lab::generate_task(2, 4, 5, 2.0, 4, 1.0);
  const auto dump = lab::extract_weight_gradients(task, m);
  ASSERT_TRUE(dump.factored.has_value());
  EXPECT_NO_THROW(datatk::validate_factors(dump.store, *dump.factored));
  EXPECT_EQ(dump.store.layer(0).name, "layer0.weight");
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Vector x = task.features.row(i).transpose();
    for (std::size_t l = 0; l < m.num_layers(); ++l) {
      const auto& w = m.base[l].weight;
      const Eigen::Index out = w.rows();
      for (Eigen::Index q = 0; q < out; ++q) {
        for (Eigen::Index p = 0; p < w.cols(); ++p) {
          const double h = 1e-5;
          auto mp = m, mm = m;
          mp.base[l].weight(q, p) += h;
          mm.base[l].weight(q, p) -= h;
          const double fd =
              (loss_at(mp, x, task.labels[i]) - loss_at(mm, x, task.labels[i])) / (2.0 * h);
          EXPECT_NEAR(dump.store.train(l)(i, p * out + q), fd,
                      1e-4 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

TEST(GradientTest, ExtractedStoreUsesTrainAndTestSplits) {
  const auto m = live_adapters(5);
  auto task = lab::flip_labels(lab::generate_task(9, 8, 5, 2.0, 6, 1.0), 0.25, 3);
  // A duplicated example gets an identical gradient row.
  task.features.row(1) = task.features.row(0);
  task.labels[1] = task.labels[0];
  const auto store = lab::extract_gradients(task, m);
  EXPECT_EQ(store.n_train(), 8u);
  EXPECT_EQ(store.n_query(), 6u);
  EXPECT_EQ(store.layer(1).name, "layer1.lora");
  EXPECT_EQ(store.train(0).row(0), store.train(0).row(1));
  for (Eigen::Index i : {2, 5}) {
    const auto g = lab::adapter_gradient(m, task.features.row(i).transpose(), task.labels[i]);
    EXPECT_EQ(Vector(store.train(1).row(i).transpose()), g[1]);
  }
  const auto gq = lab::adapter_gradient(m, task.test_features.row(3).transpose(),
                                        task.test_labels[3]);
  EXPECT_EQ(Vector(store.query(0).row(3).transpose()), gq[0]);
  EXPECT_EQ(kind_of([&] { lab::extract_gradients(task, lab::make_base_model(5, 4, 0)); }),
            ErrorKind::InvalidArgument);
}

TEST(TrainTest, ZeroLearningRateIsANoOp) {
  const auto task = lab::generate_task(1, 20, 3, 2.0);
  const auto init = lab::attach_adapters(lab::make_base_model(3, 4, 1), 2, 2);
  const auto r = lab::train(task, init, {.learning_rate = 0.0, .epochs = 3});
  EXPECT_EQ(lab::adapter_parameters(r.model), lab::adapter_parameters(init));
  EXPECT_EQ(r.model.base[0].weight, init.base[0].weight);
  EXPECT_EQ(r.test_accuracy.size(), 3u);
}

TEST(TrainTest, ConvexBaseConvergesToStationaryPoint) {
  const auto task = lab::generate_task(0, 100, 4, 1.0, 50);
  const auto init = lab::make_base_model(4, 0, 3);
  const auto r =
      lab::train(task, init, {.learning_rate = 1.0, .epochs = 2000, .batch_size = 100});
  EXPECT_LT(r.final_grad_norm, 1e-5);
  EXPECT_GT(r.test_accuracy.back(), 0.6);
}

TEST(TrainTest, DeterministicAndSubsetAware) {
  const auto task = lab::generate_task(4, 40, 3, 3.0, 20, 1.0);
  const auto init = lab::attach_adapters(lab::make_base_model(3, 4, 1), 2, 2);
  const lab::TrainConfig cfg{.epochs = 5, .batch_size = 8, .seed = 3};
  const auto a = lab::train(task, init, cfg);
  const auto b = lab::train(task, init, cfg);
  EXPECT_EQ(lab::adapter_parameters(a.model), lab::adapter_parameters(b.model));
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
  EXPECT_EQ(a.final_loss, b.final_loss);

  std::vector<std::size_t> all(40);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto c = lab::train(task, init, cfg, std::span<const std::size_t>(all));
  EXPECT_EQ(lab::adapter_parameters(c.model), lab::adapter_parameters(a.model));

  const std::vector<std::size_t> none;
  EXPECT_EQ(kind_of([&] { lab::train(task, init, cfg, std::span<const std::size_t>(none)); }),
            ErrorKind::EmptySubset);
  EXPECT_EQ(kind_of([&] { lab::train(task, init, {.batch_size = 0}); }),
            ErrorKind::InvalidArgument);
}

TEST(TrainTest, ExplodingLearningRateIsNumericFailure) {
  auto task = lab::generate_task(4, 20, 3, 3.0);
  task.features *= 1e150;
  const auto init = lab::make_base_model(3, 0, 1);
  try {
    lab::train(task, init, {.learning_rate = 1e150, .epochs = 5});
    FAIL();
  } catch (const datatk::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
    EXPECT_EQ(e.category(), datatk::ErrorCategory::Numeric);
  }
}

TEST(BartlettTest, AnalyticIdentityHolds) {
  const auto task = lab::generate_task(2, 100, 3, 2.0);
  const auto model = lab::fit_logistic(task, 200, 0.5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const auto a = lab::bartlett_analytic(model, task.features.row(i).transpose());
    EXPECT_LT((a.hessian - a.expected_gram).cwiseAbs().maxCoeff(),
              1e-15 * std::max(1.0, a.hessian.cwiseAbs().maxCoeff()));
    EXPECT_EQ(a.hessian.rows(), 4);
  }
}

TEST(BartlettTest, MonteCarloAgreesUnderModelLabels) {
  const auto task = lab::generate_task(5, 200, 3, 2.0);
  const auto model = lab::fit_logistic(task, 300, 0.5);
  const auto r = lab::bartlett_check(model, task, 10000, 1);
  EXPECT_EQ(r.samples, 10000u);
  EXPECT_FALSE(r.violated) << "max_z " << r.max_z;
  EXPECT_LE(r.max_z, 5.0);
  EXPECT_GT(r.max_standard_error, 0.0);
  EXPECT_EQ(kind_of([&] { lab::bartlett_check(model, task, 1, 1); }),
            ErrorKind::InvalidArgument);
}

TEST(BartlettTest, OverconfidentModelOnNoisyLabelsViolates) {
  const auto task = lab::flip_labels(lab::generate_task(5, 200, 3, 2.0), 0.3, 2);
  auto model = lab::fit_logistic(lab::generate_task(5, 200, 3, 2.0), 300, 0.5);
  model.weights *= 5.0;
  const auto r = lab::bartlett_check(model, task, 10000, 1, lab::LabelSource::Observed);
  EXPECT_TRUE(r.violated) << "max_z " << r.max_z;
}

TEST(RetrainHelpersTest, LooTrainerOnFullSetMatchesTrain) {
  const auto task = lab::generate_task(6, 12, 2, 3.0, 8, 1.0);
  const auto init = lab::attach_adapters(lab::make_base_model(2, 3, 1), 1, 2);
  const lab::TrainConfig cfg{.epochs = 4, .batch_size = 4};
  const auto trainer = lab::loo_trainer(task, init, cfg, true, {1, 3});
  std::vector<std::size_t> all(12);
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto c = cfg;
  c.seed = 77;
  const auto r = lab::train(task, init, c);
  lab::Labels labels{task.test_labels[1], task.test_labels[3]};
  datatk::RowMatrix feats(2, 2);
  feats.row(0) = task.test_features.row(1);
  feats.row(1) = task.test_features.row(3);
  EXPECT_EQ(trainer(all, 77), lab::mean_loss(r.model, feats, labels));

  const auto big = lab::generate_task(6, 32, 2, 3.0);
  EXPECT_EQ(kind_of([&] { lab::loo_trainer(big, init, cfg); }), ErrorKind::SubsetBudgetExceeded);
  EXPECT_NO_THROW(lab::loo_trainer(big, init, cfg, false));
  EXPECT_EQ(kind_of([&] { lab::loo_trainer(task, init, cfg, true, {8}); }),
            ErrorKind::IndexOutOfRange);
}

TEST(RetrainHelpersTest, LeastSquaresClosedForm) {
  const auto t = lab::generate_least_squares(3, 6);
  ASSERT_EQ(t.targets.size(), 6u);
  const std::vector<std::size_t> s{0, 2, 5};
  const double mean = (t.targets[0] + t.targets[2] + t.targets[5]) / 3.0;
  EXPECT_NEAR(lab::fit_least_squares(t, s), mean, 1e-12);
  const auto trainer = lab::least_squares_trainer(t);
  EXPECT_NEAR(trainer(s, 0), 0.5 * (t.test_target - mean) * (t.test_target - mean), 1e-12);

  const auto g = lab::least_squares_gradients(t, mean);
  EXPECT_EQ(g.n_train(), 6u);
  EXPECT_EQ(g.train(0)(2, 0), mean - t.targets[2]);
  EXPECT_EQ(g.query(0)(0, 0), mean - t.test_target);
  EXPECT_EQ(kind_of([] { lab::generate_least_squares(0, 0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { lab::least_squares_trainer(lab::generate_least_squares(0, 31)); }),
            ErrorKind::SubsetBudgetExceeded);
}
