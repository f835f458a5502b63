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

#include <numeric>
#include <random>

#include "datatk/error.hpp"
#include "datatk/model_lab.hpp"

namespace datatk::lab {

SubsetTrainer loo_trainer(const SyntheticTask& task, const LabModel& init,
                          const TrainConfig& config, bool exhaustive,
                          std::vector<std::size_t> test_indices) {
  if (exhaustive && task.n_train() > kMaxExhaustiveTrain) {
    throw Error(ErrorKind::SubsetBudgetExceeded,
                std::to_string(task.n_train()) + " training points, exhaustive limit " +
                    std::to_string(kMaxExhaustiveTrain));
  }
  if (test_indices.empty()) {
    test_indices.resize(task.n_test());
    std::iota(test_indices.begin(), test_indices.end(), std::size_t{0});
  }
  RowMatrix features(static_cast<Eigen::Index>(test_indices.size()), task.test_features.cols());
  Labels labels;
  for (std::size_t r = 0; r < test_indices.size(); ++r) {
    if (test_indices[r] >= task.n_test()) {
      throw Error(ErrorKind::IndexOutOfRange, "test index " + std::to_string(test_indices[r]));
    }
    features.row(static_cast<Eigen::Index>(r)) = task.test_features.row(test_indices[r]);
    labels.push_back(task.test_labels[test_indices[r]]);
  }

  // Captured by value: the trainer may outlive the caller's task and run concurrently.
  return [task, init, config, features = std::move(features), labels = std::move(labels)](
             std::span<const std::size_t> subset, std::uint64_t seed) {
    TrainConfig c = config;
    c.seed = seed;
    const TrainResult r = train(task, init, c, subset);
    return mean_loss(r.model, features, labels);
  };
}

LeastSquaresTask generate_least_squares(std::uint64_t seed, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "n must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LeastSquaresTask t;
  const double center = normal(rng);
  for (std::size_t i = 0; i < n; ++i) t.targets.push_back(center + normal(rng));
  t.test_target = center + normal(rng);
  return t;
}

double fit_least_squares(const LeastSquaresTask& task, std::span<const std::size_t> subset,
                         double learning_rate, int epochs) {
  if (subset.empty()) throw Error(ErrorKind::EmptySubset, "no training examples selected");
  double mean = 0.0;
  for (std::size_t i : subset) {
    if (i >= task.targets.size()) {
      throw Error(ErrorKind::IndexOutOfRange, "training index " + std::to_string(i));
    }
    mean += task.targets[i];
  }
  mean /= static_cast<double>(subset.size());
  // The gradient of the mean loss is θ - mean, so each step contracts toward it.
  double theta = 0.0;
  for (int e = 0; e < epochs; ++e) theta -= learning_rate * (theta - mean);
  return theta;
}

SubsetTrainer least_squares_trainer(const LeastSquaresTask& task, double learning_rate,
                                    int epochs, bool exhaustive) {
  if (exhaustive && task.targets.size() > kMaxExhaustiveTrain) {
    throw Error(ErrorKind::SubsetBudgetExceeded,
                std::to_string(task.targets.size()) + " training points, exhaustive limit " +
                    std::to_string(kMaxExhaustiveTrain));
  }
  return [task, learning_rate, epochs](std::span<const std::size_t> subset, std::uint64_t) {
    const double theta = fit_least_squares(task, subset, learning_rate, epochs);
    const double r = task.test_target - theta;
    return 0.5 * r * r;
  };
}

GradientStore least_squares_gradients(const LeastSquaresTask& task, double theta) {
  const auto n = static_cast<Eigen::Index>(task.targets.size());
  RowMatrix train(n, 1), query(1, 1);
  for (Eigen::Index i = 0; i < n; ++i) train(i, 0) = theta - task.targets[i];
  query(0, 0) = theta - task.test_target;
  return GradientStore({{"theta", 1}}, {std::move(train)}, {std::move(query)});
}

}  // namespace datatk::lab
