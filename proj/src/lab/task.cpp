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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "datatk/error.hpp"
#include "datatk/model_lab.hpp"

namespace datatk::lab {
namespace {

void fill_split(std::mt19937_64& rng, const Vector& direction, const Vector& center,
                double separation, std::size_t count, RowMatrix& features, Labels& labels) {
  std::normal_distribution<double> normal(0.0, 1.0);
  labels.assign(count, 0);
  for (std::size_t i = 0; i < count / 2; ++i) labels[i] = 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  const auto p = direction.size();
  features.resize(static_cast<Eigen::Index>(count), p);
  for (std::size_t i = 0; i < count; ++i) {
    const double sign = labels[i] ? 0.5 : -0.5;
    for (Eigen::Index j = 0; j < p; ++j) {
      features(static_cast<Eigen::Index>(i), j) =
          center[j] + sign * separation * direction[j] + normal(rng);
    }
  }
}

}  // namespace

SyntheticTask generate_task(std::uint64_t seed, std::size_t n, std::size_t p, double separation,
                            std::size_t n_test, double offset) {
  if (n < 4 || n % 2 != 0) throw Error(ErrorKind::InvalidArgument, "n must be even and >= 4");
  if (p < 1) throw Error(ErrorKind::InvalidArgument, "p must be positive");
  if (n_test == 0) n_test = n;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector direction(static_cast<Eigen::Index>(p));
  for (auto& c : direction) c = normal(rng);
  direction.normalize();

  // Midpoint of the class means, orthogonal to the class direction when p > 1.
  Vector center(static_cast<Eigen::Index>(p));
  for (auto& c : center) c = normal(rng);
  if (p > 1) center -= center.dot(direction) * direction;
  center = offset * center.normalized();

  SyntheticTask task;
  fill_split(rng, direction, center, separation, n, task.features, task.labels);
  fill_split(rng, direction, center, separation, n_test, task.test_features, task.test_labels);
  task.flip_mask.assign(n, 0);
  return task;
}

SyntheticTask flip_labels(const SyntheticTask& task, double noise_rate, std::uint64_t seed) {
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "noise rate must lie in [0, 1)");
  }
  const std::size_t n = task.n_train();
  const auto count = static_cast<std::size_t>(std::llround(noise_rate * static_cast<double>(n)));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  SyntheticTask out = task;
  if (out.flip_mask.size() != n) out.flip_mask.assign(n, 0);
  for (std::size_t i = 0; i < count; ++i) {
    out.labels[pool[i]] ^= 1;
    out.flip_mask[pool[i]] ^= 1;
  }
  return out;
}

SyntheticTask subset_task(const SyntheticTask& task, std::span<const std::size_t> indices) {
  SyntheticTask out;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), task.features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= task.n_train()) {
      throw Error(ErrorKind::IndexOutOfRange, "training index " + std::to_string(indices[r]));
    }
    out.features.row(static_cast<Eigen::Index>(r)) = task.features.row(indices[r]);
    out.labels.push_back(task.labels[indices[r]]);
    out.flip_mask.push_back(task.flip_mask.empty() ? 0 : task.flip_mask[indices[r]]);
  }
  out.test_features = task.test_features;
  out.test_labels = task.test_labels;
  return out;
}

}  // namespace datatk::lab
