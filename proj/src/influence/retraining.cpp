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
#include <exception>
#include <numeric>
#include <random>
#include <vector>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"

namespace datatk {

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  // Saturates instead of overflowing; callers only compare against a budget.
  constexpr std::uint64_t kMax = ~std::uint64_t{0};
  std::uint64_t result = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::uint64_t num = n - k + i;
    if (result > kMax / num) return kMax;
    result = result * num / i;
  }
  return result;
}

namespace {

std::vector<std::vector<std::size_t>> enumerate_subsets(std::size_t n, std::size_t m) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    out.push_back(idx);
    // Advance to the next combination in lexicographic order.
    std::size_t pos = m;
    while (pos > 0 && idx[pos - 1] == n - m + (pos - 1)) --pos;
    if (pos == 0) break;
    ++idx[pos - 1];
    for (std::size_t q = pos; q < m; ++q) idx[q] = idx[q - 1] + 1;
  }
  return out;
}

std::vector<std::vector<std::size_t>> sample_subsets(std::size_t n, std::size_t m,
                                                     std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(n);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    // Partial Fisher–Yates: the first m entries form the subset.
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<std::size_t> subset(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(subset.begin(), subset.end());
    out.push_back(std::move(subset));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

Vector retraining_scores(std::size_t n_train, const SubsetTrainer& trainer,
                         const RetrainingOptions& options, ExecPolicy policy) {
  const std::size_t m = options.subset_size;
  if (n_train == 0 || m == 0 || m > n_train) {
    throw Error(ErrorKind::InvalidArgument, "subset size must lie in [1, n]");
  }

  std::vector<std::vector<std::size_t>> subsets;
  if (options.num_subsets) {
    if (*options.num_subsets > options.max_subsets) {
      throw Error(ErrorKind::SubsetBudgetExceeded,
                  std::to_string(*options.num_subsets) + " subsets requested, budget " +
                      std::to_string(options.max_subsets));
    }
    subsets = sample_subsets(n_train, m, *options.num_subsets, options.seed);
  } else {
    const std::uint64_t total = binomial(n_train, m);
    if (total > options.max_subsets) {
      throw Error(ErrorKind::SubsetBudgetExceeded,
                  "C(" + std::to_string(n_train) + "," + std::to_string(m) + ") = " +
                      std::to_string(total) + " exceeds budget " +
                      std::to_string(options.max_subsets));
    }
    subsets = enumerate_subsets(n_train, m);
  }

  const std::size_t count = subsets.size();
  std::vector<double> losses(count);
  const int workers = policy.serial() ? 1 : policy.workers;
  std::vector<std::exception_ptr> failures(count);
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers) if (workers > 1)
  for (std::size_t s = 0; s < count; ++s) {
    const std::uint64_t seed = options.shared_seed ? options.seed : derive_seed(options.seed, s);
    try {
      losses[s] = trainer(subsets[s], seed);
    } catch (...) {
      failures[s] = std::current_exception();
    }
  }
  // Rethrow the lowest-index failure so the error does not depend on scheduling.
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::vector<double> sum_in(n_train, 0.0), sum_out(n_train, 0.0);
  std::vector<std::size_t> cnt_in(n_train, 0);
  double total_loss = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    total_loss += losses[s];
    for (std::size_t i : subsets[s]) {
      sum_in[i] += losses[s];
      ++cnt_in[i];
    }
  }
  Vector scores(static_cast<Eigen::Index>(n_train));
  for (std::size_t i = 0; i < n_train; ++i) {
    const std::size_t cnt_out = count - cnt_in[i];
    if (cnt_in[i] == 0 || cnt_out == 0) {
      throw Error(ErrorKind::EmptySide, "training point " + std::to_string(i) + " appears in " +
                                            (cnt_in[i] == 0 ? "no" : "every") + " subset");
    }
    sum_out[i] = total_loss - sum_in[i];
    scores[static_cast<Eigen::Index>(i)] =
        sum_in[i] / static_cast<double>(cnt_in[i]) - sum_out[i] / static_cast<double>(cnt_out);
  }
  return scores;
}

}  // namespace datatk
