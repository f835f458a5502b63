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
#include <set>

#include "datatk/error.hpp"
#include "datatk/eval.hpp"

namespace datatk::eval {
namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorKind::ShapeMismatch, "pearson needs two equal-length vectors of length >= 2");
  }
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw Error(ErrorKind::DegenerateVariance, "pearson input has zero variance");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "spearman length mismatch");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) {
    throw Error(ErrorKind::ShapeMismatch, "auc scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::size_t num_pos = 0;
  for (auto p : positives) num_pos += p != 0;
  const std::size_t num_neg = n - num_pos;
  if (num_pos == 0 || num_neg == 0) {
    throw Error(ErrorKind::SingleClass, "auc needs at least one positive and one negative");
  }
  // Rank-sum form of the Mann–Whitney statistic; average ranks count ties as ½.
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i]) rank_sum += ranks[i];
  }
  const double pos = static_cast<double>(num_pos);
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return u / (pos * static_cast<double>(num_neg));
}

ClassDetection class_detection(const RowMatrix& scores, std::span<const int> train_classes,
                               std::span<const int> query_classes) {
  const std::size_t n = train_classes.size();
  if (static_cast<std::size_t>(scores.cols()) != n ||
      static_cast<std::size_t>(scores.rows()) != query_classes.size()) {
    throw Error(ErrorKind::ShapeMismatch, "score matrix does not match the class vectors");
  }
  if (query_classes.empty()) throw Error(ErrorKind::ShapeMismatch, "no queries");
  const std::set<int> known(train_classes.begin(), train_classes.end());

  ClassDetection out;
  std::vector<double> negated(n);
  std::vector<std::uint8_t> same(n);
  std::vector<std::size_t> order(n);
  for (std::size_t q = 0; q < query_classes.size(); ++q) {
    const int cls = query_classes[q];
    if (!known.count(cls)) {
      throw Error(ErrorKind::UnknownClass,
                  "query " + std::to_string(q) + " has class " + std::to_string(cls) +
                      " which no training point carries");
    }
    std::size_t s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      negated[i] = -scores(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(i));
      same[i] = train_classes[i] == cls;
      s += same[i];
    }
    out.auc.push_back(auc(negated, same));

    // s most negative scores; ties broken by training index.
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return negated[x] > negated[y]; });
    std::size_t hits = 0;
    for (std::size_t k = 0; k < s; ++k) hits += same[order[k]];
    out.recall.push_back(static_cast<double>(hits) / static_cast<double>(s));
  }
  out.auc_mean = mean_of(out.auc);
  out.auc_sd = sample_sd(out.auc);
  out.recall_mean = mean_of(out.recall);
  out.recall_sd = sample_sd(out.recall);
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = mean_of(values);
  if (values.size() >= 2) {
    s.standard_error = sample_sd(values) / std::sqrt(static_cast<double>(values.size()));
    s.ci_half_width = 1.959963984540054 * s.standard_error;
  }
  return s;
}

}  // namespace datatk::eval
