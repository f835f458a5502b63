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
#include <limits>
#include <random>

#include "datatk/error.hpp"
#include "datatk/model_lab.hpp"

namespace datatk::lab {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Parameters are (weights, bias); the bias enters through a constant feature.
Vector augment(const Eigen::Ref<const Vector>& x) {
  Vector out(x.size() + 1);
  out << x, 1.0;
  return out;
}

}  // namespace

double LogisticModel::probability(const Eigen::Ref<const Vector>& x) const {
  return sigmoid(weights.dot(x) + bias);
}

LogisticModel fit_logistic(const SyntheticTask& task, int epochs, double learning_rate) {
  const Eigen::Index n = task.features.rows();
  LogisticModel m;
  m.weights = Vector::Zero(task.features.cols());
  for (int e = 0; e < epochs; ++e) {
    Vector gw = Vector::Zero(m.weights.size());
    double gb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = m.probability(task.features.row(i).transpose()) - task.labels[i];
      gw += r * task.features.row(i).transpose();
      gb += r;
    }
    m.weights -= learning_rate / static_cast<double>(n) * gw;
    m.bias -= learning_rate / static_cast<double>(n) * gb;
  }
  return m;
}

BartlettAnalytic bartlett_analytic(const LogisticModel& model, const Eigen::Ref<const Vector>& x) {
  const Vector xa = augment(x);
  const double p = model.probability(x);
  // E_y[(p - y)²] = p (1-p)² + (1-p) p² = p (1-p).
  const double second_moment = p * (1.0 - p) * (1.0 - p) + (1.0 - p) * p * p;
  BartlettAnalytic out;
  out.hessian = p * (1.0 - p) * xa * xa.transpose();
  out.expected_gram = second_moment * xa * xa.transpose();
  return out;
}

BartlettReport bartlett_check(const LogisticModel& model, const SyntheticTask& task,
                              std::size_t mc_samples, std::uint64_t seed, LabelSource source,
                              double z_threshold) {
  if (mc_samples < 2) throw Error(ErrorKind::InvalidArgument, "need at least two samples");
  if (task.n_train() == 0) throw Error(ErrorKind::InvalidArgument, "task has no training points");

  const Eigen::Index d = task.features.cols() + 1;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, task.n_train() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Welford accumulators for the per-sample difference Hessian - gradient outer product.
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const std::size_t i = pick(rng);
    const Vector x = task.features.row(static_cast<Eigen::Index>(i)).transpose();
    const double p = model.probability(x);
    const double y =
        source == LabelSource::Resampled ? (unif(rng) < p ? 1.0 : 0.0) : task.labels[i];
    const Vector xa = augment(x);
    const Eigen::MatrixXd outer = xa * xa.transpose();
    const Eigen::MatrixXd h = p * (1.0 - p) * outer;
    const Eigen::MatrixXd g = (p - y) * (p - y) * outer;
    hess += h;
    gram += g;
    const Eigen::MatrixXd diff = h - g;
    const Eigen::MatrixXd delta = diff - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta.cwiseProduct(diff - mean);
  }
  const double count = static_cast<double>(mc_samples);

  BartlettReport r;
  r.samples = mc_samples;
  r.hessian_mc = hess / count;
  r.gram_mc = gram / count;
  const Eigen::MatrixXd diff = r.hessian_mc - r.gram_mc;
  r.max_abs_diff = diff.cwiseAbs().maxCoeff();
  const Eigen::MatrixXd se = (m2 / (count - 1.0) / count).cwiseSqrt();
  r.max_standard_error = se.maxCoeff();
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      const double dev = std::abs(diff(a, b));
      double z = 0.0;
      if (se(a, b) > 0.0) {
        z = dev / se(a, b);
      } else if (dev > 0.0) {
        z = std::numeric_limits<double>::infinity();
      }
      r.max_z = std::max(r.max_z, z);
    }
  }
  r.violated = r.max_z > z_threshold;
  return r;
}

}  // namespace datatk::lab
