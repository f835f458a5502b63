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
#include <sstream>
#include <vector>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "influence/detail.hpp"

namespace datatk {
namespace {

// (G + λI) x with G = n⁻¹ Φᵀ Φ, via the two-pass identity.
Vector damped_gram_apply(const RowMatrix& grads, const Vector& x, double lambda,
                         std::vector<double>& scratch, ExecPolicy policy) {
  const double n = static_cast<double>(grads.rows());
  kernels::row_dots(grads, x, scratch, policy);
  for (double& s : scratch) s /= n;
  return kernels::weighted_row_sum(grads, scratch, policy) + lambda * x;
}

}  // namespace

LissaTrace lissa_solve(const RowMatrix& grads, const Vector& v, double lambda,
                       const LissaConfig& config, ExecPolicy policy, bool record_residuals) {
  if (config.iterations < 1) {
    throw Error(ErrorKind::InvalidArgument, "LiSSA needs at least one iteration");
  }
  if (!(lambda > 0.0)) throw Error(ErrorKind::NonPositiveDamping, "LiSSA lambda must be positive");

  std::vector<double> scratch(static_cast<std::size_t>(grads.rows()));
  LissaTrace trace;
  if (config.scaling) {
    if (!(*config.scaling > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "LiSSA scaling must be positive");
    }
    trace.scaling = *config.scaling;
  } else {
    kernels::row_sq_norms(grads, scratch, policy);
    const double max_sq = *std::max_element(scratch.begin(), scratch.end());
    trace.scaling = 1.0 / (lambda + max_sq);
  }
  const double s = trace.scaling;
  const double limit = config.divergence_factor * v.norm();

  auto residual = [&](const Vector& r) {
    return (damped_gram_apply(grads, Vector(s * r), lambda, scratch, policy) - v).norm();
  };

  Vector r = v;
  if (record_residuals) trace.residuals.push_back(residual(r));
  for (int j = 1; j <= config.iterations; ++j) {
    const Vector hr = damped_gram_apply(grads, r, lambda, scratch, policy);
    r = v + r - s * hr;
    const double norm = r.norm();
    if (!std::isfinite(norm) || norm > limit) {
      std::ostringstream os;
      os << "iteration " << j << ": |r| = " << norm << " exceeds " << config.divergence_factor
         << " x |v| = " << limit << " (scaling " << s << ")";
      throw Error(ErrorKind::Divergence, os.str());
    }
    if (record_residuals) trace.residuals.push_back(residual(r));
  }
  trace.estimate = s * r;
  return trace;
}

Vector lissa_scores(const GradientStore& store, const ValidationAggregate& query,
                    const DampingVector& damping, const LissaConfig& config, ExecPolicy policy) {
  detail::check_query(store, query);
  check_damping(store, damping);
  const std::size_t n = store.n_train();
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> dots(n);
  std::ostringstream failures;
  bool diverged = false;
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    try {
      const LissaTrace trace =
          lissa_solve(store.train(l), query.v[l], damping.lambda[l], config, policy);
      kernels::row_dots(store.train(l), trace.estimate, dots, policy);
      for (std::size_t k = 0; k < n; ++k) scores[k] -= dots[k];
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Divergence) throw;
      failures << (diverged ? "; " : "") << "layer=" << l << " (" << store.layer(l).name
               << ") " << e.message();
      diverged = true;
    }
  }
  if (diverged) throw Error(ErrorKind::Divergence, failures.str());
  return scores;
}

}  // namespace datatk
