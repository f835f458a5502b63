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
#include <sstream>
#include <vector>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "influence/detail.hpp"

namespace datatk {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::HessianFree: return "hessian-free";
    case Method::DataInf: return "datainf";
    case Method::Exact: return "exact";
    case Method::LiSSA: return "lissa";
    case Method::EKFAC: return "ekfac";
    case Method::Retraining: return "retraining";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::HessianFree, Method::DataInf, Method::Exact, Method::LiSSA,
                   Method::EKFAC, Method::Retraining}) {
    if (name == method_name(m)) return m;
  }
  return std::nullopt;
}

void check_damping(const GradientStore& store, const DampingVector& damping) {
  if (damping.lambda.size() != store.num_layers()) {
    throw Error(ErrorKind::ShapeMismatch, "damping has " + std::to_string(damping.lambda.size()) +
                                              " entries for " +
                                              std::to_string(store.num_layers()) + " layers");
  }
  for (std::size_t l = 0; l < damping.lambda.size(); ++l) {
    const double lambda = damping.lambda[l];
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
      std::ostringstream os;
      os << "layer=" << l << " (" << store.layer(l).name << ") lambda=" << lambda;
      throw Error(ErrorKind::NonPositiveDamping, os.str());
    }
  }
}

namespace detail {

void check_query(const GradientStore& store, const ValidationAggregate& query) {
  if (query.v.size() != store.num_layers()) {
    throw Error(ErrorKind::ShapeMismatch, "query aggregate does not cover every layer");
  }
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    if (static_cast<std::size_t>(query.v[l].size()) != store.layer(l).dim) {
      throw Error(ErrorKind::ShapeMismatch,
                  "query vector for layer " + std::to_string(l) + " has wrong length");
    }
  }
}

}  // namespace detail

using detail::check_query;

Vector hessian_free_scores(const GradientStore& store, const ValidationAggregate& query,
                           ExecPolicy policy) {
  check_query(store, query);
  const std::size_t n = store.n_train();
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> dots(n);
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    kernels::row_dots(store.train(l), query.v[l], dots, policy);
    for (std::size_t k = 0; k < n; ++k) scores[k] -= dots[k];
  }
  return scores;
}

Vector datainf_ihvp(const RowMatrix& grads, const Vector& v, double lambda, ExecPolicy policy) {
  // Step 2: r = (nλ)⁻¹ Σ_i (v - c_i g_i) with c_i = v·g_i / (λ + ‖g_i‖²).
  const double n = static_cast<double>(grads.rows());
  const Vector acc = kernels::sherman_morrison_sum(grads, v, lambda, policy);
  return (v - acc / n) / lambda;
}

Vector datainf_scores(const GradientStore& store, const ValidationAggregate& query,
                      const DampingVector& damping, ExecPolicy policy) {
  check_query(store, query);
  check_damping(store, damping);
  const std::size_t n = store.n_train();
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> dots(n);
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    const Vector r = datainf_ihvp(store.train(l), query.v[l], damping.lambda[l], policy);
    // Step 3: I(k) -= r_l · ∇_l ℓ_k.
    kernels::row_dots(store.train(l), r, dots, policy);
    for (std::size_t k = 0; k < n; ++k) scores[k] -= dots[k];
  }
  return scores;
}

InfluenceScores compute_scores(const GradientStore& store, const FactoredGradients* factored,
                               std::span<const ValidationAggregate> queries,
                               const DampingVector& damping, const ScoreRequest& request) {
  InfluenceScores out;
  out.method = request.method;
  out.scores.resize(static_cast<Eigen::Index>(queries.size()),
                    static_cast<Eigen::Index>(store.n_train()));

  auto fill = [&](auto&& per_query) {
    for (std::size_t j = 0; j < queries.size(); ++j) {
      out.scores.row(static_cast<Eigen::Index>(j)) = per_query(queries[j]).transpose();
    }
  };

  switch (request.method) {
    case Method::HessianFree:
      fill([&](const ValidationAggregate& q) { return hessian_free_scores(store, q, request.policy); });
      break;
    case Method::DataInf:
      check_damping(store, damping);
      fill([&](const ValidationAggregate& q) {
        return datainf_scores(store, q, damping, request.policy);
      });
      break;
    case Method::Exact: {
      const ExactInfluence exact(store, damping, request.exact, request.policy);
      fill([&](const ValidationAggregate& q) { return exact.scores(q); });
      break;
    }
    case Method::LiSSA:
      fill([&](const ValidationAggregate& q) {
        return lissa_scores(store, q, damping, request.lissa, request.policy);
      });
      break;
    case Method::EKFAC: {
      const EkfacInfluence ekfac(store, factored, damping, request.policy);
      fill([&](const ValidationAggregate& q) { return ekfac.scores(q); });
      break;
    }
    case Method::Retraining:
      throw Error(ErrorKind::InvalidArgument,
                  "retraining scores need a trainer, not a gradient store");
  }
  return out;
}

}  // namespace datatk
