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

#include <sstream>
#include <vector>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "influence/detail.hpp"

namespace datatk {

ExactInfluence::ExactInfluence(const GradientStore& store, const DampingVector& damping,
                               ExactOptions options, ExecPolicy policy)
    : store_(&store), policy_(policy) {
  check_damping(store, damping);
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    const auto& spec = store.layer(l);
    if (spec.dim > options.dimension_cap) {
      std::ostringstream os;
      os << "layer=" << l << " (" << spec.name << ") dim " << spec.dim << " exceeds cap "
         << options.dimension_cap;
      throw Error(ErrorKind::DimensionCapExceeded, os.str());
    }
  }

  const double n = static_cast<double>(store.n_train());
  factors_.resize(store.num_layers());
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    LayerFactor& f = factors_[l];
    f.lambda = damping.lambda[l];
    const std::size_t d = store.layer(l).dim;
    f.dual = options.solver == ExactSolver::Dual ||
             (options.solver == ExactSolver::Auto && d > store.n_train());
    Eigen::MatrixXd system;
    if (f.dual) {
      system = kernels::gram_rows(store.train(l), policy);
      system.diagonal().array() += n * f.lambda;
    } else {
      system = kernels::gram_cols(store.train(l), policy) / n;
      system.diagonal().array() += f.lambda;
    }
    f.llt.compute(system);
    if (f.llt.info() != Eigen::Success) {
      throw Error(ErrorKind::NonPositiveDamping,
                  "damped Gram matrix of layer " + std::to_string(l) +
                      " is not numerically positive definite");
    }
  }
}

Vector ExactInfluence::ihvp(std::size_t layer, const Vector& v) const {
  const LayerFactor& f = factors_.at(layer);
  if (!f.dual) return f.llt.solve(v);
  const RowMatrix& grads = store_->train(layer);
  std::vector<double> proj(static_cast<std::size_t>(grads.rows()));
  kernels::row_dots(grads, v, proj, policy_);
  const Vector z = f.llt.solve(Eigen::Map<const Vector>(proj.data(), grads.rows()));
  const Vector back = kernels::weighted_row_sum(
      grads, std::span<const double>(z.data(), static_cast<std::size_t>(z.size())), policy_);
  return (v - back) / f.lambda;
}

Vector ExactInfluence::scores(const ValidationAggregate& query) const {
  detail::check_query(*store_, query);
  const std::size_t n = store_->n_train();
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> dots(n);
  for (std::size_t l = 0; l < store_->num_layers(); ++l) {
    const Vector x = ihvp(l, query.v[l]);
    kernels::row_dots(store_->train(l), x, dots, policy_);
    for (std::size_t k = 0; k < n; ++k) scores[k] -= dots[k];
  }
  return scores;
}

Vector exact_scores(const GradientStore& store, const ValidationAggregate& query,
                    const DampingVector& damping, ExactOptions options, ExecPolicy policy) {
  return ExactInfluence(store, damping, options, policy).scores(query);
}

}  // namespace datatk
