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

#include "datatk/error.hpp"
#include "datatk/influence.hpp"

namespace datatk {

GapReport approximation_gap(const GradientStore& store, const DampingVector& damping,
                            std::size_t layer, std::size_t dimension_cap) {
  check_damping(store, damping);
  const auto& spec = store.layer(layer);
  if (spec.dim > dimension_cap) {
    std::ostringstream os;
    os << "layer=" << layer << " (" << spec.name << ") dim " << spec.dim << " exceeds cap "
       << dimension_cap;
    throw Error(ErrorKind::DimensionCapExceeded, os.str());
  }

  const RowMatrix& grads = store.train(layer);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const double n = static_cast<double>(store.n_train());
  const double lambda = damping.lambda[layer];
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(d, d);

  // S̄ = G + λI, inverted through its Cholesky factor.
  Eigen::MatrixXd mean_s = kernels::serial::gram_cols(grads) / n;
  mean_s.diagonal().array() += lambda;
  const Eigen::MatrixXd inv_of_mean = mean_s.llt().solve(identity);

  // n⁻¹ Σ S_i⁻¹, each S_i⁻¹ = (I - g gᵀ/(λ + ‖g‖²)) / λ.
  Eigen::MatrixXd mean_of_inv = Eigen::MatrixXd::Zero(d, d);
  double max_sq = 0.0;
  double sum_sq = 0.0;
  for (Eigen::Index i = 0; i < grads.rows(); ++i) {
    const Vector g = grads.row(i).transpose();
    const double sq = g.squaredNorm();
    mean_of_inv.noalias() += (identity - g * g.transpose() / (lambda + sq)) / lambda;
    max_sq = std::max(max_sq, sq);
    sum_sq += sq;
  }
  mean_of_inv /= n;

  const Eigen::MatrixXd diff = inv_of_mean - mean_of_inv;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(diff, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();

  GapReport report;
  report.layer = layer;
  report.dim = spec.dim;
  report.gap = std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
  // tr S_i = ‖g_i‖² + dλ and tr S̄ = n⁻¹ Σ ‖g_i‖² + dλ.
  const double dd = static_cast<double>(spec.dim);
  const double trace_pair = (max_sq + dd * lambda) + (sum_sq / n + dd * lambda);
  report.m_const = trace_pair / dd;
  report.bound = 2.0 * report.m_const * report.m_const * dd * dd / (lambda * lambda * lambda);
  return report;
}

}  // namespace datatk
