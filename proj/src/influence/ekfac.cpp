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

#include <vector>

#include "datatk/error.hpp"
#include "datatk/influence.hpp"
#include "influence/detail.hpp"

namespace datatk {
namespace {

using MatrixMap = Eigen::Map<const RowMatrix>;

// (Q_A ⊗ Q_B)ᵀ x, where x is the row-major flattening of an a x b matrix W.
RowMatrix rotate_in(const Eigen::MatrixXd& qa, const Eigen::MatrixXd& qb, const double* x,
                    std::size_t a, std::size_t b) {
  const MatrixMap w(x, static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return qa.transpose() * w * qb;
}

Vector corrected_diagonal_of(const RowMatrix& grads, const Eigen::MatrixXd& qa,
                             const Eigen::MatrixXd& qb, std::size_t a, std::size_t b,
                             ExecPolicy policy) {
  const Eigen::Index n = grads.rows();
  const int chunks =
      policy.serial() ? 1 : static_cast<int>(std::min<Eigen::Index>(policy.workers, n));
  std::vector<RowMatrix> partial(chunks, RowMatrix::Zero(static_cast<Eigen::Index>(a),
                                                         static_cast<Eigen::Index>(b)));
#pragma omp parallel for schedule(static, 1) num_threads(chunks) if (chunks > 1)
  for (int c = 0; c < chunks; ++c) {
    const Eigen::Index begin = n * c / chunks;
    const Eigen::Index end = n * (c + 1) / chunks;
    for (Eigen::Index j = begin; j < end; ++j) {
      partial[c].array() += rotate_in(qa, qb, grads.row(j).data(), a, b).array().square();
    }
  }
  RowMatrix total = RowMatrix::Zero(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  for (const auto& p : partial) total += p;
  total /= static_cast<double>(n);
  return Eigen::Map<const Vector>(total.data(), total.size());
}

}  // namespace

EkfacInfluence::EkfacInfluence(const GradientStore& store, const FactoredGradients* factored,
                               const DampingVector& damping, ExecPolicy policy)
    : store_(&store), policy_(policy) {
  if (factored == nullptr) {
    throw Error(ErrorKind::MissingFactoredSection,
                "EK-FAC needs activation / pre-activation-gradient factors");
  }
  check_damping(store, damping);
  validate_factors(store, *factored);

  const double n = static_cast<double>(store.n_train());
  layers_.resize(store.num_layers());
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    Layer& layer = layers_[l];
    layer.a = factored->dims[l].activations;
    layer.b = factored->dims[l].preact_grads;
    layer.lambda = damping.lambda[l];

    const Eigen::MatrixXd act_cov = kernels::gram_cols(factored->activations[l], policy) / n;
    const Eigen::MatrixXd pre_cov = kernels::gram_cols(factored->preact_grads[l], policy) / n;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(act_cov);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_b(pre_cov);
    layer.qa = eig_a.eigenvectors();
    layer.qb = eig_b.eigenvectors();
    layer.diag =
        corrected_diagonal_of(store.train(l), layer.qa, layer.qb, layer.a, layer.b, policy);
  }
}

Vector EkfacInfluence::ihvp(std::size_t l, const Vector& v) const {
  const Layer& layer = layers_.at(l);
  RowMatrix rotated = rotate_in(layer.qa, layer.qb, v.data(), layer.a, layer.b);
  const Eigen::Map<const RowMatrix> diag(layer.diag.data(), static_cast<Eigen::Index>(layer.a),
                                         static_cast<Eigen::Index>(layer.b));
  rotated.array() /= diag.array() + layer.lambda;
  const RowMatrix back = layer.qa * rotated * layer.qb.transpose();
  return Eigen::Map<const Vector>(back.data(), back.size());
}

Vector EkfacInfluence::scores(const ValidationAggregate& query) const {
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

Vector ekfac_scores(const GradientStore& store, const FactoredGradients* factored,
                    const ValidationAggregate& query, const DampingVector& damping,
                    ExecPolicy policy) {
  return EkfacInfluence(store, factored, damping, policy).scores(query);
}

}  // namespace datatk
