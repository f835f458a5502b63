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

#include "datatk/error.hpp"
#include "datatk/model_lab.hpp"
#include "lab/backprop.hpp"

namespace datatk::lab {

GradientStore extract_gradients(const SyntheticTask& task, const LabModel& model) {
  if (!model.has_adapters()) throw Error(ErrorKind::InvalidArgument, "model has no adapters");
  const auto dims = model.adapter_dims();
  const auto n = static_cast<Eigen::Index>(task.n_train());
  const auto m = static_cast<Eigen::Index>(task.n_test());

  std::vector<LayerSpec> layers;
  std::vector<RowMatrix> train, query;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    layers.push_back({"layer" + std::to_string(l) + ".lora", dims[l]});
    train.emplace_back(n, static_cast<Eigen::Index>(dims[l]));
    query.emplace_back(m, static_cast<Eigen::Index>(dims[l]));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto g = adapter_gradient(model, task.features.row(i).transpose(), task.labels[i]);
    for (std::size_t l = 0; l < g.size(); ++l) train[l].row(i) = g[l].transpose();
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto g =
        adapter_gradient(model, task.test_features.row(j).transpose(), task.test_labels[j]);
    for (std::size_t l = 0; l < g.size(); ++l) query[l].row(j) = g[l].transpose();
  }
  return GradientStore(std::move(layers), std::move(train), std::move(query));
}

Dump extract_weight_gradients(const SyntheticTask& task, const LabModel& model) {
  const std::size_t num_layers = model.num_layers();
  const auto n = static_cast<Eigen::Index>(task.n_train());
  const auto m = static_cast<Eigen::Index>(task.n_test());

  std::vector<LayerSpec> layers;
  std::vector<RowMatrix> train, query;
  FactoredGradients factored;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto in = static_cast<std::size_t>(model.base[l].weight.cols());
    const auto out = static_cast<std::size_t>(model.base[l].weight.rows());
    layers.push_back({"layer" + std::to_string(l) + ".weight", in * out});
    factored.dims.push_back({in, out});
    train.emplace_back(n, static_cast<Eigen::Index>(in * out));
    query.emplace_back(m, static_cast<Eigen::Index>(in * out));
    factored.activations.emplace_back(n, static_cast<Eigen::Index>(in));
    factored.preact_grads.emplace_back(n, static_cast<Eigen::Index>(out));
  }

  // Row-major flattening of (δ xᵀ)ᵀ = x δᵀ puts x_p δ_q at p·out + q.
  auto flatten = [](const Vector& act, const Vector& delta, auto row) {
    const auto b = delta.size();
    for (Eigen::Index p = 0; p < act.size(); ++p) {
      for (Eigen::Index q = 0; q < b; ++q) row[p * b + q] = act[p] * delta[q];
    }
  };

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = detail::backprop(model, task.features.row(i).transpose(), task.labels[i]);
    for (std::size_t l = 0; l < num_layers; ++l) {
      flatten(t.inputs[l], t.deltas[l], train[l].row(i));
      factored.activations[l].row(i) = t.inputs[l].transpose();
      factored.preact_grads[l].row(i) = t.deltas[l].transpose();
    }
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto t =
        detail::backprop(model, task.test_features.row(j).transpose(), task.test_labels[j]);
    for (std::size_t l = 0; l < num_layers; ++l) flatten(t.inputs[l], t.deltas[l], query[l].row(j));
  }
  return Dump{GradientStore(std::move(layers), std::move(train), std::move(query)),
              std::move(factored)};
}

}  // namespace datatk::lab
