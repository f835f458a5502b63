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
#include "lab/backprop.hpp"

namespace datatk::lab {

RowMatrix LabModel::effective_weight(std::size_t l) const {
  if (!has_adapters()) return base[l].weight;
  return base[l].weight + adapters[l].up * adapters[l].down;
}

std::vector<std::size_t> LabModel::adapter_dims() const {
  std::vector<std::size_t> dims;
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    dims.push_back(static_cast<std::size_t>(adapters[l].up.size() + adapters[l].down.size()));
  }
  return dims;
}

double LabModel::logit(const Eigen::Ref<const Vector>& x) const {
  Vector a = x;
  for (std::size_t l = 0; l < base.size(); ++l) {
    Vector z = effective_weight(l) * a + base[l].bias;
    a = (l + 1 < base.size()) ? Vector(z.array().tanh()) : z;
  }
  return a[0];
}

double LabModel::probability(const Eigen::Ref<const Vector>& x) const {
  return 1.0 / (1.0 + std::exp(-logit(x)));
}

LabModel make_base_model(std::size_t p, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto layer = [&](std::size_t in, std::size_t out) {
    DenseLayer d;
    const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
    d.weight = RowMatrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = scale * normal(rng);
    d.bias = Vector::Zero(static_cast<Eigen::Index>(out));
    return d;
  };
  LabModel m;
  if (hidden == 0) {
    m.base.push_back(layer(p, 1));
  } else {
    m.base.push_back(layer(p, hidden));
    m.base.push_back(layer(hidden, 1));
  }
  return m;
}

LabModel attach_adapters(const LabModel& base, std::size_t rank, std::uint64_t seed) {
  if (rank == 0) throw Error(ErrorKind::InvalidArgument, "adapter rank must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LabModel m = base;
  m.rank = rank;
  m.adapters.clear();
  for (const auto& layer : base.base) {
    const Eigen::Index in = layer.weight.cols();
    const Eigen::Index out = layer.weight.rows();
    Adapter a;
    a.up = RowMatrix::Zero(out, static_cast<Eigen::Index>(rank));
    a.down = RowMatrix(static_cast<Eigen::Index>(rank), in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < a.down.size(); ++i) a.down.data()[i] = scale * normal(rng);
    m.adapters.push_back(std::move(a));
  }
  return m;
}

double binary_nll(double logit, std::uint8_t label) {
  // softplus(z) - y·z, evaluated without overflow.
  const double softplus = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
  return softplus - (label ? logit : 0.0);
}

double mean_loss(const LabModel& model, const RowMatrix& features, const Labels& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    total += binary_nll(model.logit(features.row(i).transpose()), labels[i]);
  }
  return total / static_cast<double>(features.rows());
}

double accuracy(const LabModel& model, const RowMatrix& features, const Labels& labels) {
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const bool predicted = model.logit(features.row(i).transpose()) > 0.0;
    correct += predicted == (labels[i] != 0);
  }
  return static_cast<double>(correct) / static_cast<double>(features.rows());
}

// ---------------------------------------------------------------------------

namespace detail {

Trace backprop(const LabModel& model, const Eigen::Ref<const Vector>& x, std::uint8_t label) {
  const std::size_t num_layers = model.num_layers();
  Trace t;
  t.inputs.resize(num_layers);
  t.deltas.resize(num_layers);
  t.weights.resize(num_layers);

  Vector a = x;
  for (std::size_t l = 0; l < num_layers; ++l) {
    t.inputs[l] = a;
    t.weights[l] = model.effective_weight(l);
    Vector z = t.weights[l] * a + model.base[l].bias;
    a = (l + 1 < num_layers) ? Vector(z.array().tanh()) : z;
  }
  t.logit = a[0];
  t.loss = binary_nll(t.logit, label);
  const double p = 1.0 / (1.0 + std::exp(-t.logit));

  Vector delta(1);
  delta[0] = p - (label ? 1.0 : 0.0);
  for (std::size_t l = num_layers; l-- > 0;) {
    t.deltas[l] = delta;
    if (l > 0) {
      const Vector& h = t.inputs[l];  // tanh output of layer l-1
      delta = (t.weights[l].transpose() * delta).array() * (1.0 - h.array().square());
    }
  }
  return t;
}

ParamGrads param_gradients(const LabModel& model, const Trace& t) {
  ParamGrads g;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const RowMatrix grad_w = t.deltas[l] * t.inputs[l].transpose();
    if (model.has_adapters()) {
      g.push_back(grad_w * model.adapters[l].down.transpose());  // up
      g.push_back(model.adapters[l].up.transpose() * grad_w);    // down
    } else {
      g.push_back(grad_w);
      g.push_back(RowMatrix(t.deltas[l]));
    }
  }
  return g;
}

void apply_step(LabModel& model, const ParamGrads& grads, double step) {
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (model.has_adapters()) {
      model.adapters[l].up -= step * grads[2 * l];
      model.adapters[l].down -= step * grads[2 * l + 1];
    } else {
      model.base[l].weight -= step * grads[2 * l];
      model.base[l].bias -= step * Vector(Eigen::Map<const Vector>(grads[2 * l + 1].data(),
                                                                   grads[2 * l + 1].size()));
    }
  }
}

}  // namespace detail

std::vector<Vector> adapter_gradient(const LabModel& model, const Eigen::Ref<const Vector>& x,
                                     std::uint8_t label) {
  if (!model.has_adapters()) throw Error(ErrorKind::InvalidArgument, "model has no adapters");
  const detail::Trace t = detail::backprop(model, x, label);
  const detail::ParamGrads g = detail::param_gradients(model, t);
  std::vector<Vector> out;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const RowMatrix& up = g[2 * l];
    const RowMatrix& down = g[2 * l + 1];
    Vector flat(up.size() + down.size());
    flat << Eigen::Map<const Vector>(up.data(), up.size()),
        Eigen::Map<const Vector>(down.data(), down.size());
    out.push_back(std::move(flat));
  }
  return out;
}

std::vector<Vector> adapter_parameters(const LabModel& model) {
  std::vector<Vector> out;
  for (const auto& a : model.adapters) {
    Vector flat(a.up.size() + a.down.size());
    flat << Eigen::Map<const Vector>(a.up.data(), a.up.size()),
        Eigen::Map<const Vector>(a.down.data(), a.down.size());
    out.push_back(std::move(flat));
  }
  return out;
}

void set_adapter_parameters(LabModel& model, std::span<const Vector> params) {
  if (params.size() != model.adapters.size()) {
    throw Error(ErrorKind::ShapeMismatch, "adapter parameter count mismatch");
  }
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto& a = model.adapters[l];
    if (params[l].size() != a.up.size() + a.down.size()) {
      throw Error(ErrorKind::ShapeMismatch, "adapter parameter length mismatch");
    }
    Eigen::Map<Vector>(a.up.data(), a.up.size()) = params[l].head(a.up.size());
    Eigen::Map<Vector>(a.down.data(), a.down.size()) = params[l].tail(a.down.size());
  }
}

TrainResult train(const SyntheticTask& task, const LabModel& init, const TrainConfig& config,
                  std::optional<std::span<const std::size_t>> subset) {
  if (!(config.learning_rate >= 0.0) || config.epochs < 0 || config.batch_size == 0) {
    throw Error(ErrorKind::InvalidArgument, "invalid training configuration");
  }
  std::vector<std::size_t> order;
  if (subset) {
    order.assign(subset->begin(), subset->end());
  } else {
    order.resize(task.n_train());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  if (order.empty()) throw Error(ErrorKind::EmptySubset, "no training examples selected");

  TrainResult result;
  result.model = init;
  LabModel& model = result.model;
  std::mt19937_64 rng(config.seed);

  auto batch_gradient = [&](std::span<const std::size_t> batch, double& loss) {
    detail::ParamGrads total;
    loss = 0.0;
    for (std::size_t idx : batch) {
      const auto t = detail::backprop(model, task.features.row(idx).transpose(), task.labels[idx]);
      loss += t.loss;
      auto g = detail::param_gradients(model, t);
      if (total.empty()) {
        total = std::move(g);
      } else {
        for (std::size_t q = 0; q < g.size(); ++q) total[q] += g[q];
      }
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto& g : total) g *= scale;
    loss *= scale;
    return total;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      double loss = 0.0;
      const auto grads = batch_gradient(std::span(order).subspan(start, len), loss);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch + 1) +
                                                  " produced a non-finite loss");
      }
      detail::apply_step(model, grads, config.learning_rate);
    }
    result.test_accuracy.push_back(accuracy(model, task.test_features, task.test_labels));
  }

  std::sort(order.begin(), order.end());
  double loss = 0.0;
  const auto grads = batch_gradient(order, loss);
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "final loss is not finite");
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  result.final_loss = loss;
  result.final_grad_norm = std::sqrt(sq);
  return result;
}

}  // namespace datatk::lab
