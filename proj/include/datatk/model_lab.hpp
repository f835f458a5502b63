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

#pragma once

// Desk-scale model lab: two-Gaussian binary tasks, a frozen perceptron with
// low-rank adapters, per-example gradient extraction and retraining helpers.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "datatk/grad_store.hpp"
#include "datatk/influence.hpp"

namespace datatk::lab {

using Labels = std::vector<std::uint8_t>;

struct SyntheticTask {
  RowMatrix features;  // n x p
  Labels labels;
  RowMatrix test_features;
  Labels test_labels;
  Labels flip_mask;  // 1 where the training label was inverted

  std::size_t n_train() const { return labels.size(); }
  std::size_t n_test() const { return test_labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

// Balanced two-Gaussian classification: unit-covariance clusters whose means
// are `separation` apart along a seed-dependent direction. Their midpoint sits
// `offset` away from the origin; at offset 0 the classes are mirror images,
// which makes per-query gradient similarity blind to the class.
// n_test = 0 means n.
SyntheticTask generate_task(std::uint64_t seed, std::size_t n, std::size_t p, double separation,
                            std::size_t n_test = 0, double offset = 0.0);

// Inverts exactly round(noise_rate · n) training labels chosen without
// replacement. The mask is toggled as well, so a second call with the same
// seed undoes the first.
SyntheticTask flip_labels(const SyntheticTask& task, double noise_rate, std::uint64_t seed);

// Restricts the training split to `indices` (order preserved).
SyntheticTask subset_task(const SyntheticTask& task, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------

struct DenseLayer {
  RowMatrix weight;  // out x in
  Vector bias;
};

struct Adapter {
  RowMatrix up;    // out x r
  RowMatrix down;  // r x in
};

/// Frozen dense layers with tanh between them and a single output logit.
/// When adapters are attached, every layer carries one and the effective
/// weight is weight + up · down; only adapter entries are trained.
struct LabModel {
  std::vector<DenseLayer> base;
  std::vector<Adapter> adapters;
  std::size_t rank = 0;

  std::size_t num_layers() const { return base.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(base.front().weight.cols()); }
  bool has_adapters() const { return !adapters.empty(); }

  RowMatrix effective_weight(std::size_t l) const;
  // r · (d_in + d_out) per adapted layer.
  std::vector<std::size_t> adapter_dims() const;

  double logit(const Eigen::Ref<const Vector>& x) const;
  double probability(const Eigen::Ref<const Vector>& x) const;
};

// p -> hidden -> 1 with Xavier-style init; hidden = 0 gives a single p -> 1 layer.
LabModel make_base_model(std::size_t p, std::size_t hidden, std::uint64_t seed);

// Returns a copy with rank-r adapters: down ~ N(0, 1/d_in), up = 0.
LabModel attach_adapters(const LabModel& base, std::size_t rank, std::uint64_t seed);

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double noise_rate = 0.2;
  std::size_t rank = 4;
};

struct TrainResult {
  LabModel model;
  double final_loss = 0.0;
  // ‖∇‖₂ of the full-batch training loss w.r.t. the trained parameters.
  double final_grad_norm = 0.0;
  std::vector<double> test_accuracy;  // after each epoch
};

// Mini-batch gradient descent on the mean binary negative log-likelihood.
// Adapter entries are trained when present, base weights otherwise.
// `subset` restricts training to those indices. Throws NonFiniteLoss.
TrainResult train(const SyntheticTask& task, const LabModel& init, const TrainConfig& config,
                  std::optional<std::span<const std::size_t>> subset = std::nullopt);

double binary_nll(double logit, std::uint8_t label);
double mean_loss(const LabModel& model, const RowMatrix& features, const Labels& labels);
double accuracy(const LabModel& model, const RowMatrix& features, const Labels& labels);

// Flattened adapter gradient of one example, one vector per layer laid out
// as [up (row-major), down (row-major)].
std::vector<Vector> adapter_gradient(const LabModel& model, const Eigen::Ref<const Vector>& x,
                                     std::uint8_t label);

// Flattened adapter parameters in the same layout.
std::vector<Vector> adapter_parameters(const LabModel& model);
void set_adapter_parameters(LabModel& model, std::span<const Vector> params);

// Per-example adapter gradients: train rows from the training split (with its
// current labels), query rows from the test split. Layers "layer<l>.lora".
GradientStore extract_gradients(const SyntheticTask& task, const LabModel& model);

// Full base-weight gradients with their Kronecker factors (input activation,
// pre-activation gradient). Layer l is flattened as weightᵀ so the row equals
// activation ⊗ preact_grad. Layers "layer<l>.weight".
Dump extract_weight_gradients(const SyntheticTask& task, const LabModel& model);

// ---------------------------------------------------------------------------
// Bartlett's second identity for a logistic model p = σ(w·x).

struct LogisticModel {
  Vector weights;
  double bias = 0.0;

  double probability(const Eigen::Ref<const Vector>& x) const;
};

LogisticModel fit_logistic(const SyntheticTask& task, int epochs, double learning_rate);

enum class LabelSource {
  Resampled,  // y ~ Bernoulli(p(x)) under the model itself
  Observed,   // the task's own labels
};

struct BartlettReport {
  Eigen::MatrixXd hessian_mc;   // mean of ∇²ℓ over samples
  Eigen::MatrixXd gram_mc;      // mean of ∇ℓ∇ℓᵀ over samples
  double max_abs_diff = 0.0;    // max entry of |hessian_mc - gram_mc|
  double max_standard_error = 0.0;
  double max_z = 0.0;           // max entry of |diff| / standard error
  bool violated = false;        // max_z above the threshold
  std::size_t samples = 0;
};

struct BartlettAnalytic {
  Eigen::MatrixXd hessian;        // p(1-p) x xᵀ
  Eigen::MatrixXd expected_gram;  // E_y[(p-y)²] x xᵀ
};

BartlettAnalytic bartlett_analytic(const LogisticModel& model, const Eigen::Ref<const Vector>& x);

BartlettReport bartlett_check(const LogisticModel& model, const SyntheticTask& task,
                              std::size_t mc_samples, std::uint64_t seed,
                              LabelSource source = LabelSource::Resampled,
                              double z_threshold = 5.0);

// ---------------------------------------------------------------------------
// Retraining helpers.

inline constexpr std::size_t kMaxExhaustiveTrain = 30;

// Trains `init` on each requested subset with `config` and returns the mean
// test loss over `test_indices` (all test points when empty). Exhaustive mode
// refuses tasks with more than kMaxExhaustiveTrain training points.
SubsetTrainer loo_trainer(const SyntheticTask& task, const LabModel& init,
                          const TrainConfig& config, bool exhaustive = true,
                          std::vector<std::size_t> test_indices = {});

// 1-D least squares: ℓ(y, θ) = ½ (y - θ)², the Gaussian negative log-likelihood.
struct LeastSquaresTask {
  std::vector<double> targets;
  double test_target = 0.0;
};

LeastSquaresTask generate_least_squares(std::uint64_t seed, std::size_t n);

// Gradient descent from θ = 0 on the subset's mean squared loss.
double fit_least_squares(const LeastSquaresTask& task, std::span<const std::size_t> subset,
                         double learning_rate = 0.5, int epochs = 200);

SubsetTrainer least_squares_trainer(const LeastSquaresTask& task, double learning_rate = 0.5,
                                    int epochs = 200, bool exhaustive = true);

// Single layer "theta" (d = 1): train rows θ - y_i, query row θ - y*.
GradientStore least_squares_gradients(const LeastSquaresTask& task, double theta);

}  // namespace datatk::lab
