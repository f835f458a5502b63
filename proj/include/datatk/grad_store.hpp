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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace datatk {

// Row i of a gradient block is the flattened gradient of example i.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct LayerSpec {
  std::string name;
  std::size_t dim = 0;

  bool operator==(const LayerSpec&) const = default;
};

/// Per-layer training and query gradients.
///
/// Immutable once constructed; the constructor enforces shape agreement,
/// unique layer names and finiteness of every entry, so any live instance
/// is valid and may be shared read-only between workers.
class GradientStore {
 public:
  GradientStore(std::vector<LayerSpec> layers, std::vector<RowMatrix> train,
                std::vector<RowMatrix> query);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t n_train() const noexcept { return n_train_; }
  std::size_t n_query() const noexcept { return n_query_; }

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t l) const { return layers_.at(l); }

  const RowMatrix& train(std::size_t l) const { return train_.at(l); }
  const RowMatrix& query(std::size_t l) const { return query_.at(l); }

  std::size_t max_dim() const noexcept;
  std::size_t total_dim() const noexcept;

  bool operator==(const GradientStore&) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<RowMatrix> train_;
  std::vector<RowMatrix> query_;
  std::size_t n_train_ = 0;
  std::size_t n_query_ = 0;
};

struct FactorDims {
  std::size_t activations = 0;   // a_l
  std::size_t preact_grads = 0;  // b_l

  bool operator==(const FactorDims&) const = default;
};

/// Activation / pre-activation-gradient pairs for Kronecker-structured layers.
///
/// The train gradient row of example i at layer l must equal the Kronecker
/// product activations(i) ⊗ preact_grads(i), i.e. flat index p*b + q holds
/// activations(i, p) * preact_grads(i, q).
struct FactoredGradients {
  std::vector<FactorDims> dims;
  std::vector<RowMatrix> activations;   // n_train x a_l
  std::vector<RowMatrix> preact_grads;  // n_train x b_l

  bool operator==(const FactoredGradients&) const;
};

inline constexpr double kFactorTolerance = 1e-5;

// Throws ShapeMismatch or FactorReconstructionMismatch.
void validate_factors(const GradientStore& store, const FactoredGradients& factored,
                      double tolerance = kFactorTolerance);

struct DampingVector {
  std::vector<double> lambda;

  static DampingVector uniform(std::size_t num_layers, double value);
};

struct ValidationAggregate {
  std::vector<Vector> v;  // one vector per layer
};

// λ_l = scale · (n·d_l)^{-1} · Σ_i ‖∇_l ℓ_i‖².
DampingVector compute_damping(const GradientStore& store, double scale = 0.1);

// Mean of the selected query rows per layer; all rows when `subset` is empty.
ValidationAggregate validation_aggregate(
    const GradientStore& store,
    std::optional<std::span<const std::size_t>> subset = std::nullopt);

// Convenience: the aggregate for a single query row.
ValidationAggregate query_row(const GradientStore& store, std::size_t j);

// ---------------------------------------------------------------------------
// Dump file format.
//
//   "DINFGRD1" | u32 LE header length | UTF-8 JSON header |
//   per layer: train (n_train x dim), query (n_query x dim),
//              [activations (n_train x a), preact grads (n_train x b)]
//
// All blocks are row-major little-endian float32.

inline constexpr char kDumpMagic[8] = {'D', 'I', 'N', 'F', 'G', 'R', 'D', '1'};
inline constexpr int kDumpVersion = 1;

struct DumpHeader {
  int version = kDumpVersion;
  std::size_t n_train = 0;
  std::size_t n_query = 0;
  std::vector<LayerSpec> layers;
  bool factored = false;
  std::vector<FactorDims> factor_dims;
};

struct Dump {
  GradientStore store;
  std::optional<FactoredGradients> factored;
};

DumpHeader read_dump_header(const std::filesystem::path& path);
Dump load_dump(const std::filesystem::path& path);

// Values are rounded to float32 on write.
void save_dump(const GradientStore& store, const FactoredGradients* factored,
               const std::filesystem::path& path);

}  // namespace datatk
