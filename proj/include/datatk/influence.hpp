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

// Influence estimators over a GradientStore.
//
// All estimators report the signed influence of up-weighting training point
// k on the query loss,
//
//   I(k) = -Σ_l v_lᵀ (G_l + λ_l I)⁻¹ ∇_l ℓ_k,   G_l = n⁻¹ Σ_i ∇_l ℓ_i ∇_l ℓ_iᵀ,
//
// or an approximation of it. Negative scores mark points whose up-weighting
// lowers the query loss.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datatk/grad_store.hpp"
#include "datatk/kernels.hpp"

namespace datatk {

enum class Method { HessianFree, DataInf, Exact, LiSSA, EKFAC, Retraining };

std::string_view method_name(Method method);
// Accepts the CLI spellings: hessian-free, datainf, exact, lissa, ekfac.
std::optional<Method> parse_method(std::string_view name);

struct InfluenceScores {
  Method method = Method::DataInf;
  RowMatrix scores;  // queries x n_train
};

inline constexpr std::size_t kDefaultDimensionCap = 4096;

// ---------------------------------------------------------------------------
// Hessian-free: -Σ_l v_l · ∇_l ℓ_k.

Vector hessian_free_scores(const GradientStore& store, const ValidationAggregate& query,
                           ExecPolicy policy = {});

// ---------------------------------------------------------------------------
// DataInf: replaces (n⁻¹ Σ S_li)⁻¹ by n⁻¹ Σ S_li⁻¹ with S_li = ∇ℓ_i∇ℓ_iᵀ + λ_l I
// and applies Sherman–Morrison to every term. Two streaming passes per layer.

Vector datainf_scores(const GradientStore& store, const ValidationAggregate& query,
                      const DampingVector& damping, ExecPolicy policy = {});

// r_l = n⁻¹ Σ_i S_li⁻¹ v_l for one layer.
Vector datainf_ihvp(const RowMatrix& grads, const Vector& v, double lambda,
                    ExecPolicy policy = {});

// ---------------------------------------------------------------------------
// Exact: SPD solves against G_l + λ_l I.

enum class ExactSolver {
  Auto,    // Dual when d_l > n, primal otherwise.
  Primal,  // Cholesky of the d_l x d_l damped Gram matrix.
  Dual,    // Woodbury: (v - Φᵀ(nλI + ΦΦᵀ)⁻¹Φv)/λ with an n x n Cholesky.
};

struct ExactOptions {
  std::size_t dimension_cap = kDefaultDimensionCap;
  ExactSolver solver = ExactSolver::Auto;
};

/// Factorizes every layer once, then answers any number of queries.
class ExactInfluence {
 public:
  ExactInfluence(const GradientStore& store, const DampingVector& damping,
                 ExactOptions options = {}, ExecPolicy policy = {});

  Vector scores(const ValidationAggregate& query) const;
  // (G_l + λ_l I)⁻¹ v for layer l.
  Vector ihvp(std::size_t layer, const Vector& v) const;

 private:
  struct LayerFactor {
    bool dual = false;
    double lambda = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt;
  };

  const GradientStore* store_;
  ExecPolicy policy_;
  std::vector<LayerFactor> factors_;
};

Vector exact_scores(const GradientStore& store, const ValidationAggregate& query,
                    const DampingVector& damping, ExactOptions options = {},
                    ExecPolicy policy = {});

// ---------------------------------------------------------------------------
// LiSSA: r_0 = v, r_j = v + (I - s(G + λI)) r_{j-1}; the estimate of
// (G + λI)⁻¹v is s·r_J. Matrix-free, O(n d_l) per iteration.

struct LissaConfig {
  int iterations = 10;
  // Uniform rescale s. When unset, each layer uses 1 / (λ_l + max_i ‖∇_l ℓ_i‖²).
  std::optional<double> scaling;
  // Divergence is declared once ‖r_j‖ exceeds this multiple of ‖v_l‖.
  double divergence_factor = 1e6;
};

struct LissaTrace {
  Vector estimate;                // s·r_J
  double scaling = 0.0;           // s actually used
  std::vector<double> residuals;  // ‖(G + λI)s·r_j - v‖ for j = 0..J
};

// Throws Divergence.
LissaTrace lissa_solve(const RowMatrix& grads, const Vector& v, double lambda,
                       const LissaConfig& config, ExecPolicy policy = {},
                       bool record_residuals = false);

// Throws Divergence listing every diverged layer.
Vector lissa_scores(const GradientStore& store, const ValidationAggregate& query,
                    const DampingVector& damping, const LissaConfig& config = {},
                    ExecPolicy policy = {});

// ---------------------------------------------------------------------------
// EK-FAC with the eigenbasis-corrected diagonal.

class EkfacInfluence {
 public:
  // Validates the factored section (MissingFactoredSection when absent,
  // FactorReconstructionMismatch when the Kronecker identity fails).
  EkfacInfluence(const GradientStore& store, const FactoredGradients* factored,
                 const DampingVector& damping, ExecPolicy policy = {});

  Vector scores(const ValidationAggregate& query) const;
  Vector ihvp(std::size_t layer, const Vector& v) const;

  const Eigen::MatrixXd& activation_basis(std::size_t layer) const { return layers_.at(layer).qa; }
  const Eigen::MatrixXd& preact_basis(std::size_t layer) const { return layers_.at(layer).qb; }
  // Λ_i = n⁻¹ Σ_j ((Q_A ⊗ Q_B)ᵀ ∇_l ℓ_j)_i², flat index p·b + q.
  const Vector& corrected_diagonal(std::size_t layer) const { return layers_.at(layer).diag; }

 private:
  struct Layer {
    std::size_t a = 0;
    std::size_t b = 0;
    double lambda = 0.0;
    Eigen::MatrixXd qa;
    Eigen::MatrixXd qb;
    Vector diag;
  };

  const GradientStore* store_;
  ExecPolicy policy_;
  std::vector<Layer> layers_;
};

Vector ekfac_scores(const GradientStore& store, const FactoredGradients* factored,
                    const ValidationAggregate& query, const DampingVector& damping,
                    ExecPolicy policy = {});

// ---------------------------------------------------------------------------
// Retraining oracle.

// Trains on the given training indices and returns the test loss.
// Must be safe to call concurrently.
using SubsetTrainer =
    std::function<double(std::span<const std::size_t> subset, std::uint64_t seed)>;

struct RetrainingOptions {
  std::size_t subset_size = 1;
  // Unset: enumerate every subset of subset_size. Set: sample this many.
  std::optional<std::size_t> num_subsets;
  std::size_t max_subsets = 100000;
  std::uint64_t seed = 0;
  // Pass the same seed to every subset instead of deriving one per subset.
  bool shared_seed = true;
};

// score(i) = mean loss over subsets containing i - mean loss over subsets
// without i. Throws SubsetBudgetExceeded, EmptySide.
Vector retraining_scores(std::size_t n_train, const SubsetTrainer& trainer,
                         const RetrainingOptions& options, ExecPolicy policy = {});

std::uint64_t binomial(std::size_t n, std::size_t k);

// ---------------------------------------------------------------------------
// Gap between inverting the averaged S_li and averaging their inverses.

struct GapReport {
  std::size_t layer = 0;
  std::size_t dim = 0;
  double gap = 0.0;    // ‖S̄⁻¹ - n⁻¹ Σ S_li⁻¹‖₂
  double m_const = 0.0;  // max_i (tr S_li + tr S̄) / d_l
  double bound = 0.0;  // 2 M² d_l² / λ_l³

  bool holds() const noexcept { return gap <= bound; }
};

GapReport approximation_gap(const GradientStore& store, const DampingVector& damping,
                            std::size_t layer, std::size_t dimension_cap = kDefaultDimensionCap);

// ---------------------------------------------------------------------------
// Batch entry point used by the CLI and the experiments.

struct ScoreRequest {
  Method method = Method::DataInf;
  ExactOptions exact;
  LissaConfig lissa;
  ExecPolicy policy;
};

// One row per query aggregate.
InfluenceScores compute_scores(const GradientStore& store, const FactoredGradients* factored,
                               std::span<const ValidationAggregate> queries,
                               const DampingVector& damping, const ScoreRequest& request);

// Throws NonPositiveDamping or ShapeMismatch.
void check_damping(const GradientStore& store, const DampingVector& damping);

}  // namespace datatk
