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

// Row-streaming kernels shared by the influence estimators.
//
// Every kernel has a serial reference in kernels::serial and an OpenMP
// version in kernels::omp. The dispatching overloads in kernels:: pick the
// serial path when policy.workers <= 1, which makes single-worker runs
// bit-reproducible. The OpenMP reductions split rows into `workers` static
// chunks and combine partials in chunk order, so results are reproducible
// for a fixed worker count and agree with the serial path to rounding.

#include <cstddef>
#include <span>

#include "datatk/grad_store.hpp"

namespace datatk {

struct ExecPolicy {
  int workers = 1;

  bool serial() const noexcept { return workers <= 1; }
};

// Worker count from DATATK_WORKERS, or 1 when unset/invalid.
int workers_from_env();

namespace kernels {

namespace serial {

// out[i] = rows.row(i) · x
void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out);
// out[i] = ‖rows.row(i)‖²
void row_sq_norms(const RowMatrix& rows, std::span<double> out);
// Σ_i weights[i] · rows.row(i)
Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights);
// Σ_i (v·g_i)/(λ + ‖g_i‖²) · g_i, one streaming pass over the rows.
Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda);
// rowsᵀ·rows (d x d) and rows·rowsᵀ (n x n), full symmetric storage.
Eigen::MatrixXd gram_cols(const RowMatrix& rows);
Eigen::MatrixXd gram_rows(const RowMatrix& rows);

}  // namespace serial

namespace omp {

void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out, int workers);
void row_sq_norms(const RowMatrix& rows, std::span<double> out, int workers);
Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights, int workers);
Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda, int workers);
Eigen::MatrixXd gram_cols(const RowMatrix& rows, int workers);
Eigen::MatrixXd gram_rows(const RowMatrix& rows, int workers);

}  // namespace omp

void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out, ExecPolicy policy);
void row_sq_norms(const RowMatrix& rows, std::span<double> out, ExecPolicy policy);
Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights,
                        ExecPolicy policy);
Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda,
                            ExecPolicy policy);
Eigen::MatrixXd gram_cols(const RowMatrix& rows, ExecPolicy policy);
Eigen::MatrixXd gram_rows(const RowMatrix& rows, ExecPolicy policy);

}  // namespace kernels
}  // namespace datatk
