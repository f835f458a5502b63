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

#include "datatk/kernels.hpp"

#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace datatk {

int workers_from_env() {
  const char* env = std::getenv("DATATK_WORKERS");
  if (env == nullptr) return 1;
  try {
    const int w = std::stoi(env);
    return w >= 1 ? w : 1;
  } catch (...) {
    return 1;
  }
}

namespace kernels {

namespace serial {

void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out[i] = rows.row(i).dot(x.transpose());
}

void row_sq_norms(const RowMatrix& rows, std::span<double> out) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out[i] = rows.row(i).squaredNorm();
}

Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights) {
  Vector acc = Vector::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) acc += weights[i] * rows.row(i).transpose();
  return acc;
}

Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda) {
  Vector acc = Vector::Zero(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const auto g = rows.row(i);
    const double c = g.dot(v.transpose()) / (lambda + g.squaredNorm());
    acc += c * g.transpose();
  }
  return acc;
}

Eigen::MatrixXd gram_cols(const RowMatrix& rows) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(rows.cols(), rows.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

Eigen::MatrixXd gram_rows(const RowMatrix& rows) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(rows.rows(), rows.rows());
  g.selfadjointView<Eigen::Lower>().rankUpdate(rows);
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

}  // namespace serial

namespace omp {
namespace {

struct Chunk {
  Eigen::Index begin;
  Eigen::Index end;
};

Chunk chunk_of(Eigen::Index n, int chunks, int c) {
  return {n * c / chunks, n * (c + 1) / chunks};
}

int clamp_workers(Eigen::Index n, int workers) {
  if (n < 1) return 1;
  return static_cast<int>(std::min<Eigen::Index>(workers, n));
}

}  // namespace

void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out, int workers) {
  const Eigen::Index n = rows.rows();
#pragma omp parallel for schedule(static) num_threads(workers)
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rows.row(i).dot(x.transpose());
}

void row_sq_norms(const RowMatrix& rows, std::span<double> out, int workers) {
  const Eigen::Index n = rows.rows();
#pragma omp parallel for schedule(static) num_threads(workers)
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rows.row(i).squaredNorm();
}

Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights, int workers) {
  const int chunks = clamp_workers(rows.rows(), workers);
  std::vector<Vector> partial(chunks, Vector::Zero(rows.cols()));
#pragma omp parallel for schedule(static, 1) num_threads(chunks)
  for (int c = 0; c < chunks; ++c) {
    const auto [begin, end] = chunk_of(rows.rows(), chunks, c);
    for (Eigen::Index i = begin; i < end; ++i) partial[c] += weights[i] * rows.row(i).transpose();
  }
  Vector acc = Vector::Zero(rows.cols());
  for (const auto& p : partial) acc += p;
  return acc;
}

Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda, int workers) {
  const int chunks = clamp_workers(rows.rows(), workers);
  std::vector<Vector> partial(chunks, Vector::Zero(rows.cols()));
#pragma omp parallel for schedule(static, 1) num_threads(chunks)
  for (int c = 0; c < chunks; ++c) {
    const auto [begin, end] = chunk_of(rows.rows(), chunks, c);
    for (Eigen::Index i = begin; i < end; ++i) {
      const auto g = rows.row(i);
      const double coeff = g.dot(v.transpose()) / (lambda + g.squaredNorm());
      partial[c] += coeff * g.transpose();
    }
  }
  Vector acc = Vector::Zero(rows.cols());
  for (const auto& p : partial) acc += p;
  return acc;
}

Eigen::MatrixXd gram_cols(const RowMatrix& rows, int workers) {
  const int chunks = clamp_workers(rows.rows(), workers);
  const Eigen::Index d = rows.cols();
  std::vector<Eigen::MatrixXd> partial(chunks);
#pragma omp parallel for schedule(static, 1) num_threads(chunks)
  for (int c = 0; c < chunks; ++c) {
    const auto [begin, end] = chunk_of(rows.rows(), chunks, c);
    partial[c] = Eigen::MatrixXd::Zero(d, d);
    partial[c].selfadjointView<Eigen::Lower>().rankUpdate(
        rows.middleRows(begin, end - begin).transpose());
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, d);
  for (const auto& p : partial) g.triangularView<Eigen::Lower>() += p;
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

Eigen::MatrixXd gram_rows(const RowMatrix& rows, int workers) {
  const Eigen::Index n = rows.rows();
  Eigen::MatrixXd g(n, n);
  // Entry-wise: each dot product is computed whole, so this matches the
  // serial kernel up to the inner-product evaluation order.
#pragma omp parallel for schedule(dynamic, 8) num_threads(workers)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      g(i, j) = rows.row(i).dot(rows.row(j));
      g(j, i) = g(i, j);
    }
  }
  return g;
}

}  // namespace omp

void row_dots(const RowMatrix& rows, const Vector& x, std::span<double> out, ExecPolicy policy) {
  if (policy.serial()) return serial::row_dots(rows, x, out);
  omp::row_dots(rows, x, out, policy.workers);
}

void row_sq_norms(const RowMatrix& rows, std::span<double> out, ExecPolicy policy) {
  if (policy.serial()) return serial::row_sq_norms(rows, out);
  omp::row_sq_norms(rows, out, policy.workers);
}

Vector weighted_row_sum(const RowMatrix& rows, std::span<const double> weights,
                        ExecPolicy policy) {
  if (policy.serial()) return serial::weighted_row_sum(rows, weights);
  return omp::weighted_row_sum(rows, weights, policy.workers);
}

Vector sherman_morrison_sum(const RowMatrix& rows, const Vector& v, double lambda,
                            ExecPolicy policy) {
  if (policy.serial()) return serial::sherman_morrison_sum(rows, v, lambda);
  return omp::sherman_morrison_sum(rows, v, lambda, policy.workers);
}

Eigen::MatrixXd gram_cols(const RowMatrix& rows, ExecPolicy policy) {
  if (policy.serial()) return serial::gram_cols(rows);
  return omp::gram_cols(rows, policy.workers);
}

Eigen::MatrixXd gram_rows(const RowMatrix& rows, ExecPolicy policy) {
  if (policy.serial()) return serial::gram_rows(rows);
  return omp::gram_rows(rows, policy.workers);
}

}  // namespace kernels
}  // namespace datatk
