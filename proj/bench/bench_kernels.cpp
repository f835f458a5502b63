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


// Serial vs OpenMP kernels, and DataInf vs Exact scoring cost.
//
//   ./datatk_bench --benchmark_filter=SM     # Sherman-Morrison pass only

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "datatk/influence.hpp"
#include "datatk/kernels.hpp"

namespace {

using datatk::RowMatrix;
using datatk::Vector;

RowMatrix random_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

datatk::GradientStore random_store(std::size_t n, std::size_t per_layer) {
  std::vector<datatk::LayerSpec> layers{{"a", per_layer}, {"b", per_layer}};
  const auto n_i = static_cast<Eigen::Index>(n);
  const auto d_i = static_cast<Eigen::Index>(per_layer);
  std::vector<RowMatrix> train{random_rows(n_i, d_i, 1), random_rows(n_i, d_i, 2)};
  std::vector<RowMatrix> query{random_rows(1, d_i, 3), random_rows(1, d_i, 4)};
  return datatk::GradientStore(layers, train, query);
}

// state.range(0): rows, range(1): dim, range(2): workers (0 = serial kernel).
void BM_SM(benchmark::State& state) {
  const RowMatrix g = random_rows(state.range(0), state.range(1));
  const Vector v = Vector::Ones(state.range(1));
  const int workers = static_cast<int>(state.range(2));
  for (auto _ : state) {
    Vector r = workers == 0 ? datatk::kernels::serial::sherman_morrison_sum(g, v, 0.1)
                            : datatk::kernels::omp::sherman_morrison_sum(g, v, 0.1, workers);
    benchmark::DoNotOptimize(r.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_RowDots(benchmark::State& state) {
  const RowMatrix g = random_rows(state.range(0), state.range(1));
  const Vector v = Vector::Ones(state.range(1));
  std::vector<double> out(static_cast<std::size_t>(state.range(0)));
  const int workers = static_cast<int>(state.range(2));
  for (auto _ : state) {
    if (workers == 0) {
      datatk::kernels::serial::row_dots(g, v, out);
    } else {
      datatk::kernels::omp::row_dots(g, v, out, workers);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_GramCols(benchmark::State& state) {
  const RowMatrix g = random_rows(state.range(0), state.range(1));
  const int workers = static_cast<int>(state.range(2));
  for (auto _ : state) {
    Eigen::MatrixXd m = workers == 0 ? datatk::kernels::serial::gram_cols(g)
                                     : datatk::kernels::omp::gram_cols(g, workers);
    benchmark::DoNotOptimize(m.data());
  }
}

void KernelArgs(benchmark::internal::Benchmark* b) {
  for (int workers : {0, 1, 2, 4}) {
    b->Args({4096, 256, workers});
    b->Args({500, 1024, workers});
  }
}

// Total dimension D split over two layers, n = 500.
void BM_DataInfScores(benchmark::State& state) {
  const auto store = random_store(500, static_cast<std::size_t>(state.range(0) / 2));
  const auto damping = datatk::compute_damping(store);
  const auto q = datatk::validation_aggregate(store);
  for (auto _ : state) benchmark::DoNotOptimize(datatk::datainf_scores(store, q, damping).data());
}

void BM_ExactScores(benchmark::State& state) {
  const auto store = random_store(500, static_cast<std::size_t>(state.range(0) / 2));
  const auto damping = datatk::compute_damping(store);
  const auto q = datatk::validation_aggregate(store);
  const datatk::ExactOptions opts{.solver = datatk::ExactSolver::Primal};
  for (auto _ : state) {
    benchmark::DoNotOptimize(datatk::exact_scores(store, q, damping, opts).data());
  }
}

}  // namespace

BENCHMARK(BM_SM)->Apply(KernelArgs);
BENCHMARK(BM_RowDots)->Apply(KernelArgs);
BENCHMARK(BM_GramCols)->Args({2000, 128, 0})->Args({2000, 128, 1})->Args({2000, 128, 2})->Args({2000, 128, 4});
BENCHMARK(BM_DataInfScores)->Arg(512)->Arg(1024)->Arg(2048)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactScores)->Arg(512)->Arg(1024)->Arg(2048)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
