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
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "datatk/error.hpp"
#include "datatk/eval.hpp"

namespace datatk::eval {
namespace {

// Stage tags for stage_seed.
enum : std::uint64_t {
  kPretrainTask = 1,
  kBaseInit,
  kPretrainOrder,
  kFlip,
  kAdapterInit,
  kFinetuneOrder,
  kRetrainInit,
  kRetrainOrder,
  kRandomSubset,
};

template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage ") + name + ": " + e.message());
  }
}

struct JobResult {
  std::vector<ReportRow> rows;
  std::map<std::string, double> seconds;
};

// Runs independent jobs, at most `workers` at a time, and returns their
// results in job order. The lowest-index failure is rethrown.
template <class F>
std::vector<JobResult> run_jobs(std::size_t count, int workers, F&& job) {
  std::vector<JobResult> results(count);
  std::vector<std::exception_ptr> failures(count);
  const int threads = std::max(1, workers);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads) if (threads > 1)
  for (std::size_t j = 0; j < count; ++j) {
    try {
      results[j] = job(j);
    } catch (...) {
      failures[j] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return results;
}

ExperimentReport assemble(Experiment e, const ExperimentConfig& config,
                          std::vector<JobResult> jobs) {
  ExperimentReport report;
  report.experiment = std::string(experiment_name(e));
  report.seeds = config.seeds();
  report.provenance = to_json(config);
  for (auto& job : jobs) {
    for (auto& row : job.rows) report.rows.push_back(std::move(row));
    for (const auto& [method, s] : job.seconds) report.wall_time_seconds[method] += s;
  }
  return report;
}

struct Outcome {
  std::string status = "ok";
  RowMatrix scores;  // queries x n_train
  double seconds = 0.0;
};

Outcome score_method(const LabRun& run, Method method,
                     std::span<const ValidationAggregate> queries,
                     const ExperimentConfig& config) {
  ScoreRequest request;
  request.method = method;
  request.exact.dimension_cap = config.dimension_cap;
  request.lissa.iterations = config.lissa_iterations;
  // Parallelism lives at the seed level.
  request.policy = ExecPolicy{1};

  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    out.scores = compute_scores(run.store, nullptr, queries, run.damping, request).scores;
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Divergence:
        out.status = "diverged";
        break;
      case ErrorKind::DimensionCapExceeded:
      case ErrorKind::MissingFactoredSection:
        out.status = "skipped";
        break;
      default:
        throw Error(e.kind(), "stage score (" + std::string(method_name(method)) +
                                  "): " + e.message());
    }
  }
  out.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<Method> methods_for(Experiment e, const ExperimentConfig& config) {
  return config.methods.empty() ? default_methods(e) : config.methods;
}

std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
  return {m.row(r).data(), static_cast<std::size_t>(m.cols())};
}

ReportRow make_row(std::uint64_t seed, std::string method, std::size_t rank,
                   std::string metric, double value, std::string status = "ok") {
  return ReportRow{seed, std::move(method), rank, std::move(metric),
                   status == "ok" ? value : std::nan(""), std::move(status)};
}

double test_accuracy(const LabRun& run) {
  return lab::accuracy(run.trained.model, run.task.test_features, run.task.test_labels);
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stage + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out(num_seeds);
  std::iota(out.begin(), out.end(), seed_base);
  return out;
}

std::vector<Method> default_methods(Experiment e) {
  switch (e) {
    case Experiment::Correlation:
      return {Method::HessianFree, Method::DataInf, Method::LiSSA};
    case Experiment::Mislabel:
      return {Method::HessianFree, Method::DataInf, Method::LiSSA, Method::Exact};
    case Experiment::ClassDetection:
      return {Method::HessianFree, Method::DataInf};
    case Experiment::Selection:
      return {Method::HessianFree, Method::DataInf, Method::LiSSA};
  }
  return {};
}

std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::Correlation:
      return "correlation";
    case Experiment::Mislabel:
      return "mislabel";
    case Experiment::ClassDetection:
      return "class-detection";
    case Experiment::Selection:
      return "selection";
  }
  return "unknown";
}

std::optional<Experiment> parse_experiment(std::string_view name) {
  for (auto e : {Experiment::Correlation, Experiment::Mislabel, Experiment::ClassDetection,
                 Experiment::Selection}) {
    if (experiment_name(e) == name) return e;
  }
  return std::nullopt;
}

std::string experiment_names() { return "correlation, mislabel, class-detection, selection"; }

LabRun prepare_lab(const ExperimentConfig& config, std::uint64_t seed, std::size_t rank) {
  using namespace lab;
  auto [pretrain_task, task] = stage("generate", [&] {
    auto pre = generate_task(stage_seed(seed, kPretrainTask), config.n_train, config.features,
                             config.separation, config.n_test, config.offset);
    auto clean = generate_task(seed, config.n_train, config.features, config.separation,
                               config.n_test, config.offset);
    return std::pair{std::move(pre), flip_labels(clean, config.noise_rate, stage_seed(seed, kFlip))};
  });

  LabModel pretrained = stage("pretrain", [&] {
    TrainConfig c = config.train;
    c.epochs = config.pretrain_epochs;
    c.seed = stage_seed(seed, kPretrainOrder);
    const LabModel base =
        make_base_model(config.features, config.hidden, stage_seed(seed, kBaseInit));
    return train(pretrain_task, base, c).model;
  });

  TrainResult trained = stage("train", [&] {
    TrainConfig c = config.train;
    c.seed = stage_seed(seed, kFinetuneOrder);
    c.rank = rank;
    c.noise_rate = config.noise_rate;
    return train(task, attach_adapters(pretrained, rank, stage_seed(seed, kAdapterInit)), c);
  });

  GradientStore store = stage("extract", [&] { return extract_gradients(task, trained.model); });
  DampingVector damping =
      stage("damping", [&] { return compute_damping(store, config.damping_scale); });
  return LabRun{std::move(task), std::move(pretrained), std::move(trained), std::move(store),
                std::move(damping)};
}

// ---------------------------------------------------------------------------

ExperimentReport run_correlation_experiment(const ExperimentConfig& config) {
  const auto seeds = config.seeds();
  const auto methods = methods_for(Experiment::Correlation, config);
  const std::size_t jobs = seeds.size() * config.ranks.size();

  auto results = run_jobs(jobs, config.workers, [&](std::size_t j) {
    const std::size_t rank = config.ranks[j / seeds.size()];
    const std::uint64_t seed = seeds[j % seeds.size()];
    const LabRun run = prepare_lab(config, seed, rank);
    const ValidationAggregate query = validation_aggregate(run.store);

    JobResult out;
    out.rows.push_back(make_row(seed, "model", rank, "test_accuracy", test_accuracy(run)));
    const Outcome exact = score_method(run, Method::Exact, {&query, 1}, config);
    out.seconds["exact"] += exact.seconds;
    for (Method m : methods) {
      if (m == Method::Exact) continue;
      const std::string name(method_name(m));
      const Outcome o = score_method(run, m, {&query, 1}, config);
      out.seconds[name] += o.seconds;
      if (exact.status != "ok") {
        out.rows.push_back(make_row(seed, name, rank, "pearson_vs_exact", 0.0, "skipped"));
      } else if (o.status != "ok") {
        out.rows.push_back(make_row(seed, name, rank, "pearson_vs_exact", 0.0, o.status));
      } else {
        try {
          out.rows.push_back(make_row(seed, name, rank, "pearson_vs_exact",
                                      pearson(row_span(o.scores, 0), row_span(exact.scores, 0))));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::DegenerateVariance) throw;
          out.rows.push_back(make_row(seed, name, rank, "pearson_vs_exact", 0.0, "degenerate"));
        }
      }
    }
    return out;
  });
  return assemble(Experiment::Correlation, config, std::move(results));
}

ExperimentReport run_mislabel_experiment(const ExperimentConfig& config) {
  const auto seeds = config.seeds();
  const auto methods = methods_for(Experiment::Mislabel, config);

  auto results = run_jobs(seeds.size(), config.workers, [&](std::size_t j) {
    const std::uint64_t seed = seeds[j];
    const LabRun run = prepare_lab(config, seed, config.rank);
    const ValidationAggregate query = validation_aggregate(run.store);

    JobResult out;
    out.rows.push_back(make_row(seed, "model", config.rank, "test_accuracy", test_accuracy(run)));
    for (Method m : methods) {
      const std::string name(method_name(m));
      const Outcome o = score_method(run, m, {&query, 1}, config);
      out.seconds[name] += o.seconds;
      if (o.status != "ok") {
        out.rows.push_back(make_row(seed, name, config.rank, "auc", 0.0, o.status));
        continue;
      }
      std::vector<double> s(row_span(o.scores, 0).begin(), row_span(o.scores, 0).end());
      if (config.absolute_scores) {
        for (auto& v : s) v = std::abs(v);
      }
      try {
        out.rows.push_back(make_row(seed, name, config.rank, "auc", auc(s, run.task.flip_mask)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingleClass) throw;
        out.rows.push_back(make_row(seed, name, config.rank, "auc", 0.0, "skipped"));
      }
    }
    return out;
  });
  return assemble(Experiment::Mislabel, config, std::move(results));
}

ExperimentReport run_class_detection_experiment(const ExperimentConfig& config) {
  const auto seeds = config.seeds();
  const auto methods = methods_for(Experiment::ClassDetection, config);

  auto results = run_jobs(seeds.size(), config.workers, [&](std::size_t j) {
    const std::uint64_t seed = seeds[j];
    const LabRun run = prepare_lab(config, seed, config.rank);
    const std::size_t m = std::min(config.class_queries, run.store.n_query());
    std::vector<ValidationAggregate> queries;
    std::vector<int> query_classes;
    for (std::size_t q = 0; q < m; ++q) {
      queries.push_back(query_row(run.store, q));
      query_classes.push_back(run.task.test_labels[q]);
    }
    const std::vector<int> train_classes(run.task.labels.begin(), run.task.labels.end());

    JobResult out;
    for (Method method : methods) {
      const std::string name(method_name(method));
      const Outcome o = score_method(run, method, queries, config);
      out.seconds[name] += o.seconds;
      if (o.status != "ok") {
        for (const char* metric : {"auc", "recall"}) {
          out.rows.push_back(make_row(seed, name, config.rank, metric, 0.0, o.status));
        }
        continue;
      }
      const ClassDetection cd = class_detection(o.scores, train_classes, query_classes);
      out.rows.push_back(make_row(seed, name, config.rank, "auc", cd.auc_mean));
      out.rows.push_back(make_row(seed, name, config.rank, "auc_sd", cd.auc_sd));
      out.rows.push_back(make_row(seed, name, config.rank, "recall", cd.recall_mean));
      out.rows.push_back(make_row(seed, name, config.rank, "recall_sd", cd.recall_sd));
    }
    return out;
  });
  return assemble(Experiment::ClassDetection, config, std::move(results));
}

ExperimentReport run_selection_experiment(const ExperimentConfig& config) {
  const auto seeds = config.seeds();
  const auto methods = methods_for(Experiment::Selection, config);
  if (!(config.selection_fraction > 0.0 && config.selection_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "selection fraction must lie in (0, 1]");
  }
  if (config.n_test < 2) throw Error(ErrorKind::InvalidArgument, "selection needs n_test >= 2");

  auto results = run_jobs(seeds.size(), config.workers, [&](std::size_t j) {
    const std::uint64_t seed = seeds[j];
    const LabRun run = prepare_lab(config, seed, config.rank);
    const std::size_t n = run.task.n_train();
    const auto keep = static_cast<std::size_t>(
        std::llround(config.selection_fraction * static_cast<double>(n)));
    if (keep == 0) throw Error(ErrorKind::InvalidArgument, "selection keeps no training points");

    // First half of the held-out split drives the query, second half scores accuracy.
    const std::size_t half = run.task.n_test() / 2;
    std::vector<std::size_t> validation(half);
    std::iota(validation.begin(), validation.end(), std::size_t{0});
    const ValidationAggregate query = validation_aggregate(run.store, validation);
    lab::SyntheticTask eval_task = run.task;
    const auto rest = static_cast<Eigen::Index>(run.task.n_test() - half);
    eval_task.test_features = run.task.test_features.bottomRows(rest);
    eval_task.test_labels.assign(run.task.test_labels.begin() + static_cast<std::ptrdiff_t>(half),
                                 run.task.test_labels.end());

    JobResult out;
    auto retrain = [&](const std::string& name,
                       std::optional<std::span<const std::size_t>> subset) {
      lab::TrainConfig c = config.train;
      c.epochs = config.selection_epochs;
      c.seed = stage_seed(seed, kRetrainOrder);
      const auto init =
          lab::attach_adapters(run.pretrained, config.rank, stage_seed(seed, kRetrainInit));
      const auto result = stage("retrain", [&] { return lab::train(eval_task, init, c, subset); });
      for (std::size_t e = 0; e < result.test_accuracy.size(); ++e) {
        out.rows.push_back(make_row(seed, name, config.rank,
                                    "accuracy_epoch_" + std::to_string(e + 1),
                                    result.test_accuracy[e]));
      }
      out.rows.push_back(make_row(seed, name, config.rank, "final_accuracy",
                                  result.test_accuracy.empty() ? std::nan("")
                                                               : result.test_accuracy.back()));
    };

    for (Method m : methods) {
      const std::string name(method_name(m));
      const Outcome o = score_method(run, m, {&query, 1}, config);
      out.seconds[name] += o.seconds;
      if (o.status != "ok") {
        out.rows.push_back(make_row(seed, name, config.rank, "final_accuracy", 0.0, o.status));
        continue;
      }
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return o.scores(0, static_cast<Eigen::Index>(a)) <
               o.scores(0, static_cast<Eigen::Index>(b));
      });
      order.resize(keep);
      std::sort(order.begin(), order.end());
      retrain(name, std::span<const std::size_t>(order));
    }

    std::vector<std::size_t> random(n);
    std::iota(random.begin(), random.end(), std::size_t{0});
    std::mt19937_64 rng(stage_seed(seed, kRandomSubset));
    std::shuffle(random.begin(), random.end(), rng);
    random.resize(keep);
    std::sort(random.begin(), random.end());
    retrain("random", std::span<const std::size_t>(random));
    retrain("full", std::nullopt);
    return out;
  });
  return assemble(Experiment::Selection, config, std::move(results));
}

ExperimentReport run_experiment(Experiment e, const ExperimentConfig& config) {
  switch (e) {
    case Experiment::Correlation:
      return run_correlation_experiment(config);
    case Experiment::Mislabel:
      return run_mislabel_experiment(config);
    case Experiment::ClassDetection:
      return run_class_detection_experiment(config);
    case Experiment::Selection:
      return run_selection_experiment(config);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown experiment");
}

}  // namespace datatk::eval
