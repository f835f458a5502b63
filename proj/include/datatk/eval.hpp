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

// Evaluation metrics and the end-to-end experiment pipelines that run on the
// model lab.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "datatk/influence.hpp"
#include "datatk/model_lab.hpp"

namespace datatk::eval {

// ---------------------------------------------------------------------------
// Metrics.

// Sample Pearson correlation. Throws ShapeMismatch, DegenerateVariance.
double pearson(std::span<const double> a, std::span<const double> b);

// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of the average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

// P(score_pos > score_neg) + ½ P(tie), over all positive/negative pairs.
// Throws ShapeMismatch, SingleClass.
double auc(std::span<const double> scores, std::span<const std::uint8_t> positives);

struct ClassDetection {
  std::vector<double> auc;     // per query
  std::vector<double> recall;  // per query
  double auc_mean = 0.0;
  double auc_sd = 0.0;
  double recall_mean = 0.0;
  double recall_sd = 0.0;
};

// `scores` is queries x n_train. For every query, training points of the same
// class are positives; AUC ranks the negated scores, and recall is the share
// of positives among the s most negative scores, s = size of the query's
// class in the training set. Standard deviations use the n-1 denominator.
// Throws UnknownClass (query class absent from training), SingleClass.
ClassDetection class_detection(const RowMatrix& scores, std::span<const int> train_classes,
                               std::span<const int> query_classes);

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double standard_error = 0.0;  // sd / sqrt(count), 0 when count < 2
  double ci_half_width = 0.0;   // normal-approximation 95%
};

Summary summarize(std::span<const double> values);

// ---------------------------------------------------------------------------
// Experiments.

enum class Experiment { Correlation, Mislabel, ClassDetection, Selection };

std::string_view experiment_name(Experiment e);
std::optional<Experiment> parse_experiment(std::string_view name);
// "correlation, mislabel, class-detection, selection"
std::string experiment_names();

struct ExperimentConfig {
  std::size_t num_seeds = 20;
  std::uint64_t seed_base = 0;
  std::vector<std::size_t> ranks{1, 2, 4};  // correlation sweep
  std::size_t rank = 4;                     // every other experiment

  std::size_t n_train = 200;
  std::size_t n_test = 200;
  std::size_t features = 8;
  std::size_t hidden = 16;
  double separation = 3.0;
  double offset = 2.0;
  double noise_rate = 0.2;

  int pretrain_epochs = 20;
  lab::TrainConfig train;  // fine-tuning of the adapters

  double damping_scale = 0.1;
  int lissa_iterations = 10;
  std::size_t dimension_cap = kDefaultDimensionCap;

  // Empty selects the experiment's default method list.
  std::vector<Method> methods;
  // Rank mislabel candidates by |score| instead of the signed score.
  bool absolute_scores = false;

  double selection_fraction = 0.7;
  int selection_epochs = 10;

  // Test points used as individual queries in class detection.
  std::size_t class_queries = 50;

  int workers = 1;

  std::vector<std::uint64_t> seeds() const;
};

std::vector<Method> default_methods(Experiment e);

nlohmann::ordered_json to_json(const ExperimentConfig& config);

struct ReportRow {
  std::uint64_t seed = 0;
  std::string method;
  std::size_t rank = 0;
  std::string metric;
  double value = 0.0;
  // ok, diverged, skipped or degenerate; value is meaningful only for ok.
  std::string status = "ok";
};

struct ExperimentReport {
  std::string experiment;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  std::map<std::string, double> wall_time_seconds;  // summed over seeds
  // Echoed verbatim into both outputs; defaults to to_json(config).
  nlohmann::ordered_json provenance;

  // Values of the ok rows matching the key, in row order.
  std::vector<double> values(std::string_view method, std::string_view metric,
                             std::size_t rank) const;
  Summary summary(std::string_view method, std::string_view metric, std::size_t rank) const;

  nlohmann::ordered_json to_json() const;
  // Comment line with version and provenance, then
  // seed,method,rank,metric,value,status. Contains no timings.
  void write_csv(std::ostream& out) const;
};

// One seed of the lab pipeline: generate, pretrain the base on a clean task,
// flip labels, fine-tune adapters, extract gradients, compute damping.
struct LabRun {
  lab::SyntheticTask task;  // noisy training split
  lab::LabModel pretrained;
  lab::TrainResult trained;
  GradientStore store;
  DampingVector damping;
};

LabRun prepare_lab(const ExperimentConfig& config, std::uint64_t seed, std::size_t rank);

// Deterministic child seed for a named pipeline stage.
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage);

ExperimentReport run_correlation_experiment(const ExperimentConfig& config);
ExperimentReport run_mislabel_experiment(const ExperimentConfig& config);
ExperimentReport run_class_detection_experiment(const ExperimentConfig& config);
ExperimentReport run_selection_experiment(const ExperimentConfig& config);

ExperimentReport run_experiment(Experiment e, const ExperimentConfig& config);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace datatk::eval
