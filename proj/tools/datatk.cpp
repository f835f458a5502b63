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

// datatk command-line entry point.
//
//   datatk compute --input g.dinf --method datainf --out scores.csv
//   datatk experiment mislabel --seeds 20 --rank 4 --out-prefix report
//   datatk inspect g.dinf
//   datatk make-dump --out g.dinf --seed 3 --rank 2 [--full-weights]
//
// Every command also accepts --config file.json with flat keys named after
// the long flags; flags given on the command line win.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "datatk/error.hpp"
#include "datatk/eval.hpp"
#include "datatk/grad_store.hpp"
#include "datatk/influence.hpp"
#include "datatk/kernels.hpp"
#include "datatk/model_lab.hpp"

namespace {

using datatk::Error;
using datatk::ErrorKind;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case datatk::ErrorCategory::Validation:
      return kExitValidation;
    case datatk::ErrorCategory::Numeric:
      return kExitNumeric;
    case datatk::ErrorCategory::Io:
      return kExitIo;
  }
  return kExitValidation;
}

// ---------------------------------------------------------------------------
// Config file merge.

std::string scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return datatk::eval::format_double(v.get<double>());
  return v.dump();
}

bool flag_present(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Appends "--key value" for every config entry whose flag is absent from args.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open config file " + path);
  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, "config file " + path + ": " + e.what());
  }
  if (!cfg.is_object()) {
    throw Error(ErrorKind::InvalidArgument, "config file " + path + " must hold a JSON object");
  }
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (key == "config" || flag_present(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& item : value) joined += (joined.empty() ? "" : ",") + scalar_text(item);
      args.push_back(flag);
      args.push_back(joined);
    } else {
      args.push_back(flag);
      args.push_back(scalar_text(value));
    }
  }
  return args;
}

// Resolved values of every option of a subcommand, for provenance.
json resolved_options(const CLI::App& cmd) {
  json out;
  out["command"] = cmd.get_name();
  for (const CLI::Option* opt : cmd.get_options()) {
    std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    if (opt->get_type_size() == 0) {
      out[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& results = opt->results();
      out[name] = results.size() == 1 ? json(results.front()) : json(results);
    } else {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

std::string comment_line(const json& config) {
  return std::string("# datatk ") + DATATK_VERSION + " config=" + config.dump();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
  out << text;
  out.close();
  if (!out) throw Error(ErrorKind::IoError, "write to " + path + " failed");
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::size_t> split_indices(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// compute

struct ComputeArgs {
  std::string input;
  std::string method;
  std::string out;
  std::string sidecar;
  double damping_scale = 0.1;
  int lissa_iters = 10;
  double lissa_scale = 0.0;
  std::size_t dimension_cap = datatk::kDefaultDimensionCap;
  std::string solver = "auto";
  std::string query = "mean";
  std::string query_indices;
};

int cmd_compute(const ComputeArgs& a, int workers, const json& config) {
  const auto method = datatk::parse_method(a.method);
  if (!method || *method == datatk::Method::Retraining) {
    throw Error(ErrorKind::InvalidArgument,
                "unknown method '" + a.method + "' (hessian-free, datainf, exact, lissa, ekfac)");
  }
  if (a.query != "mean" && a.query != "each") {
    throw Error(ErrorKind::InvalidArgument, "--query must be mean or each");
  }

  auto start = std::chrono::steady_clock::now();
  const datatk::Dump dump = datatk::load_dump(a.input);
  const double load_seconds = seconds_since(start);
  const auto& store = dump.store;

  std::vector<std::size_t> selected = split_indices(a.query_indices, "query index");
  if (selected.empty()) {
    for (std::size_t j = 0; j < store.n_query(); ++j) selected.push_back(j);
  }
  std::vector<datatk::ValidationAggregate> queries;
  if (a.query == "mean") {
    queries.push_back(datatk::validation_aggregate(store, selected));
  } else {
    for (std::size_t j : selected) queries.push_back(datatk::query_row(store, j));
  }

  datatk::ScoreRequest request;
  request.method = *method;
  request.policy = datatk::ExecPolicy{workers};
  request.exact.dimension_cap = a.dimension_cap;
  if (a.solver == "auto") {
    request.exact.solver = datatk::ExactSolver::Auto;
  } else if (a.solver == "primal") {
    request.exact.solver = datatk::ExactSolver::Primal;
  } else if (a.solver == "dual") {
    request.exact.solver = datatk::ExactSolver::Dual;
  } else {
    throw Error(ErrorKind::InvalidArgument, "--solver must be auto, primal or dual");
  }
  request.lissa.iterations = a.lissa_iters;
  if (a.lissa_scale > 0.0) request.lissa.scaling = a.lissa_scale;

  const datatk::DampingVector damping = datatk::compute_damping(store, a.damping_scale);
  start = std::chrono::steady_clock::now();
  const auto result = datatk::compute_scores(
      store, dump.factored ? &*dump.factored : nullptr, queries, damping, request);
  const double score_seconds = seconds_since(start);

  std::string csv = comment_line(config) + "\nquery_index,train_index,score\n";
  for (Eigen::Index q = 0; q < result.scores.rows(); ++q) {
    const std::string qi =
        std::to_string(a.query == "mean" ? static_cast<std::size_t>(q) : selected[q]);
    for (Eigen::Index k = 0; k < result.scores.cols(); ++k) {
      csv += qi + ',' + std::to_string(k) + ',' +
             datatk::eval::format_double(result.scores(q, k)) + '\n';
    }
  }
  write_text(a.out, csv);

  json side;
  side["tool"] = "datatk";
  side["version"] = DATATK_VERSION;
  side["config"] = config;
  side["method"] = a.method;
  side["n_train"] = store.n_train();
  side["queries"] = result.scores.rows();
  json layers = json::array();
  for (std::size_t l = 0; l < store.num_layers(); ++l) {
    layers.push_back({{"name", store.layer(l).name},
                      {"dim", store.layer(l).dim},
                      {"damping", damping.lambda[l]}});
  }
  side["layers"] = layers;
  side["timings"] = {{"load_seconds", load_seconds}, {"score_seconds", score_seconds}};
  write_text(a.sidecar.empty() ? a.out + ".json" : a.sidecar, side.dump(2) + "\n");

  std::cerr << "datatk: wrote " << result.scores.rows() * result.scores.cols() << " scores to "
            << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment / make-dump share the lab flags.

struct LabArgs {
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  std::string ranks = "1,2,4";
  std::size_t rank = 4;
  std::string methods;
};

void add_lab_options(CLI::App* cmd, datatk::eval::ExperimentConfig& c, LabArgs& a) {
  cmd->add_option("--seed", a.seed, "First seed")->capture_default_str();
  cmd->add_option("--rank", a.rank, "Adapter rank")->capture_default_str();
  cmd->add_option("--n-train", c.n_train, "Training points")->capture_default_str();
  cmd->add_option("--n-test", c.n_test, "Held-out points")->capture_default_str();
  cmd->add_option("--features", c.features, "Input dimension")->capture_default_str();
  cmd->add_option("--hidden", c.hidden, "Hidden width (0: single layer)")->capture_default_str();
  cmd->add_option("--separation", c.separation, "Distance between class means")
      ->capture_default_str();
  cmd->add_option("--offset", c.offset, "Distance of the class midpoint from the origin")
      ->capture_default_str();
  cmd->add_option("--noise-rate", c.noise_rate, "Share of flipped training labels")
      ->capture_default_str();
  cmd->add_option("--pretrain-epochs", c.pretrain_epochs, "Base model epochs")
      ->capture_default_str();
  cmd->add_option("--learning-rate", c.train.learning_rate, "Adapter learning rate")
      ->capture_default_str();
  cmd->add_option("--epochs", c.train.epochs, "Adapter epochs")->capture_default_str();
  cmd->add_option("--batch-size", c.train.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--damping-scale", c.damping_scale, "Damping scale")->capture_default_str();
}

void finish_lab_config(datatk::eval::ExperimentConfig& c, const LabArgs& a, int workers) {
  c.num_seeds = a.seeds;
  c.seed_base = a.seed;
  c.rank = a.rank;
  c.ranks = split_indices(a.ranks, "rank");
  c.workers = workers;
  c.methods.clear();
  std::stringstream ss(a.methods);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto m = datatk::parse_method(item);
    if (!m || *m == datatk::Method::EKFAC || *m == datatk::Method::Retraining) {
      throw Error(ErrorKind::InvalidArgument,
                  "unknown experiment method '" + item + "' (hessian-free, datainf, exact, lissa)");
    }
    c.methods.push_back(*m);
  }
  if (c.n_train < 4 || c.n_train % 2 != 0 || c.features == 0 || c.train.epochs < 0 ||
      c.train.batch_size == 0 || c.rank == 0 || c.num_seeds == 0) {
    throw Error(ErrorKind::InvalidArgument, "invalid lab parameters");
  }
  for (std::size_t r : c.ranks) {
    if (r == 0) throw Error(ErrorKind::InvalidArgument, "ranks must be positive");
  }
}

int cmd_experiment(const std::string& name, datatk::eval::ExperimentConfig config,
                   const std::string& prefix, const json& resolved) {
  const auto experiment = datatk::eval::parse_experiment(name);
  if (!experiment) {
    throw Error(ErrorKind::InvalidArgument, "unknown experiment '" + name +
                                                "'; valid names: " +
                                                datatk::eval::experiment_names());
  }
  auto report = datatk::eval::run_experiment(*experiment, config);
  report.provenance = resolved;

  std::ostringstream csv;
  report.write_csv(csv);
  write_text(prefix + ".csv", csv.str());
  write_text(prefix + ".json", report.to_json().dump(2) + "\n");
  std::cerr << "datatk: " << name << " finished, " << report.rows.size() << " rows in " << prefix
            << ".csv\n";
  return kExitOk;
}

int cmd_make_dump(const datatk::eval::ExperimentConfig& config, const std::string& out,
                  bool full_weights, const json& resolved) {
  const auto run = datatk::eval::prepare_lab(config, config.seed_base, config.rank);
  if (full_weights) {
    const auto dump = datatk::lab::extract_weight_gradients(run.task, run.trained.model);
    datatk::save_dump(dump.store, &*dump.factored, out);
  } else {
    datatk::save_dump(run.store, nullptr, out);
  }
  json side;
  side["tool"] = "datatk";
  side["version"] = DATATK_VERSION;
  side["config"] = resolved;
  side["test_accuracy"] = datatk::lab::accuracy(run.trained.model, run.task.test_features,
                                                run.task.test_labels);
  side["flip_mask"] = run.task.flip_mask;
  write_text(out + ".json", side.dump(2) + "\n");
  std::cerr << "datatk: wrote " << out << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const auto h = datatk::read_dump_header(path);
  json j;
  j["version"] = h.version;
  j["n_train"] = h.n_train;
  j["n_query"] = h.n_query;
  json layers = json::array();
  for (const auto& l : h.layers) layers.push_back({{"name", l.name}, {"dim", l.dim}});
  j["layers"] = layers;
  j["factored"] = h.factored;
  if (h.factored) {
    json dims = json::array();
    for (const auto& d : h.factor_dims) {
      dims.push_back({{"activations", d.activations}, {"preact_grads", d.preact_grads}});
    }
    j["factor_dims"] = dims;
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  args = merge_config(std::move(args));

  CLI::App app{"Influence estimation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DATATK_VERSION);

  int workers = datatk::workers_from_env();
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--workers", workers, "Parallel workers (default: DATATK_WORKERS or 1)")
        ->capture_default_str();
    cmd->add_option("--config", config_path, "JSON file with flat flag-name keys");
  };

  ComputeArgs compute;
  auto* c_cmd = app.add_subcommand("compute", "Score training points from a gradient dump");
  c_cmd->add_option("--input", compute.input, "Gradient dump")->required();
  c_cmd->add_option("--method", compute.method, "hessian-free, datainf, exact, lissa, ekfac")
      ->required();
  c_cmd->add_option("--out", compute.out, "Scores CSV")->required();
  c_cmd->add_option("--sidecar", compute.sidecar, "JSON sidecar (default: <out>.json)");
  c_cmd->add_option("--damping-scale", compute.damping_scale, "Damping scale")
      ->capture_default_str();
  c_cmd->add_option("--lissa-iters", compute.lissa_iters, "LiSSA iterations")
      ->capture_default_str();
  c_cmd->add_option("--lissa-scale", compute.lissa_scale, "LiSSA scaling (0: per-layer default)")
      ->capture_default_str();
  c_cmd->add_option("--dimension-cap", compute.dimension_cap, "Largest layer Exact will factor")
      ->capture_default_str();
  c_cmd->add_option("--solver", compute.solver, "Exact solver: auto, primal, dual")
      ->capture_default_str();
  c_cmd->add_option("--query", compute.query, "mean (one aggregate) or each (per query row)")
      ->capture_default_str();
  c_cmd->add_option("--query-indices", compute.query_indices,
                    "Comma-separated query rows (default: all)");
  add_common(c_cmd);

  datatk::eval::ExperimentConfig exp_config;
  LabArgs exp_args;
  std::string exp_name;
  std::string exp_prefix = "report";
  auto* e_cmd = app.add_subcommand("experiment", "Run an evaluation pipeline on the model lab");
  e_cmd->add_option("name", exp_name, datatk::eval::experiment_names())->required();
  e_cmd->add_option("--seeds", exp_args.seeds, "Number of seeds")->capture_default_str();
  e_cmd->add_option("--ranks", exp_args.ranks, "Rank sweep for correlation")
      ->capture_default_str();
  e_cmd->add_option("--methods", exp_args.methods, "Comma-separated methods (default per experiment)");
  e_cmd->add_option("--lissa-iters", exp_config.lissa_iterations, "LiSSA iterations")
      ->capture_default_str();
  e_cmd->add_option("--dimension-cap", exp_config.dimension_cap, "Largest layer Exact will factor")
      ->capture_default_str();
  e_cmd->add_flag("--absolute", exp_config.absolute_scores, "Rank mislabel candidates by |score|");
  e_cmd->add_option("--selection-fraction", exp_config.selection_fraction, "Share kept")
      ->capture_default_str();
  e_cmd->add_option("--selection-epochs", exp_config.selection_epochs, "Retraining epochs")
      ->capture_default_str();
  e_cmd->add_option("--class-queries", exp_config.class_queries, "Queries in class detection")
      ->capture_default_str();
  e_cmd->add_option("--out-prefix", exp_prefix, "Writes <prefix>.csv and <prefix>.json")
      ->capture_default_str();
  add_lab_options(e_cmd, exp_config, exp_args);
  add_common(e_cmd);

  std::string inspect_path;
  auto* i_cmd = app.add_subcommand("inspect", "Print a dump header");
  i_cmd->add_option("path", inspect_path, "Gradient dump")->required();
  add_common(i_cmd);

  datatk::eval::ExperimentConfig dump_config;
  LabArgs dump_args;
  std::string dump_out;
  bool full_weights = false;
  auto* d_cmd = app.add_subcommand("make-dump", "Train a lab model and write its gradients");
  d_cmd->add_option("--out", dump_out, "Dump path")->required();
  d_cmd->add_flag("--full-weights", full_weights,
                  "Base-weight gradients with Kronecker factors instead of adapters");
  add_lab_options(d_cmd, dump_config, dump_args);
  add_common(d_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  if (workers < 1) throw Error(ErrorKind::InvalidArgument, "--workers must be >= 1");

  if (*c_cmd) return cmd_compute(compute, workers, resolved_options(*c_cmd));
  if (*e_cmd) {
    finish_lab_config(exp_config, exp_args, workers);
    return cmd_experiment(exp_name, exp_config, exp_prefix, resolved_options(*e_cmd));
  }
  if (*i_cmd) return cmd_inspect(inspect_path);
  finish_lab_config(dump_config, dump_args, workers);
  return cmd_make_dump(dump_config, dump_out, full_weights, resolved_options(*d_cmd));
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "datatk: error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::bad_alloc&) {
    std::cerr << "datatk: error: out of memory\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "datatk: error: " << e.what() << "\n";
    return kExitIo;
  }
}
