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

#include <charconv>
#include <cmath>
#include <set>
#include <tuple>

#include "datatk/eval.hpp"

namespace datatk::eval {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seeds"] = c.num_seeds;
  j["seed"] = c.seed_base;
  j["ranks"] = c.ranks;
  j["rank"] = c.rank;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["features"] = c.features;
  j["hidden"] = c.hidden;
  j["separation"] = c.separation;
  j["offset"] = c.offset;
  j["noise_rate"] = c.noise_rate;
  j["pretrain_epochs"] = c.pretrain_epochs;
  j["learning_rate"] = c.train.learning_rate;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["damping_scale"] = c.damping_scale;
  j["lissa_iters"] = c.lissa_iterations;
  j["dimension_cap"] = c.dimension_cap;
  auto& methods = j["methods"] = nlohmann::ordered_json::array();
  for (Method m : c.methods) methods.push_back(std::string(method_name(m)));
  j["absolute_scores"] = c.absolute_scores;
  j["selection_fraction"] = c.selection_fraction;
  j["selection_epochs"] = c.selection_epochs;
  j["class_queries"] = c.class_queries;
  j["workers"] = c.workers;
  return j;
}

std::vector<double> ExperimentReport::values(std::string_view method, std::string_view metric,
                                             std::size_t rank) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.status == "ok" && r.method == method && r.metric == metric && r.rank == rank) {
      out.push_back(r.value);
    }
  }
  return out;
}

Summary ExperimentReport::summary(std::string_view method, std::string_view metric,
                                  std::size_t rank) const {
  return summarize(values(method, metric, rank));
}

nlohmann::ordered_json ExperimentReport::to_json() const {
  nlohmann::ordered_json j;
  j["tool"] = "datatk";
  j["version"] = DATATK_VERSION;
  j["experiment"] = experiment;
  j["config"] = provenance;
  j["seeds"] = seeds;
  j["wall_time_seconds"] = wall_time_seconds;

  auto& summaries = j["summary"] = nlohmann::ordered_json::array();
  std::set<std::tuple<std::string, std::size_t, std::string>> seen;
  for (const auto& r : rows) {
    if (!seen.insert({r.method, r.rank, r.metric}).second) continue;
    const Summary s = summary(r.method, r.metric, r.rank);
    std::size_t not_ok = 0;
    for (const auto& o : rows) {
      not_ok += o.method == r.method && o.metric == r.metric && o.rank == r.rank &&
                o.status != "ok";
    }
    nlohmann::ordered_json e;
    e["method"] = r.method;
    e["rank"] = r.rank;
    e["metric"] = r.metric;
    e["count"] = s.count;
    e["excluded"] = not_ok;
    e["mean"] = s.mean;
    e["standard_error"] = s.standard_error;
    e["ci_half_width"] = s.ci_half_width;
    summaries.push_back(std::move(e));
  }

  auto& out_rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["seed"] = r.seed;
    e["method"] = r.method;
    e["rank"] = r.rank;
    e["metric"] = r.metric;
    e["value"] = r.status == "ok" && std::isfinite(r.value) ? nlohmann::ordered_json(r.value)
                                                            : nlohmann::ordered_json();
    e["status"] = r.status;
    out_rows.push_back(std::move(e));
  }
  return j;
}

void ExperimentReport::write_csv(std::ostream& out) const {
  out << "# datatk " << DATATK_VERSION << " experiment=" << experiment
      << " config=" << provenance.dump() << '\n';
  out << "seed,method,rank,metric,value,status\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.method << ',' << r.rank << ',' << r.metric << ','
        << (r.status == "ok" ? format_double(r.value) : std::string()) << ',' << r.status << '\n';
  }
}

}  // namespace datatk::eval
