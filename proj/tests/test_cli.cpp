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


#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "datatk/grad_store.hpp"
#include "scratch_dir.hpp"

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(DATATK_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const char* kSmallLab =
    " --n-train 24 --n-test 8 --features 3 --hidden 4 --rank 1 --epochs 3 --pretrain-epochs 3";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dump_ = dir_ / "g.bin";
    const auto r = run_cli("make-dump --out " + q(dump_) + kSmallLab);
    ASSERT_EQ(r.code, 0) << r.output;
  }

  testutil::ScratchDir dir_;
  std::filesystem::path dump_;
};

}  // namespace

TEST_F(CliTest, HelpAndVersionExitZero) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("--version").code, 0);
  EXPECT_EQ(run_cli("compute --help").code, 0);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("compute --input " + q(dump_)).code, 2);
  EXPECT_EQ(run_cli("compute --input " + q(dump_) + " --out x.csv --method bogus").code, 2);
  const auto r = run_cli("experiment ablation --out-prefix " + q(dir_ / "r"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("class-detection"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("inspect " + q(dump_) + " --workers 0").code, 2);
}

TEST_F(CliTest, MakeDumpWritesDumpAndSidecar) {
  const auto h = datatk::read_dump_header(dump_);
  EXPECT_EQ(h.n_train, 24u);
  EXPECT_EQ(h.n_query, 8u);
  EXPECT_EQ(h.layers.size(), 2u);
  const auto side = nlohmann::json::parse(testutil::read_file(dump_.string() + ".json"));
  EXPECT_EQ(side["flip_mask"].size(), 24u);
  EXPECT_TRUE(side.contains("test_accuracy"));

  const auto inspect = run_cli("inspect " + q(dump_));
  EXPECT_EQ(inspect.code, 0);
  EXPECT_NE(inspect.output.find("layer0.lora"), std::string::npos) << inspect.output;
}

TEST_F(CliTest, ComputeIsByteIdenticalAcrossRuns) {
  for (const char* method : {"hessian-free", "datainf", "exact", "lissa"}) {
    // The output path is echoed in the comment line, so both runs share it.
    const auto out = dir_ / (std::string(method) + ".csv");
    const std::string args =
        std::string("compute --method ") + method + " --input " + q(dump_) + " --out " + q(out);
    ASSERT_EQ(run_cli(args).code, 0);
    const std::string text = testutil::read_file(out);
    ASSERT_EQ(run_cli(args).code, 0);
    EXPECT_EQ(text, testutil::read_file(out)) << method;
    EXPECT_EQ(text.rfind("# datatk ", 0), 0u);
    EXPECT_NE(text.find("\nquery_index,train_index,score\n"), std::string::npos);
    // Comment, header and one row per training point.
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2 + 24);
  }
  const auto each = dir_ / "each.csv";
  ASSERT_EQ(run_cli("compute --method datainf --query each --input " + q(dump_) + " --out " +
                    q(each))
                .code,
            0);
  const std::string text = testutil::read_file(each);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2 + 24 * 8);
}

TEST_F(CliTest, NumericAndIoFailures) {
  const auto r = run_cli("compute --method lissa --lissa-scale 10 --lissa-iters 200 --input " +
                         q(dump_) + " --out " + q(dir_ / "x.csv"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("layer="), std::string::npos) << r.output;

  const auto cap = run_cli("compute --method exact --dimension-cap 2 --input " + q(dump_) +
                           " --out " + q(dir_ / "x.csv"));
  EXPECT_EQ(cap.code, 2) << cap.output;
  EXPECT_NE(cap.output.find("layer0.lora"), std::string::npos) << cap.output;

  EXPECT_EQ(run_cli("compute --method ekfac --input " + q(dump_) + " --out " +
                    q(dir_ / "x.csv"))
                .code,
            2);
  EXPECT_EQ(run_cli("compute --method datainf --input " + q(dir_ / "missing.bin") + " --out " +
                    q(dir_ / "x.csv"))
                .code,
            4);
  EXPECT_EQ(run_cli("compute --method datainf --input " + q(dump_) + " --out " +
                    q(dir_ / "no/such/dir.csv"))
                .code,
            4);
  testutil::write_file(dir_ / "bad.bin", "NOTADUMP");
  EXPECT_EQ(run_cli("inspect " + q(dir_ / "bad.bin")).code, 2);
  EXPECT_EQ(run_cli("inspect " + q(dump_) + " --config " + q(dir_ / "none.json")).code, 4);
}

TEST_F(CliTest, FullWeightDumpSupportsEkfac) {
  const auto full = dir_ / "w.bin";
  ASSERT_EQ(run_cli("make-dump --full-weights --out " + q(full) + kSmallLab).code, 0);
  EXPECT_TRUE(datatk::read_dump_header(full).factored);
  const auto r = run_cli("compute --method ekfac --input " + q(full) + " --out " +
                         q(dir_ / "e.csv"));
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST_F(CliTest, ConfigFileMergesAndFlagsWin) {
  const auto cfg = dir_ / "cfg.json";
  testutil::write_file(cfg, R"({"method": "exact", "damping-scale": 0.5, "solver": "dual"})");
  const auto out = dir_ / "s.csv";
  const auto r = run_cli("compute --config " + q(cfg) + " --damping-scale 0.2 --input " +
                         q(dump_) + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto side = nlohmann::json::parse(testutil::read_file(out.string() + ".json"));
  EXPECT_EQ(side["method"], "exact");
  EXPECT_EQ(side["config"]["damping-scale"], "0.2");
  EXPECT_EQ(side["config"]["solver"], "dual");

  const auto store = datatk::load_dump(dump_).store;
  const auto damping = datatk::compute_damping(store, 0.2);
  ASSERT_EQ(side["layers"].size(), 2u);
  EXPECT_DOUBLE_EQ(side["layers"][0]["damping"].get<double>(), damping.lambda[0]);
  EXPECT_TRUE(side["timings"].contains("score_seconds"));

  testutil::write_file(cfg, "[1, 2]");
  EXPECT_EQ(run_cli("inspect " + q(dump_) + " --config " + q(cfg)).code, 2);
}

TEST_F(CliTest, ExperimentWritesReportPair) {
  const auto prefix = dir_ / "rep";
  const std::string args = "experiment mislabel --seeds 2 --methods datainf,hessian-free" +
                           std::string(kSmallLab) + " --out-prefix " + q(prefix);
  ASSERT_EQ(run_cli(args).code, 0);
  const std::string first = testutil::read_file(prefix.string() + ".csv");
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_EQ(first, testutil::read_file(prefix.string() + ".csv"));
  const auto j = nlohmann::json::parse(testutil::read_file(prefix.string() + ".json"));
  EXPECT_EQ(j["experiment"], "mislabel");
  EXPECT_EQ(j["seeds"].size(), 2u);
  EXPECT_FALSE(j["summary"].empty());
}
