// Copyright 2026 The FuseFL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fusefl/cli/config.hpp"
#include "fusefl/cli/run.hpp"
#include "gtest/gtest.h"
#include "json.hpp"
#include "test_util.hpp"

#ifndef FUSEFL_CLI
#error "FUSEFL_CLI must name the command-line binary"
#endif

namespace fusefl {
namespace {

namespace fs = std::filesystem;
using testing::temp_dir;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI and returns its exit status.
int cli(const std::string& args) {
  const std::string cmd = std::string(FUSEFL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallRun = R"(
# small synthetic run
name = small
seed = 5
fed.algorithm = fusefl
fed.clients = 3
fed.stages = 2
fed.epochs = 4
fed.adaptor = linear_mix
train.learning_rate = 0.02
train.batch_size = 16
model.width = 16
model.hidden_layers = 2
sem.samples_per_client = 60
sem.test_samples = 200
sem.label_alpha = 0.5
)";

TEST(RunConfigParse, DefaultsAndOverrides) {
  const RunConfig d = parse_run_config("");
  EXPECT_EQ(d.fed.clients, 5u);
  EXPECT_EQ(d.fed.train.batch_size, 128u);
  EXPECT_EQ(d.fed.train.momentum, 0.9);
  EXPECT_EQ(d.probe.probe_epochs, 10u);
  const RunConfig c = parse_run_config(kSmallRun);
  EXPECT_EQ(c.fed.clients, 3u);
  EXPECT_EQ(c.sem.clients, 3u);
  EXPECT_EQ(c.fed.adaptor, AdaptorKind::kLinearMix);
  EXPECT_EQ(c.sem.label_alpha, 0.5);
  EXPECT_EQ(c.fed.seed, 5u);
  EXPECT_FALSE(c.fed.backdoor.has_value());
  const RunConfig b = parse_run_config("backdoor.clients = 0, 2\nbackdoor.patch_side = 3\n");
  ASSERT_TRUE(b.fed.backdoor.has_value());
  EXPECT_EQ(b.fed.backdoor->target_clients, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(b.fed.backdoor->patch_side, 3u);
}

TEST(RunConfigParse, ErrorsNameTheLine) {
  auto message = [](const std::string& text) {
    try {
      (void)parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message("seed = 1\nfed.clientz = 3\n"), "config line 2: unknown key 'fed.clientz'");
  EXPECT_EQ(message("seed = 1\nseed = 2\n"), "config line 2: key 'seed' already set on line 1");
  EXPECT_EQ(message("fed.clients = three"), "config line 1: fed.clients: 'three' is not a valid number");
  EXPECT_EQ(message("just words"), "config line 1: expected key = value");
  EXPECT_EQ(message("fed.algorithm = fedprox").rfind("config line 1: unknown algorithm", 0), 0u);
  EXPECT_EQ(message("calibrate.enabled = maybe"), "config line 1: calibrate.enabled: 'maybe' is not true or false");
}

TEST(RunConfigParse, TextFormRoundTrips) {
  RunConfig c = parse_run_config(kSmallRun);
  c.fed.calibration.learning_rate = 0.125;
  c.lr_grid = {0.01, 0.02};
  c.fed.client_widths = {4, 5, 6};
  const RunConfig back = parse_run_config(to_config_text(c));
  EXPECT_EQ(resolved_config(back), resolved_config(c));
  const RunConfig defaults{};
  EXPECT_EQ(resolved_config(parse_run_config(to_config_text(defaults))), resolved_config(defaults));
}

TEST(RunConfigParse, ResolvedConfigListsEveryKey) {
  const auto j = resolved_config(RunConfig{});
  EXPECT_EQ(j.size(), detail::config_fields().size());
  for (const char* key : {"fed.algorithm", "train.learning_rate", "sem.spurious_strength", "backdoor.patch_side",
                          "probe.epochs", "data.source", "calibrate.virtual_per_class"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_TRUE(j.at("sem.label_alpha").is_null());
}

TEST(RunConfigParse, SeedEnvironmentOverride) {
  RunConfig c = parse_run_config("seed = 3");
  apply_env_overrides(c, nullptr);
  EXPECT_EQ(c.fed.seed, 3u);
  apply_env_overrides(c, "42");
  EXPECT_EQ(c.fed.seed, 42u);
  EXPECT_THROW(apply_env_overrides(c, "x"), ConfigError);
}

TEST(BuildTemplate, ImageInputsAndConv) {
  RunConfig c;
  c.fed.stages = 2;
  c.model_width = 8;
  c.hidden_layers = 2;
  const ModelSpec mlp = build_template(c, {1, 4, 4}, 3);
  EXPECT_EQ(mlp.blocks.front().front(), LayerSpec(Flatten{}));
  EXPECT_EQ(mlp.input_shape, (Shape{1, 4, 4}));
  c.model_template = "conv";
  EXPECT_EQ(build_template(c, {1, 8, 8}, 3).input_shape, (Shape{1, 8, 8}));
  EXPECT_THROW((void)build_template(c, {16}, 3), ConfigError);
}

TEST(BuildData, BackdoorStampsOnlyTargetClients) {
  RunConfig c = parse_run_config("fed.clients = 3\nsem.image_side = 8\nsem.samples_per_client = 30\n");
  const ExperimentData clean = build_data(c);
  c = parse_run_config("fed.clients = 3\nsem.image_side = 8\nsem.samples_per_client = 30\nbackdoor.clients = 1\n"
                       "backdoor.patch_side = 3\n");
  const ExperimentData bd = build_data(c);
  EXPECT_EQ(bd.clients[0], clean.clients[0]);
  EXPECT_NE(bd.clients[1], clean.clients[1]);
  EXPECT_EQ(bd.clients[2], clean.clients[2]);
  EXPECT_EQ(bd.test, clean.test);
}

TEST(RunToDirectory, DegenerateRunMatchesLocalTraining) {
  RunConfig c = parse_run_config(
      "seed = 5\nfed.clients = 1\nfed.stages = 1\nfed.epochs = 4\ntrain.batch_size = 16\ntrain.learning_rate = 0.02\n"
      "model.width = 16\nmodel.hidden_layers = 2\nsem.samples_per_client = 80\nsem.test_samples = 200\n");
  c.output_dir = temp_dir("cli_degenerate").string();
  const RunRecord r = run_to_directory(c);
  ASSERT_TRUE(r.ok) << r.summary.dump();
  // Oracle: plain local training of the template on the single client.
  const ExperimentData data = build_data(c);
  const ModelSpec spec = build_template(c, data.test.sample_shape(), data.test.num_classes);
  const Network local = train_local(make_staged_network(spec, client_init_seed(5, 0)).net, data.clients[0], 4,
                                    c.fed.train, client_stream_seed(5, 0, 0))
                            .net;
  EXPECT_EQ(r.summary["test_accuracy"].get<double>(), evaluate(local, data.test));
}

TEST(RunToDirectory, SummaryIsSelfDescribingAndCostMatchesClosedForm) {
  RunConfig c = parse_run_config(kSmallRun);
  c.output_dir = temp_dir("cli_summary").string();
  const RunRecord r = run_to_directory(c);
  ASSERT_TRUE(r.ok) << r.summary.dump();
  const auto s = nlohmann::json::parse(read_file(fs::path(c.output_dir) / "summary.json"));
  EXPECT_EQ(s["config"], resolved_config(c));
  EXPECT_EQ(s["status"], "ok");
  EXPECT_EQ(s["seed"], 5u);
  const double comm = s["comm_bytes"].get<double>(), closed = s["metrics"]["comm_bytes_closed_form"].get<double>();
  EXPECT_LE(std::abs(comm - closed), 0.01 * closed);
  EXPECT_TRUE(s["metrics"]["freeze_audit_passed"].get<bool>());
  EXPECT_TRUE(s["timing"].contains("wall_seconds"));
  const std::string csv = read_file(fs::path(c.output_dir) / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "phase,stage_or_round,client,epoch,train_loss,train_acc");
  // Calibration rows have no client.
  EXPECT_NE(csv.find("\ncalibrate,2,,1,"), std::string::npos);
}

TEST(RunToDirectory, RerunIsByteIdenticalExceptTiming) {
  RunConfig c = parse_run_config(kSmallRun);
  const fs::path a = temp_dir("cli_rerun_a"), b = temp_dir("cli_rerun_b");
  c.output_dir = a.string();
  (void)run_to_directory(c);
  c.output_dir = b.string();
  (void)run_to_directory(c);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  EXPECT_EQ(read_file(a / "model.ckpt"), read_file(b / "model.ckpt"));
  auto sa = nlohmann::json::parse(read_file(a / "summary.json"));
  auto sb = nlohmann::json::parse(read_file(b / "summary.json"));
  sa.erase("timing");
  sb.erase("timing");
  sa["config"].erase("output_dir");
  sb["config"].erase("output_dir");
  EXPECT_EQ(sa, sb);
}

TEST(RunToDirectory, FailureIsFlaggedInSummary) {
  RunConfig c = parse_run_config("data.source = idx\ndata.train_images = /nonexistent/a\ndata.train_labels = /x\n"
                                 "data.test_images = /x\ndata.test_labels = /x\n");
  c.output_dir = temp_dir("cli_fail").string();
  const RunRecord r = run_to_directory(c);
  EXPECT_FALSE(r.ok);
  const auto s = nlohmann::json::parse(read_file(fs::path(c.output_dir) / "summary.json"));
  EXPECT_EQ(s["status"], "failed");
  EXPECT_EQ(s["error_kind"], "runtime");
  EXPECT_FALSE(s["outputs"]["metrics_csv"].get<bool>());
  EXPECT_FALSE(s["outputs"]["checkpoint"].get<bool>());
  EXPECT_FALSE(fs::exists(fs::path(c.output_dir) / "metrics.csv"));
}

TEST(RunToDirectory, LearningRateGrid) {
  RunConfig c = parse_run_config(kSmallRun);
  c.output_dir = temp_dir("cli_grid").string();
  c.lr_grid = {0.01, 0.02};
  const auto records = run_lr_grid(c);
  ASSERT_EQ(records.size(), 2u);
  const std::string grid = read_file(fs::path(c.output_dir) / "grid.csv");
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / "lr_0.01" / "summary.json"));
  EXPECT_EQ(records[1].summary["config"]["train.learning_rate"], 0.02);
}

TEST(CliBinary, PartitionConservesAndIsDeterministic) {
  const fs::path dir = temp_dir("cli_partition");
  const std::string base = "partition --dataset sem --samples 500 --clients 5 --alpha 0.5 --seed 4 --out ";
  ASSERT_EQ(cli(base + (dir / "a").string()), 0);
  ASSERT_EQ(cli(base + (dir / "b").string()), 0);
  std::vector<std::size_t> all;
  for (int m = 0; m < 5; ++m) {
    const std::string name = "client_" + std::to_string(m) + ".txt";
    const std::string text = read_file(dir / "a" / name);
    EXPECT_EQ(text, read_file(dir / "b" / name));
    std::istringstream in(text);
    for (std::size_t i; in >> i;) all.push_back(i);
  }
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), 500u);
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  EXPECT_EQ(read_file(dir / "a" / "histogram.csv"), read_file(dir / "b" / "histogram.csv"));
  EXPECT_EQ(read_file(dir / "a" / "partition.json"), read_file(dir / "b" / "partition.json"));
  EXPECT_EQ(cli("partition --dataset sem --alpha 0 --out " + (dir / "c").string()), 2);
}

TEST(CliBinary, RunAndProbe) {
  const fs::path dir = temp_dir("cli_probe");
  const fs::path cfg = dir / "small.cfg";
  {
    std::ofstream out(cfg);
    out << kSmallRun;
  }
  ASSERT_EQ(cli("run " + cfg.string() + " --out " + (dir / "run").string()), 0);
  const std::string ckpt = (dir / "run" / "model.ckpt").string();
  const std::string probe = "probe --config " + cfg.string() + " --checkpoint " + ckpt + " --out ";
  ASSERT_EQ(cli(probe + (dir / "p1.csv").string()), 0);
  ASSERT_EQ(cli(probe + (dir / "p2.csv").string()), 0);
  const std::string rows = read_file(dir / "p1.csv");
  EXPECT_EQ(rows, read_file(dir / "p2.csv"));
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 1 + 3 * 2);  // header + 3 metrics x K stages
  std::istringstream in(rows);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    if (line.substr(a + 1, b - a - 1) == "mi_y") {
      EXPECT_LE(std::stod(line.substr(b + 1)), std::log(10.0) + 0.05);
    }
  }
  ASSERT_EQ(cli(probe + (dir / "p3.csv").string() + " --client 1"), 0);
  EXPECT_EQ(cli(probe + (dir / "p4.csv").string() + " --client 9"), 2);
  EXPECT_EQ(cli("report " + (dir / "run").string()), 0);
}

TEST(CliBinary, ExitCodes) {
  const fs::path dir = temp_dir("cli_exit");
  {
    std::ofstream out(dir / "bad.cfg");
    out << "fed.clientz = 3\n";
  }
  EXPECT_EQ(cli("run " + (dir / "bad.cfg").string()), 2);
  EXPECT_EQ(cli("run"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  {
    std::ofstream out(dir / "ok.cfg");
    out << "seed = 1\n";
  }
  EXPECT_EQ(cli("probe --config " + (dir / "ok.cfg").string() + " --checkpoint /nonexistent --out x"), 1);
  EXPECT_EQ(cli("report /nonexistent"), 1);
}

}  // namespace
}  // namespace fusefl
