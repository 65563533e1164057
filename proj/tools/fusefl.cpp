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

// fusefl: partition | run | probe | report. Exit codes: 0 ok, 1 runtime
// error, 2 configuration or usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fusefl/cli/config.hpp"
#include "fusefl/cli/run.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/cost.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fusefl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct PartitionArgs {
  std::string dataset = "idx";
  std::string images, labels;
  std::size_t samples = 10000;
  std::size_t classes = 10;
  std::size_t clients = 5;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  std::size_t min_per_client = 1;
  std::string out;
};

int cmd_partition(const PartitionArgs& a) {
  Dataset pool;
  if (a.dataset == "idx") {
    if (a.images.empty() || a.labels.empty()) throw ConfigError("--dataset idx needs --images and --labels");
    pool = load_idx(a.images, a.labels);
  } else if (a.dataset == "sem") {
    SemConfig sem;
    sem.clients = 1;
    sem.num_classes = a.classes;
    sem.samples_per_client = a.samples;
    pool = std::move(synth_sem(sem, a.seed).clients.front());
  } else {
    throw ConfigError("--dataset must be idx or sem, got '" + a.dataset + "'");
  }
  const Partition part = dirichlet_partition(pool, a.clients, a.alpha, a.seed, a.min_per_client);
  fs::create_directories(a.out);
  std::string hist = "client,total";
  for (std::size_t c = 0; c < pool.num_classes; ++c) hist += ",class_" + std::to_string(c);
  hist += "\n";
  nlohmann::json sizes = nlohmann::json::array();
  for (std::size_t m = 0; m < part.num_clients(); ++m) {
    std::string list;
    for (std::size_t i : part.client_indices[m]) list += std::to_string(i) + "\n";
    write_text(fs::path(a.out) / ("client_" + std::to_string(m) + ".txt"), list);
    hist += std::to_string(m) + "," + std::to_string(part.client_indices[m].size());
    const Dataset local = subset(pool, part.client_indices[m]);
    for (std::size_t count : label_histogram(local.labels, pool.num_classes)) hist += "," + std::to_string(count);
    hist += "\n";
    sizes.push_back(part.client_indices[m].size());
  }
  write_text(fs::path(a.out) / "histogram.csv", hist);
  const nlohmann::json meta{{"dataset", a.dataset},
                            {"samples", pool.size()},
                            {"clients", a.clients},
                            {"alpha", a.alpha},
                            {"seed", a.seed},
                            {"min_per_client", a.min_per_client},
                            {"attempts", part.attempts},
                            {"client_sizes", sizes},
                            {"mean_label_tv_distance", mean_label_tv_distance(part, pool.labels, pool.num_classes)}};
  write_text(fs::path(a.out) / "partition.json", meta.dump(2) + "\n");
  std::cout << "partitioned " << pool.size() << " samples into " << a.clients << " clients under " << a.out << "\n";
  return kExitOk;
}

RunConfig load_config_with_env(const std::string& path) {
  RunConfig cfg = load_run_config(path);
  apply_env_overrides(cfg, std::getenv("FUSEFL_SEED"));
  cfg.validate();
  return cfg;
}

int exit_code_of(const RunRecord& r) {
  if (r.ok) return kExitOk;
  return r.summary.value("error_kind", "runtime") == "config" ? kExitConfig : kExitRuntime;
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& out_dir,
            const std::vector<double>& lr_grid) {
  RunConfig cfg = load_config_with_env(config_path);
  if (out_dir) cfg.output_dir = *out_dir;
  if (!lr_grid.empty()) cfg.lr_grid = lr_grid;
  if (!cfg.lr_grid.empty()) {
    int worst = kExitOk;
    for (const RunRecord& r : run_lr_grid(cfg)) {
      const int code = exit_code_of(r);
      if (!r.ok) std::cerr << "fusefl: " << r.summary["error"].get<std::string>() << "\n";
      worst = std::max(worst, code);
    }
    std::cout << "grid results in " << (fs::path(cfg.output_dir) / "grid.csv").string() << "\n";
    return worst;
  }
  const RunRecord r = run_to_directory(cfg);
  if (!r.ok) {
    std::cerr << "fusefl: " << r.summary["error"].get<std::string>() << "\n";
    return exit_code_of(r);
  }
  std::printf("%s: test accuracy %.4f, comm %s, storage %s\n", cfg.name.c_str(),
              r.summary["test_accuracy"].get<double>(),
              format_mb(r.summary["comm_bytes"].get<std::uint64_t>()).c_str(),
              format_mb(r.summary["storage_bytes"].get<std::uint64_t>()).c_str());
  return kExitOk;
}

int cmd_probe(const std::string& config_path, const std::string& checkpoint, std::optional<std::size_t> client,
              const std::string& out) {
  const RunConfig cfg = load_config_with_env(config_path);
  const AnyModel model = load_checkpoint(checkpoint);
  const ExperimentData data = build_data(cfg);
  const Dataset train = concat_datasets(data.clients);
  const ProbeResult r = probe_model(model, client, train, data.test, cfg.probe);
  write_text(out, probes_csv(r));
  std::printf("probed %zu stages (label entropy %.4f nats) into %s\n", r.stages.size(), r.label_entropy,
              out.c_str());
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs) {
  std::printf("%-20s %-15s %-7s %9s %12s %12s\n", "name", "algorithm", "status", "accuracy", "comm", "storage");
  int code = kExitOk;
  for (const std::string& d : dirs) {
    std::ifstream in(fs::path(d) / "summary.json");
    if (!in) {
      std::cerr << "fusefl: no summary.json in " << d << "\n";
      code = kExitRuntime;
      continue;
    }
    nlohmann::json s;
    try {
      s = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "fusefl: " << d << "/summary.json: " << e.what() << "\n";
      code = kExitRuntime;
      continue;
    }
    const std::string status = s.value("status", "unknown");
    const std::string algorithm = s.contains("config") ? s["config"].value("fed.algorithm", "?") : "?";
    if (status == "ok") {
      std::printf("%-20s %-15s %-7s %9.4f %12s %12s\n", s.value("name", "?").c_str(), algorithm.c_str(),
                  status.c_str(), s["test_accuracy"].get<double>(),
                  format_mb(s["comm_bytes"].get<std::uint64_t>()).c_str(),
                  format_mb(s["storage_bytes"].get<std::uint64_t>()).c_str());
    } else {
      std::printf("%-20s %-15s %-7s %9s %12s %12s\n", s.value("name", "?").c_str(), algorithm.c_str(),
                  status.c_str(), "-", "-", "-");
    }
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FuseFL one-shot federated learning simulator"};
  app.require_subcommand(1);

  PartitionArgs pa;
  auto* partition = app.add_subcommand("partition", "Dirichlet label partition of a dataset");
  partition->add_option("--dataset", pa.dataset, "idx or sem")->capture_default_str();
  partition->add_option("--images", pa.images, "IDX images file (idx)");
  partition->add_option("--labels", pa.labels, "IDX labels file (idx)");
  partition->add_option("--samples", pa.samples, "pool size (sem)")->capture_default_str();
  partition->add_option("--classes", pa.classes, "classes (sem)")->capture_default_str();
  partition->add_option("--clients", pa.clients, "number of clients")->capture_default_str();
  partition->add_option("--alpha", pa.alpha, "Dirichlet concentration")->capture_default_str();
  partition->add_option("--seed", pa.seed, "random seed")->capture_default_str();
  partition->add_option("--min-per-client", pa.min_per_client, "resample until each client has this many")
      ->capture_default_str();
  partition->add_option("--out", pa.out, "output directory")->required();

  std::string run_config;
  std::optional<std::string> run_out;
  std::vector<double> lr_grid;
  auto* run = app.add_subcommand("run", "Train one configuration");
  run->add_option("config", run_config, "config file")->required();
  run->add_option("--out", run_out, "output directory (overrides output_dir)");
  run->add_option("--lr-grid", lr_grid, "learning rates to sweep")->delimiter(',');

  std::string probe_config, probe_ckpt, probe_out;
  std::optional<std::size_t> probe_client;
  auto* probe = app.add_subcommand("probe", "Probe the stage features of a checkpoint");
  probe->add_option("--config", probe_config, "config the checkpoint was trained with")->required();
  probe->add_option("--checkpoint", probe_ckpt, "model checkpoint")->required();
  probe->add_option("--client", probe_client, "client path of a fused or ensemble model");
  probe->add_option("--out", probe_out, "probes.csv path")->required();

  std::vector<std::string> report_dirs;
  auto* report = app.add_subcommand("report", "Tabulate run summaries");
  report->add_option("dirs", report_dirs, "run output directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*partition) return cmd_partition(pa);
    if (*run) return cmd_run(run_config, run_out, lr_grid);
    if (*probe) return cmd_probe(probe_config, probe_ckpt, probe_client, probe_out);
    if (*report) return cmd_report(report_dirs);
  } catch (const ConfigError& e) {
    std::cerr << "fusefl: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "fusefl: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
