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

// Experiment orchestration behind the command-line tool: dataset
// construction, algorithm dispatch and the output files of a run.

#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fusefl/cli/config.hpp"
#include "fusefl/data/backdoor.hpp"
#include "fusefl/data/idx.hpp"
#include "fusefl/data/partition.hpp"
#include "fusefl/data/sem.hpp"
#include "fusefl/federation/baselines.hpp"
#include "fusefl/federation/cost.hpp"
#include "fusefl/federation/fusefl.hpp"
#include "fusefl/io/checkpoint.hpp"
#include "fusefl/probes/probes.hpp"
#include "json.hpp"

namespace fusefl {

struct ExperimentData {
  std::vector<Dataset> clients;
  Dataset test;
  std::optional<Partition> partition;  // idx source only
};

inline std::size_t idx_min_per_client(const RunConfig& cfg) {
  return cfg.idx.min_per_client != 0 ? cfg.idx.min_per_client : 2 * cfg.fed.train.batch_size;
}

// Client datasets and the test set for a run. Backdoor triggers are stamped
// on the configured clients' training data only.
inline ExperimentData build_data(const RunConfig& cfg) {
  ExperimentData out;
  if (cfg.data_source == "sem") {
    SemConfig sem = cfg.sem;
    sem.clients = cfg.fed.clients;
    SemData d = synth_sem(sem, cfg.fed.seed);
    out.clients = std::move(d.clients);
    out.test = std::move(d.test);
  } else {
    const Dataset train = load_idx(cfg.idx.train_images, cfg.idx.train_labels);
    out.test = load_idx(cfg.idx.test_images, cfg.idx.test_labels, train.num_classes);
    out.test.num_classes = std::max(out.test.num_classes, train.num_classes);
    out.partition = dirichlet_partition(train, cfg.fed.clients, cfg.idx.alpha,
                                        derive_seed(cfg.fed.seed, "partition"), idx_min_per_client(cfg));
    out.clients = split_dataset(train, *out.partition);
    for (Dataset& c : out.clients) c.num_classes = out.test.num_classes;
  }
  if (cfg.fed.backdoor) {
    cfg.fed.backdoor->validate(out.clients.size());
    for (std::size_t m : cfg.fed.backdoor->target_clients) {
      out.clients[m] = inject_backdoor(out.clients[m], *cfg.fed.backdoor, derive_seed(cfg.fed.seed, "backdoor", {m}));
    }
  }
  return out;
}

// Template network for the configured architecture. An MLP over image
// inputs starts with a Flatten layer.
inline ModelSpec build_template(const RunConfig& cfg, const Shape& sample_shape, std::size_t classes) {
  const std::size_t k = cfg.fed.stages;
  if (cfg.model_template == "conv") {
    if (sample_shape.size() != 3 || sample_shape[1] != sample_shape[2]) {
      throw ConfigError("model.template = conv needs square image inputs, got " + shape_str(sample_shape));
    }
    return conv_template(sample_shape[0], sample_shape[1], classes, cfg.model_width, k);
  }
  ModelSpec spec = mlp_template(shape_size(sample_shape), classes, cfg.model_width, k, cfg.hidden_layers);
  if (sample_shape.size() > 1) {
    spec.input_shape = sample_shape;
    spec.blocks.front().insert(spec.blocks.front().begin(), Flatten{});
    spec.validate();
  }
  return spec;
}

struct RunOutput {
  RunMetrics metrics;
  AnyModel model;
};

inline RunOutput run_algorithm(const RunConfig& cfg, const ExperimentData& data) {
  const ModelSpec tmpl = build_template(cfg, data.test.sample_shape(), data.test.num_classes);
  switch (cfg.fed.algorithm) {
    case Algorithm::kFuseFL: {
      FuseFLResult r = run_fusefl(tmpl, cfg.fed, data.clients, data.test);
      return {std::move(r.metrics), std::move(r.model)};
    }
    case Algorithm::kEnsemble: {
      EnsembleResult r = run_ensemble(tmpl, cfg.fed, data.clients, data.test);
      return {std::move(r.metrics), std::move(r.model)};
    }
    case Algorithm::kFedAvg:
    case Algorithm::kOneShotFedAvg: {
      FedAvgResult r = run_fedavg(tmpl, cfg.fed, data.clients, data.test);
      return {std::move(r.metrics), std::move(r.model)};
    }
  }
  throw InternalError("unhandled algorithm");
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

inline std::string metrics_csv(const RunMetrics& m) {
  std::string out = "phase,stage_or_round,client,epoch,train_loss,train_acc\n";
  for (const EpochRecord& r : m.records) {
    out += r.phase + "," + std::to_string(r.stage_or_round) + "," + (r.client ? std::to_string(*r.client) : "") +
           "," + std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.train_acc) + "\n";
  }
  return out;
}

inline nlohmann::json metrics_json(const RunMetrics& m) {
  nlohmann::json audit = nlohmann::json::array();
  for (const FreezeAudit& a : m.freeze_audit) {
    audit.push_back({{"after_stage", a.after_stage}, {"frozen_stages", a.frozen_stages}, {"identical", a.identical}});
  }
  return {{"algorithm", to_string(m.algorithm)},
          {"test_accuracy", m.test_accuracy},
          {"comm_bytes", m.comm_bytes},
          {"comm_bytes_closed_form", m.comm_bytes_closed_form},
          {"comm_mb", format_mb(m.comm_bytes)},
          {"storage_bytes", m.storage_bytes},
          {"storage_mb", format_mb(m.storage_bytes)},
          {"model_bytes", m.model_bytes},
          {"template_params", m.template_params},
          {"client_params", m.client_params},
          {"final_params", m.final_params},
          {"epochs_per_part", m.epochs_per_part},
          {"client_local_acc", m.client_local_acc},
          {"client_global_acc", m.client_global_acc},
          {"freeze_audit", audit},
          {"freeze_audit_passed", m.freeze_audit_passed()},
          {"warnings", m.warnings}};
}

struct RunRecord {
  nlohmann::json summary;
  bool ok = false;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs one configuration into cfg.output_dir: metrics.csv, model.ckpt and
// summary.json. summary.json is written even when the run fails; its
// "status" and "outputs" entries say what exists. Wall-clock data lives
// only under "timing".
inline RunRecord run_to_directory(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started_at = utc_timestamp();
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  RunRecord rec;
  nlohmann::json& s = rec.summary;
  s["name"] = cfg.name;
  s["seed"] = cfg.fed.seed;
  s["config"] = resolved_config(cfg);
  s["outputs"] = {{"metrics_csv", false}, {"checkpoint", false}};
  try {
    const ExperimentData data = build_data(cfg);
    const RunOutput out = run_algorithm(cfg, data);
    write_text(dir / "metrics.csv", metrics_csv(out.metrics));
    s["outputs"]["metrics_csv"] = true;
    save_checkpoint(out.model, dir / "model.ckpt");
    s["outputs"]["checkpoint"] = true;
    s["metrics"] = metrics_json(out.metrics);
    s["test_accuracy"] = out.metrics.test_accuracy;
    s["comm_bytes"] = out.metrics.comm_bytes;
    s["storage_bytes"] = out.metrics.storage_bytes;
    s["status"] = "ok";
    rec.ok = true;
  } catch (const std::exception& e) {
    s["status"] = "failed";
    s["error"] = e.what();
    s["error_kind"] = dynamic_cast<const ConfigError*>(&e) != nullptr ? "config" : "runtime";
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  s["timing"] = {{"started_at", started_at}, {"wall_seconds", wall}};
  write_text(dir / "summary.json", s.dump(2) + "\n");
  return rec;
}

// Learning-rate grid: one run per value in <output_dir>/lr_<value>/ and a
// grid.csv with the test accuracy of each.
inline std::vector<RunRecord> run_lr_grid(const RunConfig& cfg) {
  std::vector<RunRecord> records;
  std::string csv = "learning_rate,status,test_accuracy\n";
  for (double lr : cfg.lr_grid) {
    RunConfig c = cfg;
    c.fed.train.learning_rate = lr;
    c.lr_grid.clear();
    c.output_dir = (std::filesystem::path(cfg.output_dir) / ("lr_" + nlohmann::json(lr).dump())).string();
    RunRecord r = run_to_directory(c);
    csv += nlohmann::json(lr).dump() + "," + r.summary["status"].get<std::string>() + "," +
           (r.ok ? format_double(r.summary["test_accuracy"].get<double>()) : "") + "\n";
    records.push_back(std::move(r));
  }
  std::filesystem::create_directories(cfg.output_dir);
  write_text(std::filesystem::path(cfg.output_dir) / "grid.csv", csv);
  return records;
}

inline std::string probes_csv(const ProbeResult& r) {
  std::string out = "stage,metric,value\n";
  for (const StageProbe& p : r.stages) {
    const std::string k = std::to_string(p.stage);
    out += k + ",mi_x_proxy," + format_double(p.mi_x_proxy) + "\n";
    out += k + ",mi_y," + format_double(p.mi_y) + "\n";
    out += k + ",separability," + format_double(p.separability) + "\n";
  }
  return out;
}

// Probes a loaded checkpoint. For fused and ensemble models `client`
// selects one client's path (a FusedBranchView or an ensemble member); by
// default a fused model is probed on its concatenated stage features and an
// ensemble on member 0.
inline ProbeResult probe_model(const AnyModel& model, std::optional<std::size_t> client, const Dataset& train,
                               const Dataset& test, const ProbeConfig& cfg) {
  return std::visit(
      [&](const auto& m) -> ProbeResult {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Network>) {
          throw ConfigError("checkpoint holds a plain network without stage boundaries");
        } else if constexpr (std::is_same_v<T, StagedNetwork>) {
          return run_probes(m, train, test, cfg);
        } else if constexpr (std::is_same_v<T, FusedModel>) {
          if (!client) return run_probes(m, train, test, cfg);
          if (*client >= m.num_clients()) throw ConfigError("--client " + std::to_string(*client) + " out of range");
          return run_probes(FusedBranchView{&m, *client}, train, test, cfg);
        } else {
          const std::size_t c = client.value_or(0);
          if (c >= m.members.size()) throw ConfigError("--client " + std::to_string(c) + " out of range");
          return run_probes(m.members[c], train, test, cfg);
        }
      },
      model);
}

}  // namespace fusefl
