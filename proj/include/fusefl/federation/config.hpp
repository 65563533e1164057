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

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fusefl/data/backdoor.hpp"
#include "fusefl/error.hpp"
#include "fusefl/model/fusion.hpp"
#include "fusefl/model/spec.hpp"

namespace fusefl {

enum class Algorithm { kFedAvg, kOneShotFedAvg, kEnsemble, kFuseFL };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedAvg:
      return "fedavg";
    case Algorithm::kOneShotFedAvg:
      return "oneshot_fedavg";
    case Algorithm::kEnsemble:
      return "ensemble";
    case Algorithm::kFuseFL:
      return "fusefl";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::kFedAvg, Algorithm::kOneShotFedAvg, Algorithm::kEnsemble, Algorithm::kFuseFL}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown algorithm '" + name + "' (expected fedavg, oneshot_fedavg, ensemble or fusefl)");
}

inline AdaptorKind parse_adaptor_kind(const std::string& name) {
  if (name == "average") return AdaptorKind::kAverage;
  if (name == "linear_mix") return AdaptorKind::kLinearMix;
  throw ConfigError("unknown adaptor '" + name + "' (expected average or linear_mix)");
}

// Optimizer settings for one local training call.
struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 128;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  }
};

// CCVR-style classifier calibration: diagonal Gaussians per class, V
// virtual features per class, P epochs.
struct CalibrationConfig {
  bool enabled = true;
  std::size_t virtual_per_class = 100;
  std::size_t epochs = 10;
  std::optional<double> learning_rate;  // defaults to the run's rate
};

struct FedConfig {
  Algorithm algorithm = Algorithm::kFuseFL;
  std::size_t clients = 5;
  std::size_t stages = 2;  // K, fusefl only
  std::size_t total_epochs = 40;
  std::size_t rounds = 1;  // T, fedavg only
  TrainConfig train;
  AdaptorKind adaptor = AdaptorKind::kAverage;
  ScalingPolicy scaling;
  CalibrationConfig calibration;
  bool count_downlink = false;
  std::uint64_t seed = 0;
  std::optional<BackdoorConfig> backdoor;
  // Per-client hidden widths for heterogeneous FuseFL; empty means every
  // client uses the scaled template width.
  std::vector<std::size_t> client_widths;

  std::size_t effective_rounds() const { return algorithm == Algorithm::kFedAvg ? rounds : 1; }

  void validate() const {
    if (clients == 0) throw ConfigError("fed.clients must be at least 1");
    if (total_epochs == 0) throw ConfigError("fed.epochs must be at least 1");
    if (rounds == 0) throw ConfigError("fed.rounds must be at least 1");
    if (stages == 0) throw ConfigError("fed.stages must be at least 1");
    if (algorithm == Algorithm::kFuseFL && total_epochs < stages) {
      throw ConfigError("fed.epochs " + std::to_string(total_epochs) + " leaves a stage without training (stages " +
                        std::to_string(stages) + ")");
    }
    if (algorithm == Algorithm::kFedAvg && total_epochs < rounds) {
      throw ConfigError("fed.epochs " + std::to_string(total_epochs) + " leaves a round without training (rounds " +
                        std::to_string(rounds) + ")");
    }
    train.validate();
    if (calibration.learning_rate && !(*calibration.learning_rate >= 0.0)) {
      throw ConfigError("calibrate.learning_rate must be non-negative");
    }
    if (!client_widths.empty() && client_widths.size() != clients) {
      throw ConfigError("model.client_widths lists " + std::to_string(client_widths.size()) + " widths for " +
                        std::to_string(clients) + " clients");
    }
    if (backdoor) backdoor->validate(clients);
  }
};

// Epoch counts for `parts` consecutive stages or rounds: floor(E/parts)
// each, the remainder added to the last one.
inline std::vector<std::size_t> split_epochs(std::size_t total, std::size_t parts) {
  if (parts == 0 || total < parts) throw ConfigError("cannot split " + std::to_string(total) + " epochs into " +
                                                     std::to_string(parts) + " parts");
  std::vector<std::size_t> out(parts, total / parts);
  out.back() += total % parts;
  return out;
}

// RNG stream keys shared by every algorithm, so that degenerate runs of
// different algorithms line up.
inline std::uint64_t client_init_seed(std::uint64_t seed, std::size_t client) {
  return derive_seed(seed, "init", {client});
}

inline std::uint64_t client_stream_seed(std::uint64_t seed, std::size_t client, std::size_t stage) {
  return derive_seed(seed, "train", {client, stage});
}

}  // namespace fusefl
