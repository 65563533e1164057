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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/federation/train.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

// Per-class feature mean, per-dimension (population) variance and sample
// count of one client.
struct ClassStats {
  std::size_t dim = 0;
  std::vector<std::size_t> counts;           // [C]
  std::vector<std::vector<double>> mean;     // [C][dim]
  std::vector<std::vector<double>> variance; // [C][dim]

  std::size_t num_classes() const noexcept { return counts.size(); }
};

inline ClassStats compute_class_stats(const Tensor& features, std::span<const std::size_t> labels,
                                      std::size_t num_classes) {
  if (features.rank() < 1 || features.dim(0) != labels.size()) {
    throw InputError("class statistics need one label per feature row");
  }
  const std::size_t d = features.row_size();
  ClassStats s{d, std::vector<std::size_t>(num_classes, 0),
               std::vector<std::vector<double>>(num_classes, std::vector<double>(d, 0.0)),
               std::vector<std::vector<double>>(num_classes, std::vector<double>(d, 0.0))};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (c >= num_classes) throw InputError("label " + std::to_string(c) + " outside class range");
    ++s.counts[c];
    for (std::size_t j = 0; j < d; ++j) s.mean[c][j] += features[i * d + j];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (s.counts[c] == 0) continue;
    for (double& v : s.mean[c]) v /= static_cast<double>(s.counts[c]);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = features[i * d + j] - s.mean[c][j];
      s.variance[c][j] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (s.counts[c] == 0) continue;
    for (double& v : s.variance[c]) v /= static_cast<double>(s.counts[c]);
  }
  return s;
}

// Count-weighted pooling: the mean is the pooled mean and the variance adds
// the spread of client means around it.
inline ClassStats aggregate_stats(std::span<const ClassStats> clients) {
  if (clients.empty()) throw InputError("no client statistics to aggregate");
  const std::size_t c_count = clients.front().num_classes(), d = clients.front().dim;
  for (const ClassStats& s : clients) {
    if (s.num_classes() != c_count || s.dim != d) throw InputError("client statistics disagree in shape");
  }
  ClassStats out{d, std::vector<std::size_t>(c_count, 0),
                 std::vector<std::vector<double>>(c_count, std::vector<double>(d, 0.0)),
                 std::vector<std::vector<double>>(c_count, std::vector<double>(d, 0.0))};
  for (std::size_t c = 0; c < c_count; ++c) {
    for (const ClassStats& s : clients) out.counts[c] += s.counts[c];
    if (out.counts[c] == 0) continue;
    const double total = static_cast<double>(out.counts[c]);
    for (const ClassStats& s : clients) {
      const double w = static_cast<double>(s.counts[c]) / total;
      for (std::size_t j = 0; j < d; ++j) out.mean[c][j] += w * s.mean[c][j];
    }
    for (const ClassStats& s : clients) {
      const double w = static_cast<double>(s.counts[c]) / total;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = s.mean[c][j] - out.mean[c][j];
        out.variance[c][j] += w * (s.variance[c][j] + diff * diff);
      }
    }
  }
  return out;
}

// Serialized size of the statistics a client uploads: counts, means and
// variances as 32-bit values.
inline std::uint64_t stats_payload_bytes(std::size_t num_classes, std::size_t dim) {
  return 4 * (num_classes + 2 * num_classes * dim);
}

struct CalibrationResult {
  Network classifier;
  std::vector<EpochStats> epochs;
  std::vector<std::string> warnings;
};

// Retrains a single-Dense classifier on virtual features drawn from the
// pooled per-class diagonal Gaussians. Classes nobody holds are skipped
// (the classifier keeps all C outputs).
inline CalibrationResult calibrate_classifier(const Network& initial, std::span<const ClassStats> client_stats,
                                              const CalibrationConfig& cfg, const TrainConfig& train,
                                              std::uint64_t seed) {
  if (initial.layers.size() != 1 || !std::holds_alternative<Dense>(initial.layers.front())) {
    throw ConfigError("calibration needs a classifier made of one Dense layer");
  }
  const ClassStats pooled = aggregate_stats(client_stats);
  const Dense& dense = std::get<Dense>(initial.layers.front());
  if (dense.in != pooled.dim || dense.out != pooled.num_classes()) {
    throw ShapeError("classifier " + std::to_string(dense.in) + "->" + std::to_string(dense.out) +
                     " does not match statistics of dimension " + std::to_string(pooled.dim) + " over " +
                     std::to_string(pooled.num_classes()) + " classes");
  }
  CalibrationResult result{initial, {}, {}};
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < pooled.num_classes(); ++c) {
    if (pooled.counts[c] == 0) {
      result.warnings.push_back("calibration: class " + std::to_string(c) + " has no samples on any client, skipped");
    } else {
      present.push_back(c);
    }
  }
  if (cfg.virtual_per_class == 0 || cfg.epochs == 0 || present.empty()) return result;

  const std::size_t v = cfg.virtual_per_class, d = pooled.dim;
  Dataset virt;
  virt.num_classes = pooled.num_classes();
  virt.inputs = Tensor({present.size() * v, d});
  Rng rng(derive_seed(seed, "calibrate-virtual"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t row = 0;
  for (std::size_t c : present) {
    for (std::size_t i = 0; i < v; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) {
        virt.inputs[row * d + j] = pooled.mean[c][j] + std::sqrt(pooled.variance[c][j]) * normal(rng);
      }
      virt.labels.push_back(c);
    }
  }
  TrainConfig tc = train;
  if (cfg.learning_rate) tc.learning_rate = *cfg.learning_rate;
  LocalTrainResult trained = train_local(initial, virt, cfg.epochs, tc, derive_seed(seed, "calibrate-train"));
  result.classifier = std::move(trained.net);
  result.epochs = std::move(trained.epochs);
  return result;
}

}  // namespace fusefl
