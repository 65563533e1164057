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
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

struct Partition {
  std::vector<std::vector<std::size_t>> client_indices;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::size_t attempts = 0;  // resamples needed to satisfy min_per_client

  std::size_t num_clients() const noexcept { return client_indices.size(); }
};

inline constexpr std::size_t kMaxPartitionAttempts = 100;

// Draws p ~ Dirichlet(alpha * 1_M) through normalized Gamma(alpha, 1) draws.
inline std::vector<double> sample_dirichlet(std::size_t m, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(m);
  double total = 0.0;
  for (double& v : p) total += (v = gamma(rng));
  if (!(total > 0.0)) {
    // Every draw underflowed (tiny alpha): the limit is a point mass.
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(rng)] = 1.0;
    return p;
  }
  for (double& v : p) v /= total;
  return p;
}

// Latent Dirichlet Sampling. For every class, proportions over clients are
// drawn from Dirichlet(alpha) and the class's shuffled indices are cut at the
// cumulative proportions. The whole draw is repeated with a fresh derived
// seed until each client holds at least min_per_client samples.
inline Partition dirichlet_partition(const Dataset& data, std::size_t clients, double alpha,
                                     std::uint64_t seed, std::size_t min_per_client) {
  if (clients == 0) throw ConfigError("number of clients must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (data.empty()) throw PartitionError("cannot partition an empty dataset");

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);

  for (std::size_t attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
    Rng rng(derive_seed(seed, "dirichlet-partition", {attempt}));
    Partition part{std::vector<std::vector<std::size_t>>(clients), alpha, seed, attempt + 1};
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<std::size_t> idx = members;
      std::shuffle(idx.begin(), idx.end(), rng);
      const std::vector<double> p = sample_dirichlet(clients, alpha, rng);
      double cumulative = 0.0;
      std::size_t begin = 0;
      for (std::size_t m = 0; m < clients; ++m) {
        cumulative += p[m];
        std::size_t end = m + 1 == clients
                              ? idx.size()
                              : static_cast<std::size_t>(cumulative * static_cast<double>(idx.size()));
        end = std::clamp(end, begin, idx.size());
        part.client_indices[m].insert(part.client_indices[m].end(),
                                      idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                      idx.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    bool ok = true;
    for (auto& list : part.client_indices) {
      std::sort(list.begin(), list.end());
      ok = ok && list.size() >= std::max<std::size_t>(min_per_client, 1);
    }
    if (ok) return part;
  }
  throw PartitionError("could not give every client " + std::to_string(min_per_client) +
                       " samples after " + std::to_string(kMaxPartitionAttempts) + " resamples");
}

inline std::vector<Dataset> split_dataset(const Dataset& data, const Partition& part) {
  std::vector<Dataset> out;
  out.reserve(part.num_clients());
  for (const auto& idx : part.client_indices) out.push_back(subset(data, idx));
  return out;
}

// Mean over clients of the total-variation distance between the client's
// label distribution and the pooled label distribution.
inline double mean_label_tv_distance(const Partition& part, std::span<const std::size_t> labels,
                                     std::size_t num_classes) {
  const std::vector<std::size_t> global = label_histogram(labels, num_classes);
  const double n = static_cast<double>(labels.size());
  double sum = 0.0;
  for (const auto& idx : part.client_indices) {
    std::vector<std::size_t> local(num_classes, 0);
    for (std::size_t i : idx) ++local[labels[i]];
    double tv = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      tv += std::abs(static_cast<double>(local[c]) / static_cast<double>(idx.size()) -
                     static_cast<double>(global[c]) / n);
    }
    sum += 0.5 * tv;
  }
  return sum / static_cast<double>(part.num_clients());
}

}  // namespace fusefl
