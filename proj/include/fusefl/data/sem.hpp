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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/data/partition.hpp"
#include "fusefl/error.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

// Structural-equation synthetic data. A sample of class c on client m is
//   x = [mu_c ; s] + noise,
// where mu_c is an invariant class template shared by every client and s is
// the client's spurious template nu_{m,c} with probability
// spurious_strength, otherwise a fresh N(0, I) draw. Test samples always use
// a fresh draw for s, which breaks every client-local correlation.
struct SemConfig {
  std::size_t num_classes = 10;
  std::size_t inv_dim = 16;
  std::size_t spu_dim = 48;
  double spurious_strength = 0.9;
  double noise_std = 1.0;
  double inv_scale = 1.0;  // scale of the invariant templates
  std::size_t samples_per_client = 200;
  std::size_t clients = 5;
  std::size_t test_samples = 1000;
  // Label skew across clients via Dirichlet sampling; empty means every
  // client draws labels uniformly.
  std::optional<double> label_alpha;
  std::size_t min_per_client = 16;
  // When non-zero, inputs are shaped [1, side, side]; inv_dim + spu_dim must
  // then equal side * side.
  std::size_t image_side = 0;
  // When set, client m's spurious templates are non-zero only on its own
  // slice of the spurious block, so no other client sees variation there.
  bool disjoint_spurious = false;

  void validate() const {
    if (num_classes < 2) throw ConfigError("sem.num_classes must be at least 2");
    if (inv_dim + spu_dim == 0) throw ConfigError("sem feature dimensions must not both be zero");
    if (!(spurious_strength >= 0.0 && spurious_strength <= 1.0)) {
      throw ConfigError("sem.spurious_strength must be in [0,1]");
    }
    if (!(noise_std >= 0.0)) throw ConfigError("sem.noise_std must be non-negative");
    if (samples_per_client == 0 || clients == 0 || test_samples == 0) {
      throw ConfigError("sem sample counts and clients must be positive");
    }
    if (label_alpha && !(*label_alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (image_side != 0 && image_side * image_side != inv_dim + spu_dim) {
      throw ConfigError("sem.image_side^2 must equal inv_dim + spu_dim");
    }
  }

  Shape sample_shape() const {
    if (image_side != 0) return {1, image_side, image_side};
    return {inv_dim + spu_dim};
  }
};

struct SemTemplates {
  std::vector<std::vector<double>> invariant;               // [C][inv_dim]
  std::vector<std::vector<std::vector<double>>> spurious;   // [M][C][spu_dim]
};

struct SemData {
  std::vector<Dataset> clients;
  Dataset test;
  SemTemplates templates;
};

inline SemTemplates make_sem_templates(const SemConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sem-templates"));
  std::normal_distribution<double> normal(0.0, 1.0);
  SemTemplates t;
  t.invariant.assign(cfg.num_classes, std::vector<double>(cfg.inv_dim));
  for (auto& mu : t.invariant) {
    for (double& v : mu) v = cfg.inv_scale * normal(rng);
  }
  t.spurious.assign(cfg.clients, std::vector<std::vector<double>>(
                                     cfg.num_classes, std::vector<double>(cfg.spu_dim)));
  for (std::size_t m = 0; m < cfg.clients; ++m) {
    const std::size_t begin = cfg.disjoint_spurious ? m * cfg.spu_dim / cfg.clients : 0;
    const std::size_t end = cfg.disjoint_spurious ? (m + 1) * cfg.spu_dim / cfg.clients : cfg.spu_dim;
    for (auto& nu : t.spurious[m]) {
      for (std::size_t i = 0; i < cfg.spu_dim; ++i) {
        const double v = normal(rng);
        nu[i] = i >= begin && i < end ? v : 0.0;
      }
    }
  }
  return t;
}

namespace detail {

// Fills one sample row; `spurious` is null for a label-independent draw.
inline void sem_sample(const SemConfig& cfg, const std::vector<double>& invariant,
                       const std::vector<double>* spurious, Rng& rng, double* row) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < cfg.inv_dim; ++i) row[i] = invariant[i] + cfg.noise_std * normal(rng);
  for (std::size_t i = 0; i < cfg.spu_dim; ++i) {
    const double s = spurious != nullptr ? (*spurious)[i] : normal(rng);
    row[cfg.inv_dim + i] = s + cfg.noise_std * normal(rng);
  }
}

inline Shape sem_batch_shape(const SemConfig& cfg, std::size_t n) {
  Shape s = cfg.sample_shape();
  s.insert(s.begin(), n);
  return s;
}

}  // namespace detail

inline SemData synth_sem(const SemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SemData out;
  out.templates = make_sem_templates(cfg, seed);
  const std::size_t dim = cfg.inv_dim + cfg.spu_dim;

  // Client label lists.
  std::vector<std::vector<std::size_t>> client_labels(cfg.clients);
  if (cfg.label_alpha) {
    Dataset pool;
    pool.num_classes = cfg.num_classes;
    const std::size_t total = cfg.clients * cfg.samples_per_client;
    for (std::size_t i = 0; i < total; ++i) pool.labels.push_back(i % cfg.num_classes);
    pool.inputs = Tensor({total, 1});
    const Partition part = dirichlet_partition(pool, cfg.clients, *cfg.label_alpha,
                                               derive_seed(seed, "sem-labels"), cfg.min_per_client);
    for (std::size_t m = 0; m < cfg.clients; ++m) {
      for (std::size_t i : part.client_indices[m]) client_labels[m].push_back(pool.labels[i]);
    }
  } else {
    Rng rng(derive_seed(seed, "sem-labels"));
    std::uniform_int_distribution<std::size_t> pick(0, cfg.num_classes - 1);
    for (auto& labels : client_labels) {
      labels.resize(cfg.samples_per_client);
      for (auto& l : labels) l = pick(rng);
    }
  }

  for (std::size_t m = 0; m < cfg.clients; ++m) {
    Rng rng(derive_seed(seed, "sem-client", {m}));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    auto& labels = client_labels[m];
    std::shuffle(labels.begin(), labels.end(), rng);
    Dataset d;
    d.num_classes = cfg.num_classes;
    d.labels = labels;
    d.inputs = Tensor(detail::sem_batch_shape(cfg, labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t c = labels[i];
      const bool use_template = coin(rng) < cfg.spurious_strength;
      detail::sem_sample(cfg, out.templates.invariant[c],
                         use_template ? &out.templates.spurious[m][c] : nullptr, rng,
                         d.inputs.raw().data() + i * dim);
    }
    out.clients.push_back(std::move(d));
  }

  Rng rng(derive_seed(seed, "sem-test"));
  Dataset test;
  test.num_classes = cfg.num_classes;
  for (std::size_t i = 0; i < cfg.test_samples; ++i) test.labels.push_back(i % cfg.num_classes);
  std::shuffle(test.labels.begin(), test.labels.end(), rng);
  test.inputs = Tensor(detail::sem_batch_shape(cfg, cfg.test_samples));
  for (std::size_t i = 0; i < cfg.test_samples; ++i) {
    detail::sem_sample(cfg, out.templates.invariant[test.labels[i]], nullptr, rng,
                       test.inputs.raw().data() + i * dim);
  }
  out.test = std::move(test);
  return out;
}

}  // namespace fusefl
