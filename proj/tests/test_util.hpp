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

// Helpers shared by the test suites. Nothing here goes through the
// federation code paths, so these can serve as independent oracles.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/nn/network.hpp"
#include "fusefl/nn/optim.hpp"

namespace fusefl::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.raw()) v = dist(rng);
  return t;
}

// Full-batch-per-epoch minibatch logistic regression trained with plain
// nn-core calls; returns the trained single Dense layer.
inline Network fit_linear_classifier(const Tensor& features, std::span<const std::size_t> labels,
                                     std::size_t classes, std::size_t epochs, double lr,
                                     std::uint64_t seed = 1) {
  const std::size_t n = features.dim(0), d = features.row_size();
  const Tensor x = features.reshaped({n, d});
  Network net = make_network({d}, {Dense{d, classes}}, seed);
  OptState opt = make_opt_state(lr, 0.9);
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t batch = 32;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += batch) {
      std::span<const std::size_t> rows(order.data() + b, std::min(batch, n - b));
      std::vector<std::size_t> y;
      for (std::size_t r : rows) y.push_back(labels[r]);
      const ForwardResult fr = forward(net.layers, net.params, gather_rows(x, rows));
      const auto ce = cross_entropy(fr.output, y);
      sgd_step(net.params, backward(net.layers, net.params, fr.cache, ce.dlogits).grads, opt);
    }
  }
  return net;
}

inline double accuracy_of(const Network& net, const Tensor& features, std::span<const std::size_t> labels) {
  const Tensor x = features.reshaped({features.dim(0), features.row_size()});
  const Tensor logits = net.logits(x);
  const std::size_t c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Columns [begin, end) of flat features.
inline Tensor feature_columns(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.dim(0), d = x.row_size();
  Tensor out({n, end - begin});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = begin; j < end; ++j) out[i * (end - begin) + j - begin] = x[i * d + j];
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fusefl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fusefl::testing
