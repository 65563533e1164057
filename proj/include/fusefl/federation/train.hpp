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
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/nn/network.hpp"
#include "fusefl/nn/optim.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One row of metrics.csv. `client` is empty for server-side phases such as
// classifier calibration.
struct EpochRecord {
  std::string phase;
  std::size_t stage_or_round = 0;
  std::optional<std::size_t> client;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
};

struct LocalTrainResult {
  Network net;
  std::vector<EpochStats> epochs;
};

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const double* p = logits.raw().data() + row * c;
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (p[k] > p[best]) best = k;
  }
  return best;
}

// Mini-batch SGD with momentum on cross-entropy. Every epoch reshuffles the
// sample order from one RNG seeded with `stream_seed`; the optimizer state
// starts fresh on every call.
inline LocalTrainResult train_local(Network net, const Dataset& data, std::size_t epochs, const TrainConfig& cfg,
                                    std::uint64_t stream_seed) {
  if (data.empty()) throw PartitionError("client dataset is empty");
  if (epochs == 0) throw ConfigError("local training needs at least one epoch");
  cfg.validate();
  if (data.sample_shape() != net.input_shape) {
    throw ShapeError("dataset samples " + shape_str(data.sample_shape()) + " do not fit network input " +
                     shape_str(net.input_shape));
  }
  OptState opt = make_opt_state(cfg.learning_rate, cfg.momentum);
  Rng rng(stream_seed);
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  LocalTrainResult result{std::move(net), {}};
  std::vector<std::size_t> batch_labels;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(cfg.batch_size, n - b));
      batch_labels.clear();
      for (std::size_t r : rows) batch_labels.push_back(data.labels[r]);
      Network& model = result.net;
      const ForwardResult fr = forward(model.layers, model.params, gather_rows(data.inputs, rows));
      const LossResult ce = cross_entropy(fr.output, batch_labels);
      loss_sum += ce.loss * static_cast<double>(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) correct += argmax_row(fr.output, i) == batch_labels[i];
      sgd_step(model.params, backward(model.layers, model.params, fr.cache, ce.dlogits).grads, opt);
    }
    result.epochs.push_back({loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)});
  }
  return result;
}

template <class M>
concept LogitModel = requires(const M& m, const Tensor& x) {
  { m.logits(x) } -> std::convertible_to<Tensor>;
};

inline constexpr std::size_t kEvalBatch = 512;

// Applies `f` to row batches of `x` and stacks the results.
template <class F>
Tensor map_batches(const Tensor& x, F&& f) {
  const std::size_t n = x.dim(0);
  Tensor out;
  for (std::size_t b = 0; b < n; b += kEvalBatch) {
    const Tensor part = f(slice_rows(x, b, std::min(n, b + kEvalBatch)));
    if (b == 0) {
      Shape shape = part.shape();
      shape[0] = n;
      out = Tensor(std::move(shape));
    }
    std::copy(part.raw().begin(), part.raw().end(), out.raw().begin() + static_cast<std::ptrdiff_t>(b * out.row_size()));
  }
  return out;
}

// Predicted classes (argmax of the logits, ties to the lowest index).
template <LogitModel M>
std::vector<std::size_t> predict_classes(const M& model, const Tensor& inputs) {
  std::vector<std::size_t> out;
  const std::size_t n = inputs.dim(0);
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += kEvalBatch) {
    const Tensor logits = model.logits(slice_rows(inputs, b, std::min(n, b + kEvalBatch)));
    for (std::size_t i = 0; i < logits.dim(0); ++i) out.push_back(argmax_row(logits, i));
  }
  return out;
}

// Fraction of samples whose predicted class equals the label.
template <LogitModel M>
double evaluate(const M& model, const Dataset& test) {
  if (test.empty()) throw InputError("cannot evaluate on an empty dataset");
  const std::vector<std::size_t> pred = predict_classes(model, test.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Averages the logits of independently trained members.
struct EnsembleModel {
  std::vector<StagedNetwork> members;

  Tensor logits(const Tensor& x) const {
    if (members.empty()) throw InternalError("empty ensemble");
    Tensor sum = members.front().logits(x);
    for (std::size_t m = 1; m < members.size(); ++m) {
      const Tensor l = members[m].logits(x);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += l[i];
    }
    for (double& v : sum.raw()) v /= static_cast<double>(members.size());
    return sum;
  }

  friend bool operator==(const EnsembleModel&, const EnsembleModel&) = default;
};

}  // namespace fusefl
