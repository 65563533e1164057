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
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/train.hpp"
#include "fusefl/nn/network.hpp"
#include "fusefl/nn/optim.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

struct ProbeConfig {
  std::size_t probe_epochs = 10;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  // Hidden widths of the reconstruction decoder are capped here.
  std::size_t decoder_hidden_cap = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (probe_epochs < 1) throw ConfigError("probe.epochs must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("probe.learning_rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("probe.momentum must be in [0,1)");
    if (batch_size == 0) throw ConfigError("probe.batch_size must be positive");
    if (decoder_hidden_cap == 0) throw ConfigError("probe.decoder_hidden_cap must be positive");
  }
};

// Anything exposing per-stage features; stage 0 is the input.
template <class M>
concept StagedModel = requires(const M& m, std::size_t k, const Tensor& x) {
  { m.num_stages() } -> std::convertible_to<std::size_t>;
  { m.stage_features(k, x) } -> std::convertible_to<Tensor>;
};

struct StageProbe {
  std::size_t stage = 0;
  double mi_x_proxy = 0.0;            // -reconstruction_error
  double mi_y = 0.0;                  // nats
  double separability = 0.0;          // linear probe test accuracy
  double reconstruction_error = 0.0;  // mean squared error per input element

  friend bool operator==(const StageProbe&, const StageProbe&) = default;
};

struct ProbeResult {
  std::vector<StageProbe> stages;
  double label_entropy = 0.0;  // nats

  friend bool operator==(const ProbeResult&, const ProbeResult&) = default;
};

// Empirical label entropy in nats.
inline double label_entropy(std::span<const std::size_t> labels, std::size_t num_classes) {
  if (labels.empty()) throw ProbeError("label entropy of an empty dataset");
  const auto hist = label_histogram(labels, num_classes);
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(labels.size());
    h -= p * std::log(p);
  }
  return h;
}

// Per-column affine map to zero mean and unit variance. Constant columns are
// only centered. Invertible, so it changes no information content, but it
// keeps probe SGD stable on features with large norms.
struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const Tensor& x) {
    const std::size_t n = x.dim(0), d = x.row_size();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[i * d + j];
    }
    for (double& m : s.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x[i * d + j] - s.mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      if (sd > 1e-12) s.scale[j] = 1.0 / sd;
    }
    return s;
  }

  Tensor apply(const Tensor& x) const {
    const std::size_t n = x.dim(0), d = x.row_size();
    if (d != mean.size()) throw ShapeError("standardizer fitted on width " + std::to_string(mean.size()));
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (x[i * d + j] - mean[j]) * scale[j];
    }
    return out;
  }
};

namespace detail {

inline Tensor flat_rows(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped({t.dim(0), t.row_size()}); }

template <StagedModel M>
Tensor probe_features(const M& model, std::size_t k, const Tensor& x) {
  return flat_rows(map_batches(x, [&](const Tensor& b) { return flat_rows(model.stage_features(k, b)); }));
}

inline void check_stage(std::size_t k, std::size_t num_stages, bool allow_input) {
  if ((!allow_input && k == 0) || k > num_stages) {
    throw ProbeError("stage " + std::to_string(k) + " out of range [" + (allow_input ? "0" : "1") + "," +
                     std::to_string(num_stages) + "]");
  }
}

// Minibatch SGD on `net` over the rows of `x`. `loss(output, rows)` returns
// the batch loss and gradient; `score(net)` is evaluated before training and
// after every epoch, and the smallest value is returned.
template <class Loss, class Score>
double fit_min(Network& net, const Tensor& x, const ProbeConfig& cfg, std::uint64_t seed, Loss&& loss,
               Score&& score) {
  OptState opt = make_opt_state(cfg.learning_rate, cfg.momentum);
  Rng rng(seed);
  const std::size_t n = x.dim(0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best = score(net);
  for (std::size_t e = 0; e < cfg.probe_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(cfg.batch_size, n - b));
      const ForwardResult fr = forward(net.layers, net.params, gather_rows(x, rows));
      const LossResult l = loss(fr.output, rows);
      sgd_step(net.params, backward(net.layers, net.params, fr.cache, l.dlogits).grads, opt);
    }
    best = std::min(best, score(net));
  }
  return best;
}

// Single Dense layer with zero weights and log-prior biases: its initial
// cross-entropy on `labels` is exactly their label entropy.
inline Network prior_classifier(std::size_t d, std::span<const std::size_t> labels, std::size_t classes) {
  Network net{{d}, {Dense{d, classes}}, {}};
  ParamEntry e{Tensor({classes, d}), Tensor({classes}), true};
  const auto hist = label_histogram(labels, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    e.bias[c] = hist[c] == 0 ? -10.0 : std::log(static_cast<double>(hist[c]) / static_cast<double>(labels.size()));
  }
  net.params.emplace(0, std::move(e));
  return net;
}

inline double mean_cross_entropy(const Network& net, const Tensor& x, std::span<const std::size_t> labels) {
  const Tensor logits = map_batches(x, [&net](const Tensor& b) { return net.logits(b); });
  return cross_entropy(logits, labels).loss;
}

inline Dataset feature_dataset(Tensor x, std::vector<std::size_t> labels, std::size_t classes) {
  Dataset d;
  d.inputs = std::move(x);
  d.labels = std::move(labels);
  d.num_classes = classes;
  return d;
}

}  // namespace detail

// Test accuracy of one Dense layer trained on frozen, standardized stage-k
// features of `train`.
template <StagedModel M>
double linear_separability(const M& model, std::size_t k, const Dataset& train, const Dataset& test,
                           const ProbeConfig& cfg) {
  cfg.validate();
  detail::check_stage(k, model.num_stages(), false);
  if (train.empty() || test.empty()) throw ProbeError("probe datasets must not be empty");
  const Tensor f_train = detail::probe_features(model, k, train.inputs);
  const Standardizer std_map = Standardizer::fit(f_train);
  const std::size_t d = f_train.row_size(), classes = std::max(train.num_classes, test.num_classes);
  const Dataset tr = detail::feature_dataset(std_map.apply(f_train), train.labels, classes);
  const Dataset te = detail::feature_dataset(std_map.apply(detail::probe_features(model, k, test.inputs)),
                                             test.labels, classes);
  Network probe = make_network({d}, {Dense{d, classes}}, derive_seed(cfg.seed, "probe-linear-init", {k}));
  const TrainConfig tc{cfg.learning_rate, cfg.momentum, cfg.batch_size};
  probe = train_local(std::move(probe), tr, cfg.probe_epochs, tc, derive_seed(cfg.seed, "probe-linear", {k})).net;
  return evaluate(probe, te);
}

// I(H^k; Y) estimate: label entropy minus the smallest cross-entropy an
// auxiliary Dense classifier reaches on the stage-k features, clamped to
// [0, H(y)]. The classifier trains on a seeded 80% of the rows and the
// cross-entropy is measured on the other 20%, so memorizing labels that are
// unrelated to the features does not count as information.
template <StagedModel M>
double estimate_mi_y(const M& model, std::size_t k, const Dataset& data, const ProbeConfig& cfg) {
  cfg.validate();
  detail::check_stage(k, model.num_stages(), true);
  if (data.empty()) throw ProbeError("probe dataset is empty");
  const auto hist = label_histogram(data.labels, data.num_classes);
  if (std::count_if(hist.begin(), hist.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw ProbeError("mutual information with labels needs at least two classes");
  }
  if (data.size() < 5) throw ProbeError("mutual information with labels needs at least 5 samples");
  const double h_y = label_entropy(data.labels, data.num_classes);
  const Tensor f = detail::probe_features(model, k, data.inputs);
  const Tensor x = Standardizer::fit(f).apply(f);

  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "probe-mi-y-split"));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  const std::size_t n_eval = data.size() / 5;
  const std::span<const std::size_t> eval_rows(perm.data(), n_eval), fit_rows(perm.data() + n_eval, perm.size() - n_eval);
  const Tensor x_fit = gather_rows(x, fit_rows), x_eval = gather_rows(x, eval_rows);
  std::vector<std::size_t> y_fit, y_eval;
  for (std::size_t r : fit_rows) y_fit.push_back(data.labels[r]);
  for (std::size_t r : eval_rows) y_eval.push_back(data.labels[r]);

  Network aux = detail::prior_classifier(x.row_size(), y_fit, data.num_classes);
  std::vector<std::size_t> batch_labels;
  const double ce = detail::fit_min(
      aux, x_fit, cfg, derive_seed(cfg.seed, "probe-mi-y", {k}),
      [&](const Tensor& out, std::span<const std::size_t> rows) {
        batch_labels.clear();
        for (std::size_t r : rows) batch_labels.push_back(y_fit[r]);
        return cross_entropy(out, batch_labels);
      },
      [&](const Network& net) { return detail::mean_cross_entropy(net, x_eval, y_eval); });
  return std::clamp(h_y - ce, 0.0, h_y);
}

// Smallest mean squared error of a decoder reconstructing the input from
// stage-k features. The decoder mirrors the encoder: Dense layers whose
// hidden widths are the flattened feature widths of stages k-1..1 (capped at
// cfg.decoder_hidden_cap), with ReLU between them. Stage 0 is reconstructed
// by the identity, so its error is zero.
template <StagedModel M>
double reconstruction_error(const M& model, std::size_t k, const Dataset& data, const ProbeConfig& cfg) {
  cfg.validate();
  detail::check_stage(k, model.num_stages(), true);
  if (data.empty()) throw ProbeError("probe dataset is empty");
  if (k == 0) return 0.0;
  const Tensor target = detail::flat_rows(data.inputs);
  const Tensor f = detail::probe_features(model, k, data.inputs);
  if (f.dim(0) != target.dim(0)) throw ProbeError("feature rows do not match the dataset");
  const Tensor x = Standardizer::fit(f).apply(f);

  const Tensor probe_row = slice_rows(data.inputs, 0, 1);
  std::vector<std::size_t> widths{x.row_size()};
  for (std::size_t s = k; s-- > 1;) {
    widths.push_back(std::min(cfg.decoder_hidden_cap, detail::flat_rows(model.stage_features(s, probe_row)).row_size()));
  }
  widths.push_back(target.row_size());
  BlockSpec layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (i > 0) layers.push_back(ReLU{});
    layers.push_back(Dense{widths[i], widths[i + 1]});
  }
  Network dec = make_network({widths.front()}, std::move(layers), derive_seed(cfg.seed, "probe-decoder-init", {k}));
  // Zero output weights and a mean bias: the untrained decoder is the best
  // constant reconstruction, whose error is the variance of the input.
  ParamEntry& out = dec.params.at(dec.layers.size() - 1);
  out.weights.fill(0.0);
  const Standardizer target_stats = Standardizer::fit(target);
  for (std::size_t j = 0; j < target.row_size(); ++j) out.bias[j] = target_stats.mean[j];

  auto mse_of = [&](const Network& net) {
    const Tensor pred = map_batches(x, [&net](const Tensor& b) { return net.logits(b); });
    return mean_squared_error(pred, target).loss;
  };
  return detail::fit_min(
      dec, x, cfg, derive_seed(cfg.seed, "probe-mi-x", {k}),
      [&](const Tensor& pred, std::span<const std::size_t> rows) {
        return mean_squared_error(pred, gather_rows(target, rows));
      },
      mse_of);
}

// I(H^k; X) proxy: the negated reconstruction error (H(x) is an unknown
// constant, so only comparisons between models or stages are meaningful).
template <StagedModel M>
double estimate_mi_x(const M& model, std::size_t k, const Dataset& data, const ProbeConfig& cfg) {
  return -reconstruction_error(model, k, data, cfg);
}

// All three probes at stages 1..K. Only `model.stage_features` is called,
// so the model is never modified.
template <StagedModel M>
ProbeResult run_probes(const M& model, const Dataset& train, const Dataset& test, const ProbeConfig& cfg) {
  cfg.validate();
  ProbeResult result;
  result.label_entropy = label_entropy(train.labels, train.num_classes);
  for (std::size_t k = 1; k <= model.num_stages(); ++k) {
    StageProbe p;
    p.stage = k;
    p.reconstruction_error = reconstruction_error(model, k, train, cfg);
    p.mi_x_proxy = -p.reconstruction_error;
    p.mi_y = estimate_mi_y(model, k, train, cfg);
    p.separability = linear_separability(model, k, train, test, cfg);
    result.stages.push_back(p);
  }
  return result;
}

}  // namespace fusefl
