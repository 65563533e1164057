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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/baselines.hpp"
#include "fusefl/federation/calibrate.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/federation/cost.hpp"
#include "fusefl/federation/metrics.hpp"
#include "fusefl/federation/train.hpp"
#include "fusefl/model/fusion.hpp"
#include "fusefl/model/spec.hpp"

namespace fusefl {

struct FuseFLResult {
  RunMetrics metrics;
  FusedModel model;
  std::vector<ModelSpec> client_specs;
};

// Client architectures: the template scaled to round(n_s / sqrt(M)) (or the
// configured policy), or per-client widths when given.
inline std::vector<ModelSpec> fusefl_client_specs(const ModelSpec& tmpl, const FedConfig& cfg) {
  std::vector<ModelSpec> specs;
  if (!cfg.client_widths.empty()) {
    for (std::size_t w : cfg.client_widths) specs.push_back(build_client_spec(tmpl, w));
    return specs;
  }
  const ModelSpec spec = build_client_spec(tmpl, scale_width(tmpl.base_width, cfg.clients, cfg.scaling));
  return std::vector<ModelSpec>(cfg.clients, spec);
}

// Index of the classifier's Dense layer, which must be its last layer and
// its only parametric one.
inline std::size_t classifier_dense_index(const BlockSpec& classifier) {
  if (classifier.empty() || !std::holds_alternative<Dense>(classifier.back())) {
    throw ConfigError("fusefl needs a classifier that ends in a Dense layer");
  }
  for (std::size_t i = 0; i + 1 < classifier.size(); ++i) {
    if (has_params(classifier[i])) {
      throw ConfigError("fusefl needs the classifier's Dense layer to be its only parametric layer");
    }
  }
  return classifier.size() - 1;
}

namespace detail {

// Feature width (first axis) at the output of block k of a spec.
inline std::size_t block_output_width(const ModelSpec& spec, std::size_t k) {
  return infer_shapes(spec.flattened(), spec.input_shape).at(spec.block_ends().at(k)).at(0);
}

inline std::size_t block_input_width(const ModelSpec& spec, std::size_t k) {
  return k == 0 ? spec.input_shape.at(0) : block_output_width(spec, k - 1);
}

}  // namespace detail

// Train-and-fuse: at stage k every client trains its remaining model (its
// stage-k adaptor, blocks k..K and its classifier) on the output of the
// frozen fused prefix, then all clients' stage-k blocks are fused side by
// side. The final classifier reads the fused stage-K features and is
// calibrated on pooled class statistics.
inline FuseFLResult run_fusefl(const ModelSpec& tmpl, const FedConfig& cfg, std::span<const Dataset> clients,
                               const Dataset& test) {
  check_clients(cfg, clients);
  const std::size_t k_count = cfg.stages, m_count = cfg.clients, classes = tmpl.num_classes;
  if (tmpl.num_blocks() != k_count) {
    throw ConfigError("model has " + std::to_string(tmpl.num_blocks()) + " blocks but fed.stages is " +
                      std::to_string(k_count));
  }
  FuseFLResult r;
  r.client_specs = fusefl_client_specs(tmpl, cfg);
  const std::vector<ModelSpec>& specs = r.client_specs;
  for (const ModelSpec& s : specs) (void)classifier_dense_index(s.classifier);
  RunMetrics& metrics = r.metrics;
  metrics.algorithm = Algorithm::kFuseFL;
  metrics.epochs_per_part = split_epochs(cfg.total_epochs, k_count);
  metrics.template_params = tmpl.param_count();
  metrics.model_bytes = payload_bytes(specs.front().param_count());
  if (cfg.total_epochs % k_count != 0) {
    metrics.warnings.push_back("epochs " + std::to_string(cfg.total_epochs) + " not divisible by " +
                               std::to_string(k_count) + " stages; last stage trains " +
                               std::to_string(metrics.epochs_per_part.back()) + " epochs");
  }

  std::vector<Network> suffix;
  std::vector<std::size_t> adaptor_len(m_count, 0);
  std::vector<Tensor> feats;
  std::vector<std::uint64_t> uploads(m_count, 0);
  for (std::size_t m = 0; m < m_count; ++m) {
    suffix.push_back(make_staged_network(specs[m], client_init_seed(cfg.seed, m)).net);
    metrics.client_params.push_back(specs[m].param_count());
    feats.push_back(clients[m].inputs);
  }
  Tensor test_feats = test.inputs;
  std::vector<std::size_t> order(m_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<FusedStage> snapshots;
  FusedModel& model = r.model;

  for (std::size_t s = 0; s < k_count; ++s) {
    for (std::size_t m = 0; m < m_count; ++m) {
      const Dataset local{feats[m], clients[m].labels, classes};
      LocalTrainResult lr =
          train_local(std::move(suffix[m]), local, metrics.epochs_per_part[s], cfg.train,
                      client_stream_seed(cfg.seed, m, s));
      append_epochs(metrics, "fusefl", s + 1, m, lr.epochs);
      suffix[m] = std::move(lr.net);
      if (s + 1 == k_count) {
        metrics.client_local_acc.push_back(evaluate(suffix[m], local));
        metrics.client_global_acc.push_back(evaluate(suffix[m], Dataset{test_feats, test.labels, classes}));
      }
    }
    if (s > 0) {
      bool identical = true;
      for (std::size_t j = 0; j < s; ++j) identical = identical && model.stages[j] == snapshots[j];
      metrics.freeze_audit.push_back({s + 1, s, identical});
      if (!identical) throw InternalError("fused stages changed during stage " + std::to_string(s + 1));
    }

    std::vector<Network> branches, rest;
    for (std::size_t m = 0; m < m_count; ++m) {
      const std::size_t end = adaptor_len[m] + specs[m].blocks[s].size();
      branches.push_back(slice_network(suffix[m], 0, end));
      rest.push_back(slice_network(suffix[m], end, suffix[m].layers.size()));
      uploads[m] += payload_bytes(branches.back());
    }
    model.stages.push_back(fuse_stage(std::move(branches), order));
    snapshots.push_back(model.stages.back());
    const FusedStage& stage = model.stages.back();
    auto apply = [&stage](const Tensor& x) { return stage.forward(x); };
    for (Tensor& f : feats) f = map_batches(f, apply);
    test_feats = map_batches(test_feats, apply);

    if (s + 1 < k_count) {
      const std::vector<Shape> shapes = stage.ordered_output_shapes();
      for (std::size_t m = 0; m < m_count; ++m) {
        const Adaptor a = make_adaptor(cfg.adaptor, shapes, block_input_width(rest[m]),
                                       derive_seed(cfg.seed, "adaptor", {m, s + 1}));
        adaptor_len[m] = a.net.layers.size();
        suffix[m] = chain_networks(a.net, rest[m]);
      }
    } else {
      suffix = std::move(rest);
    }
  }

  // Head: pooling layers of the classifier over the fused features (after a
  // branch mean for Average adaptors, a 1/sqrt(M) scale for LinearMix), then
  // one Dense layer.
  const bool average = cfg.adaptor == AdaptorKind::kAverage;
  const std::vector<Shape> shapes = model.stages.back().ordered_output_shapes();
  Network pre;
  pre.input_shape = concat_shape(shapes);
  if (average) {
    pre.layers = make_adaptor(AdaptorKind::kAverage, shapes, block_input_width(suffix.front()), 0).net.layers;
  } else {
    pre.layers = {Scale{1.0 / std::sqrt(static_cast<double>(m_count))}};
  }
  const BlockSpec& lambda = suffix.front().layers;
  pre.layers.insert(pre.layers.end(), lambda.begin(), lambda.end() - 1);
  const Shape pre_out = output_shape(pre.layers, pre.input_shape);
  if (pre_out.size() != 1) throw ConfigError("classifier must flatten features before its Dense layer");
  const std::size_t d = pre_out[0];

  Network dense;
  if (average) {
    std::vector<ParamSet> heads;
    for (const Network& l : suffix) {
      const Network last = slice_network(l, l.layers.size() - 1, l.layers.size());
      if (last.layers.front() != LayerSpec(Dense{d, classes})) {
        throw ConfigError("client classifiers differ; use a linear_mix adaptor");
      }
      heads.push_back(last.params);
    }
    dense = Network{{d}, {Dense{d, classes}}, aggregate_params(heads, data_weights(clients))};
    for (std::size_t m = 0; m < m_count; ++m) uploads[m] += payload_bytes(dense);
  } else {
    dense = make_network({d}, {Dense{d, classes}}, derive_seed(cfg.seed, "head"));
  }

  const bool calibrate = cfg.calibration.enabled && !(average && m_count == 1);
  if (!average && !cfg.calibration.enabled) {
    throw ConfigError("a linear_mix head is trained only by calibration; enable calibrate.enabled");
  }
  if (calibrate) {
    std::vector<ClassStats> stats;
    for (std::size_t m = 0; m < m_count; ++m) {
      const Tensor phi = map_batches(feats[m], [&pre](const Tensor& x) { return pre.logits(x); });
      stats.push_back(compute_class_stats(phi, clients[m].labels, classes));
      uploads[m] += stats_payload_bytes(classes, d);
    }
    CalibrationResult cal =
        calibrate_classifier(dense, stats, cfg.calibration, cfg.train, derive_seed(cfg.seed, "calibrate"));
    append_epochs(metrics, "calibrate", k_count, std::nullopt, cal.epochs);
    metrics.warnings.insert(metrics.warnings.end(), cal.warnings.begin(), cal.warnings.end());
    dense = std::move(cal.classifier);
  }
  model.head = chain_networks(pre, dense);

  bool identical = true;
  for (std::size_t j = 0; j < k_count; ++j) identical = identical && model.stages[j] == snapshots[j];
  metrics.freeze_audit.push_back({k_count, k_count, identical});
  if (!identical) throw InternalError("fused stages changed during classifier calibration");

  // Closed form from the specs alone: client model bytes, minus the
  // classifier when it is not uploaded, plus LinearMix adaptors and the
  // calibration statistics.
  std::vector<std::uint64_t> closed(m_count, 0);
  for (std::size_t m = 0; m < m_count; ++m) {
    std::size_t params = specs[m].param_count();
    if (!average) params -= count_params(specs[m].classifier);
    if (!average) {
      for (std::size_t s = 1; s < k_count; ++s) {
        std::size_t in = 0;
        for (const ModelSpec& sj : specs) in += detail::block_output_width(sj, s - 1);
        const std::size_t out = detail::block_input_width(specs[m], s);
        params += in * out + out;
      }
    }
    closed[m] = payload_bytes(params) + (calibrate ? stats_payload_bytes(classes, d) : 0);
  }
  metrics.comm_bytes = std::accumulate(uploads.begin(), uploads.end(), std::uint64_t{0});
  const CostModel cost{Algorithm::kFuseFL, metrics.model_bytes, 1, m_count, false, closed};
  metrics.comm_bytes_closed_form = comm_cost(cost);
  metrics.final_params = model.param_count();
  metrics.storage_bytes = payload_bytes(metrics.final_params);
  metrics.test_accuracy = evaluate(model, test);
  return r;
}

}  // namespace fusefl
