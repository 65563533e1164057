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
#include <span>
#include <utility>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/federation/cost.hpp"
#include "fusefl/federation/metrics.hpp"
#include "fusefl/federation/train.hpp"
#include "fusefl/model/spec.hpp"

namespace fusefl {

// Data-weighted average theta = sum_m p_m theta_m, evaluated as
// theta_1 + sum_m p_m (theta_m - theta_1) so that identical inputs come
// back bit-identical.
inline ParamSet aggregate_params(std::span<const ParamSet> params, std::span<const double> weights) {
  if (params.empty()) throw InputError("nothing to aggregate");
  if (params.size() != weights.size()) throw InputError("one aggregation weight per client required");
  ParamSet out = params.front();
  for (auto& [idx, entry] : out) {
    for (std::size_t m = 0; m < params.size(); ++m) {
      const auto it = params[m].find(idx);
      if (it == params[m].end() || it->second.weights.shape() != entry.weights.shape() ||
          it->second.bias.shape() != entry.bias.shape()) {
        throw ConfigError("client " + std::to_string(m) + " parameters differ in structure at layer " +
                          std::to_string(idx));
      }
    }
    auto blend = [&](Tensor& dst, auto member) {
      const Tensor& base = member(params.front());
      for (std::size_t i = 0; i < dst.size(); ++i) {
        double delta = 0.0;
        for (std::size_t m = 1; m < params.size(); ++m) delta += weights[m] * (member(params[m])[i] - base[i]);
        dst[i] = base[i] + delta;
      }
    };
    blend(entry.weights, [&](const ParamSet& p) -> const Tensor& { return p.at(idx).weights; });
    blend(entry.bias, [&](const ParamSet& p) -> const Tensor& { return p.at(idx).bias; });
  }
  for (std::size_t m = 1; m < params.size(); ++m) {
    if (params[m].size() != out.size()) throw ConfigError("client parameter sets differ in layers");
  }
  return out;
}

// p_m = n_m / N.
inline std::vector<double> data_weights(std::span<const Dataset> clients) {
  std::size_t total = 0;
  for (const Dataset& d : clients) total += d.size();
  if (total == 0) throw PartitionError("all client datasets are empty");
  std::vector<double> w;
  for (const Dataset& d : clients) w.push_back(static_cast<double>(d.size()) / static_cast<double>(total));
  return w;
}

inline void check_clients(const FedConfig& cfg, std::span<const Dataset> clients) {
  cfg.validate();
  if (clients.size() != cfg.clients) {
    throw ConfigError("config has " + std::to_string(cfg.clients) + " clients but " +
                      std::to_string(clients.size()) + " datasets were given");
  }
  for (std::size_t m = 0; m < clients.size(); ++m) {
    if (clients[m].empty()) throw PartitionError("client " + std::to_string(m) + " has no data");
  }
}

struct FedAvgResult {
  RunMetrics metrics;
  StagedNetwork model;
};

// FedAvg with full participation; one-shot FedAvg is the T = 1 case.
inline FedAvgResult run_fedavg(const ModelSpec& tmpl, const FedConfig& cfg, std::span<const Dataset> clients,
                               const Dataset& test) {
  check_clients(cfg, clients);
  if (!cfg.client_widths.empty()) {
    for (std::size_t w : cfg.client_widths) {
      if (w != cfg.client_widths.front()) throw ConfigError("fedavg needs every client to share one model");
    }
  }
  const ModelSpec spec = cfg.client_widths.empty() ? tmpl : build_client_spec(tmpl, cfg.client_widths.front());
  const std::size_t rounds = cfg.effective_rounds();
  const std::vector<double> p = data_weights(clients);

  FedAvgResult r{RunMetrics{}, make_staged_network(spec, client_init_seed(cfg.seed, 0))};
  RunMetrics& metrics = r.metrics;
  metrics.algorithm = cfg.algorithm;
  metrics.epochs_per_part = split_epochs(cfg.total_epochs, rounds);
  metrics.template_params = tmpl.param_count();
  metrics.model_bytes = payload_bytes(r.model.net);
  const std::string phase = to_string(cfg.algorithm);

  std::vector<Network> locals;
  for (std::size_t t = 0; t < rounds; ++t) {
    locals.clear();
    std::vector<ParamSet> params;
    for (std::size_t m = 0; m < clients.size(); ++m) {
      LocalTrainResult lr = train_local(r.model.net, clients[m], metrics.epochs_per_part[t], cfg.train,
                                        client_stream_seed(cfg.seed, m, t));
      append_epochs(metrics, phase, t + 1, m, lr.epochs);
      metrics.comm_bytes += payload_bytes(lr.net) * (cfg.count_downlink ? 2 : 1);
      params.push_back(lr.net.params);
      locals.push_back(std::move(lr.net));
    }
    r.model.net.params = aggregate_params(params, p);
  }

  for (std::size_t m = 0; m < clients.size(); ++m) {
    metrics.client_params.push_back(locals[m].param_count());
    metrics.client_local_acc.push_back(evaluate(locals[m], clients[m]));
    metrics.client_global_acc.push_back(evaluate(locals[m], test));
  }
  metrics.test_accuracy = evaluate(r.model, test);
  metrics.final_params = r.model.net.param_count();
  CostModel cost{Algorithm::kFedAvg, metrics.model_bytes, rounds, clients.size(), cfg.count_downlink, {}};
  metrics.comm_bytes_closed_form = comm_cost(cost);
  metrics.storage_bytes = storage_cost(cost);
  return r;
}

struct EnsembleResult {
  RunMetrics metrics;
  EnsembleModel model;
};

// Every client trains its own template model for E epochs in isolation;
// the server keeps all M models and averages their logits.
inline EnsembleResult run_ensemble(const ModelSpec& tmpl, const FedConfig& cfg, std::span<const Dataset> clients,
                                   const Dataset& test) {
  check_clients(cfg, clients);
  EnsembleResult r;
  RunMetrics& metrics = r.metrics;
  metrics.algorithm = Algorithm::kEnsemble;
  metrics.epochs_per_part = {cfg.total_epochs};
  metrics.template_params = tmpl.param_count();
  for (std::size_t m = 0; m < clients.size(); ++m) {
    const ModelSpec spec = cfg.client_widths.empty() ? tmpl : build_client_spec(tmpl, cfg.client_widths[m]);
    StagedNetwork member = make_staged_network(spec, client_init_seed(cfg.seed, m));
    LocalTrainResult lr =
        train_local(std::move(member.net), clients[m], cfg.total_epochs, cfg.train, client_stream_seed(cfg.seed, m, 0));
    append_epochs(metrics, "ensemble", 1, m, lr.epochs);
    member.net = std::move(lr.net);
    metrics.comm_bytes += payload_bytes(member.net) * (cfg.count_downlink ? 2 : 1);
    metrics.client_params.push_back(member.net.param_count());
    metrics.client_local_acc.push_back(evaluate(member, clients[m]));
    metrics.client_global_acc.push_back(evaluate(member, test));
    r.model.members.push_back(std::move(member));
  }
  metrics.test_accuracy = evaluate(r.model, test);
  metrics.model_bytes = payload_bytes(r.model.members.front().net);
  metrics.final_params = 0;
  for (const StagedNetwork& s : r.model.members) metrics.final_params += s.net.param_count();
  const CostModel cost{Algorithm::kEnsemble, metrics.model_bytes, 1, clients.size(), cfg.count_downlink, {}};
  metrics.comm_bytes_closed_form = comm_cost(cost);
  metrics.storage_bytes = payload_bytes(metrics.final_params);
  return r;
}

}  // namespace fusefl
