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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/model/spec.hpp"
#include "fusefl/nn/network.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

enum class AdaptorKind { kAverage, kLinearMix };

inline std::string to_string(AdaptorKind kind) {
  return kind == AdaptorKind::kAverage ? "average" : "linear_mix";
}

// Maps the concatenated outputs of M branches into the input of a client's
// next block. Average is a parameter-free mean over equal-sized branch
// slices; LinearMix is a trainable 1x1 convolution (spatial features) or a
// Dense layer (flat features) over the concatenation.
struct Adaptor {
  AdaptorKind kind = AdaptorKind::kAverage;
  Network net;  // input_shape is the concatenated branch shape
};

// Per-sample shape of the concatenation of branch outputs along axis 0 of
// the sample shape (features or channels).
inline Shape concat_shape(std::span<const Shape> branch_shapes) {
  if (branch_shapes.empty()) throw FusionError("no branches to concatenate");
  Shape out = branch_shapes.front();
  if (out.empty()) throw FusionError("branch outputs must have a feature axis");
  out[0] = 0;
  for (const Shape& s : branch_shapes) {
    bool ok = s.size() == out.size();
    for (std::size_t i = 1; ok && i < s.size(); ++i) ok = s[i] == out[i];
    if (!ok) {
      throw FusionError("branch outputs " + shape_str(branch_shapes.front()) + " and " + shape_str(s) +
                        " cannot be concatenated");
    }
    out[0] += s[0];
  }
  return out;
}

inline Adaptor make_adaptor(AdaptorKind kind, std::span<const Shape> branch_shapes, std::size_t out_dim,
                            std::uint64_t seed) {
  const Shape in = concat_shape(branch_shapes);
  const bool spatial = in.size() == 3;
  if (in.size() != 1 && !spatial) throw FusionError("adaptor needs flat or [C,H,W] branch outputs");
  Adaptor a{kind, {}};
  a.net.input_shape = in;
  if (kind == AdaptorKind::kAverage) {
    for (const Shape& s : branch_shapes) {
      if (s != branch_shapes.front()) {
        throw ConfigError("average adaptor needs equal branch shapes, got " + shape_str(branch_shapes.front()) +
                          " and " + shape_str(s) + "; use a linear_mix adaptor");
      }
    }
    if (out_dim != branch_shapes.front()[0]) {
      throw ConfigError("average adaptor output " + std::to_string(out_dim) + " differs from branch width " +
                        std::to_string(branch_shapes.front()[0]) + "; use a linear_mix adaptor");
    }
    a.net.layers = {BranchMean{branch_shapes.size()}};
  } else {
    // The concatenation has roughly M times the squared norm of one branch;
    // rescaling keeps the mixing layer's step size comparable to a plain block.
    const Scale scale{1.0 / std::sqrt(static_cast<double>(branch_shapes.size()))};
    if (spatial) {
      a.net.layers = {scale, Conv2d{in[0], out_dim, 1, 1, 0}};
    } else {
      a.net.layers = {scale, Dense{in[0], out_dim}};
    }
  }
  a.net.params = init_params(a.net.layers, seed);
  return a;
}

// The M frozen client blocks of one stage, evaluated side by side and
// concatenated in client_order.
struct FusedStage {
  std::vector<Network> branches;  // indexed by client id
  std::vector<std::size_t> client_order;

  const Shape& input_shape() const { return branches.front().input_shape; }

  std::vector<Shape> branch_output_shapes() const {
    std::vector<Shape> shapes;
    for (const Network& b : branches) shapes.push_back(b.output_shape());
    return shapes;
  }

  // Output shapes in concatenation order.
  std::vector<Shape> ordered_output_shapes() const {
    std::vector<Shape> shapes;
    for (std::size_t m : client_order) shapes.push_back(branches[m].output_shape());
    return shapes;
  }

  Shape output_shape() const {
    const auto shapes = ordered_output_shapes();
    return concat_shape(shapes);
  }

  Tensor branch_forward(std::size_t m, const Tensor& x) const { return branches.at(m).logits(x); }

  Tensor forward(const Tensor& x) const {
    std::vector<Tensor> outs;
    outs.reserve(branches.size());
    for (std::size_t m : client_order) outs.push_back(branches[m].logits(x));
    return concat_axis1(outs);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Network& b : branches) n += b.param_count();
    return n;
  }

  friend bool operator==(const FusedStage&, const FusedStage&) = default;
};

inline void check_client_order(std::span<const std::size_t> order, std::size_t clients) {
  std::vector<std::size_t> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  bool ok = sorted.size() == clients;
  for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == i;
  if (!ok) throw FusionError("client order is not a permutation of 0.." + std::to_string(clients - 1));
}

// Deep-copies and freezes the trained stage blocks of all clients.
inline FusedStage fuse_stage(std::vector<Network> branches, std::vector<std::size_t> client_order) {
  if (branches.empty()) throw FusionError("cannot fuse zero branches");
  check_client_order(client_order, branches.size());
  for (std::size_t m = 0; m < branches.size(); ++m) {
    if (branches[m].input_shape != branches.front().input_shape) {
      throw FusionError("branch " + std::to_string(m) + " input " + shape_str(branches[m].input_shape) +
                        " differs from " + shape_str(branches.front().input_shape));
    }
    for (const auto& [idx, entry] : branches[m].params) {
      if (!entry.weights.all_finite() || !entry.bias.all_finite()) {
        throw FusionError("branch " + std::to_string(m) + " has non-finite parameters");
      }
    }
    set_trainable(branches[m].params, false);
  }
  FusedStage stage{std::move(branches), std::move(client_order)};
  (void)stage.output_shape();
  return stage;
}

// Stacked fused stages followed by a head (final adaptor, pooling and the
// global classifier).
struct FusedModel {
  std::vector<FusedStage> stages;
  Network head;

  std::size_t num_stages() const noexcept { return stages.size(); }
  std::size_t num_clients() const { return stages.empty() ? 0 : stages.front().branches.size(); }

  // Output of fused stages [0, k); k == 0 returns x.
  Tensor prefix_features(std::size_t k, const Tensor& x) const {
    if (k > stages.size()) throw InternalError("stage " + std::to_string(k) + " out of range");
    Tensor h = x;
    for (std::size_t s = 0; s < k; ++s) {
      try {
        h = stages[s].forward(h);
      } catch (const ShapeError& e) {
        throw InternalError("fused stage " + std::to_string(s + 1) + ": " + e.what());
      }
    }
    return h;
  }

  Tensor stage_features(std::size_t k, const Tensor& x) const {
    if (k > stages.size()) throw ProbeError("stage " + std::to_string(k) + " out of range");
    return prefix_features(k, x);
  }

  Tensor logits(const Tensor& x) const { return head.logits(prefix_features(stages.size(), x)); }

  std::size_t param_count() const {
    std::size_t n = head.param_count();
    for (const FusedStage& s : stages) n += s.param_count();
    return n;
  }

  friend bool operator==(const FusedModel&, const FusedModel&) = default;
};

inline Tensor fused_forward(const FusedModel& model, const Tensor& x) { return model.logits(x); }

// Client m's own path through a fused model: stage k features are branch m
// of stage k applied to the fused output of stage k-1.
struct FusedBranchView {
  const FusedModel* model = nullptr;
  std::size_t client = 0;

  std::size_t num_stages() const { return model->num_stages(); }

  Tensor stage_features(std::size_t k, const Tensor& x) const {
    if (k > model->num_stages()) throw ProbeError("stage " + std::to_string(k) + " out of range");
    if (k == 0) return x;
    return model->stages[k - 1].branch_forward(client, model->prefix_features(k - 1, x));
  }
};

// Input width (features or channels) of the first layer of a block.
inline std::size_t block_input_width(const Network& block) { return block.input_shape.at(0); }

// Assembles already-trained client networks (identical block structure)
// into a fused model without further training: the block k+1 branch of
// client m is a fresh adaptor over the stage-k concatenation followed by
// the client's block k+1, and the head is a final adaptor followed by the
// element-wise mean of the client classifiers.
inline FusedModel assemble_fused_model(std::span<const StagedNetwork> clients, AdaptorKind kind,
                                       std::uint64_t seed, std::vector<std::size_t> client_order = {}) {
  if (clients.empty()) throw FusionError("no clients to assemble");
  const std::size_t m_count = clients.size(), k_count = clients.front().num_stages();
  if (client_order.empty()) {
    client_order.resize(m_count);
    std::iota(client_order.begin(), client_order.end(), 0);
  }
  FusedModel model;
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<Network> branches;
    for (std::size_t m = 0; m < m_count; ++m) {
      const StagedNetwork& c = clients[m];
      if (c.num_stages() != k_count) throw FusionError("clients disagree on the number of blocks");
      const std::size_t begin = k == 0 ? 0 : c.block_ends[k - 1];
      Network block = slice_network(c.net, begin, c.block_ends[k]);
      if (k > 0) {
        const auto shapes = model.stages.back().ordered_output_shapes();
        Adaptor a = make_adaptor(kind, shapes, block_input_width(block), derive_seed(seed, "assemble", {m, k}));
        block = chain_networks(a.net, block);
      }
      branches.push_back(std::move(block));
    }
    model.stages.push_back(fuse_stage(std::move(branches), client_order));
  }
  const auto shapes = model.stages.back().ordered_output_shapes();
  const StagedNetwork& first = clients.front();
  Network classifier = slice_network(first.net, first.block_ends.back(), first.net.layers.size());
  for (auto& [idx, entry] : classifier.params) {
    for (std::size_t m = 1; m < m_count; ++m) {
      const Network other = slice_network(clients[m].net, clients[m].block_ends.back(), clients[m].net.layers.size());
      const ParamEntry& o = other.params.at(idx);
      if (o.weights.shape() != entry.weights.shape()) throw FusionError("client classifiers differ in shape");
      for (std::size_t i = 0; i < entry.weights.size(); ++i) entry.weights[i] += o.weights[i];
      for (std::size_t i = 0; i < entry.bias.size(); ++i) entry.bias[i] += o.bias[i];
    }
    for (double& w : entry.weights.raw()) w /= static_cast<double>(m_count);
    for (double& b : entry.bias.raw()) b /= static_cast<double>(m_count);
  }
  Adaptor head = make_adaptor(kind, shapes, block_input_width(classifier), derive_seed(seed, "assemble-head"));
  model.head = chain_networks(head.net, classifier);
  return model;
}

}  // namespace fusefl
