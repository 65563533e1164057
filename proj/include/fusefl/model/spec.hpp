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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/nn/network.hpp"

namespace fusefl {

// A network decomposed into K sequential blocks followed by a classifier.
// Hidden widths are multiples of base_width.
struct ModelSpec {
  Shape input_shape;
  std::vector<BlockSpec> blocks;
  BlockSpec classifier;
  std::size_t base_width = 0;
  std::size_t num_classes = 0;

  std::size_t num_blocks() const noexcept { return blocks.size(); }

  BlockSpec flattened() const {
    BlockSpec all;
    for (const BlockSpec& b : blocks) all.insert(all.end(), b.begin(), b.end());
    all.insert(all.end(), classifier.begin(), classifier.end());
    return all;
  }

  // Layer index one past the end of each block in flattened().
  std::vector<std::size_t> block_ends() const {
    std::vector<std::size_t> ends;
    std::size_t n = 0;
    for (const BlockSpec& b : blocks) ends.push_back(n += b.size());
    return ends;
  }

  std::size_t param_count() const { return count_params(flattened()); }

  void validate() const {
    if (blocks.empty()) throw ConfigError("model needs at least one block");
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (blocks[k].empty()) throw ConfigError("block " + std::to_string(k + 1) + " is empty");
    }
    const BlockSpec all = flattened();
    check_spec(all);
    const Shape out = output_shape(all, input_shape);
    if (out != Shape{num_classes}) {
      throw ConfigError("classifier output " + shape_str(out) + " does not match " +
                        std::to_string(num_classes) + " classes");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// A trained or initialized client network together with its block
// boundaries. Stage k features are the output of block k; stage 0 is the
// input itself.
struct StagedNetwork {
  Network net;
  std::vector<std::size_t> block_ends;

  std::size_t num_stages() const noexcept { return block_ends.size(); }

  Tensor stage_features(std::size_t k, const Tensor& x) const {
    if (k > block_ends.size()) throw ProbeError("stage " + std::to_string(k) + " out of range");
    if (k == 0) return x;
    return predict_prefix(net.layers, net.params, block_ends[k - 1], x);
  }

  Tensor logits(const Tensor& x) const { return net.logits(x); }

  friend bool operator==(const StagedNetwork&, const StagedNetwork&) = default;
};

inline StagedNetwork make_staged_network(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  return StagedNetwork{make_network(spec.input_shape, spec.flattened(), seed), spec.block_ends()};
}

enum class ScalingMode { kSqrtM, kExplicit, kNone };

struct ScalingPolicy {
  ScalingMode mode = ScalingMode::kSqrtM;
  std::optional<std::size_t> explicit_width;
};

// Client width n_f for M clients: round(n_s / sqrt(M)) (at least 1), or an
// explicit override.
inline std::size_t scale_width(std::size_t base_width, std::size_t clients, const ScalingPolicy& policy) {
  if (base_width == 0) throw ConfigError("base width must be at least 1");
  if (clients == 0) throw ConfigError("number of clients must be at least 1");
  switch (policy.mode) {
    case ScalingMode::kNone:
      return base_width;
    case ScalingMode::kExplicit:
      if (!policy.explicit_width || *policy.explicit_width == 0) {
        throw ConfigError("explicit scaling needs a width of at least 1");
      }
      return *policy.explicit_width;
    case ScalingMode::kSqrtM:
      break;
  }
  const double w = std::round(static_cast<double>(base_width) / std::sqrt(static_cast<double>(clients)));
  return std::max<std::size_t>(1, static_cast<std::size_t>(w));
}

// Rescales every hidden width of the template from base_width to `width`.
// The model input and the class count stay fixed.
inline ModelSpec build_client_spec(const ModelSpec& tmpl, std::size_t width) {
  if (width == 0) throw ConfigError("client width must be at least 1");
  if (tmpl.base_width == 0) throw ConfigError("template has no base width");
  if (width == tmpl.base_width) return tmpl;
  const BlockSpec all = tmpl.flattened();
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (has_params(all[i])) {
      if (!first) first = i;
      last = i;
    }
  }
  auto rescale = [&](std::size_t dim, std::size_t layer) {
    if (dim % tmpl.base_width != 0) {
      throw ConfigError("layer " + std::to_string(layer) + " width " + std::to_string(dim) +
                        " is not a multiple of base width " + std::to_string(tmpl.base_width));
    }
    return dim / tmpl.base_width * width;
  };
  BlockSpec scaled = all;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    if (auto* d = std::get_if<Dense>(&scaled[i])) {
      if (i != first) d->in = rescale(d->in, i);
      if (i != last) d->out = rescale(d->out, i);
    } else if (auto* c = std::get_if<Conv2d>(&scaled[i])) {
      if (i != first) c->in_channels = rescale(c->in_channels, i);
      if (i != last) c->out_channels = rescale(c->out_channels, i);
    }
  }
  ModelSpec out = tmpl;
  out.base_width = width;
  std::size_t pos = 0;
  for (BlockSpec& b : out.blocks) {
    for (LayerSpec& l : b) l = scaled[pos++];
  }
  for (LayerSpec& l : out.classifier) l = scaled[pos++];
  out.validate();
  return out;
}

namespace detail {

inline std::vector<BlockSpec> group_units(const std::vector<BlockSpec>& units, std::size_t blocks) {
  if (blocks == 0 || blocks > units.size()) {
    throw ConfigError("number of blocks must be in [1," + std::to_string(units.size()) + "]");
  }
  std::vector<BlockSpec> out(blocks);
  for (std::size_t k = 0; k < blocks; ++k) {
    const std::size_t begin = k * units.size() / blocks, end = (k + 1) * units.size() / blocks;
    for (std::size_t u = begin; u < end; ++u) out[k].insert(out[k].end(), units[u].begin(), units[u].end());
  }
  return out;
}

}  // namespace detail

// MLP: `hidden_layers` Dense+ReLU units of width base_width grouped into
// `blocks` blocks, then a Dense classifier.
inline ModelSpec mlp_template(std::size_t input_dim, std::size_t num_classes, std::size_t base_width,
                              std::size_t blocks, std::size_t hidden_layers = 4) {
  std::vector<BlockSpec> units;
  for (std::size_t i = 0; i < std::max(hidden_layers, blocks); ++i) {
    units.push_back({Dense{i == 0 ? input_dim : base_width, base_width}, ReLU{}});
  }
  ModelSpec spec{{input_dim}, detail::group_units(units, blocks), {Dense{base_width, num_classes}},
                 base_width, num_classes};
  spec.validate();
  return spec;
}

// Small VGG-style CNN: four 3x3 conv units (widths w, w, 2w, 2w; pooling
// after the second and fourth), global average pooling and a Dense
// classifier. `side` must be divisible by 4.
inline ModelSpec conv_template(std::size_t in_channels, std::size_t side, std::size_t num_classes,
                               std::size_t base_width, std::size_t blocks) {
  if (side % 4 != 0 || side == 0) throw ConfigError("conv template needs an image side divisible by 4");
  const std::size_t w = base_width;
  const std::vector<BlockSpec> units{
      {Conv2d{in_channels, w, 3, 1, 1}, ReLU{}},
      {Conv2d{w, w, 3, 1, 1}, ReLU{}, AvgPool2d{2}},
      {Conv2d{w, 2 * w, 3, 1, 1}, ReLU{}},
      {Conv2d{2 * w, 2 * w, 3, 1, 1}, ReLU{}, AvgPool2d{2}},
  };
  ModelSpec spec{{in_channels, side, side},
                 detail::group_units(units, blocks),
                 {AvgPool2d{side / 4}, Flatten{}, Dense{2 * w, num_classes}},
                 base_width,
                 num_classes};
  spec.validate();
  return spec;
}

// CIFAR-shaped default used for size accounting: conv_template(3, 32, 10, 64, K).
inline ModelSpec default_template(std::size_t blocks = 4) { return conv_template(3, 32, 10, 64, blocks); }

}  // namespace fusefl
