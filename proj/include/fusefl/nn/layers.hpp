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
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/nn/tensor.hpp"

namespace fusefl {

// Layer descriptions. Shapes below are per sample (no batch axis).

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const Dense&, const Dense&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;  // 1 or 3
  std::size_t stride = 1;
  std::size_t padding = 0;
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};

// Non-overlapping average pooling; trailing rows/columns that do not fill a
// window are dropped.
struct AvgPool2d {
  std::size_t window = 2;
  friend bool operator==(const AvgPool2d&, const AvgPool2d&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

// Parameter-free mean over `groups` equal slices of axis 1. This is the
// averaging adaptor over concatenated branch outputs.
struct BranchMean {
  std::size_t groups = 1;
  friend bool operator==(const BranchMean&, const BranchMean&) = default;
};

// Parameter-free multiplication by a constant.
struct Scale {
  double factor = 1.0;
  friend bool operator==(const Scale&, const Scale&) = default;
};

using LayerSpec = std::variant<Dense, ReLU, Conv2d, AvgPool2d, Flatten, BranchMean, Scale>;
using BlockSpec = std::vector<LayerSpec>;

inline std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return "Dense(" + std::to_string(l.in) + "->" + std::to_string(l.out) + ")";
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return "ReLU";
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          return "Conv2d(" + std::to_string(l.in_channels) + "->" + std::to_string(l.out_channels) +
                 ", k=" + std::to_string(l.kernel) + ", s=" + std::to_string(l.stride) +
                 ", p=" + std::to_string(l.padding) + ")";
        } else if constexpr (std::is_same_v<T, AvgPool2d>) {
          return "AvgPool2d(" + std::to_string(l.window) + ")";
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return "Flatten";
        } else if constexpr (std::is_same_v<T, BranchMean>) {
          return "BranchMean(" + std::to_string(l.groups) + ")";
        } else {
          return "Scale(" + std::to_string(l.factor) + ")";
        }
      },
      layer);
}

inline bool has_params(const LayerSpec& layer) {
  return std::holds_alternative<Dense>(layer) || std::holds_alternative<Conv2d>(layer);
}

inline std::size_t layer_param_count(const LayerSpec& layer) {
  if (const auto* d = std::get_if<Dense>(&layer)) return d->in * d->out + d->out;
  if (const auto* c = std::get_if<Conv2d>(&layer)) {
    return c->kernel * c->kernel * c->in_channels * c->out_channels + c->out_channels;
  }
  return 0;
}

inline std::size_t fan_in(const LayerSpec& layer) {
  if (const auto* d = std::get_if<Dense>(&layer)) return d->in;
  if (const auto* c = std::get_if<Conv2d>(&layer)) return c->in_channels * c->kernel * c->kernel;
  return 0;
}

inline Shape weight_shape(const LayerSpec& layer) {
  if (const auto* d = std::get_if<Dense>(&layer)) return {d->out, d->in};
  if (const auto* c = std::get_if<Conv2d>(&layer)) {
    return {c->out_channels, c->in_channels, c->kernel, c->kernel};
  }
  return {};
}

inline Shape bias_shape(const LayerSpec& layer) {
  if (const auto* d = std::get_if<Dense>(&layer)) return {d->out};
  if (const auto* c = std::get_if<Conv2d>(&layer)) return {c->out_channels};
  return {};
}

// Output shape of one layer for a per-sample input shape. Throws ShapeError
// with a message describing the mismatch (without the layer index, which the
// caller adds).
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          if (in.size() != 1 || in[0] != l.in) {
            throw ShapeError("expects [" + std::to_string(l.in) + "], got " + shape_str(in));
          }
          return {l.out};
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return in;
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          if (in.size() != 3 || in[0] != l.in_channels) {
            throw ShapeError("expects [" + std::to_string(l.in_channels) + ",H,W], got " +
                             shape_str(in));
          }
          const std::size_t h = in[1] + 2 * l.padding;
          const std::size_t w = in[2] + 2 * l.padding;
          if (h < l.kernel || w < l.kernel) {
            throw ShapeError("input " + shape_str(in) + " smaller than kernel");
          }
          return {l.out_channels, (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1};
        } else if constexpr (std::is_same_v<T, AvgPool2d>) {
          if (in.size() != 3 || in[1] < l.window || in[2] < l.window) {
            throw ShapeError("expects [C,H,W] with H,W >= " + std::to_string(l.window) + ", got " +
                             shape_str(in));
          }
          return {in[0], in[1] / l.window, in[2] / l.window};
        } else if constexpr (std::is_same_v<T, Flatten>) {
          if (in.empty()) throw ShapeError("cannot flatten a scalar");
          return {shape_size(in)};
        } else if constexpr (std::is_same_v<T, Scale>) {
          return in;
        } else {
          if (in.empty() || in[0] % l.groups != 0) {
            throw ShapeError("axis 1 of " + shape_str(in) + " not divisible into " +
                             std::to_string(l.groups) + " groups");
          }
          Shape out = in;
          out[0] /= l.groups;
          return out;
        }
      },
      layer);
}

// Per-sample shapes at every layer boundary: result[0] is the input shape,
// result[i + 1] the output of layer i.
inline std::vector<Shape> infer_shapes(const BlockSpec& spec, const Shape& input) {
  std::vector<Shape> shapes{input};
  shapes.reserve(spec.size() + 1);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    try {
      shapes.push_back(layer_output_shape(spec[i], shapes.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " " + layer_name(spec[i]) + ": " + e.what());
    }
  }
  return shapes;
}

inline Shape output_shape(const BlockSpec& spec, const Shape& input) {
  return infer_shapes(spec, input).back();
}

// Input-free consistency check used before initialization: positive
// dimensions, supported kernels, and adjacent widths that agree wherever
// they can be compared without knowing the input's spatial size.
inline void check_spec(const BlockSpec& spec) {
  enum class Kind { kUnknown, kFlat, kSpatial };
  Kind kind = Kind::kUnknown;
  std::size_t width = 0;
  auto fail = [&](std::size_t i, const std::string& why) {
    throw ConfigError("layer " + std::to_string(i) + " " + layer_name(spec[i]) + ": " + why);
  };
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& layer = spec[i];
    if (const auto* d = std::get_if<Dense>(&layer)) {
      if (d->in == 0 || d->out == 0) fail(i, "dimensions must be positive");
      if (kind == Kind::kSpatial) fail(i, "dense layer applied to spatial features (missing Flatten)");
      if (kind == Kind::kFlat && width != d->in) {
        fail(i, "input width " + std::to_string(d->in) + " does not match previous width " +
                    std::to_string(width));
      }
      kind = Kind::kFlat;
      width = d->out;
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      if (c->in_channels == 0 || c->out_channels == 0) fail(i, "channels must be positive");
      if (c->kernel != 1 && c->kernel != 3) fail(i, "kernel must be 1 or 3");
      if (c->stride == 0) fail(i, "stride must be positive");
      if (kind == Kind::kFlat) fail(i, "convolution applied to flat features");
      if (kind == Kind::kSpatial && width != c->in_channels) {
        fail(i, "input channels " + std::to_string(c->in_channels) +
                    " do not match previous channels " + std::to_string(width));
      }
      kind = Kind::kSpatial;
      width = c->out_channels;
    } else if (const auto* p = std::get_if<AvgPool2d>(&layer)) {
      if (p->window == 0) fail(i, "window must be positive");
      if (kind == Kind::kFlat) fail(i, "pooling applied to flat features");
    } else if (std::holds_alternative<Flatten>(layer)) {
      if (kind == Kind::kSpatial) kind = Kind::kUnknown;
    } else if (const auto* g = std::get_if<BranchMean>(&layer)) {
      if (g->groups == 0) fail(i, "groups must be positive");
      if (kind != Kind::kUnknown) {
        if (width % g->groups != 0) fail(i, "width not divisible into groups");
        width /= g->groups;
      }
    } else if (const auto* sc = std::get_if<Scale>(&layer)) {
      if (!std::isfinite(sc->factor)) fail(i, "factor must be finite");
    }
  }
}

}  // namespace fusefl
