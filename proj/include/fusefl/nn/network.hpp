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
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/nn/kernels.hpp"
#include "fusefl/nn/layers.hpp"
#include "fusefl/nn/tensor.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

struct ParamEntry {
  Tensor weights;
  Tensor bias;
  bool trainable = true;
  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Parameters keyed by the index of the owning layer within its spec.
using ParamSet = std::map<std::size_t, ParamEntry>;

inline std::size_t count_params(const BlockSpec& spec) {
  std::size_t n = 0;
  for (const LayerSpec& layer : spec) n += layer_param_count(layer);
  return n;
}

inline std::size_t count_params(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [index, entry] : params) n += entry.weights.size() + entry.bias.size();
  return n;
}

inline void set_trainable(ParamSet& params, bool trainable) {
  for (auto& [index, entry] : params) entry.trainable = trainable;
}

// Scaled-uniform fan-in initialization: weights ~ U(-sqrt(6/fan_in),
// sqrt(6/fan_in)), biases zero.
inline ParamSet init_params(const BlockSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Rng rng(seed);
  ParamSet params;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!has_params(spec[i])) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(spec[i])));
    std::uniform_real_distribution<double> dist(-bound, bound);
    ParamEntry entry{Tensor(weight_shape(spec[i])), Tensor(bias_shape(spec[i])), true};
    for (double& w : entry.weights.raw()) w = dist(rng);
    params.emplace(i, std::move(entry));
  }
  return params;
}

// Layer inputs recorded during forward; inputs[i] feeds layer i.
struct ForwardCache {
  std::vector<Tensor> inputs;
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

namespace detail {

inline const ParamEntry& entry_for(const ParamSet& params, std::size_t i, const LayerSpec& layer) {
  auto it = params.find(i);
  if (it == params.end()) {
    throw InternalError("missing parameters for layer " + std::to_string(i) + " " + layer_name(layer));
  }
  if (it->second.weights.shape() != weight_shape(layer) ||
      it->second.bias.shape() != bias_shape(layer)) {
    throw InternalError("parameter shape mismatch at layer " + std::to_string(i) + " " +
                        layer_name(layer));
  }
  return it->second;
}

inline Shape sample_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

inline Tensor layer_forward(const LayerSpec& layer, const ParamSet& params, std::size_t i,
                            const Tensor& x) {
  try {
    (void)layer_output_shape(layer, sample_shape(x));
  } catch (const ShapeError& e) {
    throw ShapeError("layer " + std::to_string(i) + " " + layer_name(layer) + ": " + e.what());
  }
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          const ParamEntry& p = entry_for(params, i, layer);
          return kernels::dense_forward(l, p.weights, p.bias, x);
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return kernels::relu_forward(x);
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          const ParamEntry& p = entry_for(params, i, layer);
          return kernels::conv_forward(l, p.weights, p.bias, x);
        } else if constexpr (std::is_same_v<T, AvgPool2d>) {
          return kernels::avgpool_forward(l, x);
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return x.reshaped({x.dim(0), x.row_size()});
        } else if constexpr (std::is_same_v<T, BranchMean>) {
          return kernels::branch_mean_forward(l, x);
        } else {
          Tensor y = x;
          for (double& v : y.raw()) v *= l.factor;
          return y;
        }
      },
      layer);
}

}  // namespace detail

inline ForwardResult forward(const BlockSpec& spec, const ParamSet& params, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("input must be batch-shaped, got " + shape_str(x.shape()));
  ForwardResult result;
  result.cache.inputs.reserve(spec.size());
  Tensor h = x;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    Tensor next = detail::layer_forward(spec[i], params, i, h);
    result.cache.inputs.push_back(std::move(h));
    h = std::move(next);
  }
  result.output = std::move(h);
  return result;
}

// Forward pass without keeping a cache.
inline Tensor predict(const BlockSpec& spec, const ParamSet& params, const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("input must be batch-shaped, got " + shape_str(x.shape()));
  Tensor h = x;
  for (std::size_t i = 0; i < spec.size(); ++i) h = detail::layer_forward(spec[i], params, i, h);
  return h;
}

// Output of layers [0, end).
inline Tensor predict_prefix(const BlockSpec& spec, const ParamSet& params, std::size_t end,
                             const Tensor& x) {
  if (end > spec.size()) throw InternalError("prefix end past the last layer");
  Tensor h = x;
  for (std::size_t i = 0; i < end; ++i) h = detail::layer_forward(spec[i], params, i, h);
  return h;
}

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;  // gradient w.r.t. the network output
};

// Mean negative log-softmax of the labelled class, and its gradient
// (softmax - onehot) / B.
inline LossResult cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be [B,C], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw InputError("got " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] >= classes) {
      throw InputError("label " + std::to_string(labels[n]) + " out of range [0," +
                       std::to_string(classes) + ")");
    }
    const double* z = logits.raw().data() + n * classes;
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double log_norm = zmax + std::log(sum);
    r.loss += (log_norm - z[labels[n]]) * inv_batch;
    double* g = r.dlogits.raw().data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - log_norm) * inv_batch;
    }
    g[labels[n]] -= inv_batch;
  }
  return r;
}

// Mean over all entries of (output - target)^2, and its gradient.
inline LossResult mean_squared_error(const Tensor& output, const Tensor& target) {
  if (output.shape() != target.shape()) {
    throw ShapeError("output " + shape_str(output.shape()) + " and target " + shape_str(target.shape()) +
                     " differ");
  }
  LossResult r{0.0, Tensor(output.shape())};
  const double inv = 1.0 / static_cast<double>(output.size());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double diff = output[i] - target[i];
    r.loss += diff * diff * inv;
    r.dlogits[i] = 2.0 * diff * inv;
  }
  return r;
}

struct BackwardResult {
  ParamSet grads;   // trainable layers only
  Tensor dinput;    // gradient w.r.t. the network input
};

// Backpropagates `dout` through the network. Frozen layers get no gradient
// entry but still pass gradients to the layers below them.
inline BackwardResult backward(const BlockSpec& spec, const ParamSet& params,
                               const ForwardCache& cache, const Tensor& dout) {
  if (cache.inputs.size() != spec.size()) {
    throw InternalError("cache has " + std::to_string(cache.inputs.size()) + " entries for " +
                        std::to_string(spec.size()) + " layers");
  }
  BackwardResult result;
  Tensor grad = dout;
  for (std::size_t idx = spec.size(); idx-- > 0;) {
    const LayerSpec& layer = spec[idx];
    const Tensor& x = cache.inputs[idx];
    Tensor dx;
    if (const auto* d = std::get_if<Dense>(&layer)) {
      const ParamEntry& p = detail::entry_for(params, idx, layer);
      if (p.trainable) {
        ParamEntry g{Tensor(), Tensor(), true};
        kernels::dense_backward(*d, p.weights, x, grad, &g.weights, &g.bias, &dx);
        result.grads.emplace(idx, std::move(g));
      } else {
        kernels::dense_backward(*d, p.weights, x, grad, nullptr, nullptr, &dx);
      }
    } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
      const ParamEntry& p = detail::entry_for(params, idx, layer);
      if (p.trainable) {
        ParamEntry g{Tensor(), Tensor(), true};
        kernels::conv_backward(*c, p.weights, x, grad, &g.weights, &g.bias, &dx);
        result.grads.emplace(idx, std::move(g));
      } else {
        kernels::conv_backward(*c, p.weights, x, grad, nullptr, nullptr, &dx);
      }
    } else if (std::holds_alternative<ReLU>(layer)) {
      dx = kernels::relu_backward(x, grad);
    } else if (const auto* pool = std::get_if<AvgPool2d>(&layer)) {
      dx = kernels::avgpool_backward(*pool, x, grad);
    } else if (std::holds_alternative<Flatten>(layer)) {
      dx = grad.reshaped(x.shape());
    } else if (const auto* g = std::get_if<BranchMean>(&layer)) {
      dx = kernels::branch_mean_backward(*g, x, grad);
    } else {
      dx = grad;
      for (double& v : dx.raw()) v *= std::get<Scale>(layer).factor;
    }
    grad = std::move(dx);
  }
  result.dinput = std::move(grad);
  return result;
}

// Smallest |z| over all inputs to ReLU layers; +inf when there are none.
inline double min_relu_margin(const BlockSpec& spec, const ForwardCache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!std::holds_alternative<ReLU>(spec[i])) continue;
    for (double z : cache.inputs[i].raw()) m = std::min(m, std::abs(z));
  }
  return m;
}

// A spec together with its parameters and the per-sample input shape it
// accepts.
struct Network {
  Shape input_shape;
  BlockSpec layers;
  ParamSet params;

  Tensor logits(const Tensor& x) const { return predict(layers, params, x); }
  Shape output_shape() const { return fusefl::output_shape(layers, input_shape); }
  std::size_t param_count() const { return count_params(layers); }

  friend bool operator==(const Network&, const Network&) = default;
};

inline Network make_network(Shape input_shape, BlockSpec layers, std::uint64_t seed) {
  (void)infer_shapes(layers, input_shape);
  ParamSet params = init_params(layers, seed);
  return Network{std::move(input_shape), std::move(layers), std::move(params)};
}

// Layers [begin, end) of a network with parameters re-keyed from zero.
inline Network slice_network(const Network& net, std::size_t begin, std::size_t end) {
  const std::vector<Shape> shapes = infer_shapes(net.layers, net.input_shape);
  Network out;
  out.input_shape = shapes.at(begin);
  out.layers.assign(net.layers.begin() + static_cast<std::ptrdiff_t>(begin),
                    net.layers.begin() + static_cast<std::ptrdiff_t>(end));
  for (const auto& [idx, entry] : net.params) {
    if (idx >= begin && idx < end) out.params.emplace(idx - begin, entry);
  }
  return out;
}

// `first` followed by `second`; the output of `first` must match the input
// of `second`.
inline Network chain_networks(const Network& first, const Network& second) {
  const Shape mid = first.output_shape();
  if (mid != second.input_shape) {
    throw ShapeError("cannot chain networks: " + shape_str(mid) + " into " +
                     shape_str(second.input_shape));
  }
  Network out = first;
  const std::size_t offset = first.layers.size();
  out.layers.insert(out.layers.end(), second.layers.begin(), second.layers.end());
  for (const auto& [idx, entry] : second.params) out.params.emplace(idx + offset, entry);
  return out;
}

}  // namespace fusefl
