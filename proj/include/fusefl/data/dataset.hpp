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
#include <span>
#include <string>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/nn/tensor.hpp"

namespace fusefl {

struct Dataset {
  Tensor inputs;  // [N, ...]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

  void validate() const {
    if (empty()) throw InputError("empty dataset");
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
      throw InputError("dataset has " + std::to_string(labels.size()) + " labels for inputs " +
                       shape_str(inputs.shape()));
    }
    for (std::size_t l : labels) {
      if (l >= num_classes) {
        throw InputError("label " + std::to_string(l) + " outside [0," +
                         std::to_string(num_classes) + ")");
      }
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  if (indices.empty()) return out;
  out.inputs = gather_rows(data.inputs, indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(data.labels.at(i));
  return out;
}

inline Dataset concat_datasets(std::span<const Dataset> parts) {
  Dataset out;
  std::vector<Tensor> inputs;
  for (const Dataset& d : parts) {
    if (d.empty()) continue;
    out.num_classes = std::max(out.num_classes, d.num_classes);
    inputs.push_back(d.inputs);
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
  }
  if (inputs.empty()) return out;
  // Stack along the batch axis.
  Shape shape = inputs.front().shape();
  shape[0] = out.labels.size();
  std::vector<double> values;
  values.reserve(shape_size(shape));
  for (const Tensor& t : inputs) {
    if (t.row_size() != inputs.front().row_size()) throw ShapeError("datasets have different sample shapes");
    values.insert(values.end(), t.raw().begin(), t.raw().end());
  }
  out.inputs = Tensor(std::move(shape), std::move(values));
  return out;
}

inline std::vector<std::size_t> label_histogram(std::span<const std::size_t> labels,
                                                std::size_t num_classes) {
  std::vector<std::size_t> h(num_classes, 0);
  for (std::size_t l : labels) ++h.at(l);
  return h;
}

inline std::vector<std::size_t> label_histogram(const Dataset& data) {
  return label_histogram(data.labels, data.num_classes);
}

}  // namespace fusefl
