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
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fusefl/error.hpp"

namespace fusefl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Dimension 0 is the batch axis wherever
// a tensor flows through a network.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                       std::to_string(values_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& raw() noexcept { return values_; }
  const std::vector<double>& raw() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Elements per batch row.
  std::size_t row_size() const { return shape_.empty() ? 0 : values_.size() / shape_[0]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != values_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.values_ = values_;
    return t;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> values_;
};

// Rows [begin, end) along the batch axis.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t row = t.row_size();
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<double> v(t.raw().begin() + static_cast<std::ptrdiff_t>(begin * row),
                        t.raw().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(v));
}

// Gathers batch rows by index.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t row = t.row_size();
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> v;
  v.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    auto first = t.raw().begin() + static_cast<std::ptrdiff_t>(r * row);
    v.insert(v.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(std::move(shape), std::move(v));
}

// Concatenates batch-major tensors along axis 1 (features or channels).
// All parts must agree on every other dimension.
inline Tensor concat_axis1(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  if (ref.size() < 2) throw ShapeError("concat needs rank >= 2, got " + shape_str(ref));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < ref.size(); ++i) inner *= ref[i];
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == ref[i];
    if (!ok) throw ShapeError("concat mismatch: " + shape_str(ref) + " vs " + shape_str(s));
    total_axis += s[1];
  }
  Shape out_shape = ref;
  out_shape[1] = total_axis;
  Tensor out(out_shape);
  const std::size_t batch = ref[0];
  double* dst = out.raw().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (const Tensor& p : parts) {
      const std::size_t chunk = p.dim(1) * inner;
      const double* src = p.raw().data() + b * chunk;
      dst = std::copy(src, src + chunk, dst);
    }
  }
  return out;
}

}  // namespace fusefl
