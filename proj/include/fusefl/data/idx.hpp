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
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"

// Reader and writer for the big-endian IDX format used by MNIST-style
// datasets (unsigned byte payloads only).
namespace fusefl {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorCode::kIo, "cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::string& path) {
  if (buf.size() < offset + 4) throw LoadError(LoadErrorCode::kTruncated, path + ": truncated header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace detail

// Loads an images/labels pair. Pixels are scaled to [0,1]; inputs have shape
// [N, 1, rows, cols]. num_classes == 0 infers max(label) + 1.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t num_classes = 0) {
  const auto images = detail::read_file(images_path);
  const auto labels = detail::read_file(labels_path);

  if (detail::read_be32(images, 0, images_path) != kIdxImagesMagic) {
    throw LoadError(LoadErrorCode::kBadMagic, images_path + ": bad magic");
  }
  if (detail::read_be32(labels, 0, labels_path) != kIdxLabelsMagic) {
    throw LoadError(LoadErrorCode::kBadMagic, labels_path + ": bad magic");
  }
  const std::size_t n = detail::read_be32(images, 4, images_path);
  const std::size_t rows = detail::read_be32(images, 8, images_path);
  const std::size_t cols = detail::read_be32(images, 12, images_path);
  const std::size_t n_labels = detail::read_be32(labels, 4, labels_path);
  if (n != n_labels) {
    throw LoadError(LoadErrorCode::kCountMismatch, "count mismatch: " + std::to_string(n) +
                                                       " images vs " + std::to_string(n_labels) +
                                                       " labels");
  }
  if (n == 0) throw LoadError(LoadErrorCode::kEmptyDataset, images_path + ": empty dataset");
  if (rows == 0 || cols == 0) throw LoadError(LoadErrorCode::kEmptyDataset, images_path + ": zero-sized images");
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n * pixels) {
    throw LoadError(LoadErrorCode::kTruncated, images_path + ": truncated pixel data");
  }
  if (labels.size() < 8 + n) throw LoadError(LoadErrorCode::kTruncated, labels_path + ": truncated label data");

  Dataset data;
  data.inputs = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * pixels; ++i) data.inputs[i] = images[16 + i] / 255.0;
  data.labels.assign(labels.begin() + 8, labels.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  const std::size_t max_label = *std::max_element(data.labels.begin(), data.labels.end());
  data.num_classes = num_classes == 0 ? max_label + 1 : num_classes;
  data.validate();
  return data;
}

// Writes raw bytes in IDX layout; `pixels` holds n * rows * cols bytes.
inline void write_idx_images(const std::string& path, std::size_t n, std::size_t rows,
                             std::size_t cols, const std::vector<unsigned char>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(LoadErrorCode::kIo, "cannot write " + path);
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(n));
  detail::write_be32(out, static_cast<std::uint32_t>(rows));
  detail::write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(LoadErrorCode::kIo, "cannot write " + path);
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace fusefl
