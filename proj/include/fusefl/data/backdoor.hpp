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
#include <random>
#include <vector>

#include "fusefl/data/dataset.hpp"
#include "fusefl/error.hpp"
#include "fusefl/rng.hpp"

namespace fusefl {

struct BackdoorConfig {
  std::vector<std::size_t> target_clients;
  std::size_t patch_side = 10;
  double intensity_lo = 0.5;
  double intensity_hi = 1.0;

  void validate(std::size_t num_clients) const {
    for (std::size_t m : target_clients) {
      if (m >= num_clients) {
        throw ConfigError("backdoor client " + std::to_string(m) + " outside [0," +
                          std::to_string(num_clients) + ")");
      }
    }
    if (!(intensity_lo <= intensity_hi)) throw ConfigError("backdoor intensity range is empty");
  }
};

// Fixed library of per-class binary trigger patterns. The pattern bit for a
// pixel is a hash of (class, row, col), so patterns exist at any patch size
// and never change between runs.
inline bool backdoor_mask(std::size_t label, std::size_t row, std::size_t col) {
  constexpr std::uint64_t kPatternSeed = 0x6a09e667f3bcc909ULL;
  const std::uint64_t key = (static_cast<std::uint64_t>(label) << 40) ^
                            (static_cast<std::uint64_t>(row) << 20) ^ static_cast<std::uint64_t>(col);
  return (splitmix64(kPatternSeed ^ splitmix64(key)) >> 17) & 1U;
}

// Returns a copy of `data` where every sample carries its label's trigger
// pattern in the top-left patch_side x patch_side window. Stamped pixels of
// each channel take one random intensity per sample; unstamped pixels keep
// their values.
inline Dataset inject_backdoor(const Dataset& data, const BackdoorConfig& bd, std::uint64_t seed) {
  if (data.inputs.rank() != 4) {
    throw ConfigError("backdoor injection needs image inputs [N,C,H,W], got " +
                      shape_str(data.inputs.shape()));
  }
  const std::size_t channels = data.inputs.dim(1), h = data.inputs.dim(2), w = data.inputs.dim(3);
  if (bd.patch_side > h || bd.patch_side > w) {
    throw ConfigError("backdoor patch " + std::to_string(bd.patch_side) + " larger than image " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  if (!(bd.intensity_lo <= bd.intensity_hi)) throw ConfigError("backdoor intensity range is empty");
  Dataset out = data;
  if (bd.patch_side == 0) return out;
  Rng rng(derive_seed(seed, "backdoor"));
  std::uniform_real_distribution<double> intensity(bd.intensity_lo, bd.intensity_hi);
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double value = intensity(rng);
      double* plane = out.inputs.raw().data() + (n * channels + c) * h * w;
      for (std::size_t r = 0; r < bd.patch_side; ++r) {
        for (std::size_t q = 0; q < bd.patch_side; ++q) {
          if (backdoor_mask(data.labels[n], r, q)) plane[r * w + q] = value;
        }
      }
    }
  }
  return out;
}

}  // namespace fusefl
