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
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/nn/network.hpp"

namespace fusefl {

// Every serialized parameter is one little-endian 32-bit float.
inline constexpr std::uint64_t kBytesPerParam = 4;

inline std::uint64_t payload_bytes(std::size_t param_count) { return kBytesPerParam * param_count; }
inline std::uint64_t payload_bytes(const Network& net) { return payload_bytes(net.param_count()); }

struct CostModel {
  Algorithm algorithm = Algorithm::kFedAvg;
  std::uint64_t model_bytes = 0;  // S
  std::size_t rounds = 1;         // T
  std::size_t clients = 1;        // M
  bool count_downlink = false;
  // FuseFL only: bytes each client uploads (blocks, adaptors and
  // calibration statistics). Empty means S per client.
  std::vector<std::uint64_t> client_upload_bytes;

  void validate() const {
    if (model_bytes == 0) throw ConfigError("cost model needs a positive model size");
  }
};

// Total communication in bytes over all clients.
inline std::uint64_t comm_cost(const CostModel& c) {
  c.validate();
  const std::uint64_t m = c.clients, s = c.model_bytes;
  switch (c.algorithm) {
    case Algorithm::kFedAvg:
      return (c.count_downlink ? 2 : 1) * static_cast<std::uint64_t>(c.rounds) * m * s;
    case Algorithm::kOneShotFedAvg:
    case Algorithm::kEnsemble:
      return (c.count_downlink ? 2 : 1) * m * s;
    case Algorithm::kFuseFL:
      if (c.client_upload_bytes.empty()) return m * s;
      return std::accumulate(c.client_upload_bytes.begin(), c.client_upload_bytes.end(), std::uint64_t{0});
  }
  return 0;
}

// Bytes the server keeps for inference: M models for an ensemble, one
// model (S, or the fused model size passed as S) otherwise.
inline std::uint64_t storage_cost(const CostModel& c) {
  c.validate();
  return c.algorithm == Algorithm::kEnsemble ? c.clients * c.model_bytes : c.model_bytes;
}

// Floats in a CIFAR ResNet-18 state (BasicBlock [2,2,2,2], 3x3 stem, no conv
// biases): trainable parameters plus the BatchNorm running mean and
// variance.
inline std::uint64_t resnet18_state_floats(std::size_t num_classes) {
  std::uint64_t params = 0, bn_channels = 0;
  auto conv = [&](std::uint64_t in, std::uint64_t out, std::uint64_t k) { params += in * out * k * k; };
  auto bn = [&](std::uint64_t c) {
    params += 2 * c;
    bn_channels += c;
  };
  conv(3, 64, 3);
  bn(64);
  std::uint64_t in = 64;
  for (std::uint64_t width : {64, 128, 256, 512}) {
    for (int block = 0; block < 2; ++block) {
      const bool downsample = block == 0 && in != width;
      conv(in, width, 3);
      bn(width);
      conv(width, width, 3);
      bn(width);
      if (downsample) {
        conv(in, width, 1);
        bn(width);
      }
      in = width;
    }
  }
  params += 512 * num_classes + num_classes;
  return params + 2 * bn_channels;
}

inline std::uint64_t resnet18_reference_bytes(std::size_t num_classes = 10) {
  return kBytesPerParam * resnet18_state_floats(num_classes);
}

inline constexpr double kBytesPerMB = 1024.0 * 1024.0;

// "213.31MB" style rendering with `decimals` digits.
inline std::string format_mb(std::uint64_t bytes, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*fMB", decimals, static_cast<double>(bytes) / kBytesPerMB);
  return buf;
}

}  // namespace fusefl
