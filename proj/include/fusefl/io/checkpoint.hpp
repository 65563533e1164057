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

// Checkpoint container:
//   8 bytes   magic "FUSEFL01"
//   8 bytes   manifest length L, unsigned little-endian
//   L bytes   manifest, compact JSON with sorted keys
//   B bytes   blob of little-endian float32 values
// The manifest holds the model topology, a tensor directory (name, shape,
// byte offset, trainable flag), the blob size B and the blob's SHA-256.

#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fusefl/error.hpp"
#include "fusefl/federation/cost.hpp"
#include "fusefl/federation/train.hpp"
#include "fusefl/model/fusion.hpp"
#include "fusefl/model/spec.hpp"
#include "fusefl/nn/network.hpp"
#include "json.hpp"

namespace fusefl {

inline constexpr std::string_view kCheckpointMagic = "FUSEFL01";
inline constexpr std::size_t kCheckpointHeaderBytes = 16;

using AnyModel = std::variant<Network, StagedNetwork, FusedModel, EnsembleModel>;

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw InternalError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

namespace detail {

using nlohmann::json;

inline CheckpointError ckpt_format(const std::string& what) {
  return CheckpointError(CheckpointErrorCode::kFormat, "checkpoint: " + what);
}

inline json layer_to_json(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return {{"type", "dense"}, {"in", l.in}, {"out", l.out}};
        } else if constexpr (std::is_same_v<T, ReLU>) {
          return {{"type", "relu"}};
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          return {{"type", "conv2d"}, {"in", l.in_channels}, {"out", l.out_channels},
                  {"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding}};
        } else if constexpr (std::is_same_v<T, AvgPool2d>) {
          return {{"type", "avgpool2d"}, {"window", l.window}};
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return {{"type", "flatten"}};
        } else if constexpr (std::is_same_v<T, BranchMean>) {
          return {{"type", "branch_mean"}, {"groups", l.groups}};
        } else {
          return {{"type", "scale"}, {"factor", l.factor}};
        }
      },
      layer);
}

inline LayerSpec layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "dense") return Dense{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>()};
  if (type == "relu") return ReLU{};
  if (type == "conv2d") {
    return Conv2d{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
                  j.at("stride").get<std::size_t>(), j.at("padding").get<std::size_t>()};
  }
  if (type == "avgpool2d") return AvgPool2d{j.at("window").get<std::size_t>()};
  if (type == "flatten") return Flatten{};
  if (type == "branch_mean") return BranchMean{j.at("groups").get<std::size_t>()};
  if (type == "scale") return Scale{j.at("factor").get<double>()};
  throw ckpt_format("unknown layer type '" + type + "'");
}

inline json network_topology(const Network& net) {
  json layers = json::array();
  for (const LayerSpec& l : net.layers) layers.push_back(layer_to_json(l));
  return {{"input_shape", net.input_shape}, {"layers", layers}};
}

inline Network network_from_topology(const json& j) {
  Network net;
  net.input_shape = j.at("input_shape").get<Shape>();
  for (const json& l : j.at("layers")) net.layers.push_back(layer_from_json(l));
  try {
    (void)infer_shapes(net.layers, net.input_shape);
    net.params = init_params(net.layers, 0);
  } catch (const Error& e) {
    throw ckpt_format(std::string("invalid network topology: ") + e.what());
  }
  return net;
}

// Calls f(prefix, network) for every network in a model, in a fixed order.
template <class F>
void for_each_network(const Network& n, F&& f) {
  f(std::string("net"), n);
}
template <class F>
void for_each_network(const StagedNetwork& s, F&& f) {
  f(std::string("net"), s.net);
}
template <class F>
void for_each_network(const FusedModel& m, F&& f) {
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t b = 0; b < m.stages[s].branches.size(); ++b) {
      f("stage" + std::to_string(s) + "/branch" + std::to_string(b), m.stages[s].branches[b]);
    }
  }
  f(std::string("head"), m.head);
}
template <class F>
void for_each_network(const EnsembleModel& e, F&& f) {
  for (std::size_t m = 0; m < e.members.size(); ++m) f("member" + std::to_string(m), e.members[m].net);
}

// Mutable variant, used when filling a freshly built model.
template <class F>
void for_each_network_mut(AnyModel& model, F&& f) {
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Network>) {
          f(m);
        } else if constexpr (std::is_same_v<T, StagedNetwork>) {
          f(m.net);
        } else if constexpr (std::is_same_v<T, FusedModel>) {
          for (FusedStage& s : m.stages) {
            for (Network& b : s.branches) f(b);
          }
          f(m.head);
        } else {
          for (StagedNetwork& s : m.members) f(s.net);
        }
      },
      model);
}

inline json model_topology(const Network& n) { return network_topology(n); }
inline json model_topology(const StagedNetwork& s) {
  return {{"network", network_topology(s.net)}, {"block_ends", s.block_ends}};
}
inline json model_topology(const FusedModel& m) {
  json stages = json::array();
  for (const FusedStage& s : m.stages) {
    json branches = json::array();
    for (const Network& b : s.branches) branches.push_back(network_topology(b));
    stages.push_back({{"client_order", s.client_order}, {"branches", branches}});
  }
  return {{"stages", stages}, {"head", network_topology(m.head)}};
}
inline json model_topology(const EnsembleModel& e) {
  json members = json::array();
  for (const StagedNetwork& s : e.members) members.push_back(model_topology(s));
  return {{"members", members}};
}

inline const char* model_kind(const Network&) { return "network"; }
inline const char* model_kind(const StagedNetwork&) { return "staged"; }
inline const char* model_kind(const FusedModel&) { return "fused"; }
inline const char* model_kind(const EnsembleModel&) { return "ensemble"; }

inline StagedNetwork staged_from_topology(const json& j) {
  StagedNetwork s{network_from_topology(j.at("network")), j.at("block_ends").get<std::vector<std::size_t>>()};
  for (std::size_t i = 0; i < s.block_ends.size(); ++i) {
    if (s.block_ends[i] > s.net.layers.size() || (i > 0 && s.block_ends[i] <= s.block_ends[i - 1])) {
      throw ckpt_format("block boundaries out of order");
    }
  }
  return s;
}

inline AnyModel model_from_manifest(const json& manifest) {
  const std::string kind = manifest.at("kind").get<std::string>();
  const json& t = manifest.at("model");
  if (kind == "network") return network_from_topology(t);
  if (kind == "staged") return staged_from_topology(t);
  if (kind == "ensemble") {
    EnsembleModel e;
    for (const json& m : t.at("members")) e.members.push_back(staged_from_topology(m));
    return e;
  }
  if (kind == "fused") {
    FusedModel f;
    for (const json& s : t.at("stages")) {
      FusedStage stage;
      stage.client_order = s.at("client_order").get<std::vector<std::size_t>>();
      for (const json& b : s.at("branches")) stage.branches.push_back(network_from_topology(b));
      f.stages.push_back(std::move(stage));
    }
    f.head = network_from_topology(t.at("head"));
    return f;
  }
  throw ckpt_format("unknown model kind '" + kind + "'");
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f32_le(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace detail

// Serializes a model to the checkpoint byte format. Parameters are rounded
// to float32, so serialize(load(serialize(x))) == serialize(x).
template <class Model>
std::string serialize_checkpoint(const Model& model) {
  using detail::json;
  std::string blob;
  json tensors = json::array();
  detail::for_each_network(model, [&](const std::string& prefix, const Network& net) {
    for (const auto& [idx, entry] : net.params) {
      const std::string base = prefix + "/layer" + std::to_string(idx);
      for (const auto& [suffix, t] : {std::pair<const char*, const Tensor*>{"weights", &entry.weights},
                                      std::pair<const char*, const Tensor*>{"bias", &entry.bias}}) {
        tensors.push_back({{"name", base + "/" + suffix},
                           {"shape", t->shape()},
                           {"offset", blob.size()},
                           {"trainable", entry.trainable}});
        for (double v : t->raw()) detail::put_f32_le(blob, v);
      }
    }
  });
  const json manifest{{"format", std::string(kCheckpointMagic)},
                      {"kind", detail::model_kind(model)},
                      {"model", detail::model_topology(model)},
                      {"tensors", tensors},
                      {"blob_bytes", blob.size()},
                      {"blob_sha256", sha256_hex(blob)}};
  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic);
  detail::put_u64_le(out, text.size());
  out += text;
  out += blob;
  return out;
}

inline std::string serialize_checkpoint(const AnyModel& model) {
  return std::visit([](const auto& m) { return serialize_checkpoint(m); }, model);
}

// Parses checkpoint bytes. Errors are distinguished by code: kBadMagic,
// kVersion (a FUSEFL container of another version), kTruncated, kDigest and
// kFormat (anything structurally inconsistent).
inline AnyModel deserialize_checkpoint(std::string_view bytes) {
  using detail::json;
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, 6) != kCheckpointMagic.substr(0, 6)) {
    throw CheckpointError(CheckpointErrorCode::kBadMagic, "checkpoint: not a FUSEFL checkpoint");
  }
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError(CheckpointErrorCode::kVersion, "checkpoint: unsupported version '" +
                                                             std::string(bytes.substr(0, 8)) + "', expected " +
                                                             std::string(kCheckpointMagic));
  }
  if (bytes.size() < kCheckpointHeaderBytes) {
    throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: truncated header");
  }
  const std::uint64_t manifest_len = detail::get_u64_le(bytes.data() + 8);
  if (manifest_len > bytes.size() - kCheckpointHeaderBytes) {
    throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: truncated manifest");
  }
  json manifest;
  try {
    manifest = json::parse(bytes.substr(kCheckpointHeaderBytes, manifest_len));
  } catch (const json::exception& e) {
    throw detail::ckpt_format(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != kCheckpointMagic) {
      throw CheckpointError(CheckpointErrorCode::kVersion,
                            "checkpoint: manifest format '" + manifest.at("format").get<std::string>() + "'");
    }
    const std::uint64_t blob_bytes = manifest.at("blob_bytes").get<std::uint64_t>();
    const std::string_view blob = bytes.substr(kCheckpointHeaderBytes + manifest_len);
    if (blob.size() < blob_bytes) {
      throw CheckpointError(CheckpointErrorCode::kTruncated,
                            "checkpoint: blob has " + std::to_string(blob.size()) + " of " +
                                std::to_string(blob_bytes) + " bytes");
    }
    if (blob.size() > blob_bytes) throw detail::ckpt_format("trailing bytes after the blob");
    if (sha256_hex(blob) != manifest.at("blob_sha256").get<std::string>()) {
      throw CheckpointError(CheckpointErrorCode::kDigest, "checkpoint: blob digest mismatch");
    }

    AnyModel model = detail::model_from_manifest(manifest);
    const json& tensors = manifest.at("tensors");
    std::size_t next = 0;
    std::uint64_t offset = 0;
    std::string problem;
    detail::for_each_network_mut(model, [&](Network& net) {
      for (auto& [idx, entry] : net.params) {
        for (Tensor* t : {&entry.weights, &entry.bias}) {
          if (!problem.empty()) return;
          if (next >= tensors.size()) {
            problem = "tensor directory is shorter than the topology";
            return;
          }
          const json& d = tensors[next++];
          if (d.at("shape").get<Shape>() != t->shape() || d.at("offset").get<std::uint64_t>() != offset) {
            problem = "tensor '" + d.at("name").get<std::string>() + "' does not match the topology";
            return;
          }
          entry.trainable = d.at("trainable").get<bool>();
          for (double& v : t->raw()) {
            v = detail::get_f32_le(blob.data() + offset);
            offset += 4;
          }
        }
      }
    });
    if (!problem.empty()) throw detail::ckpt_format(problem);
    if (next != tensors.size()) throw detail::ckpt_format("tensor directory is longer than the topology");
    if (offset != blob_bytes) throw detail::ckpt_format("blob size does not match the parameter count");
    return model;
  } catch (const json::exception& e) {
    throw detail::ckpt_format(std::string("malformed manifest: ") + e.what());
  }
}

template <class Model>
void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "failed writing checkpoint " + path.string());
}

inline AnyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::kIo, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// Loads a checkpoint that must hold a model of type T.
template <class T>
T load_checkpoint_as(const std::filesystem::path& path) {
  AnyModel m = load_checkpoint(path);
  if (!std::holds_alternative<T>(m)) {
    throw CheckpointError(CheckpointErrorCode::kFormat, "checkpoint " + path.string() + " holds a different model kind");
  }
  return std::get<T>(std::move(m));
}

// Blob size of a model: 4 bytes per parameter, matching payload_bytes.
template <class Model>
std::uint64_t checkpoint_blob_bytes(const Model& model) {
  std::size_t n = 0;
  detail::for_each_network(model, [&](const std::string&, const Network& net) { n += net.param_count(); });
  return payload_bytes(n);
}

}  // namespace fusefl
