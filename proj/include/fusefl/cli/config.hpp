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

// Run configuration files: one `key = value` per line with dotted section
// names, `#` comments and blank lines ignored. Unknown keys are rejected.
// Every key has a default; resolved_config() lists them all.

#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fusefl/data/backdoor.hpp"
#include "fusefl/data/sem.hpp"
#include "fusefl/error.hpp"
#include "fusefl/federation/config.hpp"
#include "fusefl/probes/probes.hpp"
#include "json.hpp"

namespace fusefl {

struct IdxSource {
  std::string train_images, train_labels, test_images, test_labels;
  double alpha = 0.5;
  std::size_t min_per_client = 0;  // 0 means 2 * train.batch_size
};

struct RunConfig {
  std::string name = "run";
  std::string output_dir = "out";
  FedConfig fed;
  std::vector<double> lr_grid;  // empty: single run at train.learning_rate
  std::string data_source = "sem";  // sem | idx
  SemConfig sem;
  IdxSource idx;
  std::string model_template = "mlp";  // mlp | conv
  std::size_t model_width = 64;
  std::size_t hidden_layers = 4;  // mlp only
  BackdoorConfig backdoor;        // active when backdoor.clients is non-empty
  ProbeConfig probe;

  void validate() const {
    if (data_source != "sem" && data_source != "idx") {
      throw ConfigError("data.source must be sem or idx, got '" + data_source + "'");
    }
    if (model_template != "mlp" && model_template != "conv") {
      throw ConfigError("model.template must be mlp or conv, got '" + model_template + "'");
    }
    if (model_width == 0) throw ConfigError("model.width must be positive");
    if (data_source == "sem") sem.validate();
    if (data_source == "idx") {
      if (idx.train_images.empty() || idx.train_labels.empty() || idx.test_images.empty() ||
          idx.test_labels.empty()) {
        throw ConfigError("data.source = idx needs data.train_images, data.train_labels, data.test_images and "
                          "data.test_labels");
      }
      if (!(idx.alpha > 0.0)) throw ConfigError("alpha must be positive");
    }
    for (double lr : lr_grid) {
      if (!(lr >= 0.0)) throw ConfigError("train.lr_grid entries must be non-negative");
    }
    fed.validate();
    probe.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": '" + v + "' is not a valid number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not true or false");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

inline std::string scaling_name(const ScalingPolicy& p) {
  switch (p.mode) {
    case ScalingMode::kSqrtM:
      return "sqrt_m";
    case ScalingMode::kExplicit:
      return "explicit";
    case ScalingMode::kNone:
      return "none";
  }
  return "sqrt_m";
}

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

// Field helpers: N = unsigned integer, D = double, B = bool, S = string.
#define FUSEFL_N(KEY, EXPR) \
  {KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<std::size_t>(KEY, v); }, \
   [](const RunConfig& c) { return nlohmann::json(c.EXPR); }}
#define FUSEFL_D(KEY, EXPR) \
  {KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<double>(KEY, v); }, \
   [](const RunConfig& c) { return nlohmann::json(c.EXPR); }}
#define FUSEFL_B(KEY, EXPR) \
  {KEY, [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }, \
   [](const RunConfig& c) { return nlohmann::json(c.EXPR); }}
#define FUSEFL_S(KEY, EXPR) \
  {KEY, [](RunConfig& c, const std::string& v) { c.EXPR = v; }, [](const RunConfig& c) { return nlohmann::json(c.EXPR); }}

inline const std::vector<ConfigField>& config_fields() {
  using nlohmann::json;
  static const std::vector<ConfigField> fields{
      FUSEFL_S("name", name),
      FUSEFL_S("output_dir", output_dir),
      {"seed", [](RunConfig& c, const std::string& v) { c.fed.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return json(c.fed.seed); }},
      {"fed.algorithm", [](RunConfig& c, const std::string& v) { c.fed.algorithm = parse_algorithm(v); },
       [](const RunConfig& c) { return json(to_string(c.fed.algorithm)); }},
      FUSEFL_N("fed.clients", fed.clients),
      FUSEFL_N("fed.stages", fed.stages),
      FUSEFL_N("fed.epochs", fed.total_epochs),
      FUSEFL_N("fed.rounds", fed.rounds),
      {"fed.adaptor", [](RunConfig& c, const std::string& v) { c.fed.adaptor = parse_adaptor_kind(v); },
       [](const RunConfig& c) { return json(to_string(c.fed.adaptor)); }},
      {"fed.scaling",
       [](RunConfig& c, const std::string& v) {
         if (v == "sqrt_m") {
           c.fed.scaling.mode = ScalingMode::kSqrtM;
         } else if (v == "none") {
           c.fed.scaling.mode = ScalingMode::kNone;
         } else if (v == "explicit") {
           c.fed.scaling.mode = ScalingMode::kExplicit;
         } else {
           throw ConfigError("fed.scaling: '" + v + "' is not sqrt_m, none or explicit");
         }
       },
       [](const RunConfig& c) { return json(scaling_name(c.fed.scaling)); }},
      {"fed.client_width",
       [](RunConfig& c, const std::string& v) {
         c.fed.scaling.explicit_width =
             v.empty() ? std::nullopt : std::optional<std::size_t>(parse_number<std::size_t>("fed.client_width", v));
       },
       [](const RunConfig& c) { return c.fed.scaling.explicit_width ? json(*c.fed.scaling.explicit_width) : json(); }},
      FUSEFL_B("fed.count_downlink", fed.count_downlink),
      FUSEFL_D("train.learning_rate", fed.train.learning_rate),
      FUSEFL_D("train.momentum", fed.train.momentum),
      FUSEFL_N("train.batch_size", fed.train.batch_size),
      {"train.lr_grid", [](RunConfig& c, const std::string& v) { c.lr_grid = parse_list<double>("train.lr_grid", v); },
       [](const RunConfig& c) { return json(c.lr_grid); }},
      FUSEFL_B("calibrate.enabled", fed.calibration.enabled),
      FUSEFL_N("calibrate.virtual_per_class", fed.calibration.virtual_per_class),
      FUSEFL_N("calibrate.epochs", fed.calibration.epochs),
      {"calibrate.learning_rate",
       [](RunConfig& c, const std::string& v) {
         c.fed.calibration.learning_rate =
             v.empty() ? std::nullopt : std::optional<double>(parse_number<double>("calibrate.learning_rate", v));
       },
       [](const RunConfig& c) {
         return c.fed.calibration.learning_rate ? json(*c.fed.calibration.learning_rate) : json();
       }},
      FUSEFL_S("model.template", model_template),
      FUSEFL_N("model.width", model_width),
      FUSEFL_N("model.hidden_layers", hidden_layers),
      {"model.client_widths",
       [](RunConfig& c, const std::string& v) {
         c.fed.client_widths = parse_list<std::size_t>("model.client_widths", v);
       },
       [](const RunConfig& c) { return json(c.fed.client_widths); }},
      FUSEFL_S("data.source", data_source),
      FUSEFL_S("data.train_images", idx.train_images),
      FUSEFL_S("data.train_labels", idx.train_labels),
      FUSEFL_S("data.test_images", idx.test_images),
      FUSEFL_S("data.test_labels", idx.test_labels),
      FUSEFL_D("data.alpha", idx.alpha),
      FUSEFL_N("data.min_per_client", idx.min_per_client),
      FUSEFL_N("sem.num_classes", sem.num_classes),
      FUSEFL_N("sem.inv_dim", sem.inv_dim),
      FUSEFL_N("sem.spu_dim", sem.spu_dim),
      FUSEFL_D("sem.spurious_strength", sem.spurious_strength),
      FUSEFL_D("sem.noise_std", sem.noise_std),
      FUSEFL_D("sem.inv_scale", sem.inv_scale),
      FUSEFL_N("sem.samples_per_client", sem.samples_per_client),
      FUSEFL_N("sem.test_samples", sem.test_samples),
      {"sem.label_alpha",
       [](RunConfig& c, const std::string& v) {
         c.sem.label_alpha = v.empty() ? std::nullopt : std::optional<double>(parse_number<double>("sem.label_alpha", v));
       },
       [](const RunConfig& c) { return c.sem.label_alpha ? json(*c.sem.label_alpha) : json(); }},
      FUSEFL_N("sem.min_per_client", sem.min_per_client),
      FUSEFL_N("sem.image_side", sem.image_side),
      FUSEFL_B("sem.disjoint_spurious", sem.disjoint_spurious),
      {"backdoor.clients",
       [](RunConfig& c, const std::string& v) {
         c.backdoor.target_clients = parse_list<std::size_t>("backdoor.clients", v);
       },
       [](const RunConfig& c) { return json(c.backdoor.target_clients); }},
      FUSEFL_N("backdoor.patch_side", backdoor.patch_side),
      FUSEFL_D("backdoor.intensity_lo", backdoor.intensity_lo),
      FUSEFL_D("backdoor.intensity_hi", backdoor.intensity_hi),
      FUSEFL_N("probe.epochs", probe.probe_epochs),
      FUSEFL_D("probe.learning_rate", probe.learning_rate),
      FUSEFL_D("probe.momentum", probe.momentum),
      FUSEFL_N("probe.batch_size", probe.batch_size),
      FUSEFL_N("probe.decoder_hidden_cap", probe.decoder_hidden_cap),
      {"probe.seed", [](RunConfig& c, const std::string& v) { c.probe.seed = parse_number<std::uint64_t>("probe.seed", v); },
       [](const RunConfig& c) { return json(c.probe.seed); }},
  };
  return fields;
}

#undef FUSEFL_N
#undef FUSEFL_D
#undef FUSEFL_B
#undef FUSEFL_S

}  // namespace detail

// Copies cross-section settings that live in more than one struct.
inline void sync_run_config(RunConfig& c) {
  c.sem.clients = c.fed.clients;
  c.fed.backdoor = c.backdoor.target_clients.empty() ? std::nullopt : std::optional<BackdoorConfig>(c.backdoor);
}

// Applies `key = value` assignments on top of `base`. Errors name the line.
inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  std::map<std::string, const detail::ConfigField*> by_key;
  for (const auto& f : detail::config_fields()) by_key[f.key] = &f;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key + "' already set on line " +
                        std::to_string(prev->second));
    }
    seen[key] = line_no;
    try {
      it->second->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  sync_run_config(base);
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// Every key with its resolved value, in key order.
inline nlohmann::json resolved_config(const RunConfig& c) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : detail::config_fields()) out[f.key] = f.get(c);
  return out;
}

// Text form accepted by parse_run_config; parse(to_text(c)) == c.
inline std::string to_config_text(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) {
    const nlohmann::json v = f.get(c);
    std::string text;
    if (v.is_null()) {
      text = "";
    } else if (v.is_string()) {
      text = v.get<std::string>();
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) text += (i > 0 ? "," : "") + v[i].dump();
    } else {
      text = v.dump();
    }
    out += f.key + " = " + text + "\n";
  }
  return out;
}

// FUSEFL_SEED, when set, replaces the configured seed.
inline void apply_env_overrides(RunConfig& c, const char* seed_env) {
  if (seed_env == nullptr) return;
  c.fed.seed = detail::parse_number<std::uint64_t>("FUSEFL_SEED", detail::trim(seed_env));
}

}  // namespace fusefl
