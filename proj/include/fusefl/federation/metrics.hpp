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
#include <string>
#include <vector>

#include "fusefl/federation/config.hpp"
#include "fusefl/federation/train.hpp"

namespace fusefl {

// Bit-equality check of the fused stages taken after a stage's training.
struct FreezeAudit {
  std::size_t after_stage = 0;
  std::size_t frozen_stages = 0;
  bool identical = true;
};

struct RunMetrics {
  Algorithm algorithm = Algorithm::kFuseFL;
  std::vector<EpochRecord> records;
  std::vector<std::size_t> epochs_per_part;  // per stage (fusefl) or round (fedavg)
  double test_accuracy = 0.0;
  std::uint64_t comm_bytes = 0;              // sum of serialized payloads
  std::uint64_t comm_bytes_closed_form = 0;  // CostModel prediction
  std::uint64_t storage_bytes = 0;
  std::uint64_t model_bytes = 0;             // S of one client model
  std::size_t template_params = 0;
  std::vector<std::size_t> client_params;
  std::size_t final_params = 0;
  // Accuracy of each client's own model on its training data and on the
  // global test set.
  std::vector<double> client_local_acc;
  std::vector<double> client_global_acc;
  std::vector<FreezeAudit> freeze_audit;
  std::vector<std::string> warnings;

  bool freeze_audit_passed() const {
    for (const FreezeAudit& a : freeze_audit) {
      if (!a.identical) return false;
    }
    return true;
  }
};

inline void append_epochs(RunMetrics& metrics, const std::string& phase, std::size_t part,
                          std::optional<std::size_t> client, const std::vector<EpochStats>& epochs) {
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    metrics.records.push_back({phase, part, client, e + 1, epochs[e].loss, epochs[e].accuracy});
  }
}

}  // namespace fusefl
