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
#include <span>

#include "fusefl/error.hpp"
#include "fusefl/nn/network.hpp"

namespace fusefl {

// Compares the analytic gradient of the mean cross-entropy loss against a
// central difference for every trainable scalar parameter. Returns the worst
// relative error |a - n| / max(|a|, |n|, 1e-8).
inline double finite_diff_check(const BlockSpec& spec, const ParamSet& params, const Tensor& x,
                                std::span<const std::size_t> labels, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ConfigError("epsilon must be in (0, 1e-2]");
  const ForwardResult fr = forward(spec, params, x);
  const LossResult ce = cross_entropy(fr.output, labels);
  const BackwardResult br = backward(spec, params, fr.cache, ce.dlogits);

  ParamSet probe = params;
  auto loss_at = [&]() { return cross_entropy(predict(spec, probe, x), labels).loss; };
  double worst = 0.0;
  auto check = [&](Tensor& theta, const Tensor& analytic) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + epsilon;
      const double up = loss_at();
      theta[i] = saved - epsilon;
      const double down = loss_at();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  };
  for (auto& [idx, entry] : probe) {
    if (!entry.trainable) continue;
    const auto git = br.grads.find(idx);
    if (git == br.grads.end()) throw InternalError("no gradient for trainable layer " + std::to_string(idx));
    check(entry.weights, git->second.weights);
    check(entry.bias, git->second.bias);
  }
  return worst;
}

}  // namespace fusefl
