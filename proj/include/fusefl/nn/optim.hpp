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
#include <map>
#include <string>

#include "fusefl/error.hpp"
#include "fusefl/nn/network.hpp"

namespace fusefl {

struct Velocity {
  Tensor weights;
  Tensor bias;
};

struct OptState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::map<std::size_t, Velocity> velocity;
};

inline OptState make_opt_state(double learning_rate, double momentum) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  return OptState{learning_rate, momentum, {}};
}

// SGD with heavy-ball momentum: v <- momentum * v + g; theta <- theta - lr * v.
// Frozen entries are never touched, even if a gradient is supplied for them.
inline void sgd_step(ParamSet& params, const ParamSet& grads, OptState& opt) {
  for (const auto& [idx, g] : grads) {
    auto it = params.find(idx);
    if (it == params.end()) {
      throw InternalError("gradient for unknown layer " + std::to_string(idx));
    }
    ParamEntry& p = it->second;
    if (!p.trainable) continue;
    if (g.weights.shape() != p.weights.shape() || g.bias.shape() != p.bias.shape()) {
      throw InternalError("gradient shape mismatch at layer " + std::to_string(idx));
    }
    auto [vit, inserted] = opt.velocity.try_emplace(idx);
    Velocity& v = vit->second;
    if (inserted) {
      v.weights = Tensor(p.weights.shape());
      v.bias = Tensor(p.bias.shape());
    }
    auto update = [&](Tensor& theta, Tensor& vel, const Tensor& grad) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        vel[i] = opt.momentum * vel[i] + grad[i];
        theta[i] -= opt.learning_rate * vel[i];
      }
    };
    update(p.weights, v.weights, g.weights);
    update(p.bias, v.bias, g.bias);
  }
}

}  // namespace fusefl
