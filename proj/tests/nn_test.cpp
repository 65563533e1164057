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

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "fusefl/nn/gradcheck.hpp"
#include "fusefl/nn/network.hpp"
#include "fusefl/nn/optim.hpp"
#include "gtest/gtest.h"

namespace fusefl {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.raw()) v = dist(rng);
  return t;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> dist(0, classes - 1);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = dist(rng);
  return labels;
}

// Random biases too, so that gradient checks exercise the bias path.
ParamSet random_params(const BlockSpec& spec, std::uint64_t seed) {
  ParamSet params = init_params(spec, seed);
  Rng rng(seed ^ 0x5555);
  std::normal_distribution<double> dist(0.0, 0.1);
  for (auto& [idx, entry] : params) {
    for (double& b : entry.bias.raw()) b = dist(rng);
  }
  return params;
}

TEST(InitParams, DeterministicGivenSeed) {
  const BlockSpec spec{Dense{4, 3}};
  EXPECT_EQ(init_params(spec, 7), init_params(spec, 7));
  EXPECT_NE(init_params(spec, 7), init_params(spec, 8));
}

TEST(InitParams, BiasIsZero) {
  const ParamSet p = init_params({Dense{4, 3}}, 7);
  EXPECT_EQ(p.at(0).bias, Tensor({3}));
}

TEST(InitParams, WeightsWithinFanInBound) {
  const ParamSet p = init_params({Dense{100, 10}}, 1);
  const double bound = std::sqrt(6.0 / 100.0);
  EXPECT_NEAR(bound, 0.2449, 1e-4);
  double max_abs = 0.0;
  for (double w : p.at(0).weights.raw()) max_abs = std::max(max_abs, std::abs(w));
  EXPECT_LE(max_abs, bound);
  EXPECT_GT(max_abs, 0.8 * bound);
}

TEST(InitParams, RejectsInconsistentSpecNamingLayer) {
  try {
    (void)init_params({Dense{4, 3}, ReLU{}, Dense{5, 2}}, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)init_params({Conv2d{1, 2, 5, 1, 0}}, 1), ConfigError);
  EXPECT_THROW((void)init_params({Dense{0, 2}}, 1), ConfigError);
}

TEST(Forward, IdentityDense) {
  const BlockSpec spec{Dense{3, 3}};
  ParamSet p = init_params(spec, 3);
  p.at(0).weights = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x({2, 3}, {1.5, -2.0, 3.25, 0.0, 7.0, -1.0});
  EXPECT_EQ(predict(spec, p, x), x);
}

TEST(Forward, Relu) {
  const Tensor x({1, 3}, {-1.0, 0.0, 2.0});
  EXPECT_EQ(predict({ReLU{}}, {}, x), Tensor({1, 3}, {0.0, 0.0, 2.0}));
}

TEST(Forward, Conv1x1MatchesPerPixelMatmul) {
  const Conv2d conv{2, 3, 1, 1, 0};
  const BlockSpec spec{conv};
  ParamSet p = init_params(spec, 11);
  p.at(0).bias = Tensor({3}, {0.5, -1.0, 2.0});
  const Tensor x = random_tensor({1, 2, 2, 2}, 4);
  const Tensor y = predict(spec, p, x);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 2, 2}));
  // Oracle: at every pixel, out = W[3x2] * in[2] + b.
  for (std::size_t pix = 0; pix < 4; ++pix) {
    for (std::size_t o = 0; o < 3; ++o) {
      double expect = p.at(0).bias[o];
      for (std::size_t c = 0; c < 2; ++c) expect += p.at(0).weights[o * 2 + c] * x[c * 4 + pix];
      EXPECT_NEAR(y[o * 4 + pix], expect, 1e-14);
    }
  }
}

TEST(Forward, ShapeMismatchNamesLayerAndShapes) {
  const BlockSpec spec{Dense{4, 3}, ReLU{}, Dense{3, 2}};
  const ParamSet p = init_params(spec, 1);
  try {
    (void)predict(spec, p, Tensor({2, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("layer 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[5]"), std::string::npos) << msg;
  }
}

TEST(Forward, OutputShapeConsistent) {
  const BlockSpec spec{Conv2d{1, 4, 3, 2, 1}, ReLU{}, AvgPool2d{2}, Flatten{}, Dense{16, 5}};
  const ParamSet p = init_params(spec, 2);
  for (std::size_t batch : {1u, 3u}) {
    const ForwardResult fr = forward(spec, p, random_tensor({batch, 1, 8, 8}, batch));
    EXPECT_EQ(fr.output.shape(), (Shape{batch, 5}));
    for (const Tensor& t : fr.cache.inputs) EXPECT_EQ(shape_size(t.shape()), t.size());
  }
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor logits({2, 10}, 0.3);
  const std::vector<std::size_t> labels{3, 9};
  EXPECT_NEAR(cross_entropy(logits, labels).loss, std::log(10.0), 1e-12);
}

TEST(CrossEntropy, LargeMarginVanishes) {
  Tensor logits({1, 4});
  logits[2] = 20.0;
  const std::vector<std::size_t> labels{2};
  EXPECT_LT(cross_entropy(logits, labels).loss, 1e-3);
}

TEST(CrossEntropy, MatchesDirectLogSumExp) {
  const Tensor logits = random_tensor({2, 3}, 99, 3.0);
  const std::vector<std::size_t> labels{1, 2};
  double expect = 0.0;
  for (std::size_t n = 0; n < 2; ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += std::exp(logits[n * 3 + c]);
    expect += (std::log(s) - logits[n * 3 + labels[n]]) / 2.0;
  }
  EXPECT_NEAR(cross_entropy(logits, labels).loss, expect, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<std::size_t> labels{3};
  EXPECT_THROW((void)cross_entropy(Tensor({1, 3}), labels), InputError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const BlockSpec spec{Dense{3, 4}, ReLU{}, Dense{4, 2}};
  const ParamSet p = random_params(spec, 5);
  const ForwardResult fr = forward(spec, p, random_tensor({3, 3}, 1));
  const BackwardResult br = backward(spec, p, fr.cache, Tensor({3, 2}));
  ASSERT_EQ(br.grads.size(), 2u);
  for (const auto& [idx, g] : br.grads) {
    for (double v : g.weights.raw()) EXPECT_EQ(v, 0.0);
    for (double v : g.bias.raw()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, LinearLeastSquaresClosedForm) {
  // Loss 0.5 * ||XW^T + b - Y||^2 has dW = delta^T X, db = sum(delta).
  const BlockSpec spec{Dense{3, 2}};
  const ParamSet p = random_params(spec, 8);
  const Tensor x = random_tensor({4, 3}, 2);
  const Tensor target = random_tensor({4, 2}, 3);
  const ForwardResult fr = forward(spec, p, x);
  Tensor delta(fr.output.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = fr.output[i] - target[i];
  const BackwardResult br = backward(spec, p, fr.cache, delta);
  for (std::size_t o = 0; o < 2; ++o) {
    double db = 0.0;
    for (std::size_t n = 0; n < 4; ++n) db += delta[n * 2 + o];
    EXPECT_NEAR(br.grads.at(0).bias[o], db, 1e-13);
    for (std::size_t i = 0; i < 3; ++i) {
      double dw = 0.0;
      for (std::size_t n = 0; n < 4; ++n) dw += delta[n * 2 + o] * x[n * 3 + i];
      EXPECT_NEAR(br.grads.at(0).weights[o * 3 + i], dw, 1e-13);
    }
  }
}

TEST(Backward, FrozenLayerHasNoEntryButPropagates) {
  const BlockSpec spec{Dense{3, 4}, ReLU{}, Dense{4, 2}};
  ParamSet p = random_params(spec, 5);
  const Tensor x = random_tensor({3, 3}, 1);
  const std::vector<std::size_t> labels{0, 1, 1};
  const ForwardResult fr = forward(spec, p, x);
  const auto ce = cross_entropy(fr.output, labels);
  const BackwardResult full = backward(spec, p, fr.cache, ce.dlogits);
  p.at(2).trainable = false;
  const BackwardResult frozen = backward(spec, p, fr.cache, ce.dlogits);
  EXPECT_EQ(frozen.grads.count(2), 0u);
  ASSERT_EQ(frozen.grads.count(0), 1u);
  EXPECT_EQ(frozen.grads.at(0), full.grads.at(0));
  EXPECT_EQ(frozen.dinput, full.dinput);
}

TEST(FiniteDiff, LinearModel) {
  const BlockSpec spec{Dense{5, 3}};
  const ParamSet p = random_params(spec, 1);
  const auto labels = random_labels(6, 3, 2);
  EXPECT_LT(finite_diff_check(spec, p, random_tensor({6, 5}, 3), labels, 1e-5), 1e-6);
}

TEST(FiniteDiff, TwoLayerReluAwayFromKinks) {
  const BlockSpec spec{Dense{4, 8}, ReLU{}, Dense{8, 3}};
  const auto labels = random_labels(5, 3, 9);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 3 && seed < 100; ++seed) {
    const ParamSet p = random_params(spec, seed);
    const Tensor x = random_tensor({5, 4}, seed + 1000);
    if (min_relu_margin(spec, forward(spec, p, x).cache) < 1e-3) continue;
    EXPECT_LT(finite_diff_check(spec, p, x, labels, 1e-5), 1e-4);
    ++checked;
  }
  EXPECT_EQ(checked, 3);
}

TEST(FiniteDiff, FrozenLayerIsSkipped) {
  // A frozen layer with a deliberately corrupted "gradient" path would show
  // up as error; freezing means it is simply not perturbed.
  const BlockSpec spec{Dense{4, 3}, ReLU{}, Dense{3, 2}};
  ParamSet p = random_params(spec, 4);
  p.at(0).trainable = false;
  const auto labels = random_labels(4, 2, 1);
  const Tensor x = random_tensor({4, 4}, 5);
  ASSERT_GE(min_relu_margin(spec, forward(spec, p, x).cache), 1e-3);
  EXPECT_LT(finite_diff_check(spec, p, x, labels, 1e-5), 1e-4);
  set_trainable(p, false);
  EXPECT_EQ(finite_diff_check(spec, p, x, labels, 1e-5), 0.0);
}

TEST(FiniteDiff, RejectsBadEpsilon) {
  const std::vector<std::size_t> labels{0};
  EXPECT_THROW((void)finite_diff_check({Dense{1, 2}}, init_params({Dense{1, 2}}, 1), Tensor({1, 1}),
                                       labels, 0.1),
               ConfigError);
}

struct GradCase {
  const char* name;
  Shape input;
  BlockSpec spec;
};

// Every layer kind, five seeds each, inputs resampled near ReLU kinks.
TEST(FiniteDiff, EveryLayerKindFiveSeeds) {
  const std::vector<GradCase> cases{
      {"dense", {6}, {Dense{6, 4}}},
      {"relu", {5}, {Dense{5, 6}, ReLU{}, Dense{6, 3}}},
      {"conv3", {2, 5, 5}, {Conv2d{2, 3, 3, 1, 1}, Flatten{}, Dense{75, 3}}},
      {"conv3_stride", {2, 6, 6}, {Conv2d{2, 2, 3, 2, 0}, Flatten{}, Dense{8, 3}}},
      {"conv1", {3, 3, 3}, {Conv2d{3, 2, 1, 1, 0}, Flatten{}, Dense{18, 3}}},
      {"avgpool", {2, 4, 5}, {Conv2d{2, 2, 1, 1, 0}, AvgPool2d{2}, Flatten{}, Dense{8, 3}}},
      {"flatten", {2, 2, 2}, {Flatten{}, Dense{8, 3}}},
      {"branch_mean", {6}, {Dense{6, 6}, BranchMean{3}, Dense{2, 3}}},
      {"scale", {4}, {Dense{4, 5}, Scale{-0.7}, ReLU{}, Dense{5, 3}}},
      {"branch_mean_spatial", {4, 2, 2}, {BranchMean{2}, Conv2d{2, 2, 1, 1, 0}, Flatten{}, Dense{8, 3}}},
  };
  for (const GradCase& c : cases) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const ParamSet p = random_params(c.spec, seed);
      Shape in = c.input;
      in.insert(in.begin(), 3);
      const auto labels = random_labels(3, 3, seed);
      Tensor x;
      for (std::uint64_t attempt = 0;; ++attempt) {
        ASSERT_LT(attempt, 200u) << c.name;
        x = random_tensor(in, seed * 1000 + attempt);
        if (min_relu_margin(c.spec, forward(c.spec, p, x).cache) >= 1e-3) break;
      }
      EXPECT_LT(finite_diff_check(c.spec, p, x, labels, 1e-5), 1e-4) << c.name << " seed " << seed;
    }
  }
}

TEST(Sgd, PlainStep) {
  ParamSet p{{0, ParamEntry{Tensor({1}, 1.0), Tensor({1}, 0.0), true}}};
  const ParamSet g{{0, ParamEntry{Tensor({1}, 2.0), Tensor({1}, 0.0), true}}};
  OptState opt = make_opt_state(0.1, 0.0);
  sgd_step(p, g, opt);
  EXPECT_NEAR(p.at(0).weights[0], 0.8, 1e-15);
}

TEST(Sgd, MomentumRecurrence) {
  // v1 = 1, theta = -1; v2 = 0.9 + 1 = 1.9, theta = -2.9.
  ParamSet p{{0, ParamEntry{Tensor({1}, 0.0), Tensor({1}, 0.0), true}}};
  const ParamSet g{{0, ParamEntry{Tensor({1}, 1.0), Tensor({1}, 0.0), true}}};
  OptState opt = make_opt_state(1.0, 0.9);
  sgd_step(p, g, opt);
  EXPECT_DOUBLE_EQ(p.at(0).weights[0], -1.0);
  sgd_step(p, g, opt);
  EXPECT_DOUBLE_EQ(p.at(0).weights[0], -2.9);
}

TEST(Sgd, FrozenUntouched) {
  ParamSet p{{0, ParamEntry{Tensor({2}, 1.0), Tensor({1}, 3.0), false}},
             {1, ParamEntry{Tensor({1}, 1.0), Tensor({1}, 1.0), true}}};
  const ParamSet before = p;
  const ParamSet g{{1, ParamEntry{Tensor({1}, 1.0), Tensor({1}, 1.0), true}},
                   {0, ParamEntry{Tensor({2}, 5.0), Tensor({1}, 5.0), true}}};
  OptState opt = make_opt_state(0.5, 0.9);
  for (int i = 0; i < 10; ++i) sgd_step(p, g, opt);
  EXPECT_EQ(p.at(0), before.at(0));
  EXPECT_NE(p.at(1), before.at(1));
}

TEST(Sgd, ShapeMismatch) {
  ParamSet p{{0, ParamEntry{Tensor({2}), Tensor({1}), true}}};
  const ParamSet g{{0, ParamEntry{Tensor({3}), Tensor({1}), true}}};
  OptState opt = make_opt_state(0.1, 0.0);
  EXPECT_THROW(sgd_step(p, g, opt), InternalError);
}

TEST(CountParams, Examples) {
  EXPECT_EQ(count_params(BlockSpec{Dense{4, 3}}), 15u);
  EXPECT_EQ(count_params(BlockSpec{Conv2d{2, 4, 3, 1, 1}}), 76u);
  EXPECT_EQ(count_params(BlockSpec{}), 0u);
}

// Freeze identity and determinism across many training steps.
TEST(Properties, FreezeAndDeterminismOverTraining) {
  const BlockSpec spec{Dense{4, 6}, ReLU{}, Dense{6, 6}, ReLU{}, Dense{6, 3}};
  const Tensor x = random_tensor({16, 4}, 1);
  const auto labels = random_labels(16, 3, 2);
  auto train = [&](bool freeze_middle) {
    ParamSet p = init_params(spec, 42);
    if (freeze_middle) p.at(2).trainable = false;
    OptState opt = make_opt_state(0.05, 0.9);
    for (int step = 0; step < 50; ++step) {
      const ForwardResult fr = forward(spec, p, x);
      const auto ce = cross_entropy(fr.output, labels);
      sgd_step(p, backward(spec, p, fr.cache, ce.dlogits).grads, opt);
    }
    return p;
  };
  const ParamSet a = train(true);
  EXPECT_EQ(a, train(true));
  EXPECT_EQ(a.at(2).weights, init_params(spec, 42).at(2).weights);
  EXPECT_EQ(a.at(2).bias, init_params(spec, 42).at(2).bias);
  EXPECT_NE(a.at(0), init_params(spec, 42).at(0));
  for (const auto& [idx, e] : a) EXPECT_TRUE(e.weights.all_finite());
}

TEST(Network, SliceAndChainRoundTrip) {
  const Network net = make_network({4}, {Dense{4, 5}, ReLU{}, Dense{5, 2}}, 3);
  const Network a = slice_network(net, 0, 2);
  const Network b = slice_network(net, 2, 3);
  EXPECT_EQ(b.input_shape, (Shape{5}));
  EXPECT_EQ(chain_networks(a, b), net);
}

}  // namespace
}  // namespace fusefl
