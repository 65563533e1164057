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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Positional arguments select a subset of
// criteria by number.
//
// Criteria 6-8 use settings that were chosen on seeds 101-105 and confirmed
// on 201-205; the seeds checked here (1-5) played no part in choosing them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fusefl/cli/run.hpp"
#include "fusefl/io/checkpoint.hpp"
#include "fusefl/nn/gradcheck.hpp"
#include "test_util.hpp"

namespace fusefl {
namespace {

using testing::random_tensor;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Freeze audits from every FuseFL run made by any criterion (criterion 5).
struct AuditLog {
  std::size_t runs = 0, failed = 0, checks = 0;

  void add(const RunMetrics& m) {
    ++runs;
    checks += m.freeze_audit.size();
    failed += !m.freeze_audit_passed();
  }
};
AuditLog g_audits;

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1. Cost tables.
Outcome cost_tables() {
  const std::uint64_t s = resnet18_reference_bytes();
  const std::uint64_t ens = comm_cost({Algorithm::kEnsemble, s, 1, 5, false, {}});
  const std::uint64_t avg = comm_cost({Algorithm::kFedAvg, s, 10, 10, false, {}});
  const std::uint64_t store = storage_cost({Algorithm::kEnsemble, s, 1, 50, false, {}});
  const bool ok = format_mb(s) == "42.66MB" && format_mb(ens) == "213.31MB" && format_mb(avg, 1) == "4266.2MB" &&
                  format_mb(store) == "2133.10MB" && ens == 5 * s && avg == 100 * s && store == 50 * s;
  return {ok, "S=" + format_mb(s) + " ensemble M=5 " + format_mb(ens) + ", FedAvg T=10 M=10 " + format_mb(avg, 1) +
                  ", ensemble storage M=50 " + format_mb(store)};
}

// 2. Width scaling and fused model size.
Outcome width_scaling() {
  bool ok = true;
  std::string detail;
  const ModelSpec t = default_template();
  const std::uint64_t single = checkpoint_blob_bytes(make_staged_network(t, 1));
  const std::size_t expected[] = {20, 14, 9};
  const std::size_t ms[] = {10, 20, 50};
  for (int i = 0; i < 3; ++i) {
    const std::size_t w = scale_width(64, ms[i], ScalingPolicy{});
    const ModelSpec c = build_client_spec(t, w);
    const std::vector<StagedNetwork> clients(ms[i], make_staged_network(c, 1));
    const FusedModel f = assemble_fused_model(clients, AdaptorKind::kAverage, 1);
    const double ratio = static_cast<double>(checkpoint_blob_bytes(f)) / static_cast<double>(single);
    ok = ok && w == expected[i] && ratio >= 0.8 && ratio <= 1.3;
    detail += "M=" + std::to_string(ms[i]) + " width " + std::to_string(w) + " size ratio " + fmt("%.3f", ratio) +
              (i < 2 ? "; " : "");
  }
  return {ok, detail};
}

// 3. Gradient oracle over every layer kind.
Outcome gradient_oracle() {
  struct Case {
    const char* name;
    Shape input;
    BlockSpec spec;
  };
  const std::vector<Case> cases{
      {"dense", {6}, {Dense{6, 4}}},
      {"relu", {5}, {Dense{5, 6}, ReLU{}, Dense{6, 3}}},
      {"conv2d", {2, 5, 5}, {Conv2d{2, 3, 3, 1, 1}, Flatten{}, Dense{75, 3}}},
      {"conv2d_stride", {2, 6, 6}, {Conv2d{2, 2, 3, 2, 0}, Flatten{}, Dense{8, 3}}},
      {"avgpool2d", {2, 4, 5}, {Conv2d{2, 2, 1, 1, 0}, AvgPool2d{2}, Flatten{}, Dense{8, 3}}},
      {"flatten", {2, 2, 2}, {Flatten{}, Dense{8, 3}}},
      {"branch_mean", {6}, {Dense{6, 6}, BranchMean{3}, Dense{2, 3}}},
      {"scale", {4}, {Dense{4, 5}, Scale{-0.7}, ReLU{}, Dense{5, 3}}},
  };
  double worst = 0.0;
  for (const Case& c : cases) {
    for (std::uint64_t seed : kSeeds) {
      ParamSet p = init_params(c.spec, seed);
      Rng rng(seed ^ 0x5555);
      std::normal_distribution<double> dist(0.0, 0.1);
      for (auto& [idx, e] : p) {
        for (double& b : e.bias.raw()) b = dist(rng);
      }
      Shape in = c.input;
      in.insert(in.begin(), 3);
      std::vector<std::size_t> labels{seed % 3, (seed + 1) % 3, (seed + 2) % 3};
      Tensor x;
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt == 200) return {false, std::string("no kink-free input for ") + c.name};
        x = random_tensor(in, seed * 1000 + attempt);
        if (min_relu_margin(c.spec, forward(c.spec, p, x).cache) >= 1e-3) break;
      }
      worst = std::max(worst, finite_diff_check(c.spec, p, x, labels, 1e-5));
    }
  }
  return {worst < 1e-4, std::to_string(cases.size()) + " layer cases x 5 seeds, worst relative error " +
                            fmt("%.2e", worst)};
}

SemConfig sem_config(std::optional<double> alpha) {
  SemConfig s;
  s.label_alpha = alpha;
  s.disjoint_spurious = true;
  s.samples_per_client = 400;
  return s;
}

FedConfig fed_config(Algorithm a, std::size_t stages, std::uint64_t seed) {
  FedConfig cfg;
  cfg.algorithm = a;
  cfg.clients = 5;
  cfg.stages = stages;
  cfg.total_epochs = 40;
  cfg.seed = seed;
  cfg.adaptor = AdaptorKind::kLinearMix;
  const double lr = a == Algorithm::kFuseFL ? 0.015 : 0.02;
  cfg.train = TrainConfig{lr, 0.9, 16};
  return cfg;
}

// 4. Degenerate federations.
Outcome degenerate_identities() {
  // (a) One client, one stage.
  SemConfig s;
  s.clients = 1;
  s.samples_per_client = 300;
  const SemData d = synth_sem(s, 11);
  const ModelSpec spec = mlp_template(s.inv_dim + s.spu_dim, 10, 32, 1, 2);
  FedConfig cfg = fed_config(Algorithm::kFuseFL, 1, 11);
  cfg.clients = 1;
  cfg.adaptor = AdaptorKind::kAverage;
  cfg.total_epochs = 6;
  const FuseFLResult r = run_fusefl(spec, cfg, d.clients, d.test);
  g_audits.add(r.metrics);
  const Network local = train_local(make_staged_network(spec, client_init_seed(11, 0)).net, d.clients[0], 6,
                                    cfg.train, client_stream_seed(11, 0, 0))
                            .net;
  const bool a = fused_forward(r.model, d.test.inputs) == local.logits(d.test.inputs) &&
                 r.metrics.test_accuracy == evaluate(local, d.test);

  // (b) Identical clients behind Average adaptors.
  double worst = 0.0;
  for (const ModelSpec& t : {mlp_template(6, 3, 8, 3, 3), conv_template(2, 8, 4, 4, 2)}) {
    for (std::size_t m : {2u, 3u, 5u}) {
      const std::vector<StagedNetwork> clients(m, make_staged_network(t, 5));
      const FusedModel f = assemble_fused_model(clients, AdaptorKind::kAverage, 1);
      Shape in = t.input_shape;
      in.insert(in.begin(), 4);
      const Tensor x = random_tensor(in, 9);
      worst = std::max(worst, max_abs_diff(fused_forward(f, x), clients[0].logits(x)));
    }
  }
  const bool b = worst < 1e-12;

  // (c) Aggregating identical parameters.
  const ParamSet p = init_params(spec.flattened(), 3);
  const std::vector<ParamSet> same(4, p);
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const bool c = aggregate_params(same, w) == p;
  return {a && b && c, std::string("(a) M=1 K=1 bit-match ") + (a ? "yes" : "no") + ", (b) max diff " +
                           fmt("%.1e", worst) + ", (c) identity " + (c ? "yes" : "no")};
}

// 6. Accuracy ordering on SEM.
Outcome accuracy_ordering() {
  bool ok = true;
  std::string detail;
  for (double alpha : {0.1, 0.5}) {
    for (std::size_t k : {2u, 4u}) {
      int ordered = 0;
      double sf = 0, se = 0, sa = 0;
      for (std::uint64_t seed : kSeeds) {
        const SemData d = synth_sem(sem_config(alpha), seed);
        const ModelSpec t = mlp_template(64, 10, 96, k, 2);
        const auto f = run_fusefl(t, fed_config(Algorithm::kFuseFL, k, seed), d.clients, d.test).metrics;
        const auto e = run_ensemble(t, fed_config(Algorithm::kEnsemble, k, seed), d.clients, d.test).metrics;
        const auto a = run_fedavg(t, fed_config(Algorithm::kOneShotFedAvg, k, seed), d.clients, d.test).metrics;
        g_audits.add(f);
        ordered += f.test_accuracy >= e.test_accuracy && e.test_accuracy >= a.test_accuracy;
        sf += f.test_accuracy;
        se += e.test_accuracy;
        sa += a.test_accuracy;
      }
      ok = ok && ordered >= 4;
      char buf[160];
      std::snprintf(buf, sizeof buf, "alpha=%.1f K=%zu %d/5 (mean %.3f/%.3f/%.3f)", alpha, k, ordered, sf / 5,
                    se / 5, sa / 5);
      detail += std::string(detail.empty() ? "" : "; ") + buf;
    }
  }
  return {ok, detail};
}

// 7. Backdoor: client 0 trains on trigger-stamped images.
Outcome backdoor() {
  int wins = 0, pattern = 0;
  for (std::uint64_t seed : kSeeds) {
    SemConfig s = sem_config(0.5);
    s.image_side = 8;
    BackdoorConfig bd;
    bd.target_clients = {0};
    bd.patch_side = 8;
    SemData d = synth_sem(s, seed);
    d.clients[0] = inject_backdoor(d.clients[0], bd, derive_seed(seed, "backdoor", {0}));
    ModelSpec t = mlp_template(64, 10, 96, 2, 2);
    t.input_shape = {1, 8, 8};
    t.blocks.front().insert(t.blocks.front().begin(), Flatten{});
    FedConfig fc = fed_config(Algorithm::kFuseFL, 2, seed);
    fc.backdoor = bd;
    const auto f = run_fusefl(t, fc, d.clients, d.test).metrics;
    FedConfig ec = fed_config(Algorithm::kEnsemble, 2, seed);
    ec.backdoor = bd;
    const auto e = run_ensemble(t, ec, d.clients, d.test).metrics;
    g_audits.add(f);
    wins += f.test_accuracy >= e.test_accuracy;
    const auto& g = e.client_global_acc;
    const bool lowest = std::min_element(g.begin(), g.end()) == g.begin() &&
                        std::count(g.begin(), g.end(), g.front()) == 1;
    pattern += lowest && e.client_local_acc[0] >= 0.99;
  }
  return {wins >= 3 && pattern >= 3, "fusefl >= ensemble clean accuracy in " + std::to_string(wins) +
                                         "/5 seeds; backdoored client local acc >= 0.99 with lowest global acc in " +
                                         std::to_string(pattern) + "/5"};
}

// 8. Probes on isolated (ensemble members) vs fusion-trained (fused branch
// paths) features at the deepest stage, averaged over clients.
Outcome probe_suite() {
  int more_x = 0, less_y = 0;
  bool bounded = true, untouched = true;
  double worst_excess = -1e9;
  for (std::uint64_t seed : kSeeds) {
    const SemData d = synth_sem(sem_config(0.5), seed);
    const ModelSpec t = mlp_template(64, 10, 96, 2, 2);
    const FuseFLResult f = run_fusefl(t, fed_config(Algorithm::kFuseFL, 2, seed), d.clients, d.test);
    const EnsembleResult e = run_ensemble(t, fed_config(Algorithm::kEnsemble, 2, seed), d.clients, d.test);
    g_audits.add(f.metrics);
    const FusedModel f_before = f.model;
    const EnsembleModel e_before = e.model;
    const Dataset train = concat_datasets(d.clients);
    ProbeConfig pc;
    pc.seed = seed;
    double iso_x = 0, iso_y = 0, fus_x = 0, fus_y = 0;
    for (std::size_t m = 0; m < 5; ++m) {
      const ProbeResult pi = run_probes(e.model.members[m], train, d.test, pc);
      const ProbeResult pf = run_probes(FusedBranchView{&f.model, m}, train, d.test, pc);
      for (const ProbeResult* p : {&pi, &pf}) {
        for (const StageProbe& sp : p->stages) {
          worst_excess = std::max(worst_excess, sp.mi_y - p->label_entropy);
          bounded = bounded && sp.mi_y <= p->label_entropy + 0.05;
        }
      }
      iso_x += pi.stages.back().mi_x_proxy;
      iso_y += pi.stages.back().mi_y;
      fus_x += pf.stages.back().mi_x_proxy;
      fus_y += pf.stages.back().mi_y;
    }
    more_x += iso_x > fus_x;
    less_y += iso_y < fus_y;
    untouched = untouched && f.model == f_before && e.model == e_before;
  }
  return {more_x >= 3 && less_y >= 3 && bounded && untouched,
          "isolated mi_x_proxy higher in " + std::to_string(more_x) + "/5, mi_y lower in " + std::to_string(less_y) +
              "/5; max mi_y - H(y) " + fmt("%.3f", worst_excess) + "; models unchanged " + (untouched ? "yes" : "no")};
}

// 9. Partition properties on an MNIST-sized label set.
Outcome partition_properties() {
  const std::vector<std::size_t> counts{5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949};
  Dataset data;
  data.num_classes = 10;
  for (std::size_t c = 0; c < 10; ++c) data.labels.insert(data.labels.end(), counts[c], c);
  Rng rng(3);
  std::shuffle(data.labels.begin(), data.labels.end(), rng);
  data.inputs = Tensor({data.labels.size(), 1});

  bool conserved = true, deterministic = true;
  double tv_low = 0, tv_high = 0;
  auto bytes = [](const Partition& p) {
    std::ostringstream out;
    for (const auto& c : p.client_indices) {
      for (std::size_t i : c) out << i << ' ';
      out << '\n';
    }
    return out.str();
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Partition low = dirichlet_partition(data, 10, 0.1, seed, 1);
    const Partition high = dirichlet_partition(data, 10, 0.5, seed, 1);
    for (const Partition* p : {&low, &high}) {
      std::vector<std::size_t> all;
      for (const auto& c : p->client_indices) all.insert(all.end(), c.begin(), c.end());
      std::sort(all.begin(), all.end());
      for (std::size_t i = 0; i < all.size(); ++i) conserved = conserved && all[i] == i;
      conserved = conserved && all.size() == data.size();
    }
    deterministic = deterministic && bytes(low) == bytes(dirichlet_partition(data, 10, 0.1, seed, 1));
    tv_low += mean_label_tv_distance(low, data.labels, 10);
    tv_high += mean_label_tv_distance(high, data.labels, 10);
  }
  return {conserved && deterministic && tv_low > tv_high,
          std::string("conservation ") + (conserved ? "exact" : "violated") + ", mean TV alpha=0.1 " +
              fmt("%.3f", tv_low / 10) + " > alpha=0.5 " + fmt("%.3f", tv_high / 10) + ", reruns " +
              (deterministic ? "byte-identical" : "differ")};
}

// 10. Checkpoint round trip and tamper detection.
Outcome checkpoint_round_trip() {
  const SemData d = synth_sem(sem_config(0.5), 1);
  FedConfig cfg = fed_config(Algorithm::kFuseFL, 2, 1);
  cfg.total_epochs = 4;
  const FuseFLResult r = run_fusefl(mlp_template(64, 10, 32, 2, 2), cfg, d.clients, d.test);
  g_audits.add(r.metrics);
  const auto dir = testing::temp_dir("acceptance_ckpt");
  save_checkpoint(r.model, dir / "a.ckpt");
  const AnyModel loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(loaded, dir / "b.ckpt");
  const std::string a = serialize_checkpoint(r.model), b = serialize_checkpoint(loaded);
  std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
  const std::string file_a((std::istreambuf_iterator<char>(fa)), {}), file_b((std::istreambuf_iterator<char>(fb)), {});
  const bool identical = a == b && file_a == file_b && file_a == a;
  std::string tampered = a;
  tampered[tampered.size() - 3] ^= 0x01;
  bool caught = false;
  try {
    (void)deserialize_checkpoint(tampered);
  } catch (const CheckpointError& e) {
    caught = e.code() == CheckpointErrorCode::kDigest;
  }
  return {identical && caught, std::string("save-load-save ") + (identical ? "byte-identical" : "differs") +
                                   " (" + std::to_string(a.size()) + " bytes), blob tamper " +
                                   (caught ? "detected" : "missed")};
}

// 5. Freeze audit over every FuseFL run above plus a four-stage run.
Outcome freeze_audit() {
  const SemData d = synth_sem(sem_config(0.1), 7);
  for (AdaptorKind kind : {AdaptorKind::kAverage, AdaptorKind::kLinearMix}) {
    FedConfig cfg = fed_config(Algorithm::kFuseFL, 4, 7);
    cfg.adaptor = kind;
    cfg.total_epochs = 8;
    g_audits.add(run_fusefl(mlp_template(64, 10, 32, 4, 4), cfg, d.clients, d.test).metrics);
  }
  return {g_audits.failed == 0 && g_audits.checks > 0,
          std::to_string(g_audits.runs) + " FuseFL runs, " + std::to_string(g_audits.checks) + " stage audits, " +
              std::to_string(g_audits.failed) + " runs with a changed frozen parameter"};
}

}  // namespace
}  // namespace fusefl

int main(int argc, char** argv) {
  using namespace fusefl;
  CLI::App app{"FuseFL acceptance suite"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  // Criterion 5 runs last so it sees the audits of every other run.
  const std::vector<Criterion> all{
      {1, "cost tables", cost_tables},
      {2, "width scaling", width_scaling},
      {3, "gradient oracle", gradient_oracle},
      {4, "degenerate federations", degenerate_identities},
      {6, "accuracy ordering on SEM", accuracy_ordering},
      {7, "backdoor", backdoor},
      {8, "probe suite", probe_suite},
      {9, "partition properties", partition_properties},
      {10, "checkpoint round trip", checkpoint_round_trip},
      {5, "freeze audit", freeze_audit},
  };
  int failures = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
