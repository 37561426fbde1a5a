// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Usage: acceptance [criterion numbers...]   (default: all)
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_support.hpp"
#include "dcc/attacks.hpp"
#include "dcc/checkpoint.hpp"
#include "dcc/corruptions.hpp"
#include "dcc/metrics.hpp"
#include "dcc/optim.hpp"
#include "dcc/topology.hpp"
#include "layer_check.hpp"
#include "oracles.hpp"
#include "random_config.hpp"

using namespace dcc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::string summary;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      details.push_back("violated: " + what);
    }
  }
  void note(const std::string& line) { details.push_back(line); }
};

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;  // 0 means no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------ criterion 1

Outcome gradient_soundness() {
  using namespace layer_check;
  Outcome o;
  Rng rng(8);
  double worst_layer = 0.0;
  auto check_layer = [&](const std::string& name, ParamStore<double>& store, const LayerFn& f, const Tensor<double>& x) {
    perturb_bn(store, rng);
    const double err = layer_gradcheck(store, f, x);
    worst_layer = std::max(worst_layer, err);
    o.note(name + " max relative error " + fmt("%.3e", err));
    o.require(err < kLayerTolerance, name + " below " + fmt("%.0e", kLayerTolerance));
  };
  {
    ParamStore<double> s;
    auto p = add_dense_layer(s, "l", 3, 2, rng);
    check_layer("dense layer", s, [&](const LayerContext<double>& c, Var<double> v) { return dense_layer_forward(c, p, v); },
                oracle::random_tensor<double>({2, 3, 5, 5}, rng));
  }
  {
    ParamStore<double> s;
    auto p = add_dense_block(s, "b", 2, 2, 2, rng);
    check_layer("dense block", s, [&](const LayerContext<double>& c, Var<double> v) { return dense_block_forward(c, p, v); },
                oracle::random_tensor<double>({2, 2, 4, 4}, rng));
  }
  {
    ParamStore<double> s;
    auto p = add_transition(s, "t", 4, 0.5, rng);
    check_layer("transition", s, [&](const LayerContext<double>& c, Var<double> v) { return transition_forward(c, p, v); },
                oracle::random_tensor<double>({2, 4, 4, 4}, rng));
  }
  {
    ParamStore<double> s;
    auto p = add_stem(s, "s", 3, 3, rng);
    check_layer("stem", s, [&](const LayerContext<double>& c, Var<double> v) { return stem_forward(c, p, v); },
                oracle::random_tensor<double>({2, 3, 8, 8}, rng));
  }
  {
    ParamStore<double> s;
    auto p = add_conv_unit(s, "c", 2, 3, rng);
    check_layer("conv unit", s, [&](const LayerContext<double>& c, Var<double> v) { return conv_unit_forward(c, p, v); },
                oracle::random_tensor<double>({2, 2, 4, 4}, rng));
  }
  {
    ParamStore<double> s;
    auto p = add_head(s, "h", 6, 3, rng);
    check_layer("head", s, [&](const LayerContext<double>& c, Var<double> v) { return head_forward(c, p, v); },
                oracle::random_tensor<double>({3, 6}, rng));
  }

  auto model = build_dcc_ecnn<double>(tiny_config());
  const auto x = oracle::random_tensor<double>({2, 3, 16, 16}, rng, 0, 1);
  const std::vector<int> labels{0, 1};
  const auto report = gradcheck_model(model, x, labels);
  std::size_t trainable = 0;
  for (ParamId i = 0; i < model.params().size(); ++i) trainable += is_trainable(model.params().kind(i));
  o.note("tiny DCC-ECNN: " + std::to_string(report.groups.size()) + " parameter groups, max relative error " +
         fmt("%.3e", report.max_rel_error));
  o.require(report.groups.size() == trainable, "every trainable tensor checked");
  o.require(report.max_rel_error < kNetworkTolerance, "network below " + fmt("%.0e", kNetworkTolerance));
  o.summary = "layers " + fmt("%.2e", worst_layer) + " < 1e-4, network " + fmt("%.2e", report.max_rel_error) + " < 1e-3";
  return o;
}

// ------------------------------------------------------------ criterion 2

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(2024);
  double worst_conv = 0, worst_avg = 0;
  std::size_t max_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t N = 1 + rng.below(3), C = 1 + rng.below(5), H = 3 + rng.below(14), W = 3 + rng.below(14);
    const int k = 1 + static_cast<int>(rng.below(std::min<std::uint64_t>(H, W) < 5 ? 3 : 5));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    const auto x = oracle::random_tensor<double>({N, C, H, W}, rng);
    const auto w = oracle::random_tensor<double>({1 + rng.below(6), C, static_cast<std::size_t>(k),
                                                  static_cast<std::size_t>(k)}, rng);
    const auto b = oracle::random_tensor<double>({w.shape()[0]}, rng);
    Tape<double> tape;
    tape.set_grad_enabled(false);
    const auto xv = tape.constant(x);
    const bool with_bias = rng.below(2) == 1;
    const auto conv = ops::conv2d(xv, tape.constant(w), with_bias ? std::optional(tape.constant(b)) : std::nullopt,
                                  {stride, pad});
    worst_conv = std::max(worst_conv, oracle::max_rel_diff(conv.value(),
                                                           oracle::conv2d<double>(x, w, with_bias ? &b : nullptr, stride, pad)));
    if (!(ops::maxpool2d(xv, k, stride, pad).value() == oracle::maxpool2d(x, k, stride, pad))) ++max_mismatch;
    worst_avg = std::max(worst_avg, oracle::max_rel_diff(ops::avgpool2d(xv, k, stride).value(),
                                                         oracle::avgpool2d(x, k, stride)));
    worst_avg = std::max(worst_avg, oracle::max_rel_diff(ops::global_avg_pool(xv).value(), oracle::global_avg_pool(x)));
  }
  o.note("conv2d max relative difference " + fmt("%.3e", worst_conv));
  o.note("avgpool/global pool max relative difference " + fmt("%.3e", worst_avg));
  o.note("maxpool mismatching shapes " + std::to_string(max_mismatch));
  o.require(worst_conv < 1e-6, "conv2d within 1e-6");
  o.require(worst_avg < 1e-6, "average pooling within 1e-6");
  o.require(max_mismatch == 0, "max pooling exact");
  o.summary = "200 shapes, conv " + fmt("%.1e", worst_conv) + ", pools " + fmt("%.1e", worst_avg);
  return o;
}

// ------------------------------------------------------------ criterion 3

Outcome topology_fidelity() {
  Outcome o;
  const WiringPlan plan = make_plan(Architecture::kDccEcnn, DccConfig{});
  auto id = [&](const std::string& name) {
    const auto i = plan.find(name);
    if (!i) throw Error("missing node " + name);
    return *i;
  };
  std::size_t crosses = 0;
  for (std::size_t i = 0; i < plan.size(); ++i) crosses += plan.is_cross_connection(i);
  o.require(plan.count(NodeKind::kConcat) == 4, "exactly four concat nodes");
  o.require(crosses == 3, "exactly three cross-connections");
  for (int p = 1; p <= 3; ++p) {
    const std::string path = "path" + std::to_string(p);
    const std::string succ = "path" + std::to_string(p % 3 + 1);
    const auto& cross = plan.node(id(path + ".cross1"));
    o.require(cross.kind == NodeKind::kConcat, path + ".cross1 is a concat");
    o.require(cross.inputs == std::vector<std::size_t>{id(path + ".block1"), id(succ + ".block1")},
              path + ".cross1 joins " + path + ".block1 and " + succ + ".block1");
    o.require(plan.consumers(id(path + ".cross1")) == std::vector<std::size_t>{id(path + ".transition1")},
              path + ".cross1 feeds " + path + ".transition1");
    o.note(path + ".cross1 = concat(" + path + ".block1, " + succ + ".block1)");
  }
  const auto& fusion = plan.node(id("fusion"));
  o.require(fusion.kind == NodeKind::kConcat, "fusion is a concat");
  o.require(fusion.inputs == std::vector<std::size_t>{id("path1.block2"), id("path2.block2"), id("path3.block2")},
            "fusion joins the three final blocks");
  o.summary = std::to_string(crosses) + " cyclic cross-connections + 1 fusion concat";
  return o;
}

// ------------------------------------------------------------ criterion 4

Outcome shape_audit() {
  Outcome o;
  Rng rng(4);
  const Architecture arches[] = {Architecture::kDccEcnn, Architecture::kSingleDenseNet, Architecture::kStandardCnn,
                                 Architecture::kEnsembleCnn};
  std::size_t shape_mismatch = 0, count_mismatch = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const DccConfig cfg = oracle::random_config(rng);
    const Architecture arch = arches[trial % 4];
    const std::size_t batch = 1 + rng.below(3);
    const auto model = build_model<float>(arch, cfg);
    const auto shapes = infer_shapes(model.plan(), batch);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Rng xr(static_cast<std::uint64_t>(trial));
    const auto x = oracle::random_tensor<float>({batch, static_cast<std::size_t>(cfg.input_shape[0]),
                                                 static_cast<std::size_t>(cfg.input_shape[1]),
                                                 static_cast<std::size_t>(cfg.input_shape[2])},
                                                xr, 0, 1);
    const auto out = model.forward(tape, tape.constant(x));
    bool same = out.nodes.size() == shapes.size();
    for (std::size_t i = 0; same && i < shapes.size(); ++i) same = out.nodes[i].shape() == shapes[i];
    if (!same) {
      ++shape_mismatch;
      o.note("shape mismatch: trial " + std::to_string(trial) + " " + to_string(arch));
    }
    if (model.param_count() != plan_param_count(model.plan())) ++count_mismatch;
  }
  o.require(shape_mismatch == 0, "infer_shapes equals runtime shapes on 100 configs");
  o.require(count_mismatch == 0, "param_count equals plan_param_count on 100 configs");

  // Closed form for the tiny config: C0 stem channels, growth k, one layer per block.
  const std::size_t C0 = 4, k = 2, in = 3, classes = 2;
  const std::size_t stem = C0 * in * 49 + 2 * C0;
  const std::size_t block1 = 2 * C0 + k * C0 * 9;
  const std::size_t cross = 2 * (C0 + k);
  const std::size_t t_out = cross / 2;
  const std::size_t transition = 2 * cross + t_out * cross;
  const std::size_t block2 = 2 * t_out + k * t_out * 9;
  const std::size_t head = classes * (3 * (t_out + k) + 1);
  const std::size_t closed_form = 3 * (stem + block1 + transition + block2) + head;
  const std::size_t counted = build_dcc_ecnn<float>(tiny_config()).param_count();
  o.note("tiny config: closed form " + std::to_string(closed_form) + ", counted " + std::to_string(counted));
  o.require(counted == closed_form, "tiny param_count equals the closed form");
  o.summary = "100 configs shape-exact, tiny params " + std::to_string(counted) + " = closed form";
  return o;
}

// ------------------------------------------------------------ toy protocol

constexpr std::size_t kToySize = 200;
constexpr int kToyEpochs = 30;

TrainConfig toy_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = kToyEpochs;
  tc.schedule = {0.1, kToyEpochs};
  tc.seed = seed;
  return tc;
}

DccConfig toy_model_config(std::uint64_t seed) {
  DccConfig cfg = tiny_config();
  cfg.seed = seed;
  return cfg;
}

LabeledImageSet toy_train_set(std::uint64_t seed) {
  return synthetic_dataset(kToySize, 2, 16, Difficulty::kSeparable, seed);
}

LabeledImageSet toy_test_set(std::uint64_t seed) {
  return synthetic_dataset(kToySize, 2, 16, Difficulty::kSeparable, Rng::mix(seed + 1));
}

// ------------------------------------------------------------ criterion 5

Outcome toy_training() {
  Outcome o;
  std::string accs;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto model = build_dcc_ecnn<float>(toy_model_config(seed));
    const auto log = train(model, toy_train_set(seed), nullptr, toy_train_config(seed));
    const double acc = log.rows.back().train_acc;
    o.note("seed " + std::to_string(seed) + ": final train_acc " + fmt("%.3f", acc) + ", loss " +
           fmt("%.4f", log.rows.front().train_loss) + " -> " + fmt("%.4f", log.rows.back().train_loss));
    o.require(acc >= 0.95, "seed " + std::to_string(seed) + " reaches 0.95");
    accs += (accs.empty() ? "" : " ") + fmt("%.3f", acc);
  }
  o.summary = "train_acc " + accs + " (>= 0.95, 3/3 seeds)";
  return o;
}

// ------------------------------------------------------------ criterion 6

Outcome attack_correctness() {
  Outcome o;
  const auto set = synthetic_dataset(32, 2, 16, Difficulty::kNoisy, 6);
  std::size_t pgd_fgsm = 0, pgd_fgsm_equal = 0, ball_violations = 0;
  bool identity = true;
  for (auto arch : {Architecture::kDccEcnn, Architecture::kEnsembleCnn, Architecture::kStandardCnn,
                    Architecture::kSingleDenseNet}) {
    auto model = build_model<float>(arch, toy_model_config(6));
    const auto grad = input_gradient_of(model);
    for (double eps : {0.0, 0.003, 0.03, 0.1, 0.3}) {
      AttackParams one = AttackParams::pgd(eps, 1);
      one.step_size = eps;
      one.random_start = false;
      Rng r0(0);
      const auto f = fgsm(grad, set.images, set.labels, eps);
      ++pgd_fgsm;
      pgd_fgsm_equal += pgd(grad, set.images, set.labels, one, r0) == f;

      Rng r1(static_cast<std::uint64_t>(eps * 1e4));
      const auto p = pgd(grad, set.images, set.labels, AttackParams::pgd(eps, 5), r1);
      for (const auto* adv : {&f, &p}) {
        for (std::size_t i = 0; i < adv->size(); ++i) {
          const float v = (*adv)[i];
          if (std::abs(static_cast<double>(v) - set.images[i]) > eps + 1e-7 || v < 0.0f || v > 1.0f) ++ball_violations;
        }
      }
      if (eps == 0.0) {
        Rng r2(1);
        identity = identity && f == set.images && pgd(grad, set.images, set.labels, AttackParams::pgd(0.0), r2) == set.images;
      }
    }
  }
  o.note("PGD(1 step, alpha=eps, no random start) == FGSM: " + std::to_string(pgd_fgsm_equal) + "/" +
         std::to_string(pgd_fgsm));
  o.note("epsilon-ball or [0,1] violations: " + std::to_string(ball_violations));
  o.require(pgd_fgsm_equal == pgd_fgsm, "PGD one step bit-equal to FGSM");
  o.require(ball_violations == 0, "adversarial examples inside the epsilon ball and [0,1]");
  o.require(identity, "epsilon 0 is the identity");
  o.summary = "PGD1==FGSM " + std::to_string(pgd_fgsm_equal) + "/" + std::to_string(pgd_fgsm) + ", " +
              std::to_string(ball_violations) + " constraint violations, eps=0 identity";
  return o;
}

// ------------------------------------------------------------ criterion 7

Outcome ordinal_robustness() {
  Outcome o;
  const Architecture arches[] = {Architecture::kDccEcnn, Architecture::kEnsembleCnn, Architecture::kStandardCnn};
  const char* labels[] = {"dcc_ecnn", "ensemble_cnn", "standard_cnn"};
  double mean[3] = {0, 0, 0};
  int held = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto train_set = toy_train_set(seed);
    const auto test_set = toy_test_set(seed);
    double robust[3];
    std::string line = "seed " + std::to_string(seed) + ":";
    for (int a = 0; a < 3; ++a) {
      auto model = build_model<float>(arches[a], toy_model_config(seed));
      train(model, train_set, nullptr, toy_train_config(seed));
      const double clean = accuracy(model, test_set);
      robust[a] = robust_accuracy(model, test_set, AttackParams::fgsm(0.03));
      mean[a] += robust[a] / 3;
      line += std::string(" ") + labels[a] + " (" + std::to_string(model.param_count()) + " params) clean " +
              fmt("%.3f", clean) + " fgsm " + fmt("%.3f", robust[a]) + ";";
    }
    const bool ok = robust[0] >= robust[1] - 0.02 && robust[1] >= robust[2] - 0.02;
    held += ok;
    o.note(line + (ok ? " ordering holds" : " ordering violated"));
  }
  o.note("mean FGSM(0.03) accuracy: dcc_ecnn " + fmt("%.3f", mean[0]) + ", ensemble_cnn " + fmt("%.3f", mean[1]) +
         ", standard_cnn " + fmt("%.3f", mean[2]));
  o.require(held >= 2, "DCC-ECNN >= Ensemble >= Standard (2-point tolerance) on at least 2 of 3 seeds");
  o.summary = "ordering held on " + std::to_string(held) + "/3 seeds; means " + fmt("%.3f", mean[0]) + " / " +
              fmt("%.3f", mean[1]) + " / " + fmt("%.3f", mean[2]);
  return o;
}

// ------------------------------------------------------------ criterion 8

Outcome mce_protocol() {
  Outcome o;
  const auto table = CorruptionTable::builtin();
  const auto clean = synthetic_dataset(40, 2, 16, Difficulty::kNoisy, 8);
  std::size_t out_of_range = 0, checked = 0;
  for (auto kind : all_corruptions())
    for (int s = 1; s <= kSeverities; ++s) {
      const auto set = corrupt_set(clean, kind, s, table, 8);
      for (float v : set.images.values()) out_of_range += v < 0.0f || v > 1.0f || !std::isfinite(v);
      checked += set.images.size();
    }

  auto model = build_dcc_ecnn<float>(toy_model_config(8));
  TrainConfig tc = toy_train_config(8);
  tc.epochs = 5;
  tc.schedule = {0.1, 5};
  train(model, synthetic_dataset(80, 2, 16, Difficulty::kNoisy, 9), nullptr, tc);
  std::map<CorruptionKind, double> ce;
  for (auto kind : all_corruptions()) ce[kind] = corruption_error(classifier_of(model), clean, kind, table, 8).ce;
  const double self = mce(ce, ce);
  std::map<CorruptionKind, double> fixture_base{{CorruptionKind::kGaussianNoise, 3.0},
                                                {CorruptionKind::kGaussianBlur, 2.2},
                                                {CorruptionKind::kContrast, 1.4},
                                                {CorruptionKind::kFog, 0.6}};
  auto halved = fixture_base;
  for (auto& [k, v] : halved) v /= 2;
  const double half = mce(halved, fixture_base);
  o.note("baseline vs itself mCE " + fmt("%.3f", self) + " (corruption errors from a trained toy model)");
  o.note("halved-CE fixture mCE " + fmt("%.3f", half));
  o.note(std::to_string(checked) + " corrupted pixel values checked, " + std::to_string(out_of_range) + " outside [0,1]");
  o.require(fmt("%.3f", self) == "100.000" && self == 100.0, "self mCE is 100.000");
  o.require(fmt("%.3f", half) == "50.000", "halved fixture mCE is 50.000");
  o.require(out_of_range == 0, "corrupted outputs in [0,1]");
  o.summary = "self " + fmt("%.3f", self) + ", halved " + fmt("%.3f", half) + ", outputs in [0,1]";
  return o;
}

// ------------------------------------------------------------ criterion 9

Outcome determinism() {
  using namespace cli_support;
  Outcome o;
  json config = small_config();
  config["corruption"]["baseline_arch"] = "dcc_ecnn";
  std::vector<fs::path> dirs;
  for (const char* name : {"accept_det_a", "accept_det_b"}) {
    const fs::path dir = fresh_dir(name);
    dirs.push_back(dir);
    const std::string cfg = write_config(dir, config).string();
    const std::string ckpt = (dir / dcc::cli::kCheckpointFile).string();
    const std::vector<std::vector<std::string>> commands{
        {"train", "-c", cfg},
        {"eval", "-c", cfg, "--checkpoint", ckpt},
        {"attack", "-c", cfg, "--checkpoint", ckpt},
        {"corrupt", "-c", cfg, "--checkpoint", ckpt, "--baseline-checkpoint", ckpt}};
    for (const auto& cmd : commands) {
      std::vector<std::string> args{"--workers", "1", "--output-dir", dir.string()};
      args.insert(args.end(), cmd.begin(), cmd.end());
      const auto r = run_binary(args, dir);
      o.require(r.code == 0, cmd[0] + " exits 0 (" + r.err + ")");
    }
  }
  std::size_t identical = 0;
  const std::vector<std::string> files{dcc::cli::kCheckpointFile, dcc::cli::kTrainLogFile, dcc::cli::kEvalFile,
                                       dcc::cli::kAttackFile, dcc::cli::kCorruptFile};
  for (const auto& f : files) {
    const std::string a = read_file(dirs[0] / f), b = read_file(dirs[1] / f);
    const bool same = !a.empty() && a == b;
    identical += same;
    o.note(f + ": " + std::to_string(a.size()) + " bytes, " + (same ? "identical" : "DIFFERENT"));
    o.require(same, f + " byte-identical across reruns");
  }
  o.summary = std::to_string(identical) + "/" + std::to_string(files.size()) + " outputs byte-identical";
  return o;
}

// ------------------------------------------------------------ criterion 10

Outcome format_fidelity() {
  Outcome o;
  const fs::path dir = cli_support::fresh_dir("accept_format");
  const auto set = synthetic_dataset(100, 10, 32, Difficulty::kNoisy, 10);
  write_cifar_file(dir / "data_batch_1.bin", set, CifarFormat::cifar10());
  const auto back = read_cifar_file(dir / "data_batch_1.bin", CifarFormat::cifar10(), set.split);
  o.require(back.images == set.images && back.labels == set.labels, "CIFAR-10 images and labels bit-exact");
  write_cifar_file(dir / "again.bin", back, CifarFormat::cifar10());
  o.require(cli_support::read_file(dir / "data_batch_1.bin") == cli_support::read_file(dir / "again.bin"),
            "CIFAR-10 rewrite byte-identical");
  o.note("CIFAR-10: 100 records, " + std::to_string(fs::file_size(dir / "data_batch_1.bin")) + " bytes");

  std::size_t tensors = 0;
  auto roundtrip = [&](auto src, auto dst, const std::string& label) {
    for (ParamId i = 0; i < src.params().size(); ++i) {
      auto& t = src.params().tensor(i);
      for (std::size_t e = 0; e < t.size(); ++e) t[e] += static_cast<float>(0.001 * static_cast<double>(e % 7));
    }
    const fs::path path = dir / (label + ".dcce");
    save_checkpoint(path, src.params());
    load_checkpoint(path, dst.params());
    o.require(dst.params().values_equal(src.params()), label + " checkpoint values bit-exact");
    save_checkpoint(dir / (label + "_again.dcce"), dst.params());
    o.require(cli_support::read_file(path) == cli_support::read_file(dir / (label + "_again.dcce")),
              label + " checkpoint rewrite byte-identical");
    tensors += src.params().size();
  };
  DccConfig other = tiny_config();
  other.seed = 99;
  roundtrip(build_dcc_ecnn<float>(tiny_config()), build_dcc_ecnn<float>(other), "dcc_f32");
  roundtrip(build_ensemble_cnn<double>(tiny_config()), build_ensemble_cnn<double>(other), "ensemble_f64");
  roundtrip(build_standard_cnn<float>(tiny_config()), build_standard_cnn<float>(other), "standard_f32");
  o.note("checkpoints: " + std::to_string(tensors) + " tensors across 3 models");
  o.summary = "CIFAR-10 and checkpoint round trips bit-exact";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient soundness", 120, gradient_soundness},
      {2, "oracle equivalence", 60, oracle_equivalence},
      {3, "topology fidelity", 0, topology_fidelity},
      {4, "shape/parameter audit", 0, shape_audit},
      {5, "toy training", 300, toy_training},
      {6, "attack correctness", 0, attack_correctness},
      {7, "ordinal robustness", 1200, ordinal_robustness},
      {8, "mCE protocol", 0, mce_protocol},
      {9, "determinism", 0, determinism},
      {10, "format fidelity", 0, format_fidelity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.summary = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0 && secs > c.time_limit_s) {
      o.passed = false;
      o.details.push_back("violated: runtime " + fmt("%.1f", secs) + " s exceeds " + fmt("%.0f", c.time_limit_s) + " s");
    }
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::printf("%s  criterion %d (%s): %s [%.1f s]\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.summary.c_str(),
                secs);
    std::fflush(stdout);
    failures += !o.passed;
  }
  return failures == 0 ? 0 : 1;
}
