#include "dcc/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dcc/attacks.hpp"
#include "dcc/checkpoint.hpp"
#include "dcc/corruptions.hpp"
#include "dcc/gradcheck.hpp"
#include "dcc/hash.hpp"
#include "dcc/metrics.hpp"
#include "dcc/optim.hpp"
#include "dcc/report.hpp"
#include "dcc/run_config.hpp"
#include "dcc/topology.hpp"

namespace dcc::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string baseline_checkpoint;
  std::string output_dir;
  std::string format = "dot";
  std::string inject_fault = "none";
  std::size_t workers = 1;
};

struct Context {
  RunConfig rc;
  Options opt;
  fs::path out_dir;
  std::ostream& out;
};

fs::path resolve_output_dir(const Options& opt, const RunConfig& rc) {
  fs::path dir;
  if (!opt.output_dir.empty()) {
    dir = opt.output_dir;
  } else if (rc.output_dir) {
    dir = *rc.output_dir;
  } else if (const char* env = std::getenv(kOutputDirEnv); env && *env) {
    dir = env;
  } else {
    dir = "dcc_out";
  }
  fs::create_directories(dir);
  return dir;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::pair<LabeledImageSet, LabeledImageSet> load_data(const RunConfig& rc) {
  if (rc.data.source == "cifar10") return load_cifar10(rc.data.path);
  if (rc.data.source == "cifar100") return load_cifar100(rc.data.path);
  const auto size = static_cast<std::size_t>(rc.model.input_shape[1]);
  auto train = synthetic_dataset(rc.data.train_size, rc.model.num_classes, size, rc.data.difficulty, rc.seed);
  auto test = synthetic_dataset(rc.data.test_size, rc.model.num_classes, size, rc.data.difficulty,
                                Rng::mix(rc.seed + 1));
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

EvalReport new_report(const Context& ctx, const std::string& command) {
  EvalReport r;
  r.set_meta("command", command);
  r.set_meta("config_hash", ctx.rc.hash());
  r.set_meta("seed", std::to_string(ctx.rc.seed));
  r.set_meta("version", std::string("dcc ") + kVersion);
  r.set_meta("arch", to_string(ctx.rc.arch));
  r.set_meta("precision", to_string(ctx.rc.precision));
  return r;
}

template <typename T>
Model<T> load_model(Architecture arch, const DccConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("/", "--checkpoint is required");
  Model<T> m = build_model<T>(arch, cfg);
  load_checkpoint(checkpoint, m.params());
  return m;
}

std::string file_digest(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return Fnv1a().bytes(bytes.data(), bytes.size()).hex();
}

// ---------------------------------------------------------------- commands

template <typename T>
int cmd_train(Context& ctx) {
  auto [train_set, test_set] = load_data(ctx.rc);
  Model<T> model = build_model<T>(ctx.rc.arch, ctx.rc.model);
  TrainConfig tc = ctx.rc.train;
  tc.eval_workers = ctx.opt.workers;
  const TrainLog log = train(model, train_set, &test_set, tc);
  save_checkpoint(ctx.out_dir / kCheckpointFile, model.params());
  log.write_csv(ctx.out_dir / kTrainLogFile);
  ctx.out << "trained " << to_string(ctx.rc.arch) << " (" << model.param_count() << " parameters) for "
          << tc.epochs << " epochs\n";
  if (!log.rows.empty()) {
    ctx.out << "final train_acc " << fixed6(log.rows.back().train_acc) << ", val_acc "
            << fixed6(log.rows.back().val_acc.value_or(0.0)) << "\n";
  }
  ctx.out << "wrote " << (ctx.out_dir / kCheckpointFile).string() << " and " << (ctx.out_dir / kTrainLogFile).string()
          << "\n";
  return kExitOk;
}

template <typename T>
int cmd_eval(Context& ctx) {
  const auto data = load_data(ctx.rc);
  const Model<T> model = load_model<T>(ctx.rc.arch, ctx.rc.model, ctx.opt.checkpoint);
  const double acc = accuracy(model, data.second, 256, ctx.opt.workers);
  EvalReport r = new_report(ctx, "eval");
  r.add("accuracy", "clean", acc);
  r.add("error", "clean", 1.0 - acc);
  r.write(ctx.out_dir / kEvalFile);
  ctx.out << "clean accuracy " << fixed6(acc) << "\n";
  return kExitOk;
}

std::string attack_condition(const AttackParams& p) {
  if (p.kind == AttackKind::kFgsm) return "fgsm(eps=" + fixed6(p.epsilon) + ")";
  return "pgd(eps=" + fixed6(p.epsilon) + ";steps=" + std::to_string(p.steps) + ";alpha=" + fixed6(p.alpha()) +
         ";random_start=" + (p.random_start ? "1" : "0") + ")";
}

template <typename T>
int cmd_attack(Context& ctx) {
  auto test = load_data(ctx.rc).second;
  if (ctx.rc.attack.max_samples > 0 && ctx.rc.attack.max_samples < test.size()) {
    std::vector<std::size_t> idx(ctx.rc.attack.max_samples);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    test = test.subset(idx);
  }
  const Model<T> model = load_model<T>(ctx.rc.arch, ctx.rc.model, ctx.opt.checkpoint);
  EvalReport r = new_report(ctx, "attack");
  const double clean = accuracy(model, test, 256, ctx.opt.workers);
  r.add("accuracy", "clean", clean);
  ctx.out << "clean accuracy " << fixed6(clean) << "\n";
  for (const auto& p : ctx.rc.attack.attacks) {
    const double acc = robust_accuracy(model, test, p, 128, ctx.opt.workers);
    r.add("robust_accuracy", attack_condition(p), acc);
    ctx.out << attack_condition(p) << " robust accuracy " << fixed6(acc) << "\n";
  }
  r.write(ctx.out_dir / kAttackFile);
  return kExitOk;
}

template <typename T>
std::map<CorruptionKind, double> corruption_errors(const Model<T>& model, const LabeledImageSet& test,
                                                    const CorruptionTable& table, Context& ctx, EvalReport& r,
                                                    const std::string& prefix) {
  std::map<CorruptionKind, double> ce;
  const fs::path cache = ctx.out_dir / kCorruptionCacheDir;
  for (CorruptionKind kind : ctx.rc.corruption.kinds) {
    const auto res = corruption_error(classifier_of(model), test, kind, table, ctx.rc.seed, cache, ctx.opt.workers);
    for (int s = 1; s <= kSeverities; ++s) {
      r.add(prefix + "error", to_string(kind) + "@" + std::to_string(s), res.errors[static_cast<std::size_t>(s - 1)]);
    }
    r.add(prefix + "ce", to_string(kind), res.ce);
    ce[kind] = res.ce;
  }
  return ce;
}

template <typename T>
int cmd_corrupt(Context& ctx) {
  const auto test = load_data(ctx.rc).second;
  const Model<T> model = load_model<T>(ctx.rc.arch, ctx.rc.model, ctx.opt.checkpoint);
  const CorruptionTable table = ctx.rc.corruption.table.empty() ? CorruptionTable::builtin()
                                                                : CorruptionTable::load(ctx.rc.corruption.table);
  std::string baseline_ckpt = ctx.opt.baseline_checkpoint;
  if (baseline_ckpt.empty()) baseline_ckpt = ctx.rc.corruption.baseline_checkpoint;

  EvalReport r = new_report(ctx, "corrupt");
  const Architecture barch = ctx.rc.corruption.baseline_arch;
  r.set_meta("baseline", baseline_ckpt.empty() ? "none" : to_string(barch) + "@" + file_digest(baseline_ckpt));
  const double clean = accuracy(model, test, 256, ctx.opt.workers);
  r.add("error", "clean", 1.0 - clean);
  const auto model_ce = corruption_errors(model, test, table, ctx, r, "");
  if (!baseline_ckpt.empty()) {
    const Model<T> baseline = load_model<T>(barch, ctx.rc.model, baseline_ckpt);
    const auto base_ce = corruption_errors(baseline, test, table, ctx, r, "baseline_");
    const double value = mce(model_ce, base_ce);
    r.add("mce", "all", value);
    ctx.out << "mCE " << fixed6(value) << " (baseline " << *r.find_meta("baseline") << ")\n";
  }
  for (const auto& [kind, ce] : model_ce) ctx.out << to_string(kind) << " CE " << fixed6(ce) << "\n";
  r.write(ctx.out_dir / kCorruptFile);
  return kExitOk;
}

int cmd_gradcheck(Context& ctx) {
  Model<double> model = build_model<double>(ctx.rc.arch, ctx.rc.model);
  const auto& shape = ctx.rc.model.input_shape;
  const std::size_t n = ctx.rc.gradcheck.batch;
  Tensor<double> x({n, static_cast<std::size_t>(shape[0]), static_cast<std::size_t>(shape[1]),
                    static_cast<std::size_t>(shape[2])});
  Rng rng = Rng(ctx.rc.seed).split(streams::kGradcheck);
  for (auto& v : x.values()) v = rng.uniform();
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(ctx.rc.model.num_classes));

  GradcheckOptions go;
  go.tolerance = ctx.rc.gradcheck.tolerance;
  go.max_elements_per_group = ctx.rc.gradcheck.max_elements_per_group;
  go.seed = ctx.rc.seed;
  if (ctx.opt.inject_fault == "conv_weight_grad") {
    go.inject_fault = GradientFault::kConvWeightGrad;
  } else if (ctx.opt.inject_fault != "none") {
    throw ConfigError("/", "unknown fault '" + ctx.opt.inject_fault + "'");
  }
  const GradcheckReport rep = gradcheck_model(model, x, labels, go);

  EvalReport r = new_report(ctx, "gradcheck");
  r.set_meta("precision", "f64");
  char line[512];
  for (const auto& g : rep.groups) {
    std::snprintf(line, sizeof line, "%-48s %.3e  %6zu  %s\n", g.name.c_str(), g.max_rel_error, g.checked,
                  g.passed ? "ok" : "FAIL");
    ctx.out << line;
    r.add("max_rel_error", g.name, g.max_rel_error);
  }
  r.add("max_rel_error", "all", rep.max_rel_error);
  r.write(ctx.out_dir / kGradcheckFile);
  std::snprintf(line, sizeof line, "max relative error %.3e (tolerance %.1e): %s\n", rep.max_rel_error,
                go.tolerance, rep.passed ? "PASS" : "FAIL");
  ctx.out << line;
  if (!rep.passed) throw NumericError("gradient check failed: max relative error " + fixed6(rep.max_rel_error));
  return kExitOk;
}

int cmd_export_graph(Context& ctx) {
  const GraphFormat fmt = graph_format_from_string(ctx.opt.format);
  const WiringPlan plan = make_plan(ctx.rc.arch, ctx.rc.model);
  const fs::path file = ctx.out_dir / (fmt == GraphFormat::kDot ? "graph.dot" : "graph.json");
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + file.string() + " for writing");
  os << export_graph(plan, fmt);
  ctx.out << "wrote " << file.string() << " (" << plan.size() << " nodes, " << plan.edges().size() << " edges)\n";
  return kExitOk;
}

template <typename Fn32, typename Fn64>
int by_precision(Context& ctx, Fn32 f32, Fn64 f64) {
  return ctx.rc.precision == Precision::kF64 ? f64(ctx) : f32(ctx);
}

std::string dotted(const std::string& pointer) {
  std::string s = pointer;
  if (!s.empty() && s[0] == '/') s.erase(0, 1);
  for (auto& c : s) {
    if (c == '/') c = '.';
  }
  return s;
}

}  // namespace

std::string config_reference() {
  std::ostringstream os;
  os << "\nConfig keys (JSON file given with --config; see schema/run_config.schema.json):\n";
  for (const auto& k : schema_keys(run_config_schema())) {
    os << "  " << k.path << "  <" << k.type << ">";
    if (!k.default_value.empty()) os << "  default " << k.default_value;
    os << "\n      " << k.description << "\n";
  }
  os << "\nExit codes: 0 ok, 1 other failure, 2 config error, 3 data error, 4 numeric failure.\n";
  os << "Output directory: --output-dir, else config output_dir, else $" << kOutputDirEnv << ", else ./dcc_out.\n";
  return os.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense cross-connected ensemble CNN toolkit", "dcc"};
  app.footer(config_reference());
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--workers", opt.workers, "Worker threads for batch-parallel evaluation (1 is bit-reproducible)")
      ->check(CLI::PositiveNumber);
  app.add_option("--output-dir", opt.output_dir, "Directory for all outputs");
  app.set_version_flag("--version", std::string("dcc ") + kVersion);

  auto add_cmd = [&](const char* name, const char* desc, bool needs_checkpoint) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("-c,--config", opt.config, "Run config JSON file")->required();
    if (needs_checkpoint) sub->add_option("--checkpoint", opt.checkpoint, "Model checkpoint")->required();
    return sub;
  };
  CLI::App* train_cmd = add_cmd("train", "Train a model; writes checkpoint.dcce and train_log.csv", false);
  CLI::App* eval_cmd = add_cmd("eval", "Clean test accuracy; writes eval.csv", true);
  CLI::App* attack_cmd = add_cmd("attack", "FGSM/PGD robust accuracy; writes attack.csv", true);
  CLI::App* corrupt_cmd = add_cmd("corrupt", "Corruption errors and mCE; writes corrupt.csv", true);
  corrupt_cmd->add_option("--baseline-checkpoint", opt.baseline_checkpoint,
                          "Baseline checkpoint for mCE (overrides corruption.baseline_checkpoint)");
  CLI::App* grad_cmd = add_cmd("gradcheck", "Finite-difference gradient check in f64; writes gradcheck.csv", false);
  grad_cmd->add_option("--inject-fault", opt.inject_fault)->group("");
  CLI::App* graph_cmd = add_cmd("export-graph", "Write the wiring plan as graph.dot or graph.json", false);
  graph_cmd->add_option("--format", opt.format, "dot or json")->check(CLI::IsMember({"dot", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    Context ctx{load_run_config(opt.config), opt, {}, out};
    ctx.out_dir = resolve_output_dir(opt, ctx.rc);
    if (*train_cmd) return by_precision(ctx, cmd_train<float>, cmd_train<double>);
    if (*eval_cmd) return by_precision(ctx, cmd_eval<float>, cmd_eval<double>);
    if (*attack_cmd) return by_precision(ctx, cmd_attack<float>, cmd_attack<double>);
    if (*corrupt_cmd) return by_precision(ctx, cmd_corrupt<float>, cmd_corrupt<double>);
    if (*grad_cmd) return cmd_gradcheck(ctx);
    if (*graph_cmd) return cmd_export_graph(ctx);
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "dcc: error[config]: " << e.path() << " (" << dotted(e.path()) << "): "
        << std::string(e.what()).substr(e.path().size() + 2) << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "dcc: error[data]: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "dcc: error[numeric]: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "dcc: error[failure]: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace dcc::cli
