#include "dcc/topology.hpp"

#include <json.hpp>
#include <map>
#include <sstream>

#include "dcc/ops.hpp"

namespace dcc {

namespace {

const std::map<NodeKind, std::string>& kind_names() {
  static const std::map<NodeKind, std::string> names{
      {NodeKind::kInput, "input"},         {NodeKind::kStem, "stem"},   {NodeKind::kBlock, "block"},
      {NodeKind::kTransition, "transition"}, {NodeKind::kConcat, "concat"}, {NodeKind::kGap, "gap"},
      {NodeKind::kHead, "head"},           {NodeKind::kConvUnit, "conv"}, {NodeKind::kPool, "pool"},
      {NodeKind::kEnsemble, "ensemble"}};
  return names;
}

std::string path_name(int p) { return "path" + std::to_string(p + 1); }

// Shared by the DCC-ECNN and the single-path DenseNet.
WiringPlan make_dense_plan(const DccConfig& cfg, bool cross_connect) {
  WiringPlan plan;
  PlanNode input;
  input.kind = NodeKind::kInput;
  input.name = "input";
  input.out_channels = static_cast<std::size_t>(cfg.input_shape[0]);
  input.height = static_cast<std::size_t>(cfg.input_shape[1]);
  input.width = static_cast<std::size_t>(cfg.input_shape[2]);
  const std::size_t in_id = plan.add(input);

  const int P = cfg.num_paths;
  std::vector<std::size_t> feed(P);
  auto make_stem = [&](int path, std::string name) {
    PlanNode stem;
    stem.kind = NodeKind::kStem;
    stem.name = std::move(name);
    stem.path = path;
    stem.inputs = {in_id};
    stem.out_channels = static_cast<std::size_t>(cfg.stem_channels);
    return plan.add(stem);
  };
  if (cfg.shared_stem) {
    const std::size_t stem = make_stem(-1, "stem");
    for (int p = 0; p < P; ++p) feed[p] = stem;
  } else {
    for (int p = 0; p < P; ++p) feed[p] = make_stem(p, path_name(p) + ".stem");
  }

  std::vector<std::size_t> blocks(P);
  for (int b = 0; b < cfg.blocks_per_path; ++b) {
    for (int p = 0; p < P; ++p) {
      PlanNode block;
      block.kind = NodeKind::kBlock;
      block.name = path_name(p) + ".block" + std::to_string(b + 1);
      block.path = p;
      block.stage = b;
      block.inputs = {feed[p]};
      block.layers = static_cast<std::size_t>(cfg.layers_per_block[p][b]);
      block.growth = static_cast<std::size_t>(cfg.growth_rate);
      block.dropout_after = cfg.dropout_rate > 0.0;
      blocks[p] = plan.add(block);
    }
    if (b + 1 == cfg.blocks_per_path) break;
    for (int p = 0; p < P; ++p) {
      std::size_t into_transition = blocks[p];
      if (cross_connect) {
        PlanNode cross;
        cross.kind = NodeKind::kConcat;
        cross.name = path_name(p) + ".cross" + std::to_string(b + 1);
        cross.path = p;
        cross.stage = b;
        cross.inputs = {blocks[p], blocks[cfg.successor(p)]};
        into_transition = plan.add(cross);
      }
      PlanNode trans;
      trans.kind = NodeKind::kTransition;
      trans.name = path_name(p) + ".transition" + std::to_string(b + 1);
      trans.path = p;
      trans.stage = b;
      trans.inputs = {into_transition};
      trans.compression = cfg.compression;
      feed[p] = plan.add(trans);
    }
  }

  std::size_t fused = blocks[0];
  if (P > 1) {
    PlanNode fusion;
    fusion.kind = NodeKind::kConcat;
    fusion.name = "fusion";
    fusion.inputs = blocks;
    fused = plan.add(fusion);
  }
  PlanNode gap;
  gap.kind = NodeKind::kGap;
  gap.name = "gap";
  gap.inputs = {fused};
  const std::size_t gap_id = plan.add(gap);
  PlanNode head;
  head.kind = NodeKind::kHead;
  head.name = "head";
  head.inputs = {gap_id};
  head.out_channels = static_cast<std::size_t>(cfg.num_classes);
  plan.add(head);
  return plan;
}

// Appends one plain CNN (stem, conv units, pools, gap, head) and returns the head id.
std::size_t append_plain_cnn(WiringPlan& plan, std::size_t input, const DccConfig& cfg, std::size_t width,
                             int member, const std::string& prefix) {
  auto qualified = [&](const std::string& n) { return prefix.empty() ? n : prefix + "." + n; };
  PlanNode stem;
  stem.kind = NodeKind::kStem;
  stem.name = qualified("stem");
  stem.path = member;
  stem.inputs = {input};
  stem.out_channels = width;
  std::size_t cur = plan.add(stem);
  for (int s = 0; s < cfg.blocks_per_path; ++s) {
    if (s > 0) {
      PlanNode pool;
      pool.kind = NodeKind::kPool;
      pool.name = qualified("stage" + std::to_string(s) + ".pool");
      pool.path = member;
      pool.stage = s - 1;
      pool.inputs = {cur};
      cur = plan.add(pool);
    }
    const int units = cfg.layers_per_block[0][s];
    for (int u = 0; u < units; ++u) {
      PlanNode conv;
      conv.kind = NodeKind::kConvUnit;
      conv.name = qualified("stage" + std::to_string(s + 1) + ".conv" + std::to_string(u + 1));
      conv.path = member;
      conv.stage = s;
      conv.inputs = {cur};
      conv.out_channels = width;
      conv.dropout_after = u + 1 == units && cfg.dropout_rate > 0.0;
      cur = plan.add(conv);
    }
  }
  PlanNode gap;
  gap.kind = NodeKind::kGap;
  gap.name = qualified("gap");
  gap.path = member;
  gap.inputs = {cur};
  cur = plan.add(gap);
  PlanNode head;
  head.kind = NodeKind::kHead;
  head.name = qualified("head");
  head.path = member;
  head.inputs = {cur};
  head.out_channels = static_cast<std::size_t>(cfg.num_classes);
  return plan.add(head);
}

std::size_t add_input(WiringPlan& plan, const DccConfig& cfg) {
  PlanNode input;
  input.kind = NodeKind::kInput;
  input.name = "input";
  input.out_channels = static_cast<std::size_t>(cfg.input_shape[0]);
  input.height = static_cast<std::size_t>(cfg.input_shape[1]);
  input.width = static_cast<std::size_t>(cfg.input_shape[2]);
  return plan.add(input);
}

WiringPlan make_plain_plan(const DccConfig& cfg, std::size_t width) {
  WiringPlan plan;
  const std::size_t in = add_input(plan, cfg);
  append_plain_cnn(plan, in, cfg, width, -1, "");
  return plan;
}

WiringPlan make_ensemble_plan(const DccConfig& cfg, std::size_t width) {
  WiringPlan plan;
  const std::size_t in = add_input(plan, cfg);
  PlanNode ens;
  ens.kind = NodeKind::kEnsemble;
  ens.name = "ensemble";
  ens.fusion = cfg.ensemble_fusion;
  for (int m = 0; m < cfg.num_paths; ++m) {
    ens.inputs.push_back(append_plain_cnn(plan, in, cfg, width, m, "member" + std::to_string(m + 1)));
  }
  plan.add(ens);
  return plan;
}

// Width whose plan parameter count is closest to target; counts grow
// monotonically with width.
template <typename MakePlan>
std::size_t closest_width(MakePlan make, std::size_t target) {
  std::size_t best = 1;
  std::size_t best_gap = SIZE_MAX;
  for (std::size_t w = 1; w <= 4096; ++w) {
    const std::size_t count = plan_param_count(make(w));
    const std::size_t gap = count > target ? count - target : target - count;
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
    if (count > target) break;
  }
  return best;
}

}  // namespace

std::string to_string(NodeKind k) { return kind_names().at(k); }

NodeKind node_kind_from_string(const std::string& s) {
  for (const auto& [k, n] : kind_names()) {
    if (n == s) return k;
  }
  throw Error("unknown node kind '" + s + "'");
}

// ---------------------------------------------------------------- WiringPlan

std::size_t WiringPlan::add(PlanNode node) {
  for (auto i : node.inputs) {
    if (i >= nodes_.size()) throw Error("wiring plan: node '" + node.name + "' consumes a later node");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

std::vector<Edge> WiringPlan::edges() const {
  std::vector<Edge> out;
  for (std::size_t c = 0; c < nodes_.size(); ++c) {
    for (std::size_t s = 0; s < nodes_[c].inputs.size(); ++s) out.push_back({nodes_[c].inputs[s], c, s});
  }
  return out;
}

std::size_t WiringPlan::count(NodeKind kind) const {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.kind == kind;
  return n;
}

std::optional<std::size_t> WiringPlan::find(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> WiringPlan::consumers(std::size_t id) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < nodes_.size(); ++c) {
    for (auto i : nodes_[c].inputs) {
      if (i == id) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- planning

std::size_t standard_cnn_width(const DccConfig& cfg, std::size_t target) {
  return closest_width([&](std::size_t w) { return make_plain_plan(cfg, w); }, target);
}

WiringPlan make_plan(Architecture arch, const DccConfig& cfg) {
  switch (arch) {
    case Architecture::kDccEcnn:
      validate(cfg, 2);
      return make_dense_plan(cfg, true);
    case Architecture::kSingleDenseNet: {
      validate(cfg, 1);
      DccConfig single = cfg;
      single.num_paths = 1;
      single.layers_per_block.resize(1);
      return make_dense_plan(single, false);
    }
    case Architecture::kStandardCnn: {
      validate(cfg, 1);
      const std::size_t target = plan_param_count(make_plan(Architecture::kDccEcnn, cfg));
      return make_plain_plan(cfg, standard_cnn_width(cfg, target));
    }
    case Architecture::kEnsembleCnn: {
      validate(cfg, 2);
      const std::size_t target = plan_param_count(make_plan(Architecture::kDccEcnn, cfg));
      const auto members = static_cast<std::size_t>(cfg.num_paths);
      DccConfig one = cfg;
      const std::size_t width = closest_width(
          [&](std::size_t w) {
            WiringPlan p;
            append_plain_cnn(p, add_input(p, one), one, w, 0, "m");
            return p;
          },
          target / members);
      return make_ensemble_plan(cfg, width);
    }
  }
  throw Error("unknown architecture");
}

ShapeMap infer_shapes(const WiringPlan& plan, std::size_t batch) {
  ShapeMap shapes(plan.size());
  auto too_small = [](const PlanNode& n, const Shape& in) {
    return ShapeError("node '" + n.name + "' (" + to_string(n.kind) + "): input " + shape_str(in) +
                      " is spatially too small");
  };
  for (std::size_t id = 0; id < plan.size(); ++id) {
    const PlanNode& n = plan.node(id);
    const Shape in = n.inputs.empty() ? Shape{} : shapes[n.inputs[0]];
    switch (n.kind) {
      case NodeKind::kInput:
        shapes[id] = {batch, n.out_channels, n.height, n.width};
        break;
      case NodeKind::kStem: {
        if (in[2] < nn::kStemMinInput || in[3] < nn::kStemMinInput) throw too_small(n, in);
        auto reduce = [](std::size_t s) {
          s = ops::conv_out_size(s, nn::kStemKernel, nn::kStemStride, nn::kStemPadding);
          return ops::conv_out_size(s, nn::kStemPoolKernel, nn::kStemPoolStride, nn::kStemPoolPadding);
        };
        shapes[id] = {batch, n.out_channels, reduce(in[2]), reduce(in[3])};
        break;
      }
      case NodeKind::kBlock:
        shapes[id] = {batch, in[1] + n.layers * n.growth, in[2], in[3]};
        break;
      case NodeKind::kTransition: {
        if (in[2] < 2 || in[3] < 2 || in[2] % 2 || in[3] % 2) throw too_small(n, in);
        const std::size_t c = nn::transition_out_channels(in[1], n.compression);
        if (c == 0) throw ShapeError("node '" + n.name + "': compression leaves zero channels");
        shapes[id] = {batch, c, in[2] / 2, in[3] / 2};
        break;
      }
      case NodeKind::kPool:
        if (in[2] < 2 || in[3] < 2 || in[2] % 2 || in[3] % 2) throw too_small(n, in);
        shapes[id] = {batch, in[1], in[2] / 2, in[3] / 2};
        break;
      case NodeKind::kConcat: {
        std::size_t c = 0;
        for (auto i : n.inputs) {
          const Shape& s = shapes[i];
          if (s[2] != in[2] || s[3] != in[3]) {
            throw ShapeError("node '" + n.name + "': concat inputs disagree on spatial size");
          }
          c += s[1];
        }
        shapes[id] = {batch, c, in[2], in[3]};
        break;
      }
      case NodeKind::kConvUnit:
        shapes[id] = {batch, n.out_channels, in[2], in[3]};
        break;
      case NodeKind::kGap:
        shapes[id] = {batch, in[1]};
        break;
      case NodeKind::kHead:
      case NodeKind::kEnsemble:
        shapes[id] = {batch, n.kind == NodeKind::kHead ? n.out_channels : in[1]};
        break;
    }
  }
  return shapes;
}

ShapeMap infer_shapes(Architecture arch, const DccConfig& cfg, std::size_t batch) {
  return infer_shapes(make_plan(arch, cfg), batch);
}

std::size_t plan_param_count(const WiringPlan& plan) {
  const ShapeMap shapes = infer_shapes(plan, 1);
  std::size_t total = 0;
  for (std::size_t id = 0; id < plan.size(); ++id) {
    const PlanNode& n = plan.node(id);
    const std::size_t cin = n.inputs.empty() ? 0 : shapes[n.inputs[0]][1];
    switch (n.kind) {
      case NodeKind::kStem:
        total += n.out_channels * cin * 49 + 2 * n.out_channels;
        break;
      case NodeKind::kBlock:
        for (std::size_t l = 0; l < n.layers; ++l) {
          const std::size_t c = cin + l * n.growth;
          total += 2 * c + n.growth * c * 9;
        }
        break;
      case NodeKind::kTransition:
        total += 2 * cin + shapes[id][1] * cin;
        break;
      case NodeKind::kConvUnit:
        total += n.out_channels * cin * 9 + 2 * n.out_channels;
        break;
      case NodeKind::kHead:
        total += n.out_channels * (cin + 1);
        break;
      default:
        break;
    }
  }
  return total;
}

// ---------------------------------------------------------------- export

GraphFormat graph_format_from_string(const std::string& s) {
  if (s == "dot") return GraphFormat::kDot;
  if (s == "json") return GraphFormat::kJson;
  throw Error("unknown graph format '" + s + "' (expected dot or json)");
}

std::string export_graph(const WiringPlan& plan, GraphFormat format) {
  if (format == GraphFormat::kDot) {
    std::ostringstream os;
    os << "digraph wiring {\n  rankdir=LR;\n";
    for (std::size_t id = 0; id < plan.size(); ++id) {
      const PlanNode& n = plan.node(id);
      const char* shape = n.kind == NodeKind::kConcat ? "ellipse" : "box";
      os << "  n" << id << " [label=\"" << to_string(n.kind) << "\\n" << n.name << "\", shape=" << shape << "];\n";
    }
    for (const Edge& e : plan.edges()) {
      os << "  n" << e.producer << " -> n" << e.consumer << " [label=\"" << e.slot << "\"];\n";
    }
    os << "}\n";
    return os.str();
  }
  nlohmann::json j;
  j["format"] = "wiring-plan";
  j["version"] = 1;
  j["nodes"] = nlohmann::json::array();
  for (std::size_t id = 0; id < plan.size(); ++id) {
    const PlanNode& n = plan.node(id);
    j["nodes"].push_back({{"id", id},
                          {"kind", to_string(n.kind)},
                          {"name", n.name},
                          {"path", n.path},
                          {"stage", n.stage},
                          {"inputs", n.inputs},
                          {"out_channels", n.out_channels},
                          {"height", n.height},
                          {"width", n.width},
                          {"layers", n.layers},
                          {"growth", n.growth},
                          {"compression", n.compression},
                          {"dropout_after", n.dropout_after},
                          {"fusion", to_string(n.fusion)}});
  }
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : plan.edges()) {
    j["edges"].push_back({{"producer", e.producer}, {"consumer", e.consumer}, {"slot", e.slot}});
  }
  return j.dump(2) + "\n";
}

WiringPlan plan_from_json(const std::string& text) {
  WiringPlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& jn : j.at("nodes")) {
      PlanNode n;
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.name = jn.at("name").get<std::string>();
      n.path = jn.at("path").get<int>();
      n.stage = jn.at("stage").get<int>();
      n.inputs = jn.at("inputs").get<std::vector<std::size_t>>();
      n.out_channels = jn.at("out_channels").get<std::size_t>();
      n.height = jn.at("height").get<std::size_t>();
      n.width = jn.at("width").get<std::size_t>();
      n.layers = jn.at("layers").get<std::size_t>();
      n.growth = jn.at("growth").get<std::size_t>();
      n.compression = jn.at("compression").get<double>();
      n.dropout_after = jn.at("dropout_after").get<bool>();
      n.fusion = fusion_from_string(jn.at("fusion").get<std::string>());
      if (jn.at("id").get<std::size_t>() != plan.size()) throw Error("wiring plan json: node ids out of order");
      plan.add(std::move(n));
    }
    std::vector<Edge> edges;
    for (const auto& je : j.at("edges")) {
      edges.push_back({je.at("producer").get<std::size_t>(), je.at("consumer").get<std::size_t>(),
                       je.at("slot").get<std::size_t>()});
    }
    if (edges != plan.edges()) throw Error("wiring plan json: edge list disagrees with node inputs");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("wiring plan json: ") + e.what());
  }
  return plan;
}

// ---------------------------------------------------------------- Model

template <typename T>
Model<T>::Model(Architecture arch, DccConfig cfg, WiringPlan plan, std::vector<Module> modules, ParamStore<T> params)
    : arch_(arch), cfg_(std::move(cfg)), plan_(std::move(plan)), modules_(std::move(modules)), params_(std::move(params)) {
  if (modules_.size() != plan_.size()) throw Error("model: one module slot per plan node required");
}

template <typename T>
typename Model<T>::Output Model<T>::forward(Tape<T>& tape, Var<T> x) const {
  return run(nn::LayerContext<T>::eval(tape, params_), x);
}

template <typename T>
typename Model<T>::Output Model<T>::forward(Tape<T>& tape, Var<T> x, Mode mode, Rng* rng) {
  return run(nn::LayerContext<T>::with_grads(tape, params_, mode, rng), x);
}

template <typename T>
typename Model<T>::Output Model<T>::run(const nn::LayerContext<T>& ctx, Var<T> x) const {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != static_cast<std::size_t>(cfg_.input_shape[0]) ||
      xs[2] != static_cast<std::size_t>(cfg_.input_shape[1]) || xs[3] != static_cast<std::size_t>(cfg_.input_shape[2])) {
    throw ShapeError("model: input " + shape_str(xs) + " does not match configured input shape [N," +
                     std::to_string(cfg_.input_shape[0]) + "," + std::to_string(cfg_.input_shape[1]) + "," +
                     std::to_string(cfg_.input_shape[2]) + "]");
  }
  Output out;
  out.nodes.reserve(plan_.size());
  for (std::size_t id = 0; id < plan_.size(); ++id) {
    const PlanNode& n = plan_.node(id);
    std::vector<Var<T>> in;
    for (auto i : n.inputs) in.push_back(out.nodes[i]);
    Var<T> y;
    switch (n.kind) {
      case NodeKind::kInput:
        y = ops::normalize_channels(x, std::span<const double>(cfg_.input_mean), std::span<const double>(cfg_.input_std));
        break;
      case NodeKind::kStem:
        y = nn::stem_forward(ctx, std::get<nn::StemParams>(modules_[id]), in[0]);
        break;
      case NodeKind::kBlock:
        y = nn::dense_block_forward(ctx, std::get<nn::DenseBlockParams>(modules_[id]), in[0]);
        break;
      case NodeKind::kTransition:
        y = nn::transition_forward(ctx, std::get<nn::TransitionParams>(modules_[id]), in[0]);
        break;
      case NodeKind::kConcat:
        y = ops::concat_channels<T>(in);
        break;
      case NodeKind::kGap:
        y = ops::global_avg_pool(in[0]);
        break;
      case NodeKind::kHead:
        y = nn::head_forward(ctx, std::get<nn::HeadParams>(modules_[id]), in[0]);
        break;
      case NodeKind::kConvUnit:
        y = nn::conv_unit_forward(ctx, std::get<nn::ConvUnitParams>(modules_[id]), in[0]);
        break;
      case NodeKind::kPool:
        y = ops::avgpool2d(in[0], 2, 2);
        break;
      case NodeKind::kEnsemble:
        out.members = in;
        y = n.fusion == EnsembleFusion::kProbability ? ops::log_mean_softmax<T>(in) : ops::mean_of<T>(in);
        break;
    }
    if (n.dropout_after) y = ctx.dropout(y, cfg_.dropout_rate);
    out.nodes.push_back(y);
  }
  out.logits = out.nodes.back();
  return out;
}

template <typename T>
Var<T> Model<T>::loss(const Output& out, std::span<const int> labels) const {
  if (out.members.empty()) return ops::softmax_cross_entropy(out.logits, labels);
  Var<T> total = ops::softmax_cross_entropy(out.members[0], labels);
  for (std::size_t m = 1; m < out.members.size(); ++m) {
    total = ops::add(total, ops::softmax_cross_entropy(out.members[m], labels));
  }
  return total;
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& x) const {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  return forward(tape, tape.constant_ref(x)).logits.value();
}

template <typename T>
Model<T> build_model(Architecture arch, const DccConfig& cfg) {
  WiringPlan plan = make_plan(arch, cfg);
  const ShapeMap shapes = infer_shapes(plan, 1);
  ParamStore<T> params;
  std::vector<Module> modules(plan.size());
  const Rng init = Rng(cfg.seed).split(streams::kInit);
  for (std::size_t id = 0; id < plan.size(); ++id) {
    const PlanNode& n = plan.node(id);
    const std::size_t cin = n.inputs.empty() ? 0 : shapes[n.inputs[0]][1];
    Rng rng = init.split(id);
    switch (n.kind) {
      case NodeKind::kStem:
        modules[id] = nn::add_stem(params, n.name, cin, n.out_channels, rng);
        break;
      case NodeKind::kBlock:
        modules[id] = nn::add_dense_block(params, n.name, cin, n.growth, n.layers, rng);
        break;
      case NodeKind::kTransition:
        modules[id] = nn::add_transition(params, n.name, cin, n.compression, rng);
        break;
      case NodeKind::kConvUnit:
        modules[id] = nn::add_conv_unit(params, n.name, cin, n.out_channels, rng);
        break;
      case NodeKind::kHead:
        modules[id] = nn::add_head(params, n.name, cin, n.out_channels, rng);
        break;
      default:
        break;
    }
  }
  return Model<T>(arch, cfg, std::move(plan), std::move(modules), std::move(params));
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model(Architecture, const DccConfig&);
template Model<double> build_model(Architecture, const DccConfig&);

}  // namespace dcc
