#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dcc/config.hpp"
#include "dcc/layers.hpp"
#include "dcc/params.hpp"
#include "dcc/tape.hpp"

namespace dcc {

enum class NodeKind { kInput, kStem, kBlock, kTransition, kConcat, kGap, kHead, kConvUnit, kPool, kEnsemble };

std::string to_string(NodeKind k);
NodeKind node_kind_from_string(const std::string& s);

struct PlanNode {
  NodeKind kind = NodeKind::kInput;
  std::string name;
  int path = -1;   // 0-based path / ensemble member, -1 when not path-specific
  int stage = -1;  // 0-based block or stage index
  std::vector<std::size_t> inputs;  // producers in slot order

  // Kind-specific attributes; unused ones stay zero.
  std::size_t out_channels = 0;  // input, stem, conv unit, head
  std::size_t height = 0;        // input
  std::size_t width = 0;         // input
  std::size_t layers = 0;        // block
  std::size_t growth = 0;        // block
  double compression = 0.0;      // transition
  bool dropout_after = false;    // block, conv unit
  EnsembleFusion fusion = EnsembleFusion::kProbability;  // ensemble

  bool operator==(const PlanNode&) const = default;
};

struct Edge {
  std::size_t producer = 0;
  std::size_t consumer = 0;
  std::size_t slot = 0;
  bool operator==(const Edge&) const = default;
};

// Dataflow graph of a model. Nodes are stored in execution order; a node's
// inputs always precede it. The last node produces the logits.
class WiringPlan {
 public:
  std::size_t add(PlanNode node);

  const std::vector<PlanNode>& nodes() const { return nodes_; }
  const PlanNode& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  std::size_t output() const { return nodes_.size() - 1; }

  std::vector<Edge> edges() const;
  std::size_t count(NodeKind kind) const;
  std::optional<std::size_t> find(const std::string& name) const;
  std::vector<std::size_t> consumers(std::size_t id) const;

  // A concat that merges two paths' block outputs inside the network, as
  // opposed to the final fusion concat.
  bool is_cross_connection(std::size_t id) const {
    return nodes_.at(id).kind == NodeKind::kConcat && nodes_.at(id).path >= 0;
  }

  bool operator==(const WiringPlan&) const = default;

 private:
  std::vector<PlanNode> nodes_;
};

WiringPlan make_plan(Architecture arch, const DccConfig& cfg);

// Symbolic output shape per node id, from the channel algebra alone:
// block C + L*k, transition floor(theta*C) at half resolution, concat sum.
using ShapeMap = std::vector<Shape>;
ShapeMap infer_shapes(const WiringPlan& plan, std::size_t batch = 1);
ShapeMap infer_shapes(Architecture arch, const DccConfig& cfg, std::size_t batch = 1);

// Trainable parameter count implied by a plan (no tensors allocated).
std::size_t plan_param_count(const WiringPlan& plan);

// Width of the plain CNN whose parameter count is closest to `target`.
std::size_t standard_cnn_width(const DccConfig& cfg, std::size_t target);

enum class GraphFormat { kDot, kJson };
GraphFormat graph_format_from_string(const std::string& s);
std::string export_graph(const WiringPlan& plan, GraphFormat format);
WiringPlan plan_from_json(const std::string& text);

using Module = std::variant<std::monostate, nn::StemParams, nn::DenseBlockParams, nn::TransitionParams,
                            nn::ConvUnitParams, nn::HeadParams>;

template <typename T>
class Model {
 public:
  struct Output {
    Var<T> logits;
    std::vector<Var<T>> members;  // per-member logits for ensembles, else empty
    std::vector<Var<T>> nodes;    // output of every plan node
  };

  Model(Architecture arch, DccConfig cfg, WiringPlan plan, std::vector<Module> modules, ParamStore<T> params);

  Architecture architecture() const { return arch_; }
  const DccConfig& config() const { return cfg_; }
  const WiringPlan& plan() const { return plan_; }
  const Module& module(std::size_t node) const { return modules_.at(node); }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Eval mode with parameters recorded as constants.
  Output forward(Tape<T>& tape, Var<T> x) const;
  // Parameters recorded as gradient leaves. Train mode updates BN running
  // statistics and draws dropout masks from `rng`.
  Output forward(Tape<T>& tape, Var<T> x, Mode mode, Rng* rng);

  // Cross-entropy of the fused logits; ensembles train each member on its
  // own loss (summed), which keeps member gradients independent.
  Var<T> loss(const Output& out, std::span<const int> labels) const;

  // Eval-mode logits without recording gradients.
  Tensor<T> logits(const Tensor<T>& x) const;

  std::size_t param_count() const { return params_.trainable_elements(); }

  template <typename U>
  Model<U> cast() const {
    return Model<U>(arch_, cfg_, plan_, modules_, params_.template cast<U>());
  }

 private:
  Output run(const nn::LayerContext<T>& ctx, Var<T> x) const;

  Architecture arch_;
  DccConfig cfg_;
  WiringPlan plan_;
  std::vector<Module> modules_;  // indexed by plan node id
  ParamStore<T> params_;
};

template <typename T>
Model<T> build_model(Architecture arch, const DccConfig& cfg);
template <typename T>
Model<T> build_dcc_ecnn(const DccConfig& cfg) { return build_model<T>(Architecture::kDccEcnn, cfg); }
template <typename T>
Model<T> build_standard_cnn(const DccConfig& cfg) { return build_model<T>(Architecture::kStandardCnn, cfg); }
template <typename T>
Model<T> build_ensemble_cnn(const DccConfig& cfg) { return build_model<T>(Architecture::kEnsembleCnn, cfg); }
template <typename T>
Model<T> build_single_densenet(const DccConfig& cfg) { return build_model<T>(Architecture::kSingleDenseNet, cfg); }

template <typename T>
std::size_t param_count(const Model<T>& m) {
  return m.param_count();
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dcc
