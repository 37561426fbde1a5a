#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dcc/ops.hpp"
#include "dcc/params.hpp"
#include "dcc/rng.hpp"
#include "dcc/tape.hpp"

// Parameterized building blocks of dense paths. Parameter structs hold ids
// into a ParamStore, so they are precision independent and cheap to copy.
namespace dcc::nn {

struct BatchNormParams {
  ParamId gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  std::size_t channels = 0;
};

// BN -> ReLU -> 3x3 conv producing `growth` channels, concatenated onto the input.
struct DenseLayerParams {
  BatchNormParams bn;
  ParamId conv_w = 0;
  std::size_t in_channels = 0;
  std::size_t growth = 0;
};

struct DenseBlockParams {
  std::vector<DenseLayerParams> layers;
  std::size_t in_channels = 0;
  std::size_t growth = 0;
  std::size_t out_channels() const { return in_channels + layers.size() * growth; }
};

// BN -> ReLU -> 1x1 conv (floor(compression * Cin) outputs) -> 2x2/2 avg pool.
struct TransitionParams {
  BatchNormParams bn;
  ParamId conv_w = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double compression = 0.5;
};

// 7x7/2 conv (pad 3) -> BN -> ReLU -> 3x3/2 max pool (pad 1).
struct StemParams {
  ParamId conv_w = 0;
  BatchNormParams bn;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

// 3x3 conv (pad 1) -> BN -> ReLU. The plain unit of the baseline CNNs.
struct ConvUnitParams {
  ParamId conv_w = 0;
  BatchNormParams bn;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

struct HeadParams {
  ParamId fc_w = 0, fc_b = 0;
  std::size_t in_features = 0;
  std::size_t num_classes = 0;
};

std::size_t transition_out_channels(std::size_t in_channels, double compression);

// Execution context shared by all layer forwards.
//
// `mutable_params` null: parameters are recorded as constants and BN must be in
// eval mode. Non-null: parameters are gradient leaves and, in train mode, BN
// running statistics are updated in place.
template <typename T>
struct LayerContext {
  Tape<T>& tape;
  const ParamStore<T>& params;
  ParamStore<T>* mutable_params = nullptr;
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;

  static LayerContext eval(Tape<T>& tape, const ParamStore<T>& params) { return {tape, params, nullptr, Mode::kEval, nullptr}; }
  static LayerContext with_grads(Tape<T>& tape, ParamStore<T>& params, Mode mode, Rng* rng) {
    return {tape, params, &params, mode, rng};
  }

  Var<T> param(ParamId id) const;
  Var<T> batchnorm(const BatchNormParams& bn, Var<T> x) const;
  Var<T> dropout(Var<T> x, double rate) const;
};

// --- parameter construction (He-normal conv weights, BN gamma=1 beta=0,
// uniform +-1/sqrt(fan_in) fully connected weights and bias).

template <typename T>
BatchNormParams add_batchnorm(ParamStore<T>& store, const std::string& prefix, std::size_t channels);
template <typename T>
ParamId add_conv_weight(ParamStore<T>& store, const std::string& name, std::size_t cout, std::size_t cin,
                        std::size_t k, Rng& rng);
template <typename T>
DenseLayerParams add_dense_layer(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                 std::size_t growth, Rng& rng);
template <typename T>
DenseBlockParams add_dense_block(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                 std::size_t growth, std::size_t layers, Rng& rng);
template <typename T>
TransitionParams add_transition(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                double compression, Rng& rng);
template <typename T>
StemParams add_stem(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout, Rng& rng);
template <typename T>
ConvUnitParams add_conv_unit(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                             Rng& rng);
template <typename T>
HeadParams add_head(ParamStore<T>& store, const std::string& prefix, std::size_t in_features,
                    std::size_t num_classes, Rng& rng);

// --- forwards

template <typename T>
Var<T> dense_layer_forward(const LayerContext<T>& ctx, const DenseLayerParams& p, Var<T> x);
template <typename T>
Var<T> dense_block_forward(const LayerContext<T>& ctx, const DenseBlockParams& p, Var<T> x);
template <typename T>
Var<T> transition_forward(const LayerContext<T>& ctx, const TransitionParams& p, Var<T> x);
template <typename T>
Var<T> stem_forward(const LayerContext<T>& ctx, const StemParams& p, Var<T> x);
template <typename T>
Var<T> conv_unit_forward(const LayerContext<T>& ctx, const ConvUnitParams& p, Var<T> x);
template <typename T>
Var<T> head_forward(const LayerContext<T>& ctx, const HeadParams& p, Var<T> fused);

// Stem geometry, shared with shape inference.
inline constexpr int kStemKernel = 7, kStemStride = 2, kStemPadding = 3;
inline constexpr int kStemPoolKernel = 3, kStemPoolStride = 2, kStemPoolPadding = 1;
inline constexpr std::size_t kStemMinInput = 8;

}  // namespace dcc::nn
