#include "dcc/layers.hpp"

#include <cmath>

namespace dcc::nn {

namespace {

std::string channels_msg(const char* what, std::size_t expected, std::size_t got) {
  return std::string(what) + ": expected " + std::to_string(expected) + " input channels, got " + std::to_string(got);
}

template <typename T>
void require_channels(const Var<T>& x, std::size_t expected, const char* what) {
  if (x.shape().size() != 4) throw ShapeError(std::string(what) + ": expected [N,C,H,W] input, got " + shape_str(x.shape()));
  if (x.shape()[1] != expected) throw ShapeError(channels_msg(what, expected, x.shape()[1]));
}

}  // namespace

std::size_t transition_out_channels(std::size_t in_channels, double compression) {
  return static_cast<std::size_t>(std::floor(compression * static_cast<double>(in_channels)));
}

template <typename T>
Var<T> LayerContext<T>::param(ParamId id) const {
  if (mutable_params) return tape.parameter(mutable_params->tensor(id));
  return tape.constant_ref(params.tensor(id));
}

template <typename T>
Var<T> LayerContext<T>::batchnorm(const BatchNormParams& bn, Var<T> x) const {
  Var<T> gamma = param(bn.gamma);
  Var<T> beta = param(bn.beta);
  if (mode == Mode::kTrain) {
    if (!mutable_params) throw Error("train-mode batch norm needs mutable parameters");
    return ops::batchnorm2d_train(x, gamma, beta, mutable_params->tensor(bn.running_mean),
                                  mutable_params->tensor(bn.running_var));
  }
  return ops::batchnorm2d_eval(x, gamma, beta, params.tensor(bn.running_mean), params.tensor(bn.running_var));
}

template <typename T>
Var<T> LayerContext<T>::dropout(Var<T> x, double rate) const {
  if (mode == Mode::kEval || rate == 0.0) return x;
  if (!rng) throw Error("train-mode dropout needs a random stream");
  return ops::dropout(x, rate, mode, *rng);
}

// ---------------------------------------------------------------- construction

template <typename T>
BatchNormParams add_batchnorm(ParamStore<T>& store, const std::string& prefix, std::size_t channels) {
  BatchNormParams bn;
  bn.channels = channels;
  bn.gamma = store.add(prefix + ".gamma", ParamKind::kBnGamma, Tensor<T>({channels}, T(1)));
  bn.beta = store.add(prefix + ".beta", ParamKind::kBnBeta, Tensor<T>({channels}, T(0)));
  bn.running_mean = store.add(prefix + ".running_mean", ParamKind::kRunningMean, Tensor<T>({channels}, T(0)));
  bn.running_var = store.add(prefix + ".running_var", ParamKind::kRunningVar, Tensor<T>({channels}, T(1)));
  return bn;
}

template <typename T>
ParamId add_conv_weight(ParamStore<T>& store, const std::string& name, std::size_t cout, std::size_t cin,
                        std::size_t k, Rng& rng) {
  Tensor<T> w({cout, cin, k, k});
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return store.add(name, ParamKind::kConvWeight, std::move(w));
}

template <typename T>
DenseLayerParams add_dense_layer(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                 std::size_t growth, Rng& rng) {
  DenseLayerParams p;
  p.in_channels = cin;
  p.growth = growth;
  p.bn = add_batchnorm(store, prefix + ".bn", cin);
  p.conv_w = add_conv_weight(store, prefix + ".conv.weight", growth, cin, 3, rng);
  return p;
}

template <typename T>
DenseBlockParams add_dense_block(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                 std::size_t growth, std::size_t layers, Rng& rng) {
  DenseBlockParams p;
  p.in_channels = cin;
  p.growth = growth;
  for (std::size_t i = 0; i < layers; ++i) {
    p.layers.push_back(add_dense_layer(store, prefix + ".layer" + std::to_string(i + 1), cin + i * growth, growth, rng));
  }
  return p;
}

template <typename T>
TransitionParams add_transition(ParamStore<T>& store, const std::string& prefix, std::size_t cin,
                                double compression, Rng& rng) {
  if (!(compression > 0.0 && compression <= 1.0)) {
    throw HyperparameterError("transition compression must be in (0, 1]");
  }
  TransitionParams p;
  p.in_channels = cin;
  p.compression = compression;
  p.out_channels = transition_out_channels(cin, compression);
  if (p.out_channels == 0) throw ShapeError(prefix + ": compression leaves zero output channels");
  p.bn = add_batchnorm(store, prefix + ".bn", cin);
  p.conv_w = add_conv_weight(store, prefix + ".conv.weight", p.out_channels, cin, 1, rng);
  return p;
}

template <typename T>
StemParams add_stem(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout, Rng& rng) {
  StemParams p;
  p.in_channels = cin;
  p.out_channels = cout;
  p.conv_w = add_conv_weight(store, prefix + ".conv.weight", cout, cin, kStemKernel, rng);
  p.bn = add_batchnorm(store, prefix + ".bn", cout);
  return p;
}

template <typename T>
ConvUnitParams add_conv_unit(ParamStore<T>& store, const std::string& prefix, std::size_t cin, std::size_t cout,
                             Rng& rng) {
  ConvUnitParams p;
  p.in_channels = cin;
  p.out_channels = cout;
  p.conv_w = add_conv_weight(store, prefix + ".conv.weight", cout, cin, 3, rng);
  p.bn = add_batchnorm(store, prefix + ".bn", cout);
  return p;
}

template <typename T>
HeadParams add_head(ParamStore<T>& store, const std::string& prefix, std::size_t in_features,
                    std::size_t num_classes, Rng& rng) {
  HeadParams p;
  p.in_features = in_features;
  p.num_classes = num_classes;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  Tensor<T> w({num_classes, in_features});
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> b({num_classes});
  for (auto& v : b.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  p.fc_w = store.add(prefix + ".fc.weight", ParamKind::kLinearWeight, std::move(w));
  p.fc_b = store.add(prefix + ".fc.bias", ParamKind::kBias, std::move(b));
  return p;
}

// ---------------------------------------------------------------- forwards

template <typename T>
Var<T> dense_layer_forward(const LayerContext<T>& ctx, const DenseLayerParams& p, Var<T> x) {
  require_channels(x, p.in_channels, "dense layer");
  Var<T> h = ops::relu(ctx.batchnorm(p.bn, x));
  Var<T> grown = ops::conv2d(h, ctx.param(p.conv_w), std::nullopt, {.stride = 1, .padding = 1});
  const Var<T> parts[] = {x, grown};
  return ops::concat_channels<T>(parts);
}

template <typename T>
Var<T> dense_block_forward(const LayerContext<T>& ctx, const DenseBlockParams& p, Var<T> x) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::size_t expected = p.layers[i].in_channels;
    if (x.shape().size() != 4 || x.shape()[1] != expected) {
      throw ShapeError("dense block layer " + std::to_string(i) + ": " +
                       channels_msg("channel mismatch", expected, x.shape().size() == 4 ? x.shape()[1] : 0));
    }
    x = dense_layer_forward(ctx, p.layers[i], x);
  }
  return x;
}

template <typename T>
Var<T> transition_forward(const LayerContext<T>& ctx, const TransitionParams& p, Var<T> x) {
  require_channels(x, p.in_channels, "transition");
  if (x.shape()[2] % 2 != 0 || x.shape()[3] % 2 != 0) {
    throw ShapeError("transition: spatial size " + std::to_string(x.shape()[2]) + "x" + std::to_string(x.shape()[3]) +
                     " is odd; 2x2 pooling needs even dimensions");
  }
  Var<T> h = ops::relu(ctx.batchnorm(p.bn, x));
  h = ops::conv2d(h, ctx.param(p.conv_w), std::nullopt, {.stride = 1, .padding = 0});
  return ops::avgpool2d(h, 2, 2);
}

template <typename T>
Var<T> stem_forward(const LayerContext<T>& ctx, const StemParams& p, Var<T> x) {
  require_channels(x, p.in_channels, "stem");
  if (x.shape()[2] < kStemMinInput || x.shape()[3] < kStemMinInput) {
    throw ShapeError("stem: input " + std::to_string(x.shape()[2]) + "x" + std::to_string(x.shape()[3]) +
                     " is smaller than the 8x8 minimum");
  }
  Var<T> h = ops::conv2d(x, ctx.param(p.conv_w), std::nullopt, {.stride = kStemStride, .padding = kStemPadding});
  h = ops::relu(ctx.batchnorm(p.bn, h));
  return ops::maxpool2d(h, kStemPoolKernel, kStemPoolStride, kStemPoolPadding);
}

template <typename T>
Var<T> conv_unit_forward(const LayerContext<T>& ctx, const ConvUnitParams& p, Var<T> x) {
  require_channels(x, p.in_channels, "conv unit");
  Var<T> h = ops::conv2d(x, ctx.param(p.conv_w), std::nullopt, {.stride = 1, .padding = 1});
  return ops::relu(ctx.batchnorm(p.bn, h));
}

template <typename T>
Var<T> head_forward(const LayerContext<T>& ctx, const HeadParams& p, Var<T> fused) {
  if (fused.shape().size() != 2 || fused.shape()[1] != p.in_features) {
    throw ShapeError("head: expected [N," + std::to_string(p.in_features) + "] features, got " +
                     shape_str(fused.shape()));
  }
  return ops::linear(fused, ctx.param(p.fc_w), ctx.param(p.fc_b));
}

#define DCC_INSTANTIATE_LAYERS(T)                                                                               \
  template struct LayerContext<T>;                                                                             \
  template BatchNormParams add_batchnorm(ParamStore<T>&, const std::string&, std::size_t);                     \
  template ParamId add_conv_weight(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t,  \
                                   Rng&);                                                                      \
  template DenseLayerParams add_dense_layer(ParamStore<T>&, const std::string&, std::size_t, std::size_t,      \
                                            Rng&);                                                             \
  template DenseBlockParams add_dense_block(ParamStore<T>&, const std::string&, std::size_t, std::size_t,      \
                                            std::size_t, Rng&);                                                \
  template TransitionParams add_transition(ParamStore<T>&, const std::string&, std::size_t, double, Rng&);     \
  template StemParams add_stem(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);            \
  template ConvUnitParams add_conv_unit(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);   \
  template HeadParams add_head(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);            \
  template Var<T> dense_layer_forward(const LayerContext<T>&, const DenseLayerParams&, Var<T>);                \
  template Var<T> dense_block_forward(const LayerContext<T>&, const DenseBlockParams&, Var<T>);                \
  template Var<T> transition_forward(const LayerContext<T>&, const TransitionParams&, Var<T>);                 \
  template Var<T> stem_forward(const LayerContext<T>&, const StemParams&, Var<T>);                             \
  template Var<T> conv_unit_forward(const LayerContext<T>&, const ConvUnitParams&, Var<T>);                    \
  template Var<T> head_forward(const LayerContext<T>&, const HeadParams&, Var<T>);

DCC_INSTANTIATE_LAYERS(float)
DCC_INSTANTIATE_LAYERS(double)

#undef DCC_INSTANTIATE_LAYERS

}  // namespace dcc::nn
