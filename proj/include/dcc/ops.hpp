#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dcc/rng.hpp"
#include "dcc/tape.hpp"
#include "dcc/tensor.hpp"

// Differentiable operations. Every op records one node on the input's tape;
// backward closures are only built when some input requires a gradient.
namespace dcc::ops {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

// x:[N,Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout] -> [N,Cout,H',W'].
// Lowered to im2col + GEMM.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b, Conv2dOptions opt);

// Max over k x k windows. Padding cells never win. Ties go to the first
// element in row-major scan order.
template <typename T>
Var<T> maxpool2d(Var<T> x, int k, int stride, int padding);

template <typename T>
Var<T> avgpool2d(Var<T> x, int k, int stride);

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(Var<T> x);

// Training-mode batch norm: normalizes with batch statistics over (N,H,W)
// and folds them into the running estimates (unbiased variance).
template <typename T>
Var<T> batchnorm2d_train(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                         Tensor<T>& running_var, double momentum = kBatchNormMomentum,
                         double epsilon = kBatchNormEpsilon);

template <typename T>
Var<T> batchnorm2d_eval(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& running_mean,
                        const Tensor<T>& running_var, double epsilon = kBatchNormEpsilon);

template <typename T>
Var<T> relu(Var<T> x);

// x:[N,Din], w:[Dout,Din], b:[Dout] -> [N,Dout]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> b);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs);

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);

// Inverted dropout. Returns `x` itself when rate == 0 or mode is eval.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng);

// Mean over the batch of -log softmax(logits)[label]. Returns shape [1].
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

// (x - mean[c]) / std[c], with fixed per-channel statistics.
template <typename T>
Var<T> normalize_channels(Var<T> x, std::span<const double> mean, std::span<const double> stddev);

// log(mean_m softmax(logits_m)), the log of averaged member probabilities.
template <typename T>
Var<T> log_mean_softmax(std::span<const Var<T>> logits);

template <typename T>
Var<T> mean_of(std::span<const Var<T>> xs);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> a, T c);

// Sum of all elements -> shape [1].
template <typename T>
Var<T> sum(Var<T> a);

// Plain output-shape arithmetic shared with shape inference.
std::size_t conv_out_size(std::size_t in, std::size_t k, int stride, int padding);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace dcc::ops
