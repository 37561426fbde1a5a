#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "dcc/data.hpp"
#include "dcc/rng.hpp"
#include "dcc/topology.hpp"

// L-infinity white-box attacks on [0,1] images. The model sees raw pixels;
// input normalization is the model's first node.
namespace dcc {

enum class AttackKind { kFgsm, kPgd };
std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackParams {
  AttackKind kind = AttackKind::kFgsm;
  double epsilon = 0.03;
  int steps = 10;
  double step_size = -1.0;  // negative: epsilon / 4
  bool random_start = true;
  std::uint64_t seed = 0;

  double alpha() const { return step_size < 0 ? epsilon / 4 : step_size; }
  // Throws HyperparameterError.
  void validate() const;

  static AttackParams fgsm(double eps) {
    AttackParams p;
    p.kind = AttackKind::kFgsm;
    p.epsilon = eps;
    return p;
  }
  static AttackParams pgd(double eps, int steps = 10) {
    AttackParams p;
    p.kind = AttackKind::kPgd;
    p.epsilon = eps;
    p.steps = steps;
    return p;
  }
};

// Gradient of the classification loss w.r.t. the input batch.
template <typename T>
using InputGradient = std::function<Tensor<T>(const Tensor<T>& x, std::span<const int> labels)>;

// Eval mode, dropout off, parameters recorded as constants: the model's
// parameters and gradients are never touched.
template <typename T>
InputGradient<T> input_gradient_of(const Model<T>& model);

// clip01(x + eps * sign(grad)).
template <typename T>
Tensor<T> fgsm(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, double epsilon);

// x0 = x (+ U[-eps, eps] if random_start, clipped to [0,1]);
// x_{t+1} = clamp(clamp(x_t + alpha * sign(grad), x - eps, x + eps), 0, 1).
template <typename T>
Tensor<T> pgd(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, const AttackParams& p,
              Rng& rng);

// Dispatches on p.kind.
template <typename T>
Tensor<T> attack(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, const AttackParams& p,
                 Rng& rng);

// Fraction of samples still classified correctly after the attack. Batch b
// draws its random start from a stream split by its first sample index, so
// results do not depend on the worker count.
template <typename T>
double robust_accuracy(const Model<T>& model, const LabeledImageSet& set, const AttackParams& p,
                       std::size_t batch_size = 128, std::size_t workers = 1);

}  // namespace dcc
