#include "dcc/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "dcc/metrics.hpp"
#include "dcc/ops.hpp"

namespace dcc {

std::string to_string(AttackKind k) { return k == AttackKind::kFgsm ? "fgsm" : "pgd"; }

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm") return AttackKind::kFgsm;
  if (s == "pgd") return AttackKind::kPgd;
  throw Error("unknown attack '" + s + "' (expected fgsm or pgd)");
}

void AttackParams::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw HyperparameterError("attack: epsilon must be in [0,1]");
  if (steps < 0) throw HyperparameterError("attack: steps must be >= 0");
  if (kind == AttackKind::kPgd && steps > 0 && !(alpha() > 0.0) && epsilon > 0.0) {
    throw HyperparameterError("attack: step size must be > 0");
  }
}

namespace {

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <typename T>
void check_images(const Tensor<T>& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != labels.size()) {
    throw ShapeError("attack: images " + shape_str(x.shape()) + " do not match " + std::to_string(labels.size()) +
                     " labels");
  }
}

}  // namespace

template <typename T>
InputGradient<T> input_gradient_of(const Model<T>& model) {
  return [&model](const Tensor<T>& x, std::span<const int> labels) {
    Tape<T> tape;
    const Var<T> in = tape.input(x);
    const auto out = model.forward(tape, in);
    tape.backward(ops::softmax_cross_entropy(out.logits, labels));
    const auto& g = tape.grad(in);
    return g.empty() ? Tensor<T>(x.shape()) : Tensor<T>(x.shape(), g);
  };
}

template <typename T>
Tensor<T> fgsm(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, double epsilon) {
  check_images(x, labels);
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw HyperparameterError("fgsm: epsilon must be in [0,1]");
  if (epsilon == 0.0) return x;
  const Tensor<T> g = grad(x, labels);
  const T eps = static_cast<T>(epsilon);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + eps * sign(g[i]), T(0), T(1));
  return out;
}

template <typename T>
Tensor<T> pgd(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, const AttackParams& p,
              Rng& rng) {
  check_images(x, labels);
  p.validate();
  if (p.epsilon == 0.0 || p.steps == 0) return x;
  const T eps = static_cast<T>(p.epsilon);
  const T alpha = static_cast<T>(p.alpha());
  Tensor<T> cur = x;
  if (p.random_start) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      cur[i] = std::clamp(x[i] + static_cast<T>(rng.uniform(-p.epsilon, p.epsilon)), T(0), T(1));
    }
  }
  for (int s = 0; s < p.steps; ++s) {
    const Tensor<T> g = grad(cur, labels);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T stepped = std::clamp(cur[i] + alpha * sign(g[i]), x[i] - eps, x[i] + eps);
      cur[i] = std::clamp(stepped, T(0), T(1));
    }
  }
  return cur;
}

template <typename T>
Tensor<T> attack(const InputGradient<T>& grad, const Tensor<T>& x, std::span<const int> labels, const AttackParams& p,
                 Rng& rng) {
  return p.kind == AttackKind::kFgsm ? fgsm(grad, x, labels, p.epsilon) : pgd(grad, x, labels, p, rng);
}

template <typename T>
double robust_accuracy(const Model<T>& model, const LabeledImageSet& set, const AttackParams& p,
                       std::size_t batch_size, std::size_t workers) {
  if (set.size() == 0) throw DataError("robust_accuracy: empty dataset");
  p.validate();
  const auto grad = input_gradient_of(model);
  const Rng root = Rng(p.seed).split(streams::kAttack);
  std::vector<int> pred(set.size());
  parallel_chunks(set.size(), batch_size, workers, [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    const Batch b = make_batch(set, idx);
    Tensor<T> x;
    if constexpr (std::is_same_v<T, float>) {
      x = b.images;
    } else {
      x = b.images.template cast<T>();
    }
    Rng rng = root.split(begin);
    const Tensor<T> adv = attack(grad, x, b.labels, p, rng);
    const auto out = argmax_rows(model.logits(adv));
    std::copy(out.begin(), out.end(), pred.begin() + static_cast<std::ptrdiff_t>(begin));
  });
  return accuracy(pred, set.labels);
}

#define DCC_INSTANTIATE_ATTACKS(T)                                                                           \
  template InputGradient<T> input_gradient_of(const Model<T>&);                                              \
  template Tensor<T> fgsm(const InputGradient<T>&, const Tensor<T>&, std::span<const int>, double);          \
  template Tensor<T> pgd(const InputGradient<T>&, const Tensor<T>&, std::span<const int>, const AttackParams&, \
                         Rng&);                                                                              \
  template Tensor<T> attack(const InputGradient<T>&, const Tensor<T>&, std::span<const int>,                 \
                            const AttackParams&, Rng&);                                                      \
  template double robust_accuracy(const Model<T>&, const LabeledImageSet&, const AttackParams&, std::size_t, \
                                  std::size_t);

DCC_INSTANTIATE_ATTACKS(float)
DCC_INSTANTIATE_ATTACKS(double)

}  // namespace dcc
