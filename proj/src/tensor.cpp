#include "dcc/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace dcc {

std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw Error("unknown precision '" + s + "'");
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_invariants();
  data_.assign(numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_invariants();
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
void Tensor<T>::check_invariants() const {
  if (shape_.empty()) throw ShapeError("tensor shape must be non-empty");
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape_));
  }
}

template <typename T>
std::vector<T>& Tensor<T>::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dcc
