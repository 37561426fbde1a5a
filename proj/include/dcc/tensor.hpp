#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dcc/error.hpp"

namespace dcc {

using Shape = std::vector<std::size_t>;

enum class Precision : std::uint32_t { kF32 = 0, kF64 = 1 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::kF32 : Precision::kF64;
}

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. `grad` is empty until a backward pass writes to it.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors for rank-4 tensors.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::vector<T>& grad() { return grad_; }
  const std::vector<T>& grad() const { return grad_; }
  // Allocates a zeroed gradient buffer if none exists.
  std::vector<T>& ensure_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void check_invariants() const;

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::vector<T> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dcc
