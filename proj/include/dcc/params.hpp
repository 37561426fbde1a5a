#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcc/error.hpp"
#include "dcc/tensor.hpp"

namespace dcc {

using ParamId = std::size_t;

enum class ParamKind { kConvWeight, kLinearWeight, kBias, kBnGamma, kBnBeta, kRunningMean, kRunningVar };

const char* to_string(ParamKind kind);

// Running statistics are stored (and checkpointed) alongside the parameters
// but are never optimized.
inline bool is_trainable(ParamKind k) { return k != ParamKind::kRunningMean && k != ParamKind::kRunningVar; }

// Weight decay applies to conv and fully connected weights only.
inline bool is_decayed(ParamKind k) { return k == ParamKind::kConvWeight || k == ParamKind::kLinearWeight; }

// Named registry of every tensor a model owns, in insertion order.
template <typename T>
class ParamStore {
 public:
  ParamId add(std::string name, ParamKind kind, Tensor<T> value) {
    if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    value.set_requires_grad(is_trainable(kind));
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), kind, std::move(value)});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  ParamKind kind(ParamId id) const { return entries_.at(id).kind; }
  Tensor<T>& tensor(ParamId id) { return entries_.at(id).value; }
  const Tensor<T>& tensor(ParamId id) const { return entries_.at(id).value; }

  std::optional<ParamId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Element count over trainable tensors.
  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (is_trainable(e.kind)) n += e.value.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.kind, e.value.template cast<U>());
    return out;
  }

  bool values_equal(const ParamStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (name(i) != other.name(i) || !(tensor(i) == other.tensor(i))) return false;
    }
    return true;
  }

 private:
  struct Entry {
    std::string name;
    ParamKind kind;
    Tensor<T> value;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
};

}  // namespace dcc
