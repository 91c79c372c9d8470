#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dit/errors.hpp"
#include "dit/tensor.hpp"

namespace dit {

/// Ordered name -> tensor map of learnable parameters. Iteration follows
/// insertion order, which init_parameters fixes as a function of the config.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> tensor) {
    if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  const Tensor<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw IndexError("no parameter named '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(static_cast<const ParameterStore&>(*this).at(name));
  }

  /// Number of tensors.
  std::size_t size() const { return entries_.size(); }
  /// Number of scalar parameters.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Deep copy; the copy shares no storage with *this.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    return out;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, t] : entries_) out.add(name, tensor_cast<U>(t));
    return out;
  }

  void set_requires_grad(bool value) {
    for (auto& [_, t] : entries_) t.set_requires_grad(value);
  }
  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Leaf handles in iteration order (they share storage with the store).
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dit
