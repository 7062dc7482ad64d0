#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "nbfrec/tensor.hpp"

namespace nbfrec {

/// Named parameter tensors with paired gradient tensors.
/// Iteration order is the lexicographic name order (std::map), so reductions
/// and serialization are deterministic.
template <class Real>
class ParamStore {
 public:
  struct Entry {
    Tensor<Real> value;
    Tensor<Real> grad;
  };

  void add(const std::string& name, Tensor<Real> value) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Tensor<Real> grad(value.shape());
    entries_.emplace(name, Entry{std::move(value), std::move(grad)});
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor<Real>& value(const std::string& name) { return find(name).value; }
  const Tensor<Real>& value(const std::string& name) const { return find(name).value; }
  Tensor<Real>& grad(const std::string& name) { return find(name).grad; }
  const Tensor<Real>& grad(const std::string& name) const { return find(name).grad; }

  void zero_grads() {
    for (auto& [_, e] : entries_) e.grad.fill(Real(0));
  }

  std::size_t size() const noexcept { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  double grad_l2_norm() const {
    double s = 0;
    for (const auto& [_, e] : entries_)
      for (std::size_t i = 0; i < e.grad.size(); ++i) s += double(e.grad[i]) * double(e.grad[i]);
    return std::sqrt(s);
  }

  double value_l2_norm() const {
    double s = 0;
    for (const auto& [_, e] : entries_)
      for (std::size_t i = 0; i < e.value.size(); ++i) s += double(e.value[i]) * double(e.value[i]);
    return std::sqrt(s);
  }

 private:
  Entry& find(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace nbfrec
