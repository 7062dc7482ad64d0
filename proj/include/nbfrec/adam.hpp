#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "nbfrec/param_store.hpp"
#include "nbfrec/tensor.hpp"

namespace nbfrec {

template <class Real>
struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

/// Bias-corrected Adam over one parameter store. First and second moment
/// tensors are kept per parameter; the step counter is shared, so call
/// step() only when the whole store took part in the backward pass.
template <class Real>
class Adam {
 public:
  explicit Adam(AdamConfig<Real> cfg = {}) : cfg_(cfg) {}

  const AdamConfig<Real>& config() const noexcept { return cfg_; }
  std::int64_t steps() const noexcept { return t_; }

  void step(ParamStore<Real>& store) {
    ++t_;
    const Real bc1 = Real(1) - std::pow(cfg_.beta1, Real(t_));
    const Real bc2 = Real(1) - std::pow(cfg_.beta2, Real(t_));
    for (auto& [name, entry] : store) {
      Slot& slot = slot_for(name, entry.value);
      Tensor<Real>& w = entry.value;
      const Tensor<Real>& g = entry.grad;
      for (std::size_t i = 0; i < w.size(); ++i) {
        slot.m[i] = cfg_.beta1 * slot.m[i] + (Real(1) - cfg_.beta1) * g[i];
        slot.v[i] = cfg_.beta2 * slot.v[i] + (Real(1) - cfg_.beta2) * g[i] * g[i];
        const Real mhat = slot.m[i] / bc1;
        const Real vhat = slot.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void reset() {
    slots_.clear();
    t_ = 0;
  }

  /// Moment tensors for checkpointing. Names match the store's parameters.
  const std::map<std::string, std::pair<Tensor<Real>, Tensor<Real>>> snapshot() const {
    std::map<std::string, std::pair<Tensor<Real>, Tensor<Real>>> out;
    for (const auto& [name, slot] : slots_) out.emplace(name, std::make_pair(slot.m, slot.v));
    return out;
  }

  void restore(std::int64_t t, const std::map<std::string, std::pair<Tensor<Real>, Tensor<Real>>>& moments) {
    t_ = t;
    slots_.clear();
    for (const auto& [name, mv] : moments) slots_.emplace(name, Slot{mv.first, mv.second});
  }

 private:
  struct Slot {
    Tensor<Real> m, v;
  };

  Slot& slot_for(const std::string& name, const Tensor<Real>& like) {
    auto it = slots_.find(name);
    if (it == slots_.end())
      it = slots_.emplace(name, Slot{Tensor<Real>(like.shape()), Tensor<Real>(like.shape())}).first;
    return it->second;
  }

  AdamConfig<Real> cfg_;
  std::map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

}  // namespace nbfrec
