#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nbfrec/common.hpp"
#include "nbfrec/param_store.hpp"
#include "nbfrec/tape.hpp"
#include "nbfrec/tensor.hpp"

namespace nbfrec {

enum class Activation { kRelu, kIdentity };

/// Stack of affine layers with the activation applied between layers
/// (never after the last one).
struct MlpSpec {
  std::vector<std::size_t> dims;  // input -> ... -> output widths
  Activation act = Activation::kRelu;

  MlpSpec() = default;
  MlpSpec(std::vector<std::size_t> dims_, Activation act_ = Activation::kRelu)
      : dims(std::move(dims_)), act(act_) {
    if (dims.size() < 2) throw std::invalid_argument("MlpSpec: need at least one linear layer");
    for (std::size_t w : dims)
      if (w == 0) throw std::invalid_argument("MlpSpec: zero layer width");
  }

  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
  std::size_t layer_count() const { return dims.size() - 1; }

  static MlpSpec with_hidden(std::size_t in, const std::vector<std::size_t>& hidden,
                             std::size_t out, Activation act = Activation::kRelu) {
    std::vector<std::size_t> dims;
    dims.push_back(in);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return MlpSpec(std::move(dims), act);
  }
};

inline std::string mlp_weight_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".w" + std::to_string(layer);
}
inline std::string mlp_bias_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".b" + std::to_string(layer);
}

/// Kaiming-uniform weight tensor: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <class Real>
Tensor<Real> kaiming_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Real> w({fan_in, fan_out});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = Real(dist(rng));
  return w;
}

/// Adds the MLP's parameters under `prefix` (weights Kaiming-uniform,
/// biases zero).
template <class Real>
void init_mlp(ParamStore<Real>& store, const MlpSpec& spec, const std::string& prefix, Rng& rng) {
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    store.add(mlp_weight_name(prefix, l), kaiming_uniform<Real>(spec.dims[l], spec.dims[l + 1], rng));
    store.add(mlp_bias_name(prefix, l), Tensor<Real>({spec.dims[l + 1]}));
  }
}

/// Taped forward pass through the MLP. x is [batch, input_dim].
template <class Real>
Var mlp_apply(Tape<Real>& tape, const MlpSpec& spec, ParamStore<Real>& store,
              const std::string& prefix, Var x) {
  if (tape.value(x).cols() != spec.input_dim())
    throw std::invalid_argument("mlp_apply: input width mismatch for " + prefix);
  Var h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    Var w = tape.param(store, mlp_weight_name(prefix, l));
    Var b = tape.param(store, mlp_bias_name(prefix, l));
    h = tape.add_rowwise(tape.matmul(h, w), b);
    if (l + 1 < spec.layer_count() && spec.act == Activation::kRelu) h = tape.relu(h);
  }
  return h;
}

/// Layer-norm parameter pair (gamma init 1, beta init 0) under `prefix`.
template <class Real>
void init_layer_norm(ParamStore<Real>& store, std::size_t d, const std::string& prefix) {
  Tensor<Real> gamma({d});
  gamma.fill(Real(1));
  store.add(prefix + ".gamma", std::move(gamma));
  store.add(prefix + ".beta", Tensor<Real>({d}));
}

template <class Real>
Var apply_layer_norm(Tape<Real>& tape, ParamStore<Real>& store, const std::string& prefix, Var x,
                     Real eps) {
  Var gamma = tape.param(store, prefix + ".gamma");
  Var beta = tape.param(store, prefix + ".beta");
  return tape.layer_norm(x, gamma, beta, eps);
}

/// Logistic link between a raw score and an interaction probability.
template <class Real>
Real probability(Real score) {
  if (score >= Real(0)) return Real(1) / (Real(1) + std::exp(-score));
  const Real e = std::exp(score);
  return e / (Real(1) + e);
}

}  // namespace nbfrec
