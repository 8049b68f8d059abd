#pragma once

#include <string>
#include <vector>

#include "dcm/ops.hpp"
#include "dcm/rng.hpp"

namespace dcm {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Ordered (name, tensor) registry used by the optimizer, checkpoints and the
/// gradient checker. Order is the construction order and is stable.
template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
struct LayerNormParams {
  Var<T> gamma;
  Var<T> beta;
};

/// Uniform(-bound, bound) entries.
template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng);
template <typename T>
Var<T> constant_param(Shape shape, T value);

/// Kaiming-style uniform weight with bound 1/sqrt(in); zero bias.
template <typename T>
AffineParams<T> init_affine(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
template <typename T>
LayerNormParams<T> init_layer_norm(std::size_t d);

template <typename T>
void collect(ParamList<T>& out, const std::string& name, const AffineParams<T>& p);
template <typename T>
void collect(ParamList<T>& out, const std::string& name, const LayerNormParams<T>& p);
template <typename T>
void collect(ParamList<T>& out, const std::string& name, const Var<T>& p) {
  out.push_back({name, p});
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const LayerNormParams<T>& p) {
  return ops::layer_norm(x, p.gamma, p.beta);
}

/// Total scalar count across the list.
template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

}  // namespace dcm
