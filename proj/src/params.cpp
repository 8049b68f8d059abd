#include "dcm/params.hpp"

#include <cmath>

namespace dcm {

template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return Var<T>::parameter(std::move(t));
}

template <typename T>
Var<T> constant_param(Shape shape, T value) {
  return Var<T>::parameter(Tensor<T>(std::move(shape), value));
}

template <typename T>
AffineParams<T> init_affine(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  AffineParams<T> p;
  p.weight = uniform_param<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (with_bias) p.bias = constant_param<T>({out}, T{0});
  return p;
}

template <typename T>
LayerNormParams<T> init_layer_norm(std::size_t d) {
  return {constant_param<T>({d}, T{1}), constant_param<T>({d}, T{0})};
}

template <typename T>
void collect(ParamList<T>& out, const std::string& name, const AffineParams<T>& p) {
  out.push_back({name + ".weight", p.weight});
  if (p.bias.defined()) out.push_back({name + ".bias", p.bias});
}

template <typename T>
void collect(ParamList<T>& out, const std::string& name, const LayerNormParams<T>& p) {
  out.push_back({name + ".gamma", p.gamma});
  out.push_back({name + ".beta", p.beta});
}

#define DCM_INSTANTIATE_PARAMS(T)                                                         \
  template Var<T> uniform_param<T>(Shape, double, Rng&);                                  \
  template Var<T> constant_param<T>(Shape, T);                                            \
  template AffineParams<T> init_affine<T>(std::size_t, std::size_t, bool, Rng&);          \
  template LayerNormParams<T> init_layer_norm<T>(std::size_t);                            \
  template void collect<T>(ParamList<T>&, const std::string&, const AffineParams<T>&);    \
  template void collect<T>(ParamList<T>&, const std::string&, const LayerNormParams<T>&);

DCM_INSTANTIATE_PARAMS(float)
DCM_INSTANTIATE_PARAMS(double)

}  // namespace dcm
