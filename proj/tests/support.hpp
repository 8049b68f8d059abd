#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcm/autodiff.hpp"
#include "dcm/tensor.hpp"

namespace testing {

// Deterministic fill matching tests/oracles/oracles.py: amp * sin(1.3 i + salt).
template <typename T = double>
dcm::Tensor<T> wave(dcm::Shape shape, double salt, double amp = 0.5) {
  dcm::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(amp * std::sin(1.3 * i + salt));
  return t;
}

template <typename T = double>
dcm::Var<T> wave_param(dcm::Shape shape, double salt, double amp = 0.5) {
  return dcm::Var<T>::parameter(wave<T>(std::move(shape), salt, amp));
}

template <typename T>
dcm::Tensor<T> tensor(dcm::Shape shape, std::vector<T> values) {
  return dcm::Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
double max_abs_diff(const dcm::Tensor<T>& a, const dcm::Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

template <typename T>
void zero_out(dcm::Var<T> v) {
  v.value_mut().fill(T{0});
}

}  // namespace testing
