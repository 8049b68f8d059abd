#pragma once

#include <cstddef>

#include "dcm/data.hpp"

namespace dcm::baseline {

/// Repeats the last observed row of each window: [B, L, V] -> [B, W, V].
Tensor<float> persistence(const Tensor<float>& inputs, std::size_t horizon);

/// Ridge regression from the L-step history of one variable to its next W
/// values, shared across variables (with intercept).
class LinearForecaster {
 public:
  /// Fits on up to `max_windows` evenly spaced training windows (0 = all).
  static LinearForecaster fit(const data::Windows& train, double ridge = 1e-3,
                              std::size_t max_windows = 0);
  Tensor<float> predict(const Tensor<float>& inputs) const;
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }

 private:
  std::size_t lookback_ = 0, horizon_ = 0;
  std::vector<double> weights_;  // [(L + 1), W], last row is the intercept
};

}  // namespace dcm::baseline
