#include "dcm/baselines.hpp"

#include <Eigen/Dense>

namespace dcm::baseline {

Tensor<float> persistence(const Tensor<float>& inputs, std::size_t horizon) {
  if (inputs.rank() != 3) throw DimensionError("persistence: expected [B, L, V], got " + shape_str(inputs.shape()));
  const std::size_t b = inputs.dim(0), l = inputs.dim(1), v = inputs.dim(2);
  Tensor<float> out({b, horizon, v});
  for (std::size_t i = 0; i < b; ++i) {
    const float* last = inputs.ptr() + (i * l + l - 1) * v;
    for (std::size_t t = 0; t < horizon; ++t) std::copy(last, last + v, out.ptr() + (i * horizon + t) * v);
  }
  return out;
}

LinearForecaster LinearForecaster::fit(const data::Windows& train, double ridge,
                                       std::size_t max_windows) {
  const std::size_t l = train.lookback(), w = train.horizon(), v = train.variables();
  const std::size_t total = train.size();
  const std::size_t used = max_windows && max_windows < total ? max_windows : total;
  std::vector<std::size_t> starts(used);
  for (std::size_t i = 0; i < used; ++i) starts[i] = i * total / used;
  const data::WindowBatch batch = train.batch(starts);

  const Eigen::Index rows = static_cast<Eigen::Index>(used * v);
  Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(l + 1));
  Eigen::MatrixXd y(rows, static_cast<Eigen::Index>(w));
  for (std::size_t i = 0; i < used; ++i) {
    for (std::size_t c = 0; c < v; ++c) {
      const auto row = static_cast<Eigen::Index>(i * v + c);
      for (std::size_t t = 0; t < l; ++t) x(row, t) = batch.inputs[(i * l + t) * v + c];
      x(row, static_cast<Eigen::Index>(l)) = 1.0;
      for (std::size_t t = 0; t < w; ++t) y(row, t) = batch.targets[(i * w + t) * v + c];
    }
  }
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().head(static_cast<Eigen::Index>(l)).array() += ridge * double(rows);
  const Eigen::MatrixXd sol = gram.ldlt().solve(x.transpose() * y);

  LinearForecaster f;
  f.lookback_ = l;
  f.horizon_ = w;
  f.weights_.resize((l + 1) * w);
  for (std::size_t i = 0; i <= l; ++i)
    for (std::size_t j = 0; j < w; ++j) f.weights_[i * w + j] = sol(i, j);
  return f;
}

Tensor<float> LinearForecaster::predict(const Tensor<float>& inputs) const {
  if (inputs.rank() != 3 || inputs.dim(1) != lookback_) {
    throw DimensionError("linear baseline: expected [B, " + std::to_string(lookback_) +
                         ", V], got " + shape_str(inputs.shape()));
  }
  const std::size_t b = inputs.dim(0), l = lookback_, w = horizon_, v = inputs.dim(2);
  Tensor<float> out({b, w, v});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < v; ++c) {
      for (std::size_t j = 0; j < w; ++j) {
        double acc = weights_[l * w + j];
        for (std::size_t t = 0; t < l; ++t) acc += weights_[t * w + j] * inputs[(i * l + t) * v + c];
        out[(i * w + j) * v + c] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

}  // namespace dcm::baseline
