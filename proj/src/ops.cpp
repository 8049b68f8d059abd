#include "dcm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dcm/parallel.hpp"

namespace dcm {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
T sigmoid(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <typename T>
T softplus_value(T v) {
  return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v)));
}

// Leading size when the last axis has length `last`.
std::size_t rows_of(const Shape& s) {
  return s.empty() ? 1 : numel(s) / s.back();
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using Idx = Eigen::Index;
  Eigen::Map<const RowMat<T>> A(a, static_cast<Idx>(trans_a ? k : m),
                                static_cast<Idx>(trans_a ? m : k));
  Eigen::Map<const RowMat<T>> B(b, static_cast<Idx>(trans_b ? n : k),
                                static_cast<Idx>(trans_b ? k : n));
  Eigen::Map<RowMat<T>> C(c, static_cast<Idx>(m), static_cast<Idx>(n));
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model % 2 != 0) {
    throw DimensionError("positional encoding needs an even width, got " +
                         std::to_string(d_model));
  }
  Tensor<T> pe({length, d_model});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

namespace ops {

template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x.shape();
  if (weight.value().rank() != 2 || xs.empty() || xs.back() != weight.dim(0)) {
    throw DimensionError("affine: input " + shape_str(xs) + " vs weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  if (bias.defined() && bias.shape() != Shape{out}) {
    throw DimensionError("affine: bias " + shape_str(bias.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = rows_of(xs);
  Shape ys = xs;
  ys.back() = out;
  Tensor<T> y(ys);
  if (bias.defined()) {
    const T* b = bias.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b, b + out, y.ptr() + r * out);
  }
  gemm<T>(false, false, rows, out, in, x.value().ptr(), weight.value().ptr(), y.ptr(), true);

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return record<T>("affine", std::move(y), std::move(parents),
                   [rows, in, out](Node<T>& self) {
                     const T* g = self.grad.ptr();
                     const T* xv = self.parents[0]->value.ptr();
                     const T* wv = self.parents[1]->value.ptr();
                     if (auto* px = self.input(0)) {
                       gemm<T>(false, true, rows, in, out, g, wv, px->grad_ref().ptr(), true);
                     }
                     if (auto* pw = self.input(1)) {
                       gemm<T>(true, false, in, out, rows, xv, g, pw->grad_ref().ptr(), true);
                     }
                     if (self.parents.size() > 2) {
                       if (auto* pb = self.input(2)) {
                         T* gb = pb->grad_ref().ptr();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < out; ++j) gb[j] += g[r * out + j];
                       }
                     }
                   });
}

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  const std::size_t n = xv.size();
  const char* name = "relu";
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::max(xv[i], T{0});
      break;
    case Activation::silu:
      name = "silu";
      for (std::size_t i = 0; i < n; ++i) y[i] = xv[i] * sigmoid(xv[i]);
      break;
    case Activation::softplus:
      name = "softplus";
      for (std::size_t i = 0; i < n; ++i) y[i] = softplus_value(xv[i]);
      break;
  }
  return record<T>(name, std::move(y), {x}, [kind, n](Node<T>& self) {
    Node<T>* px = self.input(0);
    if (!px) return;
    const Tensor<T>& xv = px->value;
    const T* g = self.grad.ptr();
    T* gx = px->grad_ref().ptr();
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xv[i] > T{0} ? g[i] : T{0};
        break;
      case Activation::silu:
        for (std::size_t i = 0; i < n; ++i) {
          const T s = sigmoid(xv[i]);
          gx[i] += g[i] * s * (T{1} + xv[i] * (T{1} - s));
        }
        break;
      case Activation::softplus:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * sigmoid(xv[i]);
        break;
    }
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax_rows: scalar input");
  const std::size_t cols = xv.shape().back();
  const std::size_t rows = rows_of(xv.shape());
  Tensor<T> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * cols;
    T* out = y.ptr() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    double total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    const T inv = static_cast<T>(1.0 / total);
    for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
  }
  return record<T>("softmax", std::move(y), {x}, [rows, cols](Node<T>& self) {
    Node<T>* px = self.input(0);
    if (!px) return;
    const T* yv = self.value.ptr();
    const T* g = self.grad.ptr();
    T* gx = px->grad_ref().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T dot{0};
      for (std::size_t j = 0; j < cols; ++j) dot += g[o + j] * yv[o + j];
      for (std::size_t j = 0; j < cols; ++j) gx[o + j] += yv[o + j] * (g[o + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = xv.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: input " + shape_str(xv.shape()) + " vs gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  const std::size_t rows = rows_of(xv.shape());
  Tensor<T> y(xv.shape());
  Tensor<T> xhat(xv.shape());
  Tensor<T> rstd({rows});
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * d;
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((in[j] - mean) * inv);
      xhat[r * d + j] = h;
      y[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return record<T>(
      "layer_norm", std::move(y), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = self.grad.ptr();
        const T* gv = self.parents[1]->value.ptr();
        if (auto* pg = self.input(1)) {
          T* gg = pg->grad_ref().ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (auto* pb = self.input(2)) {
          T* gb = pb->grad_ref().ptr();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (auto* px = self.input(0)) {
          T* gx = px->grad_ref().ptr();
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * d;
            T mean_dh{0}, mean_dh_h{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[o + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[o + j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = g[o + j] * gv[j];
              gx[o + j] += rstd[r] * (dh - mean_dh - xhat[o + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv1dSpec spec) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3) {
    throw DimensionError("conv1d: input " + shape_str(xs) + " and weight " + shape_str(ws) +
                         " must be rank 3");
  }
  const std::size_t batch = xs[0], c_in = xs[1], len = xs[2];
  const std::size_t c_out = ws[0], k = ws[2], groups = spec.groups;
  if (groups == 0 || c_in % groups != 0 || c_out % groups != 0) {
    throw std::invalid_argument("conv1d: invalid groups " + std::to_string(groups) +
                                " for " + std::to_string(c_in) + " -> " +
                                std::to_string(c_out) + " channels");
  }
  const std::size_t cin_g = c_in / groups, cout_g = c_out / groups;
  if (ws[1] != cin_g) {
    throw DimensionError("conv1d: weight " + shape_str(ws) + " vs input " + shape_str(xs) +
                         " with groups " + std::to_string(groups));
  }
  if (k == 0 || len + spec.pad_left + spec.pad_right < k) {
    throw std::invalid_argument("conv1d: kernel size " + std::to_string(k) +
                                " exceeds padded length");
  }
  if (bias.defined() && bias.shape() != Shape{c_out}) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " vs " +
                         std::to_string(c_out) + " output channels");
  }
  const std::size_t out_len = len + spec.pad_left + spec.pad_right - k + 1;
  const std::ptrdiff_t pl = static_cast<std::ptrdiff_t>(spec.pad_left);
  const bool pointwise = k == 1 && groups == 1 && spec.pad_left == 0 && spec.pad_right == 0;

  Tensor<T> y({batch, c_out, out_len});
  const T* xv = x.value().ptr();
  const T* wv = weight.value().ptr();
  // Valid output range [lo, hi) for kernel tap j: input index t + j - pl in [0, len).
  auto tap_range = [=](std::size_t j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pl;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
        static_cast<std::ptrdiff_t>(out_len), static_cast<std::ptrdiff_t>(len) - shift);
    return std::tuple{lo, hi, shift};
  };
  parallel_for(batch, c_out * c_in * out_len * k / groups, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      T* yb = y.ptr() + b * c_out * out_len;
      if (bias.defined()) {
        for (std::size_t co = 0; co < c_out; ++co)
          std::fill(yb + co * out_len, yb + (co + 1) * out_len, bias.value()[co]);
      }
      const T* xb = xv + b * c_in * len;
      if (pointwise) {
        gemm<T>(false, false, c_out, out_len, c_in, wv, xb, yb, true);
        continue;
      }
      for (std::size_t co = 0; co < c_out; ++co) {
        const std::size_t grp = co / cout_g;
        T* yrow = yb + co * out_len;
        for (std::size_t ci = 0; ci < cin_g; ++ci) {
          const T* xrow = xb + (grp * cin_g + ci) * len;
          for (std::size_t j = 0; j < k; ++j) {
            const T w = wv[(co * cin_g + ci) * k + j];
            auto [lo, hi, shift] = tap_range(j);
            for (std::ptrdiff_t t = lo; t < hi; ++t) yrow[t] += w * xrow[t + shift];
          }
        }
      }
    }
  });

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return record<T>(
      "conv1d", std::move(y), std::move(parents),
      [=](Node<T>& self) {
        const T* g = self.grad.ptr();
        const T* xv = self.parents[0]->value.ptr();
        const T* wv = self.parents[1]->value.ptr();
        Node<T>* px = self.input(0);
        Node<T>* pw = self.input(1);
        Node<T>* pb = self.parents.size() > 2 ? self.input(2) : nullptr;
        T* gx = px ? px->grad_ref().ptr() : nullptr;
        T* gw = pw ? pw->grad_ref().ptr() : nullptr;
        T* gb = pb ? pb->grad_ref().ptr() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* gyb = g + b * c_out * out_len;
          const T* xb = xv + b * c_in * len;
          if (gb) {
            for (std::size_t co = 0; co < c_out; ++co)
              for (std::size_t t = 0; t < out_len; ++t) gb[co] += gyb[co * out_len + t];
          }
          if (pointwise) {
            if (gx) gemm<T>(true, false, c_in, len, c_out, wv, gyb, gx + b * c_in * len, true);
            if (gw) gemm<T>(false, true, c_out, c_in, out_len, gyb, xb, gw, true);
            continue;
          }
          for (std::size_t co = 0; co < c_out; ++co) {
            const std::size_t grp = co / cout_g;
            const T* grow = gyb + co * out_len;
            for (std::size_t ci = 0; ci < cin_g; ++ci) {
              const std::size_t cin_idx = grp * cin_g + ci;
              const T* xrow = xb + cin_idx * len;
              for (std::size_t j = 0; j < k; ++j) {
                const std::size_t widx = (co * cin_g + ci) * k + j;
                auto [lo, hi, shift] = tap_range(j);
                if (gw) {
                  T acc{0};
                  for (std::ptrdiff_t t = lo; t < hi; ++t) acc += grow[t] * xrow[t + shift];
                  gw[widx] += acc;
                }
                if (gx) {
                  T* gxrow = gx + b * c_in * len + cin_idx * len;
                  const T w = wv[widx];
                  for (std::ptrdiff_t t = lo; t < hi; ++t) gxrow[t + shift] += w * grow[t];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  const std::size_t n = x.size();
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() >= p ? keep_scale : T{0};
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < n; ++i) y[i] = x.value()[i] * mask[i];
  return record<T>("dropout", std::move(y), {x}, [n, mask = std::move(mask)](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* gx = px->grad_ref().ptr();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * mask[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return record<T>("add", std::move(y), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* in = self.input(p)) {
        T* g = in->grad_ref().ptr();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return record<T>("mul", std::move(y), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* in = self.input(p)) {
        const Tensor<T>& other = self.parents[1 - p]->value;
        T* g = in->grad_ref().ptr();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * other[i];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * factor;
  return record<T>("scale", std::move(y), {x}, [factor](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& c) {
  const Shape& xs = x.shape();
  const Shape& cs = c.shape();
  if (cs.size() > xs.size() || !std::equal(cs.begin(), cs.end(), xs.end() - cs.size())) {
    throw DimensionError("add_trailing: " + shape_str(cs) + " is not a suffix of " +
                         shape_str(xs));
  }
  const std::size_t inner = c.size();
  const std::size_t outer = x.size() / inner;
  Tensor<T> y(xs);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      y[o * inner + i] = x.value()[o * inner + i] + c.value()[i];
  return record<T>("add_trailing", std::move(y), {x, c}, [outer, inner](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (auto* pc = self.input(1)) {
      T* g = pc->grad_ref().ptr();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i];
    }
  });
}

template <typename T>
Var<T> neg_exp(const Var<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = -std::exp(x.value()[i]);
  return record<T>("neg_exp", std::move(y), {x}, [](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * self.value[i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return record<T>("reshape", std::move(y), {x}, [](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

namespace {

// Gathers src (shape `in`) into dst laid out as permute(axes); if `scatter_add`
// is set, the roles flip and dst-shaped data is accumulated back into src.
template <typename T>
void permute_copy(const Shape& in, const std::vector<std::size_t>& axes, const T* src,
                  T* dst, bool scatter_add) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out(rank);
  std::vector<std::size_t> stride_of_out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[axes[i]];
    stride_of_out[i] = in_strides[axes[i]];
  }
  const std::size_t total = numel(in);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src_off = 0;
  for (std::size_t o = 0; o < total; ++o) {
    if (scatter_add) {
      const_cast<T*>(src)[src_off] += dst[o];
    } else {
      dst[o] = src[src_off];
    }
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++idx[axis] < out[axis]) {
        src_off += stride_of_out[axis];
        break;
      }
      src_off -= stride_of_out[axis] * (out[axis] - 1);
      idx[axis] = 0;
    }
  }
}

}  // namespace

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& xs = x.shape();
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  if (axes.size() != xs.size() ||
      std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() ||
      (!sorted.empty() && sorted.back() >= xs.size())) {
    throw DimensionError("permute: invalid axes for " + shape_str(xs));
  }
  Shape ys(xs.size());
  for (std::size_t i = 0; i < axes.size(); ++i) ys[i] = xs[axes[i]];
  Tensor<T> y(ys);
  permute_copy(xs, axes, x.value().ptr(), y.ptr(), false);
  return record<T>("permute", std::move(y), {x}, [xs, axes](Node<T>& self) {
    if (auto* px = self.input(0)) {
      permute_copy(xs, axes, px->grad_ref().ptr(), self.grad.ptr(), true);
    }
  });
}

template <typename T>
Var<T> flip(const Var<T>& x, std::size_t axis) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw DimensionError("flip: axis out of range for " + shape_str(xs));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::size_t n = xs[axis];
  auto apply = [=](const T* src, T* dst, bool add) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t t = 0; t < n; ++t) {
        const T* s = src + (o * n + t) * inner;
        T* d = dst + (o * n + (n - 1 - t)) * inner;
        for (std::size_t i = 0; i < inner; ++i) d[i] = add ? d[i] + s[i] : s[i];
      }
  };
  Tensor<T> y(xs);
  apply(x.value().ptr(), y.ptr(), false);
  return record<T>("flip", std::move(y), {x}, [apply](Node<T>& self) {
    if (auto* px = self.input(0)) apply(self.grad.ptr(), px->grad_ref().ptr(), true);
  });
}

template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t start, std::size_t length) {
  const Shape& xs = x.shape();
  if (xs.empty() || start + length > xs.back() || length == 0) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         shape_str(xs));
  }
  const std::size_t cols = xs.back();
  const std::size_t rows = rows_of(xs);
  Shape ys = xs;
  ys.back() = length;
  Tensor<T> y(ys);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().ptr() + r * cols + start, length, y.ptr() + r * length);
  return record<T>("slice_last", std::move(y), {x}, [=](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < length; ++j)
          g[r * cols + start + j] += self.grad[r * length + j];
    }
  });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() || as.empty() ||
      !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    throw DimensionError("concat_last: " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t ca = as.back(), cb = bs.back(), rows = rows_of(as);
  Shape ys = as;
  ys.back() = ca + cb;
  Tensor<T> y(ys);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().ptr() + r * ca, ca, y.ptr() + r * (ca + cb));
    std::copy_n(b.value().ptr() + r * cb, cb, y.ptr() + r * (ca + cb) + ca);
  }
  return record<T>("concat", std::move(y), {a, b}, [=](Node<T>& self) {
    if (auto* pa = self.input(0)) {
      T* g = pa->grad_ref().ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += self.grad[r * (ca + cb) + j];
    }
    if (auto* pb = self.input(1)) {
      T* g = pb->grad_ref().ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cb; ++j) g[r * cb + j] += self.grad[r * (ca + cb) + ca + j];
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3) {
    throw DimensionError("bmm: operands must be rank 3, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const std::size_t ba = as[0], bb = bs[0];
  const std::size_t m = trans_a ? as[2] : as[1];
  const std::size_t k = trans_a ? as[1] : as[2];
  const std::size_t kb = trans_b ? bs[2] : bs[1];
  const std::size_t n = trans_b ? bs[1] : bs[2];
  const std::size_t batch = std::max(ba, bb);
  if (k != kb || batch % ba != 0 || batch % bb != 0) {
    throw DimensionError("bmm: incompatible operands " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  const std::size_t a_step = as[1] * as[2], b_step = bs[1] * bs[2];
  Tensor<T> y({batch, m, n});
  parallel_for(batch, m * n * k, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      gemm<T>(trans_a, trans_b, m, n, k, a.value().ptr() + (i % ba) * a_step,
              b.value().ptr() + (i % bb) * b_step, y.ptr() + i * m * n, false);
    }
  });
  return record<T>("bmm", std::move(y), {a, b}, [=](Node<T>& self) {
    const T* av = self.parents[0]->value.ptr();
    const T* bv = self.parents[1]->value.ptr();
    const T* g = self.grad.ptr();
    Node<T>* pa = self.input(0);
    Node<T>* pb = self.input(1);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = g + i * m * n;
      const T* ai = av + (i % ba) * a_step;
      const T* bi = bv + (i % bb) * b_step;
      if (pa) {
        T* ga = pa->grad_ref().ptr() + (i % ba) * a_step;
        // C = opA opB: d(opA) = G opB^T.
        if (!trans_a) {
          gemm<T>(false, !trans_b, m, k, n, gi, bi, ga, true);
        } else {
          gemm<T>(trans_b, true, k, m, n, bi, gi, ga, true);
        }
      }
      if (pb) {
        T* gb = pb->grad_ref().ptr() + (i % bb) * b_step;
        // d(opB) = opA^T G.
        if (!trans_b) {
          gemm<T>(!trans_a, false, k, n, m, ai, gi, gb, true);
        } else {
          gemm<T>(true, trans_a, n, k, m, gi, ai, gb, true);
        }
      }
    }
  });
}

template <typename T>
Var<T> series_affine(const Var<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || scale.shape() != Shape{xs[0], xs[2]} || shift.shape() != scale.shape()) {
    throw DimensionError("series_affine: input " + shape_str(xs) + " vs scale " +
                         shape_str(scale.shape()) + ", shift " + shape_str(shift.shape()));
  }
  const std::size_t nb = xs[0], nt = xs[1], nv = xs[2];
  Tensor<T> y(xs);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < nt; ++t)
      for (std::size_t v = 0; v < nv; ++v) {
        const std::size_t i = (b * nt + t) * nv + v;
        y[i] = x.value()[i] * scale[b * nv + v] + shift[b * nv + v];
      }
  return record<T>("series_affine", std::move(y), {x}, [=](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t t = 0; t < nt; ++t)
          for (std::size_t v = 0; v < nv; ++v) {
            const std::size_t i = (b * nt + t) * nv + v;
            g[i] += self.grad[i] * scale[b * nv + v];
          }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double total = 0;
  for (auto v : x.value().data()) total += v;
  return record<T>("sum", Tensor<T>({1}, {static_cast<T>(total)}), {x}, [](Node<T>& self) {
    if (auto* px = self.input(0)) {
      T* g = px->grad_ref().ptr();
      for (std::size_t i = 0; i < px->value.size(); ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w) {
  require_same_shape(x.shape(), w.shape(), "weighted_sum");
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) total += static_cast<double>(x.value()[i]) * w[i];
  return record<T>("weighted_sum", Tensor<T>({1}, {static_cast<T>(total)}), {x},
                   [w](Node<T>& self) {
                     if (auto* px = self.input(0)) {
                       T* g = px->grad_ref().ptr();
                       for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
                     }
                   });
}

template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Tensor<T>& target) {
  require_same_shape(prediction.shape(), target.shape(), "mse_loss");
  const std::size_t n = target.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(prediction.value()[i]) - target[i];
    total += d * d;
  }
  return record<T>("mse_loss", Tensor<T>({1}, {static_cast<T>(total / n)}), {prediction},
                   [target, n](Node<T>& self) {
                     if (auto* pp = self.input(0)) {
                       T* g = pp->grad_ref().ptr();
                       const T factor = self.grad[0] * T{2} / static_cast<T>(n);
                       for (std::size_t i = 0; i < n; ++i)
                         g[i] += factor * (pp->value[i] - target[i]);
                     }
                   });
}

#define DCM_INSTANTIATE_OPS(T)                                                         \
  template Var<T> affine(const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> activation(Activation, const Var<T>&);                               \
  template Var<T> softmax_rows(const Var<T>&);                                         \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);          \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, Conv1dSpec);     \
  template Var<T> dropout(const Var<T>&, double, Mode, Rng&);                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                   \
  template Var<T> scale(const Var<T>&, T);                                             \
  template Var<T> add_trailing(const Var<T>&, const Var<T>&);                          \
  template Var<T> neg_exp(const Var<T>&);                                              \
  template Var<T> reshape(const Var<T>&, Shape);                                       \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);             \
  template Var<T> flip(const Var<T>&, std::size_t);                                    \
  template Var<T> slice_last(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> concat_last(const Var<T>&, const Var<T>&);                           \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool, bool);                       \
  template Var<T> series_affine(const Var<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Var<T> sum(const Var<T>&);                                                  \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                       \
  template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);

DCM_INSTANTIATE_OPS(float)
DCM_INSTANTIATE_OPS(double)

}  // namespace ops

template Tensor<float> positional_encoding(std::size_t, std::size_t);
template Tensor<double> positional_encoding(std::size_t, std::size_t);
template void gemm(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                   const float*, float*, bool);
template void gemm(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                   const double*, double*, bool);

}  // namespace dcm
