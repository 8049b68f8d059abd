#pragma once

#include <cstddef>
#include <vector>

#include "dcm/autodiff.hpp"
#include "dcm/rng.hpp"
#include "dcm/tensor.hpp"

namespace dcm {

enum class Mode { train, eval };

enum class Activation { relu, silu, softplus };

/// Learnable y = x W + b, with W stored [in, out].
template <typename T>
struct AffineParams {
  Var<T> weight;
  Var<T> bias;  // may be undefined for bias-free projections

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct Conv1dSpec {
  std::size_t groups = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
};

namespace ops {

/// y[..., j] = sum_i x[..., i] W[i, j] + b[j].
template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T>
Var<T> affine(const Var<T>& x, const AffineParams<T>& p) {
  return affine(x, p.weight, p.bias);
}

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x) { return activation(Activation::relu, x); }
template <typename T>
Var<T> silu(const Var<T>& x) { return activation(Activation::silu, x); }
template <typename T>
Var<T> softplus(const Var<T>& x) { return activation(Activation::softplus, x); }

/// Max-shifted softmax over the last axis.
template <typename T>
Var<T> softmax_rows(const Var<T>& x);

/// Normalizes the last axis with population variance, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5));

/// Grouped cross-correlation. x [B, C_in, L], weight [C_out, C_in/groups, K],
/// bias [C_out] (optional). Output length L + pad_left + pad_right - K + 1.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              Conv1dSpec spec);

/// Inverted dropout. Identity (same handle) in eval mode or when p == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Mode mode, Rng& rng);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
/// x + c where c's shape equals the trailing dims of x.
template <typename T>
Var<T> add_trailing(const Var<T>& x, const Var<T>& c);
/// -exp(x), elementwise.
template <typename T>
Var<T> neg_exp(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
/// out.shape[i] = x.shape[axes[i]].
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes of a rank-3 tensor.
template <typename T>
Var<T> transpose12(const Var<T>& x) { return permute(x, {0, 2, 1}); }
template <typename T>
Var<T> flip(const Var<T>& x, std::size_t axis);
template <typename T>
Var<T> slice_last(const Var<T>& x, std::size_t start, std::size_t length);
template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b);

/// Batched matmul op(a) op(b) over rank-3 operands. Batch sizes may differ
/// when one divides the other; operand i uses batch index (i mod its batch).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false,
           bool trans_b = false);

/// x[b, t, v] * scale[b, v] + shift[b, v]; gradient flows to x only.
template <typename T>
Var<T> series_affine(const Var<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);

template <typename T>
Var<T> sum(const Var<T>& x);
/// sum(x * w) for a constant w of the same shape.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w);
/// Mean squared error against a constant target, accumulated in double.
template <typename T>
Var<T> mse_loss(const Var<T>& prediction, const Tensor<T>& target);

}  // namespace ops

/// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/D)), PE[pos, 2i+1] = cos(.).
/// D must be even.
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d_model);

/// Raw row-major product C (+)= op(A) op(B) with C [M, N]. Exposed for the
/// scan and attention kernels that work on plain tensors.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace dcm
