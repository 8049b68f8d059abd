#pragma once

#include <cstddef>
#include <string>

#include "dcm/ops.hpp"
#include "dcm/params.hpp"

namespace dcm::attn {

struct LinformerConfig {
  std::size_t d_model = 0;
  std::size_t seq_len = 0;   // L the E/F projections are built for
  std::size_t k = 0;         // 0 selects min(L, 64)
  std::size_t heads = 0;     // 0 selects 8, or 1 when d_model < 8
  bool share_ef = false;     // one E/F pair for all heads

  std::size_t slots() const;
  std::size_t head_count() const;
  std::size_t head_dim() const { return d_model / head_count(); }
  void validate() const;
};

template <typename T>
struct LinformerParams {
  Var<T> e;  // [H_e, k, L], H_e = heads or 1 when shared
  Var<T> f;  // [H_e, k, L]
  AffineParams<T> q, k, v, out;  // D -> D each, with bias

  static LinformerParams init(const LinformerConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out_list, const std::string& prefix) const;
  void check(const LinformerConfig& cfg) const;
};

/// Position-wise feed-forward stack built from two kernel-1 convolutions.
template <typename T>
struct MlpParams {
  Var<T> w1;  // [d_ff, D, 1]
  Var<T> b1;  // [d_ff]
  Var<T> w2;  // [D, d_ff, 1]
  Var<T> b2;  // [D]

  static MlpParams init(std::size_t d_model, std::size_t d_ff, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

struct TEncoderConfig {
  LinformerConfig attention;
  std::size_t d_ff = 0;  // 0 selects 4 * d_model
  double dropout = 0.1;

  std::size_t ff_width() const { return d_ff ? d_ff : 4 * attention.d_model; }
};

template <typename T>
struct TEncoderLayerParams {
  LinformerParams<T> attention;
  LayerNormParams<T> norm1;
  LayerNormParams<T> norm2;
  MlpParams<T> mlp;

  static TEncoderLayerParams init(const TEncoderConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Low-rank self-attention over X [B, L, D]. When `probabilities` is non-null
/// it receives the softmax weights, shaped [B * heads, L, k].
template <typename T>
Var<T> linear_attention(const Var<T>& x, const LinformerConfig& cfg, const LinformerParams<T>& p,
                        Tensor<T>* probabilities = nullptr);

/// Reference O(L^2) multi-head attention using the same Q/K/V/out weights.
template <typename T>
Tensor<T> dense_attention(const Tensor<T>& x, const LinformerConfig& cfg,
                          const LinformerParams<T>& p);

/// [B, L, D] -> conv(D->d_ff) -> dropout -> ReLU -> conv(d_ff->D) -> dropout.
template <typename T>
Var<T> mlp_block(const Var<T>& x, const MlpParams<T>& p, double dropout, Mode mode, Rng& rng);

/// X0 = X + Dropout(attn(X)); X1 = LN(X0); out = LN(X1 + MLP(X1)).
template <typename T>
Var<T> t_encoder_layer(const Var<T>& x, const TEncoderConfig& cfg,
                       const TEncoderLayerParams<T>& p, Mode mode, Rng& rng);

}  // namespace dcm::attn
