#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dcm/attention.hpp"
#include "dcm/ssm.hpp"

namespace dcm {

enum class NormMode { dataset, instance };

/// Which tokenization feeds each encoder channel.
enum class Variant { full, no_v_encoder, no_t_encoder, swapped, both_independent, both_mixing };

std::string to_string(Variant v);
std::string to_string(NormMode m);
Variant parse_variant(const std::string& name);
NormMode parse_norm_mode(const std::string& name);
std::vector<Variant> all_variants();

enum class Tokens { none, temporal, variable };

/// Token layout per encoder channel for a variant.
struct ChannelLayout {
  Tokens attention;  // input of the Linformer channel
  Tokens mamba;      // input of the Bi-Mamba channel
};
ChannelLayout channel_layout(Variant v);

struct ModelConfig {
  std::size_t lookback = 96;    // L
  std::size_t horizon = 96;     // W
  std::size_t n_vars = 0;       // V
  std::size_t d_model = 128;    // D
  std::size_t e_layers = 2;     // N
  std::size_t d_state = 16;
  std::size_t k = 0;            // Linformer slots, 0 selects min(seq, 64)
  std::size_t heads = 0;        // 0 selects 8 (1 when D < 8)
  std::size_t d_ff = 0;         // 0 selects 4 D
  double dropout = 0.1;
  std::size_t expand = 2;
  std::size_t d_conv = 4;
  std::size_t dt_rank = 0;
  bool share_ef = false;
  bool share_bimamba = false;
  NormMode norm = NormMode::dataset;
  Variant variant = Variant::full;
  ssm::ScanKind scan = ssm::ScanKind::parallel;

  void validate() const;
  ssm::MambaBlockConfig mamba() const;
  attn::TEncoderConfig t_encoder(std::size_t seq_len) const;
  /// Number of tokens for a tokenization (L for temporal, V for variable).
  std::size_t token_count(Tokens t) const;
};

template <typename T>
struct VEncoderLayerParams {
  ssm::BiMambaParams<T> bimamba;
  LayerNormParams<T> norm1;
  LayerNormParams<T> norm2;
  attn::MlpParams<T> mlp;

  static VEncoderLayerParams init(const ModelConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Two-layer ReLU MLP used by both embeddings and by fusion.
template <typename T>
struct TwoLayer {
  AffineParams<T> first;
  AffineParams<T> second;

  static TwoLayer init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct DcMamberParams {
  // Attention channel.
  std::optional<TwoLayer<T>> attn_embed;
  std::vector<attn::TEncoderLayerParams<T>> attn_layers;
  std::optional<AffineParams<T>> attn_align;  // L -> V when it consumes temporal tokens
  // Bi-Mamba channel.
  std::optional<TwoLayer<T>> mamba_embed;
  std::vector<VEncoderLayerParams<T>> mamba_layers;
  std::optional<AffineParams<T>> mamba_align;
  // Head.
  TwoLayer<T> fusion;
  LayerNormParams<T> fusion_norm;
  AffineParams<T> projector;  // D -> W

  static DcMamberParams init(const ModelConfig& cfg, std::uint64_t seed);
  ParamList<T> parameters() const;
};

template <typename T>
struct FeatureMaps {
  Var<T> m_tem;          // [B, L, D] temporal-token output (undefined if absent)
  Var<T> m_var;          // [B, V, D] variable-token output (undefined if absent)
  Var<T> m_tem_aligned;  // [B, V, D]
  Var<T> attn_out;       // attention-channel output before alignment
  Var<T> mamba_out;      // Bi-Mamba-channel output before alignment
};

/// X [B, L, V] + PE, then ReLU(x W1 + b1) W2 + b2 along V.
template <typename T>
Var<T> t_embedding(const Var<T>& x, const TwoLayer<T>& p);
/// permute to [B, V, L], then ReLU(x W1 + b1) W2 + b2 along L.
template <typename T>
Var<T> v_embedding(const Var<T>& x, const TwoLayer<T>& p);
/// X0 = X + Dropout(BiMamba(X)); X1 = LN(X0); out = LN(X1 + MLP(X1)).
template <typename T>
Var<T> v_encoder_layer(const Var<T>& x, const ModelConfig& cfg, const VEncoderLayerParams<T>& p,
                       Mode mode, Rng& rng);
/// [B, L, D] -> [B, D, L] -> affine L->V -> [B, V, D].
template <typename T>
Var<T> align_temporal(const Var<T>& m_tem, const AffineParams<T>& p);
/// LN(ReLU([a, b] W1 + b1) W2 + b2) with `a` in features [0, D).
template <typename T>
Var<T> feature_fusion(const Var<T>& aligned_tem, const Var<T>& m_var, const TwoLayer<T>& p,
                      const LayerNormParams<T>& norm);

template <typename T>
class DcMamber {
 public:
  DcMamber(ModelConfig cfg, DcMamberParams<T> params);

  const ModelConfig& config() const { return cfg_; }
  const DcMamberParams<T>& params() const { return params_; }
  DcMamberParams<T>& params() { return params_; }
  ParamList<T> parameters() const { return params_.parameters(); }

  /// X [B, L, V] -> forecast [B, W, V]. Eval mode never draws from `rng`.
  Var<T> forward(const Var<T>& x, Mode mode, Rng& rng, FeatureMaps<T>* maps = nullptr) const;
  /// Eval-mode forecast without gradient recording.
  Tensor<T> predict(const Tensor<T>& x) const;

 private:
  ModelConfig cfg_;
  DcMamberParams<T> params_;
};

}  // namespace dcm
