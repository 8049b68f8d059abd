#pragma once

#include <cstddef>

#include "dcm/ops.hpp"
#include "dcm/params.hpp"

namespace dcm::ssm {

enum class ScanKind { sequential, parallel };

/// Shapes of one selective-SSM block. Inner width is expand * d_model.
struct MambaBlockConfig {
  std::size_t d_model = 0;
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t d_conv = 4;
  std::size_t dt_rank = 0;  // 0 selects ceil(d_model / 16)

  std::size_t inner() const { return expand * d_model; }
  std::size_t rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
  void validate() const;
};

template <typename T>
struct MambaBlockParams {
  AffineParams<T> in_proj;   // D -> 2*ED, no bias; first half x, second half z
  Var<T> conv_weight;        // [ED, 1, d_conv], depthwise
  Var<T> conv_bias;          // [ED]
  AffineParams<T> b_proj;    // ED -> N
  AffineParams<T> c_proj;    // ED -> N
  AffineParams<T> dt_down;   // ED -> rank
  AffineParams<T> dt_up;     // rank -> ED; its bias is the step-size offset
  Var<T> a_log;              // [ED, N], A = -exp(a_log)
  AffineParams<T> out_proj;  // ED -> D

  static MambaBlockParams init(const MambaBlockConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
  void check(const MambaBlockConfig& cfg) const;
};

template <typename T>
struct BiMambaParams {
  MambaBlockParams<T> forward;
  MambaBlockParams<T> backward;
  bool shared = false;  // backward direction reuses `forward`

  static BiMambaParams init(const MambaBlockConfig& cfg, bool shared, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Zero-order-hold pair for one (channel, state) entry.
template <typename T>
struct ZohPair {
  T a_bar;
  T b_bar;
};

/// |delta * a| below this uses the first-order limit b_bar = delta * b.
inline constexpr double kZohLimit = 1e-6;

/// a_bar = exp(delta a), b_bar = ((exp(delta a) - 1) / a) b.
template <typename T>
ZohPair<T> discretize(T delta, T a, T b);

/// Discretized scan inputs, both [B, T, C, N]; b_bar_x already carries x.
template <typename T>
struct SsmDiscretization {
  Tensor<T> a_bar;
  Tensor<T> b_bar_x;
};

/// delta, x: [B, T, C]; a: [C, N]; b: [B, T, N].
template <typename T>
SsmDiscretization<T> discretize(const Tensor<T>& delta, const Tensor<T>& a,
                                const Tensor<T>& b, const Tensor<T>& x);

/// h_t = a_bar_t * h_{t-1} + b_bar_x_t (h_{-1} = 0), y_t[c] = sum_n C_t[n] h_t[c, n].
/// a_bar, b_bar_x: [B, T, C, N]; c: [B, T, N]; returns [B, T, C].
template <typename T>
Tensor<T> selective_scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar_x,
                                    const Tensor<T>& c);

/// Same recurrence evaluated as a Blelloch up/down sweep over the associative
/// operator (a1, b1) o (a2, b2) = (a2 a1, a2 b1 + b2).
template <typename T>
Tensor<T> selective_scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar_x,
                                  const Tensor<T>& c);

/// Differentiable discretize + scan. x, delta: [B, T, C]; a: [C, N];
/// b, c: [B, T, N]. Returns y [B, T, C].
template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a,
                      const Var<T>& b, const Var<T>& c, ScanKind kind);

/// One Mamba block over the token axis of X [B, V, D]. Shape-preserving.
template <typename T>
Var<T> mamba_block(const Var<T>& x, const MambaBlockConfig& cfg,
                   const MambaBlockParams<T>& params, ScanKind kind = ScanKind::parallel);

/// Forward block plus the backward block run on the token-reversed input
/// (its output reversed back); the two are summed.
template <typename T>
Var<T> bi_mamba(const Var<T>& x, const MambaBlockConfig& cfg, const BiMambaParams<T>& params,
                ScanKind kind = ScanKind::parallel);

}  // namespace dcm::ssm
