#include "dcm/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcm::attn {

std::size_t LinformerConfig::slots() const { return k ? k : std::min<std::size_t>(seq_len, 64); }

std::size_t LinformerConfig::head_count() const {
  if (heads) return heads;
  return d_model < 8 ? 1 : 8;
}

void LinformerConfig::validate() const {
  if (d_model == 0 || seq_len == 0) {
    throw std::invalid_argument("linformer: d_model and sequence length must be >= 1");
  }
  if (slots() > seq_len) {
    throw std::invalid_argument("linformer: k=" + std::to_string(slots()) +
                                " exceeds sequence length " + std::to_string(seq_len));
  }
  if (d_model % head_count() != 0) {
    throw std::invalid_argument("linformer: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(head_count()));
  }
}

template <typename T>
LinformerParams<T> LinformerParams<T>::init(const LinformerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t he = cfg.share_ef ? 1 : cfg.head_count();
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.seq_len));
  LinformerParams p;
  p.e = uniform_param<T>({he, cfg.slots(), cfg.seq_len}, bound, rng);
  p.f = uniform_param<T>({he, cfg.slots(), cfg.seq_len}, bound, rng);
  p.q = init_affine<T>(cfg.d_model, cfg.d_model, true, rng);
  p.k = init_affine<T>(cfg.d_model, cfg.d_model, true, rng);
  p.v = init_affine<T>(cfg.d_model, cfg.d_model, true, rng);
  p.out = init_affine<T>(cfg.d_model, cfg.d_model, true, rng);
  return p;
}

template <typename T>
void LinformerParams<T>::collect(ParamList<T>& out_list, const std::string& prefix) const {
  dcm::collect(out_list, prefix + ".E", e);
  dcm::collect(out_list, prefix + ".F", f);
  dcm::collect(out_list, prefix + ".q", q);
  dcm::collect(out_list, prefix + ".k", k);
  dcm::collect(out_list, prefix + ".v", v);
  dcm::collect(out_list, prefix + ".out", out);
}

template <typename T>
void LinformerParams<T>::check(const LinformerConfig& cfg) const {
  const Shape ef{cfg.share_ef ? 1 : cfg.head_count(), cfg.slots(), cfg.seq_len};
  if (!e.defined() || e.shape() != ef || !f.defined() || f.shape() != ef) {
    throw DimensionError("linformer: E/F expected " + shape_str(ef) + ", got " +
                         (e.defined() ? shape_str(e.shape()) : "undefined"));
  }
  const Shape sq{cfg.d_model, cfg.d_model};
  for (const auto* a : {&q, &k, &v, &out}) {
    if (a->weight.shape() != sq) {
      throw DimensionError("linformer: projection expected " + shape_str(sq) + ", got " +
                           shape_str(a->weight.shape()));
    }
  }
}

namespace {

// [B, L, D] -> [B * H, L, D / H]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (heads == 1) return x;
  const Var<T> r = ops::reshape(x, {b, l, heads, d / heads});
  return ops::reshape(ops::permute(r, {0, 2, 1, 3}), {b * heads, l, d / heads});
}

// [B * H, L, d] -> [B, L, H * d]
template <typename T>
Var<T> merge_heads(const Var<T>& x, std::size_t batch, std::size_t heads) {
  if (heads == 1) return x;
  const std::size_t l = x.dim(1), d = x.dim(2);
  const Var<T> r = ops::reshape(x, {batch, heads, l, d});
  return ops::reshape(ops::permute(r, {0, 2, 1, 3}), {batch, l, heads * d});
}

}  // namespace

template <typename T>
Var<T> linear_attention(const Var<T>& x, const LinformerConfig& cfg, const LinformerParams<T>& p,
                        Tensor<T>* probabilities) {
  if (x.shape().size() != 3 || x.dim(2) != cfg.d_model) {
    throw DimensionError("linear_attention: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(cfg.d_model));
  }
  if (x.dim(1) != cfg.seq_len) {
    throw DimensionError("linear_attention: sequence length " + std::to_string(x.dim(1)) +
                         " but projections were built for L=" + std::to_string(cfg.seq_len));
  }
  p.check(cfg);
  const std::size_t batch = x.dim(0), heads = cfg.head_count();
  const Var<T> q = split_heads(ops::affine(x, p.q), heads);
  const Var<T> k = split_heads(ops::affine(x, p.k), heads);
  const Var<T> v = split_heads(ops::affine(x, p.v), heads);
  // Batch index b * H + h picks E[h] (or E[0] when shared) via modular broadcast.
  const Var<T> k_proj = ops::bmm(p.e, k);
  const Var<T> v_proj = ops::bmm(p.f, v);
  const T inv_sqrt_d = T{1} / std::sqrt(static_cast<T>(cfg.head_dim()));
  const Var<T> scores = ops::scale(ops::bmm(q, k_proj, false, true), inv_sqrt_d);
  const Var<T> probs = ops::softmax_rows(scores);
  if (probabilities) *probabilities = probs.value();
  const Var<T> heads_out = ops::bmm(probs, v_proj);
  return ops::affine(merge_heads(heads_out, batch, heads), p.out);
}

template <typename T>
Tensor<T> dense_attention(const Tensor<T>& x, const LinformerConfig& cfg,
                          const LinformerParams<T>& p) {
  NoGradGuard guard;
  const std::size_t batch = x.dim(0), len = x.dim(1), heads = cfg.head_count();
  const std::size_t hd = cfg.d_model / heads;
  const Var<T> xv(x);
  const Tensor<T> q = ops::affine(xv, p.q).value();
  const Tensor<T> k = ops::affine(xv, p.k).value();
  const Tensor<T> v = ops::affine(xv, p.v).value();
  Tensor<T> concat({batch, len, cfg.d_model});
  std::vector<double> w(len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < len; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < len; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < hd; ++c) {
            const std::size_t col = h * hd + c;
            s += double(q[(b * len + i) * cfg.d_model + col]) *
                 double(k[(b * len + j) * cfg.d_model + col]);
          }
          w[j] = s * scale;
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (auto& wj : w) z += (wj = std::exp(wj - mx));
        for (std::size_t c = 0; c < hd; ++c) {
          const std::size_t col = h * hd + c;
          double acc = 0;
          for (std::size_t j = 0; j < len; ++j) {
            acc += w[j] / z * double(v[(b * len + j) * cfg.d_model + col]);
          }
          concat[(b * len + i) * cfg.d_model + col] = static_cast<T>(acc);
        }
      }
    }
  }
  return ops::affine(Var<T>(concat), p.out).value();
}

template <typename T>
MlpParams<T> MlpParams<T>::init(std::size_t d_model, std::size_t d_ff, Rng& rng) {
  MlpParams p;
  p.w1 = uniform_param<T>({d_ff, d_model, 1}, 1.0 / std::sqrt(double(d_model)), rng);
  p.b1 = constant_param<T>({d_ff}, T{0});
  p.w2 = uniform_param<T>({d_model, d_ff, 1}, 1.0 / std::sqrt(double(d_ff)), rng);
  p.b2 = constant_param<T>({d_model}, T{0});
  return p;
}

template <typename T>
void MlpParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  dcm::collect(out, prefix + ".conv1.weight", w1);
  dcm::collect(out, prefix + ".conv1.bias", b1);
  dcm::collect(out, prefix + ".conv2.weight", w2);
  dcm::collect(out, prefix + ".conv2.bias", b2);
}

template <typename T>
TEncoderLayerParams<T> TEncoderLayerParams<T>::init(const TEncoderConfig& cfg, Rng& rng) {
  TEncoderLayerParams p;
  p.attention = LinformerParams<T>::init(cfg.attention, rng);
  p.norm1 = init_layer_norm<T>(cfg.attention.d_model);
  p.norm2 = init_layer_norm<T>(cfg.attention.d_model);
  p.mlp = MlpParams<T>::init(cfg.attention.d_model, cfg.ff_width(), rng);
  return p;
}

template <typename T>
void TEncoderLayerParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  attention.collect(out, prefix + ".attn");
  dcm::collect(out, prefix + ".norm1", norm1);
  dcm::collect(out, prefix + ".norm2", norm2);
  mlp.collect(out, prefix + ".mlp");
}

template <typename T>
Var<T> mlp_block(const Var<T>& x, const MlpParams<T>& p, double dropout, Mode mode, Rng& rng) {
  const Var<T> xt = ops::transpose12(x);
  Var<T> h = ops::conv1d(xt, p.w1, p.b1, Conv1dSpec{});
  h = ops::relu(ops::dropout(h, dropout, mode, rng));
  h = ops::conv1d(h, p.w2, p.b2, Conv1dSpec{});
  h = ops::dropout(h, dropout, mode, rng);
  return ops::transpose12(h);
}

template <typename T>
Var<T> t_encoder_layer(const Var<T>& x, const TEncoderConfig& cfg,
                       const TEncoderLayerParams<T>& p, Mode mode, Rng& rng) {
  const Var<T> a = linear_attention(x, cfg.attention, p.attention);
  const Var<T> x0 = ops::add(x, ops::dropout(a, cfg.dropout, mode, rng));
  const Var<T> x1 = layer_norm(x0, p.norm1);
  return layer_norm(ops::add(x1, mlp_block(x1, p.mlp, cfg.dropout, mode, rng)), p.norm2);
}

#define DCM_INSTANTIATE_ATTN(T)                                                               \
  template struct LinformerParams<T>;                                                         \
  template struct MlpParams<T>;                                                               \
  template struct TEncoderLayerParams<T>;                                                     \
  template Var<T> linear_attention(const Var<T>&, const LinformerConfig&,                     \
                                   const LinformerParams<T>&, Tensor<T>*);                    \
  template Tensor<T> dense_attention(const Tensor<T>&, const LinformerConfig&,                \
                                     const LinformerParams<T>&);                              \
  template Var<T> mlp_block(const Var<T>&, const MlpParams<T>&, double, Mode, Rng&);          \
  template Var<T> t_encoder_layer(const Var<T>&, const TEncoderConfig&,                       \
                                  const TEncoderLayerParams<T>&, Mode, Rng&);

DCM_INSTANTIATE_ATTN(float)
DCM_INSTANTIATE_ATTN(double)

}  // namespace dcm::attn
