#include "dcm/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dcm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_v_encoder: return "no_v_encoder";
    case Variant::no_t_encoder: return "no_t_encoder";
    case Variant::swapped: return "swapped";
    case Variant::both_independent: return "both_independent";
    case Variant::both_mixing: return "both_mixing";
  }
  return "?";
}

std::string to_string(NormMode m) { return m == NormMode::dataset ? "dataset" : "instance"; }

std::vector<Variant> all_variants() {
  return {Variant::full,    Variant::no_v_encoder,     Variant::no_t_encoder,
          Variant::swapped, Variant::both_independent, Variant::both_mixing};
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown ablation variant '" + name +
                              "' (expected full, no_v_encoder, no_t_encoder, swapped, "
                              "both_independent, both_mixing)");
}

NormMode parse_norm_mode(const std::string& name) {
  if (name == "dataset") return NormMode::dataset;
  if (name == "instance") return NormMode::instance;
  throw std::invalid_argument("unknown norm mode '" + name + "' (expected dataset or instance)");
}

ChannelLayout channel_layout(Variant v) {
  switch (v) {
    case Variant::full: return {Tokens::temporal, Tokens::variable};
    case Variant::no_v_encoder: return {Tokens::temporal, Tokens::none};
    case Variant::no_t_encoder: return {Tokens::none, Tokens::variable};
    case Variant::swapped: return {Tokens::variable, Tokens::temporal};
    case Variant::both_independent: return {Tokens::variable, Tokens::variable};
    case Variant::both_mixing: return {Tokens::temporal, Tokens::temporal};
  }
  throw std::logic_error("channel_layout: bad variant");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  };
  positive(lookback, "lookback");
  positive(horizon, "horizon");
  positive(n_vars, "n_vars");
  positive(d_model, "d_model");
  positive(e_layers, "e_layers");
  positive(d_state, "d_state");
  positive(expand, "expand");
  positive(d_conv, "d_conv");
  if (d_model % 2 != 0) {
    throw std::invalid_argument("model config: d_model must be even, got " +
                                std::to_string(d_model));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw std::invalid_argument("model config: dropout must lie in [0, 1)");
  }
  const ChannelLayout layout = channel_layout(variant);
  if (layout.attention != Tokens::none) t_encoder(token_count(layout.attention)).attention.validate();
  mamba().validate();
}

std::size_t ModelConfig::token_count(Tokens t) const {
  return t == Tokens::temporal ? lookback : n_vars;
}

ssm::MambaBlockConfig ModelConfig::mamba() const {
  return {d_model, d_state, expand, d_conv, dt_rank};
}

attn::TEncoderConfig ModelConfig::t_encoder(std::size_t seq_len) const {
  attn::TEncoderConfig c;
  c.attention.d_model = d_model;
  c.attention.seq_len = seq_len;
  c.attention.k = k ? std::min(k, seq_len) : 0;
  c.attention.heads = heads;
  c.attention.share_ef = share_ef;
  c.d_ff = d_ff;
  c.dropout = dropout;
  return c;
}

template <typename T>
TwoLayer<T> TwoLayer<T>::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {init_affine<T>(in, hidden, true, rng), init_affine<T>(hidden, out, true, rng)};
}

template <typename T>
void TwoLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  dcm::collect(out, prefix + ".fc1", first);
  dcm::collect(out, prefix + ".fc2", second);
}

template <typename T>
VEncoderLayerParams<T> VEncoderLayerParams<T>::init(const ModelConfig& cfg, Rng& rng) {
  VEncoderLayerParams p;
  p.bimamba = ssm::BiMambaParams<T>::init(cfg.mamba(), cfg.share_bimamba, rng);
  p.norm1 = init_layer_norm<T>(cfg.d_model);
  p.norm2 = init_layer_norm<T>(cfg.d_model);
  p.mlp = attn::MlpParams<T>::init(cfg.d_model, cfg.d_ff ? cfg.d_ff : 4 * cfg.d_model, rng);
  return p;
}

template <typename T>
void VEncoderLayerParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  bimamba.collect(out, prefix + ".bimamba");
  dcm::collect(out, prefix + ".norm1", norm1);
  dcm::collect(out, prefix + ".norm2", norm2);
  mlp.collect(out, prefix + ".mlp");
}

namespace {

template <typename T>
TwoLayer<T> init_embedding(const ModelConfig& cfg, Tokens tokens, Rng& rng) {
  const std::size_t in = tokens == Tokens::temporal ? cfg.n_vars : cfg.lookback;
  return TwoLayer<T>::init(in, cfg.d_model, cfg.d_model, rng);
}

}  // namespace

template <typename T>
DcMamberParams<T> DcMamberParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ChannelLayout layout = channel_layout(cfg.variant);
  // Component streams depend only on (seed, salt), never on which other
  // components exist.
  const auto stream = [seed](std::uint64_t salt) { return Rng(seed).fork(salt); };
  DcMamberParams p;
  if (layout.attention != Tokens::none) {
    Rng rng = stream(1);
    p.attn_embed = init_embedding<T>(cfg, layout.attention, rng);
    const auto tcfg = cfg.t_encoder(cfg.token_count(layout.attention));
    for (std::size_t i = 0; i < cfg.e_layers; ++i) {
      p.attn_layers.push_back(attn::TEncoderLayerParams<T>::init(tcfg, rng));
    }
    if (layout.attention == Tokens::temporal) {
      Rng arng = stream(2);
      p.attn_align = init_affine<T>(cfg.lookback, cfg.n_vars, true, arng);
    }
  }
  if (layout.mamba != Tokens::none) {
    Rng rng = stream(3);
    p.mamba_embed = init_embedding<T>(cfg, layout.mamba, rng);
    for (std::size_t i = 0; i < cfg.e_layers; ++i) {
      p.mamba_layers.push_back(VEncoderLayerParams<T>::init(cfg, rng));
    }
    if (layout.mamba == Tokens::temporal) {
      Rng arng = stream(4);
      p.mamba_align = init_affine<T>(cfg.lookback, cfg.n_vars, true, arng);
    }
  }
  Rng head = stream(5);
  p.fusion = TwoLayer<T>::init(2 * cfg.d_model, cfg.d_model, cfg.d_model, head);
  p.fusion_norm = init_layer_norm<T>(cfg.d_model);
  p.projector = init_affine<T>(cfg.d_model, cfg.horizon, true, head);
  return p;
}

template <typename T>
ParamList<T> DcMamberParams<T>::parameters() const {
  ParamList<T> out;
  if (attn_embed) attn_embed->collect(out, "attn.embed");
  for (std::size_t i = 0; i < attn_layers.size(); ++i) {
    attn_layers[i].collect(out, "attn.layers." + std::to_string(i));
  }
  if (attn_align) dcm::collect(out, "attn.align", *attn_align);
  if (mamba_embed) mamba_embed->collect(out, "mamba.embed");
  for (std::size_t i = 0; i < mamba_layers.size(); ++i) {
    mamba_layers[i].collect(out, "mamba.layers." + std::to_string(i));
  }
  if (mamba_align) dcm::collect(out, "mamba.align", *mamba_align);
  fusion.collect(out, "fusion");
  dcm::collect(out, "fusion.norm", fusion_norm);
  dcm::collect(out, "projector", projector);
  return out;
}

template <typename T>
Var<T> t_embedding(const Var<T>& x, const TwoLayer<T>& p) {
  if (x.shape().size() != 3 || x.dim(2) != p.first.in_features()) {
    throw DimensionError("t_embedding: input " + shape_str(x.shape()) + " expects V=" +
                         std::to_string(p.first.in_features()));
  }
  const std::size_t len = x.dim(1), v = x.dim(2);
  // The sinusoid table needs an even width; odd V uses the leading V columns.
  const Tensor<T> wide = positional_encoding<T>(len, v + (v % 2));
  Tensor<T> pe({len, v});
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j < v; ++j) pe[t * v + j] = wide[t * (v + v % 2) + j];
  const Var<T> h = ops::add_trailing(x, Var<T>(std::move(pe)));
  return ops::affine(ops::relu(ops::affine(h, p.first)), p.second);
}

template <typename T>
Var<T> v_embedding(const Var<T>& x, const TwoLayer<T>& p) {
  if (x.shape().size() != 3 || x.dim(1) != p.first.in_features()) {
    throw DimensionError("v_embedding: input " + shape_str(x.shape()) + " expects L=" +
                         std::to_string(p.first.in_features()));
  }
  return ops::affine(ops::relu(ops::affine(ops::transpose12(x), p.first)), p.second);
}

template <typename T>
Var<T> v_encoder_layer(const Var<T>& x, const ModelConfig& cfg, const VEncoderLayerParams<T>& p,
                       Mode mode, Rng& rng) {
  const Var<T> y = ssm::bi_mamba(x, cfg.mamba(), p.bimamba, cfg.scan);
  const Var<T> x0 = ops::add(x, ops::dropout(y, cfg.dropout, mode, rng));
  const Var<T> x1 = layer_norm(x0, p.norm1);
  return layer_norm(ops::add(x1, attn::mlp_block(x1, p.mlp, cfg.dropout, mode, rng)), p.norm2);
}

template <typename T>
Var<T> align_temporal(const Var<T>& m_tem, const AffineParams<T>& p) {
  return ops::transpose12(ops::affine(ops::transpose12(m_tem), p));
}

template <typename T>
Var<T> feature_fusion(const Var<T>& aligned_tem, const Var<T>& m_var, const TwoLayer<T>& p,
                      const LayerNormParams<T>& norm) {
  if (aligned_tem.shape() != m_var.shape()) {
    throw DimensionError("feature_fusion: " + shape_str(aligned_tem.shape()) + " vs " +
                         shape_str(m_var.shape()));
  }
  const Var<T> x = ops::concat_last(aligned_tem, m_var);
  return layer_norm(ops::affine(ops::relu(ops::affine(x, p.first)), p.second), norm);
}

template <typename T>
DcMamber<T>::DcMamber(ModelConfig cfg, DcMamberParams<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  const ChannelLayout layout = channel_layout(cfg_.variant);
  if ((layout.attention != Tokens::none) != params_.attn_embed.has_value() ||
      (layout.mamba != Tokens::none) != params_.mamba_embed.has_value() ||
      (layout.attention == Tokens::temporal) != params_.attn_align.has_value() ||
      (layout.mamba == Tokens::temporal) != params_.mamba_align.has_value() ||
      params_.attn_layers.size() != (params_.attn_embed ? cfg_.e_layers : 0) ||
      params_.mamba_layers.size() != (params_.mamba_embed ? cfg_.e_layers : 0)) {
    throw std::invalid_argument("model parameters do not match variant " +
                                to_string(cfg_.variant));
  }
}

template <typename T>
Var<T> DcMamber<T>::forward(const Var<T>& x_in, Mode mode, Rng& rng, FeatureMaps<T>* maps) const {
  const ModelConfig& c = cfg_;
  if (x_in.shape().size() != 3 || x_in.dim(1) != c.lookback || x_in.dim(2) != c.n_vars) {
    throw DimensionError("forward: input " + shape_str(x_in.shape()) + " but config expects [B, " +
                         std::to_string(c.lookback) + ", " + std::to_string(c.n_vars) + "]");
  }
  const std::size_t batch = x_in.dim(0), len = c.lookback, nv = c.n_vars;

  Var<T> x = x_in;
  Tensor<T> mean, stdev;
  if (c.norm == NormMode::instance) {
    mean = Tensor<T>({batch, nv});
    stdev = Tensor<T>({batch, nv});
    Tensor<T> inv({batch, nv}), shift({batch, nv});
    const Tensor<T>& xv = x_in.value();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t v = 0; v < nv; ++v) {
        double s = 0, s2 = 0;
        for (std::size_t t = 0; t < len; ++t) s += xv[(b * len + t) * nv + v];
        const double mu = s / double(len);
        for (std::size_t t = 0; t < len; ++t) {
          const double d = xv[(b * len + t) * nv + v] - mu;
          s2 += d * d;
        }
        const double sd = std::sqrt(s2 / double(len) + 1e-5);
        mean[b * nv + v] = static_cast<T>(mu);
        stdev[b * nv + v] = static_cast<T>(sd);
        inv[b * nv + v] = static_cast<T>(1.0 / sd);
        shift[b * nv + v] = static_cast<T>(-mu / sd);
      }
    }
    x = ops::series_affine(x_in, inv, shift);
  }

  auto embed = [&](Tokens tokens, const TwoLayer<T>& p) {
    return tokens == Tokens::temporal ? t_embedding(x, p) : v_embedding(x, p);
  };
  const ChannelLayout layout = channel_layout(c.variant);
  FeatureMaps<T> fm;

  Var<T> attn_block, mamba_block;
  if (layout.attention != Tokens::none) {
    Var<T> h = embed(layout.attention, *params_.attn_embed);
    const auto tcfg = c.t_encoder(c.token_count(layout.attention));
    for (const auto& layer : params_.attn_layers) h = attn::t_encoder_layer(h, tcfg, layer, mode, rng);
    fm.attn_out = h;
    attn_block = params_.attn_align ? align_temporal(h, *params_.attn_align) : h;
  }
  if (layout.mamba != Tokens::none) {
    Var<T> h = embed(layout.mamba, *params_.mamba_embed);
    for (const auto& layer : params_.mamba_layers) h = v_encoder_layer(h, c, layer, mode, rng);
    fm.mamba_out = h;
    mamba_block = params_.mamba_align ? align_temporal(h, *params_.mamba_align) : h;
  }
  const Var<T> zeros(Tensor<T>({batch, nv, c.d_model}));
  if (!attn_block.defined()) attn_block = zeros;
  if (!mamba_block.defined()) mamba_block = zeros;

  if (layout.attention == Tokens::temporal) {
    fm.m_tem = fm.attn_out;
    fm.m_tem_aligned = attn_block;
  } else if (layout.mamba == Tokens::temporal) {
    fm.m_tem = fm.mamba_out;
    fm.m_tem_aligned = mamba_block;
  }
  if (layout.mamba == Tokens::variable) {
    fm.m_var = fm.mamba_out;
  } else if (layout.attention == Tokens::variable) {
    fm.m_var = fm.attn_out;
  }

  const Var<T> fused = feature_fusion(attn_block, mamba_block, params_.fusion, params_.fusion_norm);
  Var<T> y = ops::transpose12(ops::affine(fused, params_.projector));  // [B, W, V]
  if (c.norm == NormMode::instance) y = ops::series_affine(y, stdev, mean);
  if (maps) *maps = std::move(fm);
  return y;
}

template <typename T>
Tensor<T> DcMamber<T>::predict(const Tensor<T>& x) const {
  NoGradGuard guard;
  Rng unused(0);
  return forward(Var<T>(x), Mode::eval, unused).value();
}

#define DCM_INSTANTIATE_MODEL(T)                                                              \
  template struct TwoLayer<T>;                                                                \
  template struct VEncoderLayerParams<T>;                                                     \
  template struct DcMamberParams<T>;                                                          \
  template class DcMamber<T>;                                                                 \
  template Var<T> t_embedding(const Var<T>&, const TwoLayer<T>&);                             \
  template Var<T> v_embedding(const Var<T>&, const TwoLayer<T>&);                             \
  template Var<T> v_encoder_layer(const Var<T>&, const ModelConfig&,                          \
                                  const VEncoderLayerParams<T>&, Mode, Rng&);                 \
  template Var<T> align_temporal(const Var<T>&, const AffineParams<T>&);                      \
  template Var<T> feature_fusion(const Var<T>&, const Var<T>&, const TwoLayer<T>&,            \
                                 const LayerNormParams<T>&);

DCM_INSTANTIATE_MODEL(float)
DCM_INSTANTIATE_MODEL(double)

}  // namespace dcm
