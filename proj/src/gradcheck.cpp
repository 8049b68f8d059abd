#include "dcm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace dcm::train {

bool GradReport::pass() const {
  return !groups.empty() &&
         std::all_of(groups.begin(), groups.end(), [](const GroupError& g) { return g.pass; });
}

double GradReport::max_error() const {
  double m = 0;
  for (const auto& g : groups) m = std::max(m, g.rel_error);
  return m;
}

void GradReport::append(const GradReport& other, const std::string& prefix) {
  for (auto g : other.groups) {
    g.name = prefix + g.name;
    groups.push_back(std::move(g));
  }
}

void print_report(std::ostream& out, const GradReport& r, const std::string& title) {
  out << title << " (tolerance " << r.tolerance << ")\n";
  char line[256];
  for (const auto& g : r.groups) {
    std::snprintf(line, sizeof line, "  %-52s n=%-6zu rel_err=%.3e  %s\n", g.name.c_str(), g.count,
                  g.rel_error, g.pass ? "ok" : "FAIL");
    out << line;
  }
  out << (r.pass() ? "PASS" : "FAIL") << " max rel_err " << r.max_error() << "\n";
}

GradReport check_gradients(const std::function<Var<double>()>& loss_fn,
                           const ParamList<double>& params, double tolerance, double h) {
  for (const auto& p : params) {
    Var<double> v = p.var;
    v.zero_grad();
  }
  backward(loss_fn());
  GradReport report;
  report.tolerance = tolerance;
  NoGradGuard no_grad;
  for (const auto& p : params) {
    Var<double> v = p.var;
    const Tensor<double> analytic = v.grad();
    Tensor<double>& w = v.value_mut();
    double diff = 0, a_norm = 0, n_norm = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss_fn().value()[0];
      w[i] = saved - h;
      const double down = loss_fn().value()[0];
      w[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(numeric - analytic[i]));
      a_norm = std::max(a_norm, std::abs(analytic[i]));
      n_norm = std::max(n_norm, std::abs(numeric));
    }
    GroupError g;
    g.name = p.name;
    g.count = w.size();
    g.rel_error = diff / std::max({a_norm, n_norm, 1e-12});
    g.pass = g.rel_error <= tolerance;
    report.groups.push_back(std::move(g));
  }
  return report;
}

namespace {

using VarD = Var<double>;
using TensorD = Tensor<double>;

TensorD random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

VarD random_param(Shape shape, Rng& rng, double scale = 1.0) {
  return VarD::parameter(random_tensor(std::move(shape), rng, scale));
}

// Entries bounded away from zero, for ops with a kink there.
VarD off_zero_param(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.data()) {
    const double u = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return VarD::parameter(std::move(t));
}

// Redraws every tensor from U(-1, 1).
void randomize(const ParamList<double>& params, Rng& rng) {
  for (const auto& p : params) {
    VarD v = p.var;
    for (auto& x : v.value_mut().data()) x = rng.uniform(-1.0, 1.0);
  }
}

class Suite {
 public:
  Suite(double tol, std::uint64_t seed) : rng_(seed) { report_.tolerance = tol; }

  Rng& rng() { return rng_; }

  // Checks loss = sum(w * f()) for a fixed random weight tensor w.
  void run(const std::string& name, const ParamList<double>& params,
           const std::function<VarD()>& f) {
    const TensorD w = [&] {
      NoGradGuard g;
      return random_tensor(f().shape(), rng_);
    }();
    add(name, check_gradients([&] { return ops::weighted_sum(f(), w); }, params,
                              report_.tolerance));
  }

  void add(const std::string& name, const GradReport& r) { report_.append(r, name + "/"); }

  GradReport take() { return std::move(report_); }

 private:
  Rng rng_;
  GradReport report_;
};

ParamList<double> named(std::initializer_list<std::pair<const char*, VarD>> items) {
  ParamList<double> out;
  for (const auto& [n, v] : items) out.push_back({n, v});
  return out;
}

}  // namespace

GradReport op_gradient_suite(double tolerance, std::uint64_t seed) {
  Suite s(tolerance, seed);
  Rng& r = s.rng();

  {
    VarD x = random_param({2, 3, 4}, r), w = random_param({4, 5}, r), b = random_param({5}, r);
    s.run("affine", named({{"x", x}, {"W", w}, {"b", b}}), [=] { return ops::affine(x, w, b); });
  }
  {
    VarD x = off_zero_param({3, 5}, r);
    s.run("relu", named({{"x", x}}), [=] { return ops::relu(x); });
  }
  {
    VarD x = random_param({3, 5}, r, 3.0);
    s.run("silu", named({{"x", x}}), [=] { return ops::silu(x); });
    s.run("softplus", named({{"x", x}}), [=] { return ops::softplus(x); });
    s.run("softmax_rows", named({{"x", x}}), [=] { return ops::softmax_rows(x); });
    s.run("neg_exp", named({{"x", x}}), [=] { return ops::neg_exp(x); });
    s.run("scale", named({{"x", x}}), [=] { return ops::scale(x, 1.7); });
  }
  {
    VarD x = random_param({2, 3, 6}, r), g = random_param({6}, r), b = random_param({6}, r);
    s.run("layer_norm", named({{"x", x}, {"gamma", g}, {"beta", b}}),
          [=] { return ops::layer_norm(x, g, b); });
  }
  {
    VarD x = random_param({2, 4, 7}, r), w = random_param({4, 2, 3}, r), b = random_param({4}, r);
    s.run("conv1d_grouped", named({{"x", x}, {"w", w}, {"b", b}}),
          [=] { return ops::conv1d(x, w, b, Conv1dSpec{2, 2, 1}); });
  }
  {
    VarD x = random_param({2, 3, 6}, r), w = random_param({3, 1, 4}, r), b = random_param({3}, r);
    s.run("conv1d_depthwise_causal", named({{"x", x}, {"w", w}, {"b", b}}),
          [=] { return ops::conv1d(x, w, b, Conv1dSpec{3, 3, 0}); });
  }
  {
    VarD x = random_param({2, 4, 5}, r), w = random_param({6, 4, 1}, r), b = random_param({6}, r);
    s.run("conv1d_pointwise", named({{"x", x}, {"w", w}, {"b", b}}),
          [=] { return ops::conv1d(x, w, b, Conv1dSpec{}); });
  }
  {
    VarD x = random_param({3, 4}, r);
    s.run("dropout_fixed_stream", named({{"x", x}}), [=] {
      Rng d(99);
      return ops::dropout(x, 0.3, Mode::train, d);
    });
  }
  {
    VarD a = random_param({2, 3, 4}, r), b = random_param({2, 3, 4}, r), c = random_param({3, 4}, r);
    s.run("add", named({{"a", a}, {"b", b}}), [=] { return ops::add(a, b); });
    s.run("mul", named({{"a", a}, {"b", b}}), [=] { return ops::mul(a, b); });
    s.run("add_trailing", named({{"x", a}, {"c", c}}), [=] { return ops::add_trailing(a, c); });
    s.run("permute", named({{"x", a}}), [=] { return ops::permute(a, {2, 0, 1}); });
    s.run("transpose12", named({{"x", a}}), [=] { return ops::transpose12(a); });
    s.run("flip", named({{"x", a}}), [=] { return ops::flip(a, 1); });
    s.run("slice_last", named({{"x", a}}), [=] { return ops::slice_last(a, 1, 2); });
    s.run("concat_last", named({{"a", a}, {"b", b}}), [=] { return ops::concat_last(a, b); });
    s.run("reshape", named({{"x", a}}), [=] { return ops::reshape(a, {6, 4}); });
  }
  {
    VarD a = random_param({2, 3, 4}, r), b = random_param({2, 4, 5}, r);
    s.run("bmm", named({{"a", a}, {"b", b}}), [=] { return ops::bmm(a, b); });
    VarD at = random_param({2, 4, 3}, r), bt = random_param({2, 5, 4}, r);
    s.run("bmm_trans_a", named({{"a", at}, {"b", b}}), [=] { return ops::bmm(at, b, true); });
    s.run("bmm_trans_b", named({{"a", a}, {"b", bt}}), [=] { return ops::bmm(a, bt, false, true); });
    VarD e = random_param({1, 3, 4}, r), v = random_param({4, 4, 2}, r);
    s.run("bmm_broadcast", named({{"a", e}, {"b", v}}), [=] { return ops::bmm(e, v); });
  }
  {
    VarD x = random_param({2, 4, 3}, r);
    const TensorD sc = random_tensor({2, 3}, r), sh = random_tensor({2, 3}, r);
    s.run("series_affine", named({{"x", x}}), [=] { return ops::series_affine(x, sc, sh); });
  }
  {
    VarD x = random_param({3, 4}, r);
    const TensorD target = random_tensor({3, 4}, r);
    s.add("mse_loss", check_gradients([=] { return ops::mse_loss(x, target); },
                                      named({{"prediction", x}}), tolerance));
  }
  for (const auto kind : {ssm::ScanKind::sequential, ssm::ScanKind::parallel}) {
    const std::string tag = kind == ssm::ScanKind::sequential ? "sequential" : "parallel";
    VarD x = random_param({2, 5, 3}, r), dt = random_param({2, 5, 3}, r),
         a_log = random_param({3, 2}, r), b = random_param({2, 5, 2}, r),
         c = random_param({2, 5, 2}, r);
    s.run("selective_scan_" + tag,
          named({{"x", x}, {"delta_raw", dt}, {"A_log", a_log}, {"B", b}, {"C", c}}), [=] {
            return ssm::selective_scan(x, ops::softplus(dt), ops::neg_exp(a_log), b, c, kind);
          });
  }
  {
    // |delta * A| around 1e-4 exercises the series form of the A derivative.
    VarD x = random_param({1, 4, 2}, r), dt = random_param({1, 4, 2}, r);
    TensorD al({2, 2});
    for (auto& v : al.data()) v = -9.0 + 0.5 * r.uniform();
    VarD a_log = VarD::parameter(al);
    VarD b = random_param({1, 4, 2}, r), c = random_param({1, 4, 2}, r);
    s.run("selective_scan_small_A",
          named({{"x", x}, {"delta_raw", dt}, {"A_log", a_log}, {"B", b}, {"C", c}}), [=] {
            return ssm::selective_scan(x, ops::softplus(dt), ops::neg_exp(a_log), b, c,
                                       ssm::ScanKind::sequential);
          });
  }
  {
    const ssm::MambaBlockConfig mc{4, 2, 2, 4, 0};
    const auto mp = ssm::MambaBlockParams<double>::init(mc, r);
    VarD x = random_param({2, 3, 4}, r);
    ParamList<double> ps{{"x", x}};
    mp.collect(ps, "mamba");
    s.run("mamba_block", ps, [=] { return ssm::mamba_block(x, mc, mp); });
    const auto bp = ssm::BiMambaParams<double>::init(mc, false, r);
    ParamList<double> pb{{"x", x}};
    bp.collect(pb, "bimamba");
    s.run("bi_mamba", pb, [=] { return ssm::bi_mamba(x, mc, bp); });
  }
  {
    attn::LinformerConfig lc{4, 6, 3, 2, false};
    const auto lp = attn::LinformerParams<double>::init(lc, r);
    VarD x = random_param({2, 6, 4}, r);
    ParamList<double> ps{{"x", x}};
    lp.collect(ps, "linformer");
    s.run("linear_attention", ps, [=] { return attn::linear_attention(x, lc, lp); });
  }
  {
    const auto mp = attn::MlpParams<double>::init(4, 8, r);
    VarD x = random_param({2, 3, 4}, r);
    ParamList<double> ps{{"x", x}};
    mp.collect(ps, "mlp");
    s.run("mlp_block", ps, [=] {
      Rng d(5);
      return attn::mlp_block(x, mp, 0.2, Mode::train, d);
    });
  }
  {
    attn::TEncoderConfig tc;
    tc.attention = {8, 4, 4, 2, false};
    tc.dropout = 0.1;
    const auto tp = attn::TEncoderLayerParams<double>::init(tc, r);
    VarD x = random_param({1, 4, 8}, r);
    ParamList<double> ps{{"x", x}};
    tp.collect(ps, "t_layer");
    s.run("t_encoder_layer", ps, [=] {
      Rng d(6);
      return attn::t_encoder_layer(x, tc, tp, Mode::train, d);
    });
  }
  {
    ModelConfig mc;
    mc.lookback = 5;
    mc.horizon = 2;
    mc.n_vars = 3;
    mc.d_model = 4;
    mc.d_state = 2;
    mc.e_layers = 1;
    mc.d_ff = 8;
    const auto vp = VEncoderLayerParams<double>::init(mc, r);
    VarD x = random_param({2, 3, 4}, r);
    ParamList<double> ps{{"x", x}};
    vp.collect(ps, "v_layer");
    randomize(ps, r);
    s.run("v_encoder_layer", ps, [=] {
      Rng d(7);
      return v_encoder_layer(x, mc, vp, Mode::train, d);
    });

    const auto te = TwoLayer<double>::init(3, 4, 4, r);
    const auto ve = TwoLayer<double>::init(5, 4, 4, r);
    VarD series = random_param({2, 5, 3}, r);
    ParamList<double> pt{{"x", series}};
    te.collect(pt, "t_embed");
    s.run("t_embedding", pt, [=] { return t_embedding(series, te); });
    ParamList<double> pv{{"x", series}};
    ve.collect(pv, "v_embed");
    s.run("v_embedding", pv, [=] { return v_embedding(series, ve); });

    const auto al = init_affine<double>(5, 3, true, r);
    VarD m_tem = random_param({2, 5, 4}, r);
    ParamList<double> pa{{"m_tem", m_tem}};
    collect(pa, "align", al);
    s.run("align_temporal", pa, [=] { return align_temporal(m_tem, al); });

    const auto fu = TwoLayer<double>::init(8, 4, 4, r);
    const auto fn = init_layer_norm<double>(4);
    VarD m_var = random_param({2, 3, 4}, r);
    VarD aligned = random_param({2, 3, 4}, r);
    ParamList<double> pf{{"aligned", aligned}, {"m_var", m_var}};
    fu.collect(pf, "fusion");
    collect(pf, "fusion.norm", fn);
    s.run("feature_fusion", pf, [=] { return feature_fusion(aligned, m_var, fu, fn); });
  }
  return s.take();
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.lookback = 8;
  c.n_vars = 3;
  c.horizon = 4;
  c.d_model = 8;
  c.e_layers = 1;
  c.d_state = 4;
  c.k = 8;
  c.dropout = 0.1;
  return c;
}

GradReport gradient_check(const ModelConfig& cfg, double tolerance, std::uint64_t seed) {
  const DcMamber<double> model(cfg, DcMamberParams<double>::init(cfg, seed));
  Rng r(seed + 1);
  const TensorD x = random_tensor({2, cfg.lookback, cfg.n_vars}, r);
  const TensorD target = random_tensor({2, cfg.horizon, cfg.n_vars}, r);
  const VarD input(x);
  randomize(model.parameters(), r);
  return check_gradients(
      [&] {
        Rng drop(seed + 2);
        return ops::mse_loss(model.forward(input, Mode::train, drop), target);
      },
      model.parameters(), tolerance);
}

}  // namespace dcm::train
