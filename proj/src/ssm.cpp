#include "dcm/ssm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dcm/parallel.hpp"

namespace dcm::ssm {

void MambaBlockConfig::validate() const {
  if (d_model == 0 || d_state == 0 || expand == 0 || d_conv == 0) {
    throw std::invalid_argument("mamba config: d_model, d_state, expand and d_conv must be >= 1");
  }
}

namespace {

// f(delta, a) = (exp(delta a) - 1) / a, with the delta limit near zero.
template <typename T>
T zoh_gain(T delta, T a) {
  const T u = delta * a;
  if (std::abs(u) < static_cast<T>(kZohLimit)) return delta;
  return std::expm1(u) / a;
}

void check_scan_shapes(const Shape& a_bar, const Shape& b_bar_x, const Shape& c) {
  if (a_bar.size() != 4 || a_bar != b_bar_x) {
    throw DimensionError("selective scan: a_bar " + shape_str(a_bar) + " vs b_bar_x " +
                         shape_str(b_bar_x));
  }
  if (c != Shape{a_bar[0], a_bar[1], a_bar[3]}) {
    throw DimensionError("selective scan: C " + shape_str(c) + " vs a_bar " + shape_str(a_bar));
  }
}

// Writes every state h_t for one batch item. a, bx: [T, lanes]; h: [T, lanes].
template <typename T>
void scan_states_sequential(const T* a, const T* bx, std::size_t steps, std::size_t lanes,
                            T* h) {
  for (std::size_t l = 0; l < lanes; ++l) h[l] = bx[l];
  for (std::size_t t = 1; t < steps; ++t) {
    const T* at = a + t * lanes;
    const T* bt = bx + t * lanes;
    const T* prev = h + (t - 1) * lanes;
    T* cur = h + t * lanes;
    for (std::size_t l = 0; l < lanes; ++l) cur[l] = at[l] * prev[l] + bt[l];
  }
}

// Blelloch work-efficient scan over lanes [l0, l1). Sequence positions beyond
// `steps` are padded with the identity (1, 0).
template <typename T>
void scan_states_blelloch(const T* a, const T* bx, std::size_t steps, std::size_t lanes,
                          std::size_t l0, std::size_t l1, T* h) {
  std::size_t padded = 1;
  while (padded < steps) padded <<= 1;
  const std::size_t width = l1 - l0;
  std::vector<T> pa(padded * width, T{1});
  std::vector<T> pb(padded * width, T{0});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < width; ++l) {
      pa[t * width + l] = a[t * lanes + l0 + l];
      pb[t * width + l] = bx[t * lanes + l0 + l];
    }
  }
  // Up-sweep: node i absorbs its left sibling, left applied first.
  for (std::size_t s = 1; s < padded; s <<= 1) {
    for (std::size_t i = 2 * s - 1; i < padded; i += 2 * s) {
      T* ai = &pa[i * width];
      T* bi = &pb[i * width];
      const T* al = &pa[(i - s) * width];
      const T* bl = &pb[(i - s) * width];
      for (std::size_t l = 0; l < width; ++l) {
        bi[l] = ai[l] * bl[l] + bi[l];
        ai[l] = ai[l] * al[l];
      }
    }
  }
  // Down-sweep to the exclusive prefix.
  for (std::size_t l = 0; l < width; ++l) {
    pa[(padded - 1) * width + l] = T{1};
    pb[(padded - 1) * width + l] = T{0};
  }
  for (std::size_t s = padded >> 1; s >= 1; s >>= 1) {
    for (std::size_t i = 2 * s - 1; i < padded; i += 2 * s) {
      T* ai = &pa[i * width];
      T* bi = &pb[i * width];
      T* al = &pa[(i - s) * width];
      T* bl = &pb[(i - s) * width];
      for (std::size_t l = 0; l < width; ++l) {
        const T left_a = al[l], left_b = bl[l];
        const T parent_a = ai[l], parent_b = bi[l];
        al[l] = parent_a;
        bl[l] = parent_b;
        // parent prefix first, then the left subtree total
        ai[l] = left_a * parent_a;
        bi[l] = left_a * parent_b + left_b;
      }
    }
    if (s == 1) break;
  }
  // Inclusive state: exclusive prefix followed by the element itself.
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < width; ++l) {
      h[t * lanes + l0 + l] = a[t * lanes + l0 + l] * pb[t * width + l] + bx[t * lanes + l0 + l];
    }
  }
}

template <typename T>
void scan_states(const T* a, const T* bx, std::size_t steps, std::size_t lanes, T* h,
                 ScanKind kind) {
  if (kind == ScanKind::sequential || steps == 1) {
    scan_states_sequential(a, bx, steps, lanes, h);
    return;
  }
  parallel_for(lanes, steps * 4, [&](std::size_t l0, std::size_t l1) {
    scan_states_blelloch(a, bx, steps, lanes, l0, l1, h);
  });
}

template <typename T>
Tensor<T> scan_with(const Tensor<T>& a_bar, const Tensor<T>& b_bar_x, const Tensor<T>& c,
                    ScanKind kind) {
  check_scan_shapes(a_bar.shape(), b_bar_x.shape(), c.shape());
  const std::size_t nb = a_bar.dim(0), steps = a_bar.dim(1), ch = a_bar.dim(2),
                    ns = a_bar.dim(3);
  const std::size_t lanes = ch * ns;
  Tensor<T> y({nb, steps, ch});
  std::vector<T> h(steps * lanes);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t off = b * steps * lanes;
    scan_states(a_bar.ptr() + off, b_bar_x.ptr() + off, steps, lanes, h.data(), kind);
    for (std::size_t t = 0; t < steps; ++t) {
      const T* ct = c.ptr() + (b * steps + t) * ns;
      for (std::size_t k = 0; k < ch; ++k) {
        const T* hk = h.data() + t * lanes + k * ns;
        T acc{0};
        for (std::size_t n = 0; n < ns; ++n) acc += ct[n] * hk[n];
        y[(b * steps + t) * ch + k] = acc;
      }
    }
  }
  return y;
}

}  // namespace

template <typename T>
ZohPair<T> discretize(T delta, T a, T b) {
  return {std::exp(delta * a), zoh_gain(delta, a) * b};
}

template <typename T>
SsmDiscretization<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b,
                                const Tensor<T>& x) {
  if (delta.rank() != 3 || x.shape() != delta.shape() || a.rank() != 2 ||
      a.dim(0) != delta.dim(2) || b.shape() != Shape{delta.dim(0), delta.dim(1), a.dim(1)}) {
    throw DimensionError("discretize: delta " + shape_str(delta.shape()) + ", A " +
                         shape_str(a.shape()) + ", B " + shape_str(b.shape()) + ", x " +
                         shape_str(x.shape()));
  }
  const std::size_t nb = delta.dim(0), steps = delta.dim(1), ch = delta.dim(2), ns = a.dim(1);
  SsmDiscretization<T> out{Tensor<T>({nb, steps, ch, ns}), Tensor<T>({nb, steps, ch, ns})};
  for (std::size_t bt = 0; bt < nb * steps; ++bt) {
    for (std::size_t k = 0; k < ch; ++k) {
      const T dt = delta[bt * ch + k];
      const T xv = x[bt * ch + k];
      for (std::size_t n = 0; n < ns; ++n) {
        const T an = a[k * ns + n];
        const auto [ab, bb] = discretize(dt, an, b[bt * ns + n]);
        if (an < T{0} && dt > T{0} && !(ab >= T{0} && ab <= T{1})) {
          throw NumericError("discretize: exp(delta*A) outside [0, 1] for negative A");
        }
        out.a_bar[(bt * ch + k) * ns + n] = ab;
        out.b_bar_x[(bt * ch + k) * ns + n] = bb * xv;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> selective_scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar_x,
                                    const Tensor<T>& c) {
  return scan_with(a_bar, b_bar_x, c, ScanKind::sequential);
}

template <typename T>
Tensor<T> selective_scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar_x,
                                  const Tensor<T>& c) {
  return scan_with(a_bar, b_bar_x, c, ScanKind::parallel);
}

template <typename T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& a, const Var<T>& b,
                      const Var<T>& c, ScanKind kind) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || delta.shape() != xs || a.shape().size() != 2 || a.dim(0) != xs[2] ||
      b.shape() != Shape{xs[0], xs[1], a.dim(1)} || c.shape() != b.shape()) {
    throw DimensionError("selective_scan: x " + shape_str(xs) + ", delta " +
                         shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()) + ", C " + shape_str(c.shape()));
  }
  const std::size_t nb = xs[0], steps = xs[1], ch = xs[2], ns = a.dim(1);
  const std::size_t lanes = ch * ns;
  const auto disc = discretize(delta.value(), a.value(), b.value(), x.value());
  Tensor<T> states({nb, steps, ch, ns});
  Tensor<T> y({nb, steps, ch});
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const std::size_t off = bi * steps * lanes;
    scan_states(disc.a_bar.ptr() + off, disc.b_bar_x.ptr() + off, steps, lanes,
                states.ptr() + off, kind);
    for (std::size_t t = 0; t < steps; ++t) {
      const T* ct = c.value().ptr() + (bi * steps + t) * ns;
      for (std::size_t k = 0; k < ch; ++k) {
        const T* hk = states.ptr() + off + t * lanes + k * ns;
        T acc{0};
        for (std::size_t n = 0; n < ns; ++n) acc += ct[n] * hk[n];
        y[(bi * steps + t) * ch + k] = acc;
      }
    }
  }

  return record<T>(
      "selective_scan", std::move(y), {x, delta, a, b, c},
      [=, states = std::move(states)](Node<T>& self) {
        const T* xv = self.parents[0]->value.ptr();
        const T* dv = self.parents[1]->value.ptr();
        const T* av = self.parents[2]->value.ptr();
        const T* bv = self.parents[3]->value.ptr();
        const T* cv = self.parents[4]->value.ptr();
        const T* gy = self.grad.ptr();
        auto grad_or_null = [&](std::size_t i) -> T* {
          Node<T>* p = self.input(i);
          return p ? p->grad_ref().ptr() : nullptr;
        };
        T* gx = grad_or_null(0);
        T* gd = grad_or_null(1);
        T* ga = grad_or_null(2);
        T* gb = grad_or_null(3);
        T* gc = grad_or_null(4);
        const T limit = static_cast<T>(kZohLimit);
        const T series = static_cast<T>(1e-3);
        std::vector<T> carry(lanes);
        for (std::size_t bi = 0; bi < nb; ++bi) {
          std::fill(carry.begin(), carry.end(), T{0});
          const T* h = states.ptr() + bi * steps * lanes;
          for (std::size_t t = steps; t-- > 0;) {
            const std::size_t row = bi * steps + t;
            const T* ht = h + t * lanes;
            const T* hprev = t ? h + (t - 1) * lanes : nullptr;
            for (std::size_t k = 0; k < ch; ++k) {
              const T dy = gy[row * ch + k];
              const T dt = dv[row * ch + k];
              const T xk = xv[row * ch + k];
              T gdelta{0}, gxk{0};
              for (std::size_t n = 0; n < ns; ++n) {
                const std::size_t lane = k * ns + n;
                const T an = av[lane];
                const T bn = bv[row * ns + n];
                const T cn = cv[row * ns + n];
                if (gc) gc[row * ns + n] += dy * ht[lane];
                const T g = carry[lane] + cn * dy;
                const T u = dt * an;
                const T abar = std::exp(u);
                const bool small = std::abs(u) < limit;
                const T gain = small ? dt : std::expm1(u) / an;
                const T dgain_ddelta = small ? T{1} : abar;
                T dgain_da{0};
                if (!small) {
                  dgain_da = std::abs(u) < series
                                 ? dt * dt * (T{0.5} + u / T{3} + u * u / T{8})
                                 : (u * abar - std::expm1(u)) / (an * an);
                }
                const T g_abar = hprev ? g * hprev[lane] : T{0};
                const T g_gain = g * bn * xk;
                gdelta += g_abar * an * abar + g_gain * dgain_ddelta;
                if (ga) ga[lane] += g_abar * dt * abar + g_gain * dgain_da;
                if (gb) gb[row * ns + n] += g * gain * xk;
                gxk += g * gain * bn;
                carry[lane] = g * abar;
              }
              if (gd) gd[row * ch + k] += gdelta;
              if (gx) gx[row * ch + k] += gxk;
            }
          }
        }
      });
}

template <typename T>
MambaBlockParams<T> MambaBlockParams<T>::init(const MambaBlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model, ed = cfg.inner(), n = cfg.d_state, r = cfg.rank();
  MambaBlockParams p;
  p.in_proj = init_affine<T>(d, 2 * ed, false, rng);
  p.conv_weight = uniform_param<T>({ed, 1, cfg.d_conv}, 1.0 / std::sqrt(double(cfg.d_conv)), rng);
  p.conv_bias = constant_param<T>({ed}, T{0});
  p.b_proj = init_affine<T>(ed, n, false, rng);
  p.c_proj = init_affine<T>(ed, n, false, rng);
  p.dt_down = init_affine<T>(ed, r, false, rng);
  p.dt_up.weight = uniform_param<T>({r, ed}, 1.0 / std::sqrt(double(r)), rng);
  // Step-size offset: softplus^-1 of a log-uniform draw in [1e-3, 1e-1].
  Tensor<T> dt_bias({ed});
  for (auto& v : dt_bias.data()) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  }
  p.dt_up.bias = Var<T>::parameter(std::move(dt_bias));
  Tensor<T> a_log({ed, n});
  for (std::size_t k = 0; k < ed; ++k)
    for (std::size_t j = 0; j < n; ++j) a_log[k * n + j] = static_cast<T>(std::log(double(j + 1)));
  p.a_log = Var<T>::parameter(std::move(a_log));
  p.out_proj = init_affine<T>(ed, d, false, rng);
  return p;
}

template <typename T>
void MambaBlockParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  dcm::collect(out, prefix + ".in_proj", in_proj);
  dcm::collect(out, prefix + ".conv.weight", conv_weight);
  dcm::collect(out, prefix + ".conv.bias", conv_bias);
  dcm::collect(out, prefix + ".b_proj", b_proj);
  dcm::collect(out, prefix + ".c_proj", c_proj);
  dcm::collect(out, prefix + ".dt_down", dt_down);
  dcm::collect(out, prefix + ".dt_up", dt_up);
  dcm::collect(out, prefix + ".a_log", a_log);
  dcm::collect(out, prefix + ".out_proj", out_proj);
}

template <typename T>
void MambaBlockParams<T>::check(const MambaBlockConfig& cfg) const {
  const std::size_t d = cfg.d_model, ed = cfg.inner(), n = cfg.d_state, r = cfg.rank();
  auto expect = [](const Var<T>& v, const Shape& s, const char* what) {
    if (!v.defined() || v.shape() != s) {
      throw DimensionError(std::string("mamba block ") + what + ": expected " + shape_str(s) +
                           ", got " + (v.defined() ? shape_str(v.shape()) : "undefined"));
    }
  };
  expect(in_proj.weight, {d, 2 * ed}, "in_proj");
  expect(conv_weight, {ed, 1, cfg.d_conv}, "conv weight");
  expect(conv_bias, {ed}, "conv bias");
  expect(b_proj.weight, {ed, n}, "B projection");
  expect(c_proj.weight, {ed, n}, "C projection");
  expect(dt_down.weight, {ed, r}, "dt down-projection");
  expect(dt_up.weight, {r, ed}, "dt up-projection");
  expect(dt_up.bias, {ed}, "dt bias");
  expect(a_log, {ed, n}, "A_log");
  expect(out_proj.weight, {ed, d}, "out_proj");
}

template <typename T>
BiMambaParams<T> BiMambaParams<T>::init(const MambaBlockConfig& cfg, bool shared, Rng& rng) {
  BiMambaParams p;
  p.forward = MambaBlockParams<T>::init(cfg, rng);
  p.shared = shared;
  if (!shared) p.backward = MambaBlockParams<T>::init(cfg, rng);
  return p;
}

template <typename T>
void BiMambaParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  forward.collect(out, prefix + ".fwd");
  if (!shared) backward.collect(out, prefix + ".bwd");
}

template <typename T>
Var<T> mamba_block(const Var<T>& x, const MambaBlockConfig& cfg, const MambaBlockParams<T>& p,
                   ScanKind kind) {
  if (x.shape().size() != 3 || x.dim(2) != cfg.d_model) {
    throw DimensionError("mamba_block: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(cfg.d_model));
  }
  p.check(cfg);
  const std::size_t ed = cfg.inner();
  const Var<T> xz = ops::affine(x, p.in_proj);
  const Var<T> xin = ops::slice_last(xz, 0, ed);
  const Var<T> z = ops::slice_last(xz, ed, ed);
  // Causal depthwise conv along the token axis.
  const Var<T> conv = ops::conv1d(ops::transpose12(xin), p.conv_weight, p.conv_bias,
                                  Conv1dSpec{ed, cfg.d_conv - 1, 0});
  const Var<T> xc = ops::silu(ops::transpose12(conv));
  const Var<T> bm = ops::affine(xc, p.b_proj);
  const Var<T> cm = ops::affine(xc, p.c_proj);
  const Var<T> delta = ops::softplus(ops::affine(ops::affine(xc, p.dt_down), p.dt_up));
  const Var<T> a = ops::neg_exp(p.a_log);
  const Var<T> y = selective_scan(xc, delta, a, bm, cm, kind);
  const Var<T> gated = ops::mul(y, ops::silu(z));
  return ops::affine(gated, p.out_proj);
}

template <typename T>
Var<T> bi_mamba(const Var<T>& x, const MambaBlockConfig& cfg, const BiMambaParams<T>& p,
                ScanKind kind) {
  const Var<T> fwd = mamba_block(x, cfg, p.forward, kind);
  const MambaBlockParams<T>& back = p.shared ? p.forward : p.backward;
  const Var<T> bwd = ops::flip(mamba_block(ops::flip(x, 1), cfg, back, kind), 1);
  return ops::add(fwd, bwd);
}

#define DCM_INSTANTIATE_SSM(T)                                                                \
  template ZohPair<T> discretize(T, T, T);                                                    \
  template SsmDiscretization<T> discretize(const Tensor<T>&, const Tensor<T>&,                \
                                           const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> selective_scan_sequential(const Tensor<T>&, const Tensor<T>&,            \
                                               const Tensor<T>&);                             \
  template Tensor<T> selective_scan_parallel(const Tensor<T>&, const Tensor<T>&,              \
                                             const Tensor<T>&);                               \
  template Var<T> selective_scan(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,  \
                                 const Var<T>&, ScanKind);                                    \
  template struct MambaBlockParams<T>;                                                        \
  template struct BiMambaParams<T>;                                                           \
  template Var<T> mamba_block(const Var<T>&, const MambaBlockConfig&,                         \
                              const MambaBlockParams<T>&, ScanKind);                          \
  template Var<T> bi_mamba(const Var<T>&, const MambaBlockConfig&, const BiMambaParams<T>&,   \
                           ScanKind);

DCM_INSTANTIATE_SSM(float)
DCM_INSTANTIATE_SSM(double)

}  // namespace dcm::ssm
