#include <doctest.h>

#include <cmath>

#include "dcm/ssm.hpp"
#include "oracle_values.hpp"
#include "support.hpp"

using namespace dcm;
using testing::tensor;
using testing::wave;

namespace {

Tensor<float> random_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Parameters filled exactly like tests/oracles/oracles.py.
ssm::MambaBlockParams<double> oracle_params(const ssm::MambaBlockConfig& c) {
  const std::size_t d = c.d_model, e = c.inner(), n = c.d_state, r = c.rank();
  ssm::MambaBlockParams<double> p;
  p.in_proj.weight = testing::wave_param({d, 2 * e}, 1.0);
  p.conv_weight = testing::wave_param({e, 1, c.d_conv}, 2.0);
  p.conv_bias = testing::wave_param({e}, 3.0);
  p.b_proj.weight = testing::wave_param({e, n}, 4.0);
  p.c_proj.weight = testing::wave_param({e, n}, 5.0);
  p.dt_down.weight = testing::wave_param({e, r}, 6.0);
  p.dt_up.weight = testing::wave_param({r, e}, 7.0);
  Tensor<double> bias = wave({e}, 8.0);
  for (auto& v : bias.data()) v -= 1.0;
  p.dt_up.bias = Var<double>::parameter(bias);
  Tensor<double> a_log({e, n});
  for (std::size_t k = 0; k < e; ++k)
    for (std::size_t j = 0; j < n; ++j) a_log[k * n + j] = std::log(double(j + 1));
  p.a_log = Var<double>::parameter(a_log);
  p.out_proj.weight = testing::wave_param({e, d}, 10.0);
  return p;
}

void zero_block(ssm::MambaBlockParams<double>& p) {
  ParamList<double> list;
  p.collect(list, "m");
  for (auto& item : list) testing::zero_out(item.var);
}

}  // namespace

TEST_CASE("zero-order hold") {
  const auto z = ssm::discretize(std::log(2.0), -1.0, 1.0);
  CHECK(z.a_bar == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(z.b_bar == doctest::Approx(0.5).epsilon(1e-15));

  const auto tiny = ssm::discretize(1e-12, -3.0, 2.0);
  CHECK(tiny.a_bar == doctest::Approx(1.0));
  CHECK(std::abs(tiny.b_bar) < 1e-11);

  // Below the threshold the first-order limit delta * b is used verbatim.
  const auto lim = ssm::discretize(1e-7, -2.0, 3.0);
  CHECK(lim.b_bar == 1e-7 * 3.0);
  CHECK(lim.a_bar == std::exp(-2e-7));
}

TEST_CASE("tensor discretize matches the scalar form and carries x") {
  Rng rng(3);
  const auto delta = random_tensor({2, 3, 4}, rng, 0.01, 1.0).cast<double>();
  Tensor<double> a({4, 2});
  for (auto& v : a.data()) v = -rng.uniform(0.5, 4.0);
  const auto b = random_tensor({2, 3, 2}, rng, -1, 1).cast<double>();
  const auto x = random_tensor({2, 3, 4}, rng, -1, 1).cast<double>();
  const auto d = ssm::discretize(delta, a, b, x);
  for (std::size_t bt = 0; bt < 6; ++bt)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t n = 0; n < 2; ++n) {
        const auto z = ssm::discretize(delta[bt * 4 + c], a[c * 2 + n], b[bt * 2 + n]);
        const std::size_t i = (bt * 4 + c) * 2 + n;
        CHECK(d.a_bar[i] == z.a_bar);
        CHECK(d.b_bar_x[i] == doctest::Approx(z.b_bar * x[bt * 4 + c]).epsilon(1e-15));
      }
}

TEST_CASE("sequential scan: unrolled recurrence") {
  const auto a = tensor<double>({1, 3, 1, 1}, {0.5, 0.5, 0.5});
  const auto bx = tensor<double>({1, 3, 1, 1}, {1, 1, 1});
  const auto c = tensor<double>({1, 3, 1}, {1, 1, 1});
  const auto y = ssm::selective_scan_sequential(a, bx, c);
  CHECK(y == tensor<double>({1, 3, 1}, {1, 1.5, 1.75}));

  const auto zero = ssm::selective_scan_sequential(a, Tensor<double>({1, 3, 1, 1}), c);
  for (double v : zero.data()) CHECK(v == 0.0);

  // Memoryless when a_bar = 0.
  const auto bx2 = tensor<double>({1, 3, 1, 2}, {1, 2, 3, 4, 5, 6});
  const auto c2 = tensor<double>({1, 3, 2}, {1, -1, 2, 0.5, 0, 1});
  const auto y2 = ssm::selective_scan_sequential(Tensor<double>({1, 3, 1, 2}), bx2, c2);
  CHECK(y2 == tensor<double>({1, 3, 1}, {1 - 2, 6 + 2, 6}));
}

TEST_CASE("parallel scan agrees with the sequential oracle") {
  Rng rng(17);
  SUBCASE("T = 1 is bit-exact") {
    const auto a = random_tensor({2, 1, 3, 4}, rng, 0, 1);
    const auto bx = random_tensor({2, 1, 3, 4}, rng, -1, 1);
    const auto c = random_tensor({2, 1, 4}, rng, -1, 1);
    CHECK(ssm::selective_scan_parallel(a, bx, c) == ssm::selective_scan_sequential(a, bx, c));
  }
  SUBCASE("random T = 128") {
    const auto a = random_tensor({2, 128, 5, 3}, rng, 0, 1);
    const auto bx = random_tensor({2, 128, 5, 3}, rng, -1, 1);
    const auto c = random_tensor({2, 128, 3}, rng, -1, 1);
    CHECK(testing::max_abs_diff(ssm::selective_scan_parallel(a, bx, c),
                                ssm::selective_scan_sequential(a, bx, c)) <= 1e-5);
  }
  SUBCASE("non power-of-two lengths") {
    for (std::size_t t : {2u, 3u, 7u, 33u}) {
      const auto a = random_tensor({1, t, 2, 2}, rng, 0, 1).cast<double>();
      const auto bx = random_tensor({1, t, 2, 2}, rng, -1, 1).cast<double>();
      const auto c = random_tensor({1, t, 2}, rng, -1, 1).cast<double>();
      CHECK(testing::max_abs_diff(ssm::selective_scan_parallel(a, bx, c),
                                  ssm::selective_scan_sequential(a, bx, c)) <= 1e-12);
    }
  }
  SUBCASE("a_bar = 1 gives a prefix sum") {
    const std::size_t t = 50;
    const Tensor<double> a({1, t, 1, 2}, 1.0);
    const auto bx = random_tensor({1, t, 1, 2}, rng, -1, 1).cast<double>();
    const auto c = random_tensor({1, t, 2}, rng, -1, 1).cast<double>();
    const auto y = ssm::selective_scan_parallel(a, bx, c);
    double h0 = 0, h1 = 0;
    for (std::size_t s = 0; s < t; ++s) {
      h0 += bx[2 * s];
      h1 += bx[2 * s + 1];
      CHECK(y[s] == doctest::Approx(c[2 * s] * h0 + c[2 * s + 1] * h1).epsilon(1e-12));
    }
  }
}

TEST_CASE("mamba block: line-by-line oracle") {
  const ssm::MambaBlockConfig cfg{4, 2, 2, 4, 0};
  const auto p = oracle_params(cfg);
  const Var<double> x(wave({1, 3, 4}, 0.1, 1.0));
  for (auto kind : {ssm::ScanKind::sequential, ssm::ScanKind::parallel}) {
    const auto y = ssm::mamba_block(x, cfg, p, kind).value();
    REQUIRE(y.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(y[i] == doctest::Approx(oracle::kMambaBlock[i]).epsilon(1e-10));
  }
}

TEST_CASE("mamba block: contracts") {
  Rng rng(2);
  const ssm::MambaBlockConfig cfg{16, 4, 2, 4, 0};
  auto p = ssm::MambaBlockParams<double>::init(cfg, rng);
  const Var<double> x(wave({2, 7, 16}, 0.3, 1.0));
  CHECK(ssm::mamba_block(x, cfg, p).shape() == Shape{2, 7, 16});

  zero_block(p);
  const auto zeroed = ssm::mamba_block(x, cfg, p);
  for (double v : zeroed.value().data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(ssm::mamba_block(Var<double>(wave({2, 7, 8}, 0.3)), cfg, p), DimensionError);
}

TEST_CASE("mamba block: init") {
  Rng rng(4);
  const ssm::MambaBlockConfig cfg{8, 3, 2, 4, 0};
  const auto p = ssm::MambaBlockParams<float>::init(cfg, rng);
  CHECK(p.a_log.value().at({5, 2}) == doctest::Approx(std::log(3.0)));
  CHECK_FALSE(p.in_proj.bias.defined());
  for (float b : p.dt_up.bias.value().data()) {
    const double dt = std::log1p(std::exp(double(b)));
    CHECK(dt >= 1e-3 * 0.999);
    CHECK(dt <= 1e-1 * 1.001);
  }
}

TEST_CASE("bi-mamba") {
  const ssm::MambaBlockConfig cfg{4, 2, 2, 4, 0};
  Rng rng(8);
  auto bp = ssm::BiMambaParams<double>::init(cfg, false, rng);
  const Var<double> x(wave({2, 5, 4}, 0.6, 1.0));

  SUBCASE("zero backward branch reduces to the forward block") {
    zero_block(bp.backward);
    CHECK(ssm::bi_mamba(x, cfg, bp).value() == ssm::mamba_block(x, cfg, bp.forward).value());
  }
  SUBCASE("reversal is an involution") {
    CHECK(ops::flip(ops::flip(x, 1), 1).value() == x.value());
  }
  SUBCASE("tied weights on a palindromic sequence") {
    // X reversed == X, so the backward path sees the same input and
    // bi(X) = f(X) + reverse(f(X)).
    Tensor<double> sym({1, 5, 4});
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t d = 0; d < 4; ++d) sym.at({0, t, d}) = std::sin(1.0 + d + std::min(t, 4 - t));
    const Var<double> xs(sym);
    bp.shared = true;
    const auto f = ssm::mamba_block(xs, cfg, bp.forward).value();
    const auto y = ssm::bi_mamba(xs, cfg, bp).value();
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t d = 0; d < 4; ++d)
        CHECK(y.at({0, t, d}) == doctest::Approx(f.at({0, t, d}) + f.at({0, 4 - t, d})).epsilon(1e-12));
    // A single token is its own reversal: exactly twice the forward output.
    const Var<double> one(wave({1, 1, 4}, 0.2, 1.0));
    const auto f1 = ssm::mamba_block(one, cfg, bp.forward).value();
    const auto y1 = ssm::bi_mamba(one, cfg, bp).value();
    for (std::size_t i = 0; i < 4; ++i) CHECK(y1[i] == doctest::Approx(2 * f1[i]).epsilon(1e-14));
  }
}

TEST_CASE("selective scan: float path matches double") {
  const ssm::MambaBlockConfig cfg{4, 2, 2, 4, 0};
  const auto pd = oracle_params(cfg);
  ssm::MambaBlockParams<float> pf;
  auto cast = [](const Var<double>& v) { return Var<float>::parameter(v.value().cast<float>()); };
  pf.in_proj.weight = cast(pd.in_proj.weight);
  pf.conv_weight = cast(pd.conv_weight);
  pf.conv_bias = cast(pd.conv_bias);
  pf.b_proj.weight = cast(pd.b_proj.weight);
  pf.c_proj.weight = cast(pd.c_proj.weight);
  pf.dt_down.weight = cast(pd.dt_down.weight);
  pf.dt_up.weight = cast(pd.dt_up.weight);
  pf.dt_up.bias = cast(pd.dt_up.bias);
  pf.a_log = cast(pd.a_log);
  pf.out_proj.weight = cast(pd.out_proj.weight);
  const auto x = wave({1, 3, 4}, 0.1, 1.0);
  const auto yf = ssm::mamba_block(Var<float>(x.cast<float>()), cfg, pf).value();
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(yf[i] - oracle::kMambaBlock[i]) < 1e-6);
}
