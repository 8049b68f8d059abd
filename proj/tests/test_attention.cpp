#include <doctest.h>

#include "dcm/attention.hpp"
#include "dcm/params.hpp"
#include "support.hpp"

using namespace dcm;
using namespace dcm::attn;
using testing::wave;

namespace {

void set_identity_projection(Var<double> proj) {
  Tensor<double>& t = proj.value_mut();
  t.fill(0.0);
  const std::size_t h = t.dim(0), k = t.dim(1), l = t.dim(2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < std::min(k, l); ++j) t.at({i, j, j}) = 1.0;
}

void set_identity(AffineParams<double>& a) {
  Tensor<double>& w = a.weight.value_mut();
  w.fill(0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i) w.at({i, i}) = 1.0;
  a.bias.value_mut().fill(0.0);
}

void zero_all(ParamList<double> list) {
  for (auto& p : list) testing::zero_out(p.var);
}

}  // namespace

TEST_CASE("config defaults") {
  LinformerConfig c{16, 100, 0, 0, false};
  CHECK(c.slots() == 64);
  CHECK(c.head_count() == 8);
  CHECK(c.head_dim() == 2);
  LinformerConfig small{4, 10, 0, 0, false};
  CHECK(small.slots() == 10);
  CHECK(small.head_count() == 1);
  LinformerConfig bad{6, 10, 0, 4, false};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("identity projections reproduce dense attention") {
  Rng rng(21);
  for (std::size_t l : {1u, 5u, 16u}) {
    for (bool shared : {false, true}) {
      LinformerConfig c{8, l, l, 2, shared};
      auto p = LinformerParams<double>::init(c, rng);
      set_identity_projection(p.e);
      set_identity_projection(p.f);
      const auto x = wave({2, l, 8}, 0.1 * double(l), 1.0);
      const auto lin = linear_attention(Var<double>(x), c, p).value();
      CHECK(testing::max_abs_diff(lin, dense_attention(x, c, p)) <= 1e-12);
    }
  }
}

TEST_CASE("single token attends to itself") {
  Rng rng(5);
  LinformerConfig c{4, 1, 1, 1, false};
  auto p = LinformerParams<double>::init(c, rng);
  p.e.value_mut().fill(1.0);
  p.f.value_mut().fill(1.0);
  const auto x = wave({1, 1, 4}, 0.7, 1.0);
  const Var<double> xv(x);
  const auto expected = ops::affine(ops::affine(xv, p.v), p.out).value();
  CHECK(testing::max_abs_diff(linear_attention(xv, c, p).value(), expected) <= 1e-14);
}

TEST_CASE("constant keys give uniform weights over the slots") {
  Rng rng(6);
  LinformerConfig c{4, 6, 6, 1, false};
  auto p = LinformerParams<double>::init(c, rng);
  testing::zero_out(p.k.weight);
  testing::zero_out(p.k.bias);
  set_identity_projection(p.f);
  set_identity(p.out);
  const Var<double> x(wave({1, 6, 4}, 0.3, 1.0));
  Tensor<double> probs;
  const auto y = linear_attention(x, c, p, &probs).value();
  for (double v : probs.data()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  const auto v = ops::affine(x, p.v).value();
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t d = 0; d < 4; ++d) {
      double mean = 0;
      for (std::size_t s = 0; s < 6; ++s) mean += v.at({0, s, d}) / 6.0;
      CHECK(y.at({0, t, d}) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("linear attention cost does not need an L x L matrix") {
  Rng rng(7);
  LinformerConfig c{8, 300, 16, 2, false};
  const auto p = LinformerParams<float>::init(c, rng);
  Tensor<float> probs;
  const auto y = linear_attention(Var<float>(wave<float>({1, 300, 8}, 0.2)), c, p, &probs);
  CHECK(y.shape() == Shape{1, 300, 8});
  CHECK(probs.shape() == Shape{2, 300, 16});
  CHECK_THROWS_AS(linear_attention(Var<float>(wave<float>({1, 299, 8}, 0.2)), c, p), DimensionError);
}

TEST_CASE("mlp block") {
  Rng rng(9);
  SUBCASE("zero weights") {
    auto p = MlpParams<double>::init(4, 8, rng);
    ParamList<double> list;
    p.collect(list, "mlp");
    zero_all(list);
    const auto y = mlp_block(Var<double>(wave({2, 3, 4}, 0.1)), p, 0.0, Mode::eval, rng);
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("identity convolutions give relu") {
    auto p = MlpParams<double>::init(4, 4, rng);
    p.w1.value_mut().fill(0.0);
    p.w2.value_mut().fill(0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      p.w1.value_mut().at({i, i, 0}) = 1.0;
      p.w2.value_mut().at({i, i, 0}) = 1.0;
    }
    p.b1.value_mut().fill(0.0);
    p.b2.value_mut().fill(0.0);
    const auto x = wave({2, 3, 4}, 0.4, 1.0);
    const auto y = mlp_block(Var<double>(x), p, 0.0, Mode::train, rng).value();
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("matches a per-timestep two-layer MLP") {
    const auto p = MlpParams<double>::init(3, 5, rng);
    const auto x = wave({2, 4, 3}, 1.7, 1.0);
    const auto y = mlp_block(Var<double>(x), p, 0.0, Mode::eval, rng).value();
    const auto& w1 = p.w1.value();
    const auto& w2 = p.w2.value();
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 4; ++t) {
        double hidden[5];
        for (std::size_t j = 0; j < 5; ++j) {
          double acc = p.b1.value()[j];
          for (std::size_t i = 0; i < 3; ++i) acc += w1.at({j, i, 0}) * x.at({b, t, i});
          hidden[j] = std::max(0.0, acc);
        }
        for (std::size_t o = 0; o < 3; ++o) {
          double acc = p.b2.value()[o];
          for (std::size_t j = 0; j < 5; ++j) acc += w2.at({o, j, 0}) * hidden[j];
          CHECK(y.at({b, t, o}) == doctest::Approx(acc).epsilon(1e-13));
        }
      }
  }
}

TEST_CASE("t-encoder layer") {
  Rng rng(10);
  TEncoderConfig c{{8, 12, 6, 2, false}, 16, 0.1};
  auto p = TEncoderLayerParams<double>::init(c, rng);
  const auto x = wave({2, 12, 8}, 0.5, 2.0);

  SUBCASE("shape and eval determinism") {
    Rng r1(1), r2(2);
    const auto a = t_encoder_layer(Var<double>(x), c, p, Mode::eval, r1).value();
    const auto b = t_encoder_layer(Var<double>(x), c, p, Mode::eval, r2).value();
    CHECK(a.shape() == Shape{2, 12, 8});
    CHECK(a == b);
  }
  SUBCASE("zero sublayers leave two layer norms") {
    ParamList<double> att, mlp;
    p.attention.collect(att, "a");
    p.mlp.collect(mlp, "m");
    zero_all(att);
    zero_all(mlp);
    const Var<double> xv(x);
    const auto expected = layer_norm(layer_norm(xv, p.norm1), p.norm2).value();
    CHECK(testing::max_abs_diff(t_encoder_layer(xv, c, p, Mode::eval, rng).value(), expected) <= 1e-12);
  }
}
