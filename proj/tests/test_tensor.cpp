#include <doctest.h>

#include <random>

#include "nsrc/tensor.hpp"
#include "oracles.hpp"

using namespace nsrc;
using ad::TensorPtr;

namespace {

std::vector<double> randv(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv_spatial: 1x1 identity kernel") {
  std::mt19937_64 rng(1);
  auto x = ad::constant({1, 1, 2, 4, 5}, randv(rng, 40));
  auto w = ad::constant({1, 1, 1, 1}, {1.0});
  auto b = ad::constant({1}, {0.0});
  auto o = ad::conv_spatial(x, w, b);
  CHECK(o->value == x->value);
}

TEST_CASE("conv_spatial: zero input gives constant bias") {
  auto x = ad::zeros({1, 2, 1, 3, 3});
  std::mt19937_64 rng(2);
  auto w = ad::constant({1, 2, 3, 3}, randv(rng, 18));
  auto b = ad::constant({1}, {0.5});
  auto o = ad::conv_spatial(x, w, b);
  for (double v : o->value) CHECK(v == doctest::Approx(0.5).epsilon(0));
}

TEST_CASE("conv_spatial: random case matches nested-loop oracle") {
  std::mt19937_64 rng(3);
  const int B = 2, C = 3, T = 2, Y = 6, X = 7, O = 4;
  auto xv = randv(rng, static_cast<std::size_t>(B) * C * T * Y * X);
  auto wv = randv(rng, static_cast<std::size_t>(O) * C * 9);
  auto bv = randv(rng, O);
  auto o = ad::conv_spatial(ad::constant({B, C, T, Y, X}, xv),
                            ad::constant({O, C, 3, 3}, wv), ad::constant({O}, bv));
  auto ref = oracle::conv2d_ref(xv, B, C, T, Y, X, wv, O, 3, 3, bv);
  CHECK(max_abs_diff(o->value, ref) < 1e-12);
}

TEST_CASE("conv_spatial: shape errors name the offending axis") {
  auto x = ad::zeros({1, 3, 1, 4, 4});
  auto w = ad::zeros({2, 4, 3, 3});
  auto b = ad::zeros({2});
  CHECK_THROWS_WITH_AS(ad::conv_spatial(x, w, b),
                       doctest::Contains("in-channel axis mismatch"), Error);
  CHECK_THROWS_AS(ad::conv_spatial(x, ad::zeros({2, 3, 2, 3}), b), Error);  // even kernel
}

TEST_CASE("conv_temporal: kt=1 identity and constant-signal fixed point") {
  std::mt19937_64 rng(4);
  auto x = ad::constant({1, 1, 3, 2, 2}, randv(rng, 12));
  auto o = ad::conv_temporal(x, ad::constant({1, 1, 1}, {1.0}), ad::constant({1}, {0.0}));
  CHECK(o->value == x->value);

  // t-constant input with an averaging kernel keeps interior frames unchanged.
  std::vector<double> xc(2 * 3 * 4);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 8; ++p) xc[t * 8 + p] = 0.25 * p;
  auto xt = ad::constant({1, 1, 3, 2, 4}, xc);
  auto avg = ad::conv_temporal(xt, ad::constant({1, 1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}),
                               ad::constant({1}, {0.0}));
  for (int p = 0; p < 8; ++p)
    CHECK(avg->value[1 * 8 + p] == doctest::Approx(0.25 * p).epsilon(1e-12));
}

TEST_CASE("conv_temporal: random case matches nested-loop oracle") {
  std::mt19937_64 rng(5);
  const int B = 1, C = 2, T = 5, Y = 3, X = 4, O = 3;
  auto xv = randv(rng, static_cast<std::size_t>(B) * C * T * Y * X);
  auto wv = randv(rng, static_cast<std::size_t>(O) * C * 3);
  auto bv = randv(rng, O);
  auto o = ad::conv_temporal(ad::constant({B, C, T, Y, X}, xv),
                             ad::constant({O, C, 3}, wv), ad::constant({O}, bv));
  auto ref = oracle::conv_t_ref(xv, B, C, T, Y, X, wv, O, 3, bv);
  CHECK(max_abs_diff(o->value, ref) < 1e-12);
}

TEST_CASE("group_norm: per-group statistics and affine behaviour") {
  std::mt19937_64 rng(6);
  const int C = 6, G = 3;
  auto x = ad::constant({1, C, 2, 4, 4}, randv(rng, C * 32, -2.0, 3.0));
  auto ones = ad::constant({C}, std::vector<double>(C, 1.0));
  auto zero = ad::constant({C}, std::vector<double>(C, 0.0));
  auto o = ad::group_norm(x, G, ones, zero, 1e-12);
  const std::size_t gsize = (C / G) * 32;
  for (int g = 0; g < G; ++g) {
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < gsize; ++k) m += o->value[g * gsize + k];
    m /= static_cast<double>(gsize);
    for (std::size_t k = 0; k < gsize; ++k) {
      const double d = o->value[g * gsize + k] - m;
      v += d * d;
    }
    v /= static_cast<double>(gsize);
    CHECK(std::fabs(m) < 1e-10);
    CHECK(std::fabs(v - 1.0) < 1e-6);
  }

  // gamma = 0 -> output equals beta everywhere
  auto beta = ad::constant({C}, randv(rng, C));
  auto o2 = ad::group_norm(x, G, zero, beta);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < 32; ++k)
      CHECK(o2->value[c * 32 + k] == doctest::Approx(beta->value[c]).epsilon(0));

  CHECK_THROWS_AS(ad::group_norm(x, 4, ones, zero), Error);  // 6 % 4 != 0
}

TEST_CASE("group_norm: gradient matches finite differences") {
  std::mt19937_64 rng(7);
  auto x = ad::leaf({1, 4, 1, 3, 3}, randv(rng, 36));
  auto g = ad::leaf({4}, randv(rng, 4, 0.5, 1.5));
  auto b = ad::leaf({4}, randv(rng, 4));
  auto proj = ad::constant({1, 4, 1, 3, 3}, randv(rng, 36));
  const double err = ad::grad_check(
      [&](const std::vector<TensorPtr>& p) {
        return ad::sum(ad::mul(ad::group_norm(p[0], 2, p[1], p[2]), proj));
      },
      {x, g, b});
  CHECK(err < 1e-4);
}

TEST_CASE("activation: fixed points and asymptote") {
  auto x = ad::constant({3}, {0.0, 30.0, -1.0});
  auto silu = ad::activation(x, ad::Act::kSilu);
  CHECK(silu->value[0] == 0.0);
  CHECK(silu->value[1] == doctest::Approx(30.0).epsilon(1e-12));  // silu(v) -> v
  auto sig = ad::activation(x, ad::Act::kSigmoid);
  CHECK(sig->value[0] == 0.5);
  auto th = ad::activation(x, ad::Act::kTanh);
  CHECK(th->value[0] == 0.0);
}

TEST_CASE("activation: gradients match finite differences") {
  std::mt19937_64 rng(8);
  for (auto kind : {ad::Act::kSilu, ad::Act::kSigmoid, ad::Act::kTanh}) {
    auto x = ad::leaf({11}, randv(rng, 11, -2.0, 2.0));
    auto proj = ad::constant({11}, randv(rng, 11));
    const double err = ad::grad_check(
        [&](const std::vector<TensorPtr>& p) {
          return ad::sum(ad::mul(ad::activation(p[0], kind), proj));
        },
        {x});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("film: identity, collapse, and elementwise oracle") {
  std::mt19937_64 rng(9);
  const int C = 3;
  auto x = ad::constant({1, C, 2, 2, 2}, randv(rng, C * 8));
  auto zero = ad::constant({1, C}, std::vector<double>(C, 0.0));
  CHECK(ad::film(x, zero, zero)->value == x->value);

  auto minus1 = ad::constant({1, C}, std::vector<double>(C, -1.0));
  auto shift = ad::constant({1, C}, randv(rng, C));
  auto o = ad::film(x, minus1, shift);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < 8; ++k)
      CHECK(o->value[c * 8 + k] == doctest::Approx(shift->value[c]).epsilon(0));

  auto sc = ad::constant({1, C}, randv(rng, C));
  auto sh = ad::constant({1, C}, randv(rng, C));
  auto o2 = ad::film(x, sc, sh);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < 8; ++k) {
      const double expect = x->value[c * 8 + k] * (1.0 + sc->value[c]) + sh->value[c];
      CHECK(o2->value[c * 8 + k] == doctest::Approx(expect).epsilon(1e-15));
    }

  CHECK_THROWS_AS(ad::film(x, ad::constant({1, 2}, {0, 0}), zero), Error);
}

TEST_CASE("resample: averaging and nearest-neighbor behaviour") {
  // down then up on a constant image is the identity
  auto c = ad::constant({1, 1, 1, 4, 4}, std::vector<double>(16, 0.7));
  auto du = ad::resample_up(ad::resample_down(c));
  CHECK(du->value == c->value);

  // down on a +-1 checkerboard averages to zero
  std::vector<double> board(16);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) board[y * 4 + x] = ((y + x) % 2) ? 1.0 : -1.0;
  auto z = ad::resample_down(ad::constant({1, 1, 1, 4, 4}, board));
  for (double v : z->value) CHECK(v == 0.0);

  CHECK_THROWS_AS(ad::resample_down(ad::zeros({1, 1, 1, 3, 4})), Error);

  std::mt19937_64 rng(10);
  auto x = ad::leaf({1, 2, 1, 4, 4}, randv(rng, 32));
  auto pd = ad::constant({1, 2, 1, 2, 2}, randv(rng, 8));
  const double err = ad::grad_check(
      [&](const std::vector<TensorPtr>& p) {
        return ad::sum(ad::mul(ad::resample_down(p[0]), pd));
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("linear: identity, bias, and matmul oracle") {
  std::mt19937_64 rng(11);
  const int n = 4;
  std::vector<double> eye(n * n, 0.0);
  for (int i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  auto x = ad::constant({1, n}, randv(rng, n));
  auto o = ad::linear(x, ad::constant({n, n}, eye), ad::constant({n}, std::vector<double>(n, 0.0)));
  CHECK(o->value == x->value);

  auto b = ad::constant({3}, randv(rng, 3));
  auto o2 = ad::linear(ad::zeros({1, n}), ad::constant({3, n}, randv(rng, 3 * n)), b);
  CHECK(o2->value == b->value);

  const int B = 2, in = 5, out = 3;
  auto xv = randv(rng, B * in);
  auto wv = randv(rng, out * in);
  auto bv = randv(rng, out);
  auto o3 = ad::linear(ad::constant({B, in}, xv), ad::constant({out, in}, wv),
                       ad::constant({out}, bv));
  for (int bb = 0; bb < B; ++bb)
    for (int oo = 0; oo < out; ++oo) {
      double acc = bv[oo];
      for (int i = 0; i < in; ++i) acc += wv[oo * in + i] * xv[bb * in + i];
      CHECK(o3->value[bb * out + oo] == doctest::Approx(acc).epsilon(1e-12));
    }

  CHECK_THROWS_AS(
      ad::linear(ad::zeros({1, 4}), ad::zeros({3, 5}), ad::zeros({3})), Error);
}

TEST_CASE("backward: basic derivatives and additive accumulation") {
  // y = x -> grad 1 (via reshape, an identity op)
  auto x = ad::leaf({1}, {3.0});
  auto y = ad::reshape(x, {1});
  ad::backward(y);
  CHECK(x->grad[0] == 1.0);

  // y = sum(x . x) -> grad 2x
  std::mt19937_64 rng(12);
  auto x2 = ad::leaf({5}, randv(rng, 5));
  ad::backward(ad::sum(ad::mul(x2, x2)));
  for (int i = 0; i < 5; ++i)
    CHECK(x2->grad[i] == doctest::Approx(2.0 * x2->value[i]).epsilon(1e-14));

  // a tensor feeding two consumers sums both contributions: y = x + x
  auto x3 = ad::leaf({3}, {1.0, 2.0, 3.0});
  ad::backward(ad::sum(ad::add(x3, x3)));
  for (int i = 0; i < 3; ++i) CHECK(x3->grad[i] == 2.0);

  CHECK_THROWS_AS(ad::backward(ad::leaf({2}, {1.0, 2.0})), Error);  // non-scalar root
}

TEST_CASE("backward: composite conv -> norm -> activation chain vs finite differences") {
  std::mt19937_64 rng(13);
  auto x = ad::leaf({1, 2, 2, 4, 4}, randv(rng, 64));
  auto w = ad::leaf({2, 2, 3, 3}, randv(rng, 36));
  auto b = ad::leaf({2}, randv(rng, 2));
  auto g = ad::leaf({2}, randv(rng, 2, 0.5, 1.5));
  auto be = ad::leaf({2}, randv(rng, 2));
  auto proj = ad::constant({1, 2, 2, 4, 4}, randv(rng, 64));
  const double err = ad::grad_check(
      [&](const std::vector<TensorPtr>& p) {
        auto h = ad::conv_spatial(p[0], p[1], p[2]);
        h = ad::group_norm(h, 2, p[3], p[4]);
        h = ad::activation(h, ad::Act::kSilu);
        return ad::sum(ad::mul(h, proj));
      },
      {x, w, b, g, be});
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check harness: exactness and negative control") {
  // quadratic f: central differences are exact up to roundoff
  auto x = ad::leaf({4}, {0.3, -0.7, 1.1, 0.05});
  const double err = ad::grad_check(
      [](const std::vector<TensorPtr>& p) { return ad::sum(ad::mul(p[0], p[0])); }, {x},
      1e-5);
  CHECK(err < 1e-9);

  // deliberately corrupted gradient must be flagged
  struct Corrupt {
    static TensorPtr apply(const TensorPtr& a) {
      std::vector<double> v(a->value.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * a->value[i];
      auto out = std::make_shared<ad::Tensor>();
      out->shape = a->shape;
      out->value = std::move(v);
      out->requires_grad = true;
      out->parents = {a};
      TensorPtr pa = a;
      out->backprop = [pa](ad::Tensor& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad[i] += self.grad[i] * (2.0 * pa->value[i] + 0.5);  // wrong on purpose
      };
      return out;
    }
  };
  auto x2 = ad::leaf({4}, {0.3, -0.7, 1.1, 0.05});
  const double bad = ad::grad_check(
      [](const std::vector<TensorPtr>& p) { return ad::sum(Corrupt::apply(p[0])); }, {x2},
      1e-5);
  CHECK(bad > 1e-2);
}

TEST_CASE("linearity of conv, linear, resample, and neutral film") {
  std::mt19937_64 rng(14);
  const double alpha = 0.37, beta = -1.21;
  auto xv = randv(rng, 64), yv = randv(rng, 64);
  std::vector<double> mixv(64);
  for (int i = 0; i < 64; ++i) mixv[i] = alpha * xv[i] + beta * yv[i];

  auto apply_and_mix = [&](auto&& f) {
    auto fx = f(ad::constant({1, 2, 2, 4, 4}, xv));
    auto fy = f(ad::constant({1, 2, 2, 4, 4}, yv));
    auto fmix = f(ad::constant({1, 2, 2, 4, 4}, mixv));
    double worst = 0.0;
    for (std::size_t i = 0; i < fmix->value.size(); ++i)
      worst = std::max(worst,
                       std::fabs(fmix->value[i] - (alpha * fx->value[i] + beta * fy->value[i])));
    return worst;
  };

  auto w = ad::constant({2, 2, 3, 3}, randv(rng, 36));
  auto b0 = ad::constant({2}, {0.0, 0.0});
  CHECK(apply_and_mix([&](const TensorPtr& t) { return ad::conv_spatial(t, w, b0); }) < 1e-12);
  CHECK(apply_and_mix([&](const TensorPtr& t) { return ad::resample_down(t); }) < 1e-12);
  CHECK(apply_and_mix([&](const TensorPtr& t) { return ad::resample_up(t); }) < 1e-12);
  auto zmod = ad::constant({1, 2}, {0.0, 0.0});
  CHECK(apply_and_mix([&](const TensorPtr& t) { return ad::film(t, zmod, zmod); }) < 1e-12);

  auto lw = ad::constant({3, 6}, randv(rng, 18));
  auto lb = ad::constant({3}, {0.0, 0.0, 0.0});
  auto lx = randv(rng, 6), ly = randv(rng, 6);
  std::vector<double> lmix(6);
  for (int i = 0; i < 6; ++i) lmix[i] = alpha * lx[i] + beta * ly[i];
  auto ox = ad::linear(ad::constant({1, 6}, lx), lw, lb);
  auto oy = ad::linear(ad::constant({1, 6}, ly), lw, lb);
  auto om = ad::linear(ad::constant({1, 6}, lmix), lw, lb);
  for (int i = 0; i < 3; ++i)
    CHECK(std::fabs(om->value[i] - (alpha * ox->value[i] + beta * oy->value[i])) < 1e-12);
}

TEST_CASE("parameter registry: name uniqueness and exact scalar count") {
  ad::ParamRegistry reg;
  reg.add("a.weight", {3, 4}, std::vector<double>(12, 0.0));
  reg.add("a.bias", {4}, std::vector<double>(4, 0.0));
  reg.add("frozen", {5}, std::vector<double>(5, 0.0), false);
  CHECK(reg.trainable_scalar_count() == 16);
  CHECK(reg.find("a.bias") != nullptr);
  CHECK(reg.find("missing") == nullptr);
  CHECK_THROWS_AS(reg.add("a.weight", {1}, {0.0}), Error);
}

TEST_CASE("structural ops: concat/slice/crop round trips") {
  std::mt19937_64 rng(15);
  auto a = ad::constant({1, 2, 1, 3, 3}, randv(rng, 18));
  auto b = ad::constant({1, 3, 1, 3, 3}, randv(rng, 27));
  auto cat = ad::concat_channels({a, b});
  CHECK(cat->shape == std::vector<int>({1, 5, 1, 3, 3}));
  CHECK(ad::slice_channels(cat, 0, 2)->value == a->value);
  CHECK(ad::slice_channels(cat, 2, 5)->value == b->value);

  auto big = ad::constant({1, 1, 1, 5, 5}, randv(rng, 25));
  auto crop = ad::crop_spatial(big, 1);
  CHECK(crop->shape == std::vector<int>({1, 1, 1, 3, 3}));
  CHECK(crop->value[0] == big->value[6]);

  auto fm = ad::frame_max(ad::constant({2, 2, 2}, {1, 5, 2, 3, -1, -2, -9, -3}));
  CHECK(fm->value == std::vector<double>({5.0, -1.0}));
}
