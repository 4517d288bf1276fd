#include "nsrc/metrics.hpp"

#include <cmath>

namespace nsrc {

namespace {
constexpr int kWindow = 7;
constexpr double kK1 = 0.01, kK2 = 0.03;
}  // namespace

ad::TensorPtr ssim(const ad::TensorPtr& a, const ad::TensorPtr& b, double data_range) {
  require(a->shape == b->shape, "ssim: shape mismatch " + ad::shape_str(a->shape) + " vs " +
                                    ad::shape_str(b->shape));
  require(a->shape.size() == 3, "ssim: expected [T,Y,X] inputs");
  require(data_range > 0.0, "ssim: data_range must be positive");
  const int t = a->shape[0], y = a->shape[1], x = a->shape[2];
  if (y < kWindow || x < kWindow)
    fail("ssim: image smaller than the " + std::to_string(kWindow) + "x" +
         std::to_string(kWindow) + " window");

  using namespace ad;
  TensorPtr a5 = reshape(a, {1, 1, t, y, x});
  TensorPtr b5 = reshape(b, {1, 1, t, y, x});
  TensorPtr wbox = constant({1, 1, kWindow, kWindow},
                            std::vector<double>(kWindow * kWindow, 1.0 / (kWindow * kWindow)));
  TensorPtr zerob = constant({1}, {0.0});
  auto box = [&](const TensorPtr& v) { return conv_spatial(v, wbox, zerob); };

  TensorPtr mu_a = box(a5), mu_b = box(b5);
  TensorPtr s_aa = box(mul(a5, a5)), s_bb = box(mul(b5, b5)), s_ab = box(mul(a5, b5));
  TensorPtr var_a = sub(s_aa, mul(mu_a, mu_a));
  TensorPtr var_b = sub(s_bb, mul(mu_b, mu_b));
  TensorPtr cov = sub(s_ab, mul(mu_a, mu_b));

  const double c1 = (kK1 * data_range) * (kK1 * data_range);
  const double c2 = (kK2 * data_range) * (kK2 * data_range);
  TensorPtr num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), c1),
                      add_scalar(mul_scalar(cov, 2.0), c2));
  TensorPtr den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                      add_scalar(add(var_a, var_b), c2));
  // Only interior windows contribute: zero-padded border statistics are biased.
  return mean(crop_spatial(div(num, den), (kWindow - 1) / 2));
}

double ssim_value(const RealArray& a, const RealArray& b, double data_range) {
  ad::NoGradGuard ng;
  auto ta = ad::constant({a.nt, a.ny, a.nx}, a.data);
  auto tb = ad::constant({b.nt, b.ny, b.nx}, b.data);
  return ssim(ta, tb, data_range)->value[0];
}

Metrics leaderboard_metrics(const RealArray& pred, const RealArray& target) {
  require(pred.same_shape(target), "leaderboard_metrics: shape mismatch");
  const double pm = pred.max_value(), tm = target.max_value();
  if (!(pm > 0.0)) fail("leaderboard_metrics: prediction maximum must be positive");
  if (!(tm > 0.0)) fail("leaderboard_metrics: target maximum must be positive");

  RealArray p = pred, t = target;
  for (double& v : p.data) v /= pm;
  for (double& v : t.data) v /= tm;

  double se = 0.0, te = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double d = p.data[i] - t.data[i];
    se += d * d;
    te += t.data[i] * t.data[i];
  }
  const double mse = se / static_cast<double>(p.data.size());

  Metrics m;
  m.psnr = mse <= 1e-30 ? 300.0 : std::min(300.0, -10.0 * std::log10(mse));
  m.ssim = ssim_value(p, t, 1.0);
  m.nmse = se / te;
  return m;
}

}  // namespace nsrc
