// Independent reference implementations used as test oracles. These stay
// deliberately naive (direct loops over the defining formulas) and must not
// call into the code paths they check.
#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "nsrc/arrays.hpp"

namespace oracle {

using nsrc::cplx;

// "same"-padded 2D convolution applied per (batch, time), nested loops.
inline std::vector<double> conv2d_ref(const std::vector<double>& x, int B, int C, int T,
                                      int Y, int X, const std::vector<double>& w, int O,
                                      int KH, int KW, const std::vector<double>& bias) {
  std::vector<double> out(static_cast<std::size_t>(B) * O * T * Y * X, 0.0);
  const int ph = (KH - 1) / 2, pw = (KW - 1) / 2;
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int t = 0; t < T; ++t)
        for (int y = 0; y < Y; ++y)
          for (int x2 = 0; x2 < X; ++x2) {
            double acc = bias[o];
            for (int c = 0; c < C; ++c)
              for (int ky = 0; ky < KH; ++ky)
                for (int kx = 0; kx < KW; ++kx) {
                  const int yy = y + ky - ph, xx = x2 + kx - pw;
                  if (yy < 0 || yy >= Y || xx < 0 || xx >= X) continue;
                  acc += w[((static_cast<std::size_t>(o) * C + c) * KH + ky) * KW + kx] *
                         x[(((static_cast<std::size_t>(b) * C + c) * T + t) * Y + yy) * X + xx];
                }
            out[(((static_cast<std::size_t>(b) * O + o) * T + t) * Y + y) * X + x2] = acc;
          }
  return out;
}

// "same"-padded temporal convolution, nested loops.
inline std::vector<double> conv_t_ref(const std::vector<double>& x, int B, int C, int T,
                                      int Y, int X, const std::vector<double>& w, int O,
                                      int KT, const std::vector<double>& bias) {
  std::vector<double> out(static_cast<std::size_t>(B) * O * T * Y * X, 0.0);
  const int pt = (KT - 1) / 2;
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int t = 0; t < T; ++t)
        for (int y = 0; y < Y; ++y)
          for (int x2 = 0; x2 < X; ++x2) {
            double acc = bias[o];
            for (int c = 0; c < C; ++c)
              for (int k = 0; k < KT; ++k) {
                const int ts = t + k - pt;
                if (ts < 0 || ts >= T) continue;
                acc += w[(static_cast<std::size_t>(o) * C + c) * KT + k] *
                       x[(((static_cast<std::size_t>(b) * C + c) * T + ts) * Y + y) * X + x2];
              }
            out[(((static_cast<std::size_t>(b) * O + o) * T + t) * Y + y) * X + x2] = acc;
          }
  return out;
}

// Centered orthonormal 2D DFT by direct O(N^2) summation.
inline std::vector<cplx> dft2c_ref(const std::vector<cplx>& x, int ny, int nx,
                                   bool inverse) {
  std::vector<cplx> out(static_cast<std::size_t>(ny) * nx);
  const double sgn = inverse ? 1.0 : -1.0;
  const int cy = ny / 2, cx = nx / 2;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ny) * nx);
  for (int ky = 0; ky < ny; ++ky)
    for (int kx = 0; kx < nx; ++kx) {
      cplx acc{0.0, 0.0};
      for (int y = 0; y < ny; ++y)
        for (int x2 = 0; x2 < nx; ++x2) {
          const double ang =
              2.0 * std::numbers::pi *
              (static_cast<double>(ky - cy) * (y - cy) / ny +
               static_cast<double>(kx - cx) * (x2 - cx) / nx);
          acc += x[static_cast<std::size_t>(y) * nx + x2] *
                 cplx{std::cos(ang), sgn * std::sin(ang)};
        }
      out[static_cast<std::size_t>(ky) * nx + kx] = acc * scale;
    }
  return out;
}

// Mean local SSIM with a uniform window, interior pixels only.
inline double ssim_ref(const std::vector<double>& a, const std::vector<double>& b, int T,
                       int Y, int X, double data_range, int win = 7) {
  const int m = (win - 1) / 2;
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double acc = 0.0;
  long count = 0;
  for (int t = 0; t < T; ++t)
    for (int y = m; y < Y - m; ++y)
      for (int x = m; x < X - m; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -m; dy <= m; ++dy)
          for (int dx = -m; dx <= m; ++dx) {
            const double va = a[(static_cast<std::size_t>(t) * Y + y + dy) * X + x + dx];
            const double vb = b[(static_cast<std::size_t>(t) * Y + y + dy) * X + x + dx];
            ma += va;
            mb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double n = static_cast<double>(win) * win;
        ma /= n;
        mb /= n;
        const double va = saa / n - ma * ma;
        const double vb = sbb / n - mb * mb;
        const double cab = sab / n - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cab + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return acc / static_cast<double>(count);
}

struct RefMetrics {
  double psnr, ssim, nmse;
};

// Straightforward reimplementation of the leaderboard metric semantics.
inline RefMetrics leaderboard_ref(const nsrc::RealArray& pred, const nsrc::RealArray& target) {
  double pm = -1e300, tm = -1e300;
  for (double v : pred.data) pm = std::max(pm, v);
  for (double v : target.data) tm = std::max(tm, v);
  double se = 0, te = 0;
  std::vector<double> pn(pred.data.size()), tn(pred.data.size());
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    pn[i] = pred.data[i] / pm;
    tn[i] = target.data[i] / tm;
    se += (pn[i] - tn[i]) * (pn[i] - tn[i]);
    te += tn[i] * tn[i];
  }
  const double mse = se / static_cast<double>(pred.data.size());
  RefMetrics r;
  r.psnr = mse <= 1e-30 ? 300.0 : std::min(300.0, -10.0 * std::log10(mse));
  r.ssim = ssim_ref(pn, tn, pred.nt, pred.ny, pred.nx, 1.0);
  r.nmse = se / te;
  return r;
}

}  // namespace oracle
