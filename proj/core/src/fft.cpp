#include "nsrc/fft.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "nsrc/common.hpp"

namespace nsrc::fft {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct Plan {
  int n = 0;
  std::vector<int> rev;
  std::vector<cplx> w_fwd;  // w[k] = exp(-2 pi i k / n), k < n/2
  std::vector<cplx> w_inv;
};

std::shared_ptr<const Plan> get_plan(int n) {
  static std::mutex mu;
  static std::unordered_map<int, std::shared_ptr<const Plan>> cache;
  std::lock_guard lk(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  auto plan = std::make_shared<Plan>();
  plan->n = n;
  plan->rev.resize(n);
  int lg = 0;
  while ((1 << lg) < n) ++lg;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < lg; ++b)
      if (i & (1 << b)) r |= 1 << (lg - 1 - b);
    plan->rev[i] = r;
  }
  plan->w_fwd.resize(n / 2);
  plan->w_inv.resize(n / 2);
  for (int k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * k / n;
    plan->w_fwd[k] = {std::cos(ang), std::sin(ang)};
    plan->w_inv[k] = std::conj(plan->w_fwd[k]);
  }
  cache.emplace(n, plan);
  return plan;
}

void fft_pow2(cplx* a, int n, bool inverse) {
  if (n <= 1) return;
  const auto plan = get_plan(n);
  const auto& rev = plan->rev;
  for (int i = 0; i < n; ++i) {
    if (i < rev[i]) std::swap(a[i], a[rev[i]]);
  }
  const auto& w = inverse ? plan->w_inv : plan->w_fwd;
  for (int len = 2; len <= n; len <<= 1) {
    const int half = len >> 1;
    const int step = n / len;
    for (int base = 0; base < n; base += len) {
      for (int k = 0; k < half; ++k) {
        const cplx t = a[base + k + half] * w[static_cast<std::size_t>(k) * step];
        a[base + k + half] = a[base + k] - t;
        a[base + k] += t;
      }
    }
  }
}

void bluestein(cplx* x, int n, bool inverse) {
  int m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<cplx> chirp(n);
  for (int k = 0; k < n; ++k) {
    // k^2 stays exactly representable for any practical grid size.
    double ang = std::numbers::pi * static_cast<double>(k) * k / n;
    if (!inverse) ang = -ang;
    chirp[k] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<cplx> a(m, cplx{0.0, 0.0}), b(m, cplx{0.0, 0.0});
  for (int j = 0; j < n; ++j) a[j] = x[j] * chirp[j];
  b[0] = std::conj(chirp[0]);
  for (int j = 1; j < n; ++j) b[j] = b[m - j] = std::conj(chirp[j]);
  fft_pow2(a.data(), m, false);
  fft_pow2(b.data(), m, false);
  for (int j = 0; j < m; ++j) a[j] *= b[j];
  fft_pow2(a.data(), m, true);
  const double inv_m = 1.0 / m;
  for (int k = 0; k < n; ++k) x[k] = chirp[k] * a[k] * inv_m;
}

// Circular left rotation by s, out[i] = in[(i + s) % n].
void rotate_rows(cplx* frame, int ny, int nx, int s) {
  if (s == 0) return;
  std::vector<cplx> tmp(nx);
  for (int y = 0; y < ny; ++y) {
    cplx* row = frame + static_cast<std::size_t>(y) * nx;
    for (int i = 0; i < nx; ++i) tmp[i] = row[(i + s) % nx];
    std::copy(tmp.begin(), tmp.end(), row);
  }
}

void rotate_cols(cplx* frame, int ny, int nx, int s) {
  if (s == 0) return;
  std::vector<cplx> tmp(ny);
  for (int x = 0; x < nx; ++x) {
    for (int i = 0; i < ny; ++i) tmp[i] = frame[static_cast<std::size_t>((i + s) % ny) * nx + x];
    for (int i = 0; i < ny; ++i) frame[static_cast<std::size_t>(i) * nx + x] = tmp[i];
  }
}

}  // namespace

void transform(cplx* data, int n, bool inverse) {
  require(n >= 1, "fft: transform length must be >= 1");
  if (n == 1) return;
  if (is_pow2(n))
    fft_pow2(data, n, inverse);
  else
    bluestein(data, n, inverse);
}

void fft2_centered(cplx* frame, int ny, int nx, bool inverse) {
  require(ny >= 1 && nx >= 1, "fft2_centered: empty frame");
  const int cy = ny / 2, cx = nx / 2;
  // ifftshift: move the center sample to index 0.
  rotate_rows(frame, ny, nx, cx);
  rotate_cols(frame, ny, nx, cy);
  std::vector<cplx> col(ny);
  for (int y = 0; y < ny; ++y) transform(frame + static_cast<std::size_t>(y) * nx, nx, inverse);
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) col[y] = frame[static_cast<std::size_t>(y) * nx + x];
    transform(col.data(), ny, inverse);
    for (int y = 0; y < ny; ++y) frame[static_cast<std::size_t>(y) * nx + x] = col[y];
  }
  // fftshift: move DC back to the center.
  rotate_rows(frame, ny, nx, nx - cx);
  rotate_cols(frame, ny, nx, ny - cy);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ny) * nx);
  const std::size_t n = static_cast<std::size_t>(ny) * nx;
  for (std::size_t i = 0; i < n; ++i) frame[i] *= scale;
}

}  // namespace nsrc::fft
