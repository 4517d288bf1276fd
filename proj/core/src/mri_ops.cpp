#include "nsrc/mri_ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "nsrc/fft.hpp"

namespace nsrc {

int SamplingMask::kept_count() const {
  int n = 0;
  for (auto k : kept) n += k ? 1 : 0;
  return n;
}

std::vector<int> SamplingMask::kept_lines() const {
  std::vector<int> out;
  for (int i = 0; i < ny; ++i)
    if (kept[i]) out.push_back(i);
  return out;
}

SamplingMask make_mask(int ny, int accel, int acs_count, int offset) {
  require(ny >= 1, "make_mask: ny must be >= 1");
  require(accel >= 1, "make_mask: acceleration must be >= 1");
  if (acs_count > ny)
    fail("make_mask: acs_count " + std::to_string(acs_count) + " exceeds ny " +
         std::to_string(ny));
  require(acs_count >= 0, "make_mask: acs_count must be >= 0");
  require(offset >= 0 && offset < accel, "make_mask: offset must be in [0, accel)");
  SamplingMask m;
  m.ny = ny;
  m.accel = accel;
  m.acs_count = acs_count;
  m.offset = offset;
  m.kept.assign(ny, 0);
  for (int i = offset; i < ny; i += accel) m.kept[i] = 1;
  const int start = ny / 2 - acs_count / 2;
  for (int i = start; i < start + acs_count; ++i) m.kept[i] = 1;
  return m;
}

SamplingMask full_mask(int ny) { return make_mask(ny, 1, 0, 0); }

ComplexArray apply_mask(const SamplingMask& m, const ComplexArray& y) {
  if (m.ny != y.ny)
    fail("apply_mask: mask has ny=" + std::to_string(m.ny) + ", data has ny=" +
         std::to_string(y.ny));
  ComplexArray out(y.nc, y.nt, y.ny, y.nx);
  for (int c = 0; c < y.nc; ++c)
    for (int t = 0; t < y.nt; ++t)
      for (int line = 0; line < y.ny; ++line) {
        if (!m.keeps(line)) continue;
        const std::size_t off = y.frame_index(c, t) + static_cast<std::size_t>(line) * y.nx;
        std::copy(y.data.begin() + off, y.data.begin() + off + y.nx, out.data.begin() + off);
      }
  return out;
}

namespace {

ComplexArray transform_frames(const ComplexArray& x, bool inverse) {
  ComplexArray out = x;
  const std::size_t frames = static_cast<std::size_t>(x.nc) * x.nt;
  parallel_for(frames, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t f = lo; f < hi; ++f)
      fft::fft2_centered(out.data.data() + f * x.plane(), x.ny, x.nx, inverse);
  });
  return out;
}

}  // namespace

ComplexArray fft2c(const ComplexArray& x) { return transform_frames(x, false); }
ComplexArray ifft2c(const ComplexArray& y) { return transform_frames(y, true); }

double CoilSensitivities::max_normalization_error() const {
  double worst = 0.0;
  for (int y = 0; y < maps.ny; ++y)
    for (int x = 0; x < maps.nx; ++x) {
      double s = 0.0;
      for (int c = 0; c < maps.nc; ++c) s += std::norm(maps.at(c, 0, y, x));
      worst = std::max(worst, std::fabs(s - 1.0));
    }
  return worst;
}

void CoilSensitivities::check_normalized(const char* who) const {
  require(maps.nt == 1, std::string(who) + ": sensitivity maps must be time-constant");
  const double err = max_normalization_error();
  if (err > 1e-10)
    fail(std::string(who) + ": coil sensitivities not normalized (max |sum|s|^2 - 1| = " +
         std::to_string(err) + ")");
}

ComplexArray forward_model(const ComplexArray& image, const CoilSensitivities& coils,
                           const SamplingMask& m) {
  require(image.nc == 1, "forward_model: image must have a single coil axis");
  require(image.ny == coils.maps.ny && image.nx == coils.maps.nx,
          "forward_model: image/coils grid mismatch");
  coils.check_normalized("forward_model");
  const int nc = coils.n_coils();
  ComplexArray coil_imgs(nc, image.nt, image.ny, image.nx);
  for (int c = 0; c < nc; ++c)
    for (int t = 0; t < image.nt; ++t) {
      const std::size_t po = coil_imgs.frame_index(c, t);
      const std::size_t pi = image.frame_index(0, t);
      const std::size_t ps = coils.maps.frame_index(c, 0);
      for (std::size_t k = 0; k < image.plane(); ++k)
        coil_imgs.data[po + k] = coils.maps.data[ps + k] * image.data[pi + k];
    }
  return apply_mask(m, fft2c(coil_imgs));
}

ComplexArray adjoint_model(const ComplexArray& y, const CoilSensitivities& coils,
                           const SamplingMask& m) {
  require(y.nc == coils.n_coils(), "adjoint_model: coil count mismatch");
  require(y.ny == coils.maps.ny && y.nx == coils.maps.nx,
          "adjoint_model: data/coils grid mismatch");
  coils.check_normalized("adjoint_model");
  ComplexArray imgs = ifft2c(apply_mask(m, y));
  ComplexArray out(1, y.nt, y.ny, y.nx);
  for (int c = 0; c < y.nc; ++c)
    for (int t = 0; t < y.nt; ++t) {
      const std::size_t po = out.frame_index(0, t);
      const std::size_t pi = imgs.frame_index(c, t);
      const std::size_t ps = coils.maps.frame_index(c, 0);
      for (std::size_t k = 0; k < out.plane(); ++k)
        out.data[po + k] += std::conj(coils.maps.data[ps + k]) * imgs.data[pi + k];
    }
  return out;
}

RealArray rss(const ComplexArray& y) {
  ComplexArray imgs = ifft2c(y);
  RealArray out(y.nt, y.ny, y.nx);
  std::vector<double> mags(y.nc);
  for (int t = 0; t < y.nt; ++t)
    for (int yy = 0; yy < y.ny; ++yy)
      for (int xx = 0; xx < y.nx; ++xx) {
        for (int c = 0; c < y.nc; ++c) mags[c] = std::norm(imgs.at(c, t, yy, xx));
        std::sort(mags.begin(), mags.end());
        double acc = 0.0;
        for (double v : mags) acc += v;
        out.at(t, yy, xx) = std::sqrt(acc);
      }
  return out;
}

// ---------------------------------------------------------------------------
// autodiff bridges
// ---------------------------------------------------------------------------

ad::TensorPtr to_channels(const ComplexArray& a) {
  std::vector<double> v(2 * a.numel());
  const std::size_t vol = static_cast<std::size_t>(a.nt) * a.plane();
  for (int c = 0; c < a.nc; ++c) {
    const cplx* src = a.data.data() + static_cast<std::size_t>(c) * vol;
    double* re = v.data() + static_cast<std::size_t>(2 * c) * vol;
    double* im = v.data() + static_cast<std::size_t>(2 * c + 1) * vol;
    for (std::size_t k = 0; k < vol; ++k) {
      re[k] = src[k].real();
      im[k] = src[k].imag();
    }
  }
  return ad::constant({1, 2 * a.nc, a.nt, a.ny, a.nx}, std::move(v));
}

ComplexArray from_channels(const ad::Tensor& t) {
  require(t.shape.size() == 5 && t.shape[0] == 1 && t.shape[1] % 2 == 0,
          "from_channels: expected [1,2*nc,t,y,x], got " + ad::shape_str(t.shape));
  const int nc = t.shape[1] / 2, nt = t.shape[2], ny = t.shape[3], nx = t.shape[4];
  ComplexArray out(nc, nt, ny, nx);
  const std::size_t vol = static_cast<std::size_t>(nt) * ny * nx;
  for (int c = 0; c < nc; ++c) {
    const double* re = t.value.data() + static_cast<std::size_t>(2 * c) * vol;
    const double* im = t.value.data() + static_cast<std::size_t>(2 * c + 1) * vol;
    cplx* dst = out.data.data() + static_cast<std::size_t>(c) * vol;
    for (std::size_t k = 0; k < vol; ++k) dst[k] = {re[k], im[k]};
  }
  return out;
}

namespace {

// In-place centered FFT over every (coil, frame) slice of a channel-pair
// buffer shaped [1, 2*nc, nt, ny, nx].
void fft_channel_buffer(std::vector<double>& v, int nc, int nt, int ny, int nx,
                        bool inverse) {
  const std::size_t plane = static_cast<std::size_t>(ny) * nx;
  const std::size_t vol = static_cast<std::size_t>(nt) * plane;
  parallel_for(static_cast<std::size_t>(nc) * nt, [&](std::size_t lo, std::size_t hi) {
    std::vector<cplx> frame(plane);
    for (std::size_t f = lo; f < hi; ++f) {
      const int c = static_cast<int>(f) / nt;
      const int t = static_cast<int>(f) % nt;
      double* re = v.data() + static_cast<std::size_t>(2 * c) * vol + t * plane;
      double* im = v.data() + static_cast<std::size_t>(2 * c + 1) * vol + t * plane;
      for (std::size_t k = 0; k < plane; ++k) frame[k] = {re[k], im[k]};
      fft::fft2_centered(frame.data(), ny, nx, inverse);
      for (std::size_t k = 0; k < plane; ++k) {
        re[k] = frame[k].real();
        im[k] = frame[k].imag();
      }
    }
  });
}

ad::TensorPtr ad_fft_impl(const ad::TensorPtr& x, bool inverse) {
  require(x->shape.size() == 5 && x->shape[0] == 1 && x->shape[1] % 2 == 0,
          "ad_fft2c: expected [1,2*nc,t,y,x], got " + ad::shape_str(x->shape));
  const int nc = x->shape[1] / 2, nt = x->shape[2], ny = x->shape[3], nx = x->shape[4];
  std::vector<double> v = x->value;
  fft_channel_buffer(v, nc, nt, ny, nx, inverse);
  ad::TensorPtr px = x;
  std::vector<ad::TensorPtr> parents{x};
  auto out = std::make_shared<ad::Tensor>();
  out->shape = x->shape;
  out->value = std::move(v);
  if (ad::grad_enabled() && x->requires_grad) {
    out->requires_grad = true;
    out->parents = parents;
    // The map is unitary, so the adjoint of fft2c is ifft2c and vice versa.
    out->backprop = [px, nc, nt, ny, nx, inverse](ad::Tensor& self) {
      px->ensure_grad();
      std::vector<double> g = self.grad;
      fft_channel_buffer(g, nc, nt, ny, nx, !inverse);
      for (std::size_t i = 0; i < g.size(); ++i) px->grad[i] += g[i];
    };
  }
  return out;
}

}  // namespace

ad::TensorPtr ad_fft2c(const ad::TensorPtr& x) { return ad_fft_impl(x, false); }
ad::TensorPtr ad_ifft2c(const ad::TensorPtr& x) { return ad_fft_impl(x, true); }

ad::TensorPtr mask_channel(const SamplingMask& m, int nt, int nx) {
  std::vector<double> v(static_cast<std::size_t>(nt) * m.ny * nx);
  for (int t = 0; t < nt; ++t)
    for (int line = 0; line < m.ny; ++line) {
      if (!m.keeps(line)) continue;
      double* row = v.data() + (static_cast<std::size_t>(t) * m.ny + line) * nx;
      std::fill(row, row + nx, 1.0);
    }
  return ad::constant({1, 1, nt, m.ny, nx}, std::move(v));
}

}  // namespace nsrc
