#pragma once

#include <cstdint>
#include <vector>

#include "nsrc/arrays.hpp"
#include "nsrc/tensor.hpp"

namespace nsrc {

// Binary Cartesian line mask along ky. Equispaced lines (offset mod accel)
// plus a contiguous ACS block centered at ny/2 (the centered-FFT DC line).
struct SamplingMask {
  int ny = 0;
  int accel = 1;
  int acs_count = 0;
  int offset = 0;
  std::vector<std::uint8_t> kept;  // size ny, 0/1 per line

  bool keeps(int line) const { return kept[line] != 0; }
  int kept_count() const;
  std::vector<int> kept_lines() const;
};

SamplingMask make_mask(int ny, int accel, int acs_count, int offset);
SamplingMask full_mask(int ny);

ComplexArray apply_mask(const SamplingMask& m, const ComplexArray& y);

// Centered orthonormal frame-wise 2D FFT per (coil, time); ifft2c is both the
// inverse and the exact adjoint.
ComplexArray fft2c(const ComplexArray& x);
ComplexArray ifft2c(const ComplexArray& y);

// Time-constant coil sensitivity maps [nc, 1, ny, nx], pixel-wise normalized
// so sum_c |s_c|^2 = 1.
struct CoilSensitivities {
  ComplexArray maps;
  int n_coils() const { return maps.nc; }
  double max_normalization_error() const;
  void check_normalized(const char* who) const;
};

// y_c = S_I F (s_c . x) for an image [1, nt, ny, nx].
ComplexArray forward_model(const ComplexArray& image, const CoilSensitivities& coils,
                           const SamplingMask& m);
// x = sum_c conj(s_c) . F^H (S_I y_c); the generalized inverse under full sampling.
ComplexArray adjoint_model(const ComplexArray& y, const CoilSensitivities& coils,
                           const SamplingMask& m);

// Root-sum-of-squares reconstruction of multi-coil k-space. The per-pixel coil
// sum is accumulated in magnitude-sorted order, so the result is bit-exact
// under any coil permutation.
RealArray rss(const ComplexArray& y);

// ---- autodiff bridges (complex data as re/im channel pairs) ----
// [nc,nt,ny,nx] -> constant [1, 2*nc, nt, ny, nx] with channels (re0,im0,re1,...).
ad::TensorPtr to_channels(const ComplexArray& a);
ComplexArray from_channels(const ad::Tensor& t);
// Per-coil centered orthonormal FFT as differentiable ops on channel pairs.
ad::TensorPtr ad_fft2c(const ad::TensorPtr& x);
ad::TensorPtr ad_ifft2c(const ad::TensorPtr& x);
// Constant [1,1,nt,ny,nx] tensor holding the mask line indicator.
ad::TensorPtr mask_channel(const SamplingMask& m, int nt, int nx);

}  // namespace nsrc
