#pragma once

#include <cstdint>
#include <vector>

#include "nsrc/arrays.hpp"
#include "nsrc/mri_ops.hpp"
#include "nsrc/network.hpp"

namespace nsrc {

// Analytic dynamic phantom: ellipses on a background, with per-frame axis
// modulation standing in for cardiac motion. Coordinates are normalized to
// [-1, 1] on both axes.
struct Ellipse {
  double cy = 0.0, cx = 0.0;
  double ay = 0.3, ax = 0.3;
  double intensity = 0.5;
  double motion_amp = 0.0;    // relative axis modulation amplitude
  double motion_phase = 0.0;  // radians
};

struct PhantomSpec {
  int ny = 64, nx = 64, nt = 4;
  double background = 0.05;
  std::vector<Ellipse> ellipses;
  void validate() const;
};

// Deterministic for a given seed; the seed drives the smooth complex phase
// ramp so images are genuinely complex.
ComplexArray make_phantom(const PhantomSpec& spec, std::uint64_t seed);

// Gaussian-profile coil maps with smooth per-coil phase, pixel-wise
// normalized so sum_c |s_c|^2 = 1.
CoilSensitivities make_coils(int n_coils, int ny, int nx, double profile_width,
                             std::uint64_t seed);

struct AcquisitionSample {
  ComplexArray y_meas;
  SamplingMask mask;
  ComplexArray y_full;     // fully sampled noisy k-space (same noise realization)
  RealArray x_rss_target;  // rss(y_full)
  MetaInfo meta;
};

// Y_full = full-sampling forward model plus i.i.d. complex Gaussian noise of
// std noise_sigma per component; y_meas masks the same Y_full.
AcquisitionSample simulate_acquisition(const ComplexArray& image,
                                       const CoilSensitivities& coils, int accel,
                                       int acs_count, int offset, double noise_sigma,
                                       std::uint64_t seed, const MetaInfo& meta);

// Noise std that realizes a target k-space SNR for a given clean spectrum.
double sigma_for_snr_db(const ComplexArray& y_clean, double snr_db);

// Quantifies the generalized-inverse-vs-RSS bias: under full sampling the
// lambda -> 0 variational limit is A^H Y, whose magnitude does not converge
// to RSS(Y) once coil phases vary spatially.
struct BiasReport {
  double nmse = 0.0;            // ||  |A^H Y| - RSS(Y) ||^2 / || RSS(Y) ||^2
  RealArray generalized_mag;    // |A^H Y|
  RealArray rss_image;          // RSS(Y)
  RealArray error_map;          // pointwise absolute difference
};

BiasReport bias_demo(const CoilSensitivities& coils, const ComplexArray& image,
                     double noise_sigma, std::uint64_t seed = 0);

}  // namespace nsrc
