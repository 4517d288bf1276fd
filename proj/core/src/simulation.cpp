#include "nsrc/simulation.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace nsrc {

void PhantomSpec::validate() const {
  require(ny >= 1 && nx >= 1 && nt >= 1, "phantom: empty grid");
  require(background >= 0.0 && background <= 1.0, "phantom: background must be in [0,1]");
  for (const Ellipse& e : ellipses) {
    require(e.intensity >= 0.0 && e.intensity <= 1.0,
            "phantom: ellipse intensity must be in [0,1]");
    require(e.ay > 0.0 && e.ax > 0.0, "phantom: ellipse axes must be positive");
    const double reach_y = std::fabs(e.cy) + e.ay * (1.0 + std::fabs(e.motion_amp));
    const double reach_x = std::fabs(e.cx) + e.ax * (1.0 + std::fabs(e.motion_amp));
    if (reach_y > 1.0 || reach_x > 1.0) fail("phantom: ellipse out of grid bounds");
  }
}

ComplexArray make_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Smooth phase ramp phi(y,x) = a0 + a1*Y + a2*X + a3*Y*X.
  const double a0 = u(rng) * std::numbers::pi;
  const double a1 = u(rng) * 1.5, a2 = u(rng) * 1.5, a3 = u(rng) * 0.5;

  ComplexArray img(1, spec.nt, spec.ny, spec.nx);
  for (int t = 0; t < spec.nt; ++t) {
    for (int y = 0; y < spec.ny; ++y) {
      const double yn = spec.ny > 1 ? -1.0 + 2.0 * y / (spec.ny - 1) : 0.0;
      for (int x = 0; x < spec.nx; ++x) {
        const double xn = spec.nx > 1 ? -1.0 + 2.0 * x / (spec.nx - 1) : 0.0;
        double v = spec.background;
        for (const Ellipse& e : spec.ellipses) {
          const double mod =
              1.0 + e.motion_amp *
                        std::sin(2.0 * std::numbers::pi * t / spec.nt + e.motion_phase);
          const double dy = (yn - e.cy) / (e.ay * mod);
          const double dx = (xn - e.cx) / (e.ax * mod);
          if (dy * dy + dx * dx <= 1.0) v += e.intensity;
        }
        const double phi = a0 + a1 * yn + a2 * xn + a3 * yn * xn;
        img.at(0, t, y, x) = cplx{v * std::cos(phi), v * std::sin(phi)};
      }
    }
  }
  return img;
}

CoilSensitivities make_coils(int n_coils, int ny, int nx, double profile_width,
                             std::uint64_t seed) {
  require(n_coils >= 1, "make_coils: need at least one coil");
  require(ny >= 1 && nx >= 1, "make_coils: empty grid");
  require(profile_width > 0.0, "make_coils: profile width must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  struct CoilParams {
    double cy, cx, p0, p1, p2;
  };
  std::vector<CoilParams> cp(n_coils);
  for (int c = 0; c < n_coils; ++c) {
    const double ang = 2.0 * std::numbers::pi * c / n_coils + 0.2 * u(rng);
    cp[c] = {1.15 * std::sin(ang), 1.15 * std::cos(ang), std::numbers::pi * u(rng),
             1.2 * u(rng), 1.2 * u(rng)};
  }

  CoilSensitivities coils;
  coils.maps = ComplexArray(n_coils, 1, ny, nx);
  for (int y = 0; y < ny; ++y) {
    const double yn = ny > 1 ? -1.0 + 2.0 * y / (ny - 1) : 0.0;
    for (int x = 0; x < nx; ++x) {
      const double xn = nx > 1 ? -1.0 + 2.0 * x / (nx - 1) : 0.0;
      double ssum = 0.0;
      for (int c = 0; c < n_coils; ++c) {
        const double d2 = (yn - cp[c].cy) * (yn - cp[c].cy) + (xn - cp[c].cx) * (xn - cp[c].cx);
        const double mag = std::exp(-d2 / (2.0 * profile_width * profile_width));
        const double phi = cp[c].p0 + cp[c].p1 * yn + cp[c].p2 * xn;
        coils.maps.at(c, 0, y, x) = cplx{mag * std::cos(phi), mag * std::sin(phi)};
        ssum += mag * mag;
      }
      const double inv = 1.0 / std::sqrt(ssum);
      for (int c = 0; c < n_coils; ++c) coils.maps.at(c, 0, y, x) *= inv;
    }
  }
  return coils;
}

AcquisitionSample simulate_acquisition(const ComplexArray& image,
                                       const CoilSensitivities& coils, int accel,
                                       int acs_count, int offset, double noise_sigma,
                                       std::uint64_t seed, const MetaInfo& meta) {
  require(noise_sigma >= 0.0, "simulate_acquisition: negative noise sigma");
  coils.check_normalized("simulate_acquisition");
  image.check_finite("simulate_acquisition: image");

  AcquisitionSample s;
  s.meta = meta;
  s.mask = make_mask(image.ny, accel, acs_count, offset);
  s.y_full = forward_model(image, coils, full_mask(image.ny));
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise_sigma);
    for (cplx& v : s.y_full.data) {
      const double re = n(rng), im = n(rng);
      v += cplx{re, im};
    }
  }
  s.y_meas = apply_mask(s.mask, s.y_full);
  s.x_rss_target = rss(s.y_full);
  return s;
}

double sigma_for_snr_db(const ComplexArray& y_clean, double snr_db) {
  double p = 0.0;
  for (const cplx& v : y_clean.data) p += std::norm(v);
  p /= static_cast<double>(y_clean.numel());
  return std::sqrt(p / (2.0 * std::pow(10.0, snr_db / 10.0)));
}

BiasReport bias_demo(const CoilSensitivities& coils, const ComplexArray& image,
                     double noise_sigma, std::uint64_t seed) {
  const SamplingMask full = full_mask(image.ny);
  MetaInfo meta;
  AcquisitionSample s =
      simulate_acquisition(image, coils, 1, 0, 0, noise_sigma, seed, meta);
  const ComplexArray gen_inv = adjoint_model(s.y_full, coils, full);

  BiasReport r;
  r.rss_image = rss(s.y_full);
  r.generalized_mag = RealArray(image.nt, image.ny, image.nx);
  r.error_map = RealArray(image.nt, image.ny, image.nx);
  double num = 0.0, den = 0.0;
  for (int t = 0; t < image.nt; ++t)
    for (int y = 0; y < image.ny; ++y)
      for (int x = 0; x < image.nx; ++x) {
        const double gm = std::abs(gen_inv.at(0, t, y, x));
        const double rm = r.rss_image.at(t, y, x);
        r.generalized_mag.at(t, y, x) = gm;
        r.error_map.at(t, y, x) = std::fabs(gm - rm);
        num += (gm - rm) * (gm - rm);
        den += rm * rm;
      }
  require(den > 0.0, "bias_demo: degenerate (all-zero) RSS image");
  r.nmse = num / den;
  return r;
}

}  // namespace nsrc
