#include "nsrc/dc.hpp"

#include <cmath>

namespace nsrc {

double dc_functional(const ComplexArray& y, const ComplexArray& z, const SamplingMask& m,
                     const ComplexArray& y_meas, double lambda) {
  require(lambda >= 0.0, "dc_functional: lambda must be nonnegative");
  require(y.same_shape(z) && y.same_shape(y_meas),
          "dc_functional: shape mismatch between y, z, y_meas");
  require(m.ny == y.ny, "dc_functional: mask/data ny mismatch");
  double fidelity = 0.0, prox = 0.0;
  for (int c = 0; c < y.nc; ++c)
    for (int t = 0; t < y.nt; ++t)
      for (int line = 0; line < y.ny; ++line) {
        const bool sampled = m.keeps(line);
        for (int x = 0; x < y.nx; ++x) {
          const cplx yv = y.at(c, t, line, x);
          if (sampled) fidelity += std::norm(yv - y_meas.at(c, t, line, x));
          prox += std::norm(yv - z.at(c, t, line, x));
        }
      }
  return 0.5 * fidelity + 0.5 * lambda * prox;
}

ComplexArray dc_solve(const ComplexArray& z, const SamplingMask& m,
                      const ComplexArray& y_meas, double lambda) {
  require(lambda >= 0.0, "dc_solve: lambda must be nonnegative");
  require(z.same_shape(y_meas), "dc_solve: z/y_meas shape mismatch");
  require(m.ny == z.ny, "dc_solve: mask/data ny mismatch");
  ComplexArray out = z;
  const double wm = 1.0 / (1.0 + lambda);
  const double wz = lambda / (1.0 + lambda);
  for (int c = 0; c < z.nc; ++c)
    for (int t = 0; t < z.nt; ++t)
      for (int line = 0; line < z.ny; ++line) {
        if (!m.keeps(line)) continue;
        for (int x = 0; x < z.nx; ++x)
          out.at(c, t, line, x) = wm * y_meas.at(c, t, line, x) + wz * z.at(c, t, line, x);
      }
  return out;
}

ComplexArray hard_project(const ComplexArray& z, const SamplingMask& m,
                          const ComplexArray& y_meas) {
  require(z.same_shape(y_meas), "hard_project: z/y_meas shape mismatch");
  require(m.ny == z.ny, "hard_project: mask/data ny mismatch");
  ComplexArray out = z;
  for (int c = 0; c < z.nc; ++c)
    for (int t = 0; t < z.nt; ++t)
      for (int line = 0; line < z.ny; ++line) {
        if (!m.keeps(line)) continue;
        const std::size_t off = z.frame_index(c, t) + static_cast<std::size_t>(line) * z.nx;
        std::copy(y_meas.data.begin() + off, y_meas.data.begin() + off + z.nx,
                  out.data.begin() + off);
      }
  return out;
}

ad::TensorPtr lambda_from_conditioning(const ad::TensorPtr& c_k, const ad::TensorPtr& w,
                                       const ad::TensorPtr& b) {
  require(c_k->shape.size() == 2 && c_k->shape[0] == 1,
          "lambda_from_conditioning: conditioning vector must be [1,D]");
  if (w->shape.size() != 2 || w->shape[1] != c_k->shape[1])
    fail("lambda_from_conditioning: weight dimension mismatch: c_k has D=" +
         std::to_string(c_k->shape[1]) + ", w is " + ad::shape_str(w->shape));
  return ad::relu(ad::linear(c_k, w, b));
}

ad::TensorPtr ad_dc_solve(const ad::TensorPtr& z, const ad::TensorPtr& lambda,
                          const ad::TensorPtr& y_meas, const SamplingMask& m) {
  require(z->shape.size() == 5 && z->shape[0] == 1 && z->shape[1] % 2 == 0,
          "ad_dc_solve: z must be [1,2*nc,t,y,x]");
  require(z->shape == y_meas->shape, "ad_dc_solve: z/y_meas shape mismatch");
  const int nc = z->shape[1] / 2, nt = z->shape[2], ny = z->shape[3], nx = z->shape[4];
  require(m.ny == ny, "ad_dc_solve: mask/data ny mismatch");
  require(static_cast<int>(lambda->numel()) == nc,
          "ad_dc_solve: lambda must hold one value per coil");

  std::vector<double> v = z->value;
  const std::size_t plane = static_cast<std::size_t>(ny) * nx;
  const std::size_t vol = static_cast<std::size_t>(nt) * plane;
  for (int c = 0; c < nc; ++c) {
    const double lam = lambda->value[c];
    require(lam >= 0.0, "ad_dc_solve: lambda must be nonnegative");
    const double wm = 1.0 / (1.0 + lam);
    const double wz = lam / (1.0 + lam);
    for (int half = 0; half < 2; ++half) {
      const std::size_t ch = static_cast<std::size_t>(2 * c + half) * vol;
      for (int t = 0; t < nt; ++t)
        for (int line = 0; line < ny; ++line) {
          if (!m.keeps(line)) continue;
          const std::size_t off = ch + static_cast<std::size_t>(t) * plane + line * nx;
          for (int x = 0; x < nx; ++x)
            v[off + x] = wm * y_meas->value[off + x] + wz * z->value[off + x];
        }
    }
  }

  auto out = std::make_shared<ad::Tensor>();
  out->shape = z->shape;
  out->value = std::move(v);
  if (ad::grad_enabled() && (z->requires_grad || lambda->requires_grad)) {
    out->requires_grad = true;
    out->parents = {z, lambda, y_meas};
    ad::TensorPtr pz = z, pl = lambda, pm = y_meas;
    std::vector<std::uint8_t> kept = m.kept;
    out->backprop = [pz, pl, pm, kept, nc, nt, ny, nx, plane, vol](ad::Tensor& self) {
      const double* g = self.grad.data();
      for (int c = 0; c < nc; ++c) {
        const double lam = pl->value[c];
        const double wz = lam / (1.0 + lam);
        const double dinv = 1.0 / ((1.0 + lam) * (1.0 + lam));
        double glam = 0.0;
        for (int half = 0; half < 2; ++half) {
          const std::size_t ch = static_cast<std::size_t>(2 * c + half) * vol;
          for (int t = 0; t < nt; ++t)
            for (int line = 0; line < ny; ++line) {
              const std::size_t off = ch + static_cast<std::size_t>(t) * plane +
                                      static_cast<std::size_t>(line) * nx;
              if (kept[line]) {
                if (pz->requires_grad) {
                  pz->ensure_grad();
                  for (int x = 0; x < nx; ++x) pz->grad[off + x] += g[off + x] * wz;
                }
                if (pl->requires_grad) {
                  for (int x = 0; x < nx; ++x)
                    glam += g[off + x] * (pz->value[off + x] - pm->value[off + x]) * dinv;
                }
              } else if (pz->requires_grad) {
                pz->ensure_grad();
                for (int x = 0; x < nx; ++x) pz->grad[off + x] += g[off + x];
              }
            }
        }
        if (pl->requires_grad) {
          pl->ensure_grad();
          pl->grad[c] += glam;
        }
      }
    };
  }
  return out;
}

}  // namespace nsrc
