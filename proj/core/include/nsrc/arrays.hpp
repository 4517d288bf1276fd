#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "nsrc/common.hpp"

namespace nsrc {

using cplx = std::complex<double>;

// Dense [coil, time, ky, kx] complex array used for k-space and coil images.
struct ComplexArray {
  int nc = 0, nt = 0, ny = 0, nx = 0;
  std::vector<cplx> data;

  ComplexArray() = default;
  ComplexArray(int nc_, int nt_, int ny_, int nx_)
      : nc(nc_), nt(nt_), ny(ny_), nx(nx_),
        data(static_cast<std::size_t>(nc_) * nt_ * ny_ * nx_) {}

  std::size_t numel() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(ny) * nx; }
  std::size_t frame_index(int c, int t) const {
    return (static_cast<std::size_t>(c) * nt + t) * plane();
  }
  cplx& at(int c, int t, int y, int x) {
    return data[(frame_index(c, t) + static_cast<std::size_t>(y) * nx) + x];
  }
  const cplx& at(int c, int t, int y, int x) const {
    return data[(frame_index(c, t) + static_cast<std::size_t>(y) * nx) + x];
  }
  bool same_shape(const ComplexArray& o) const {
    return nc == o.nc && nt == o.nt && ny == o.ny && nx == o.nx;
  }
  std::string shape_str() const {
    return "[" + std::to_string(nc) + "," + std::to_string(nt) + "," +
           std::to_string(ny) + "," + std::to_string(nx) + "]";
  }
  void check_finite(const std::string& what) const {
    for (const cplx& v : data) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
        fail(what + ": non-finite entry rejected");
    }
  }
};

// Dense real [time, y, x] array (RSS images, error maps).
struct RealArray {
  int nt = 0, ny = 0, nx = 0;
  std::vector<double> data;

  RealArray() = default;
  RealArray(int nt_, int ny_, int nx_)
      : nt(nt_), ny(ny_), nx(nx_), data(static_cast<std::size_t>(nt_) * ny_ * nx_) {}

  std::size_t numel() const { return data.size(); }
  double& at(int t, int y, int x) {
    return data[(static_cast<std::size_t>(t) * ny + y) * nx + x];
  }
  const double& at(int t, int y, int x) const {
    return data[(static_cast<std::size_t>(t) * ny + y) * nx + x];
  }
  bool same_shape(const RealArray& o) const {
    return nt == o.nt && ny == o.ny && nx == o.nx;
  }
  double max_value() const {
    double m = -1e300;
    for (double v : data) m = std::max(m, v);
    return m;
  }
};

inline cplx vdot(const ComplexArray& a, const ComplexArray& b) {
  require(a.same_shape(b), "vdot: shape mismatch");
  cplx acc{0.0, 0.0};
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += std::conj(a.data[i]) * b.data[i];
  return acc;
}

inline double norm2(const ComplexArray& a) {
  double acc = 0.0;
  for (const cplx& v : a.data) acc += std::norm(v);
  return std::sqrt(acc);
}

}  // namespace nsrc
