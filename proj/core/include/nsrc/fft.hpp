#pragma once

#include <complex>
#include <cstddef>

namespace nsrc {

using cplx = std::complex<double>;

namespace fft {

// Unscaled DFT, sum_j x_j exp(-+ 2*pi*i*j*k/n). Radix-2 for powers of two,
// Bluestein otherwise. n >= 1, in place.
void transform(cplx* data, int n, bool inverse);

// Centered orthonormal frame-wise transform on a row-major [ny, nx] frame:
// DC at (ny/2, nx/2), scaling 1/sqrt(ny*nx) both ways, so the inverse is the
// exact adjoint.
void fft2_centered(cplx* frame, int ny, int nx, bool inverse);

}  // namespace fft
}  // namespace nsrc
