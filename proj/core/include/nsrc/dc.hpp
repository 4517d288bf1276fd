#pragma once

#include "nsrc/arrays.hpp"
#include "nsrc/mri_ops.hpp"
#include "nsrc/tensor.hpp"

namespace nsrc {

// Coil-wise soft data-consistency: the functional
//   G(y) = 1/2 ||S y - y_meas||^2 + lambda/2 ||y - z||^2
// acting on one coil's k-space, its closed-form minimizer, and the hard
// null-space projection special case.

double dc_functional(const ComplexArray& y, const ComplexArray& z, const SamplingMask& m,
                     const ComplexArray& y_meas, double lambda);

// Unique global minimizer of dc_functional: on sampled lines
// (y_meas + lambda*z) / (1 + lambda), elsewhere z.
ComplexArray dc_solve(const ComplexArray& z, const SamplingMask& m,
                      const ComplexArray& y_meas, double lambda);

// Measured values on sampled lines, z elsewhere; identical to dc_solve at
// lambda = 0.
ComplexArray hard_project(const ComplexArray& z, const SamplingMask& m,
                          const ComplexArray& y_meas);

// lambda^c_k = max(0, w . c_k + b) per coil. c_k: [1,D]; w: [nc,D]; b: [nc].
// Subgradient of the clamp is 0 at and below the hinge.
ad::TensorPtr lambda_from_conditioning(const ad::TensorPtr& c_k, const ad::TensorPtr& w,
                                       const ad::TensorPtr& b);

// Differentiable multi-coil solve on channel pairs. z/y_meas: [1,2*nc,t,y,x];
// lambda: [1,nc] or [nc], nonnegative. Gradients flow to z and lambda.
ad::TensorPtr ad_dc_solve(const ad::TensorPtr& z, const ad::TensorPtr& lambda,
                          const ad::TensorPtr& y_meas, const SamplingMask& m);

}  // namespace nsrc
