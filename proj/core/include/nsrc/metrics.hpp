#pragma once

#include "nsrc/arrays.hpp"
#include "nsrc/tensor.hpp"

namespace nsrc {

// Mean local SSIM over 2D frames of [T,Y,X] tensors: 7x7 uniform window,
// K1 = 0.01, K2 = 0.03, local statistics evaluated on the interior (the
// window never crosses the image border). Differentiable; ssim(x, x) == 1.
ad::TensorPtr ssim(const ad::TensorPtr& a, const ad::TensorPtr& b, double data_range);

double ssim_value(const RealArray& a, const RealArray& b, double data_range);

struct Metrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double nmse = 0.0;
};

// Leaderboard semantics: prediction and target are each divided by their own
// maximum first; PSNR uses peak 1 (capped at 300 dB), SSIM uses data_range 1,
// NMSE = ||pred - target||^2 / ||target||^2.
Metrics leaderboard_metrics(const RealArray& pred, const RealArray& target);

}  // namespace nsrc
