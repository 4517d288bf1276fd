#pragma once

#include <string>
#include <vector>

namespace nsrc {

struct GradCheckResult {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass() const { return err < tol; }
};

// Central-finite-difference verification of every network building block,
// the DC layer, SSIM and the full loss, plus a tiny end-to-end cascade.
// include_cascade can be disabled for a quick run.
std::vector<GradCheckResult> gradcheck_suite(bool include_cascade = true);

}  // namespace nsrc
