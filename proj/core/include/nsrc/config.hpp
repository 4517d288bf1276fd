#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsrc/network.hpp"
#include "nsrc/training.hpp"

namespace nsrc {

// Flat `key = value` run configuration ('#' starts a comment). Unknown keys
// are rejected; every run logs its fully resolved form via to_text().
struct RunConfig {
  // geometry / simulation
  int ny = 64, nx = 64, nt = 4, nc = 4;
  std::vector<int> r_factors = {4};
  int acs = 8;
  double noise_sigma = 0.0;
  double noise_snr_db = 30.0;  // used when > 0; overrides noise_sigma
  int n_train = 200, n_val = 20;
  int phantom_ellipses = 3;
  double phantom_background = 0.05;
  double phantom_motion = 0.15;
  double coil_width = 0.8;
  double lax_fraction = 0.3;
  double lax_weight = 1.0;  // manifest oversampling weight for LAX samples

  // cascade
  int iterations = 2;
  int xnet_scales = 4, ynet_scales = 3;
  int base_width = 8;
  int gn_groups = 1;
  int max_slices = 16;
  double lambda_init = 0.05;
  bool no_knet = false, no_inet = false, no_latentgu = false, no_conditioning = false;
  int t_override = 0;
  bool mapping_norm = false;
  int mapping_norm_features = 128;

  // loss
  double alpha1 = 1.0, alpha2 = 0.2, alpha3 = 0.05;

  // optimizer / training
  double lr = 2e-3;
  double weight_decay = 1e-5;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::int64_t warmup_steps = 50;
  std::int64_t total_steps = 600;
  int accum_samples = 4;
  bool augment = true;
  int val_interval = 50;

  // run
  std::int64_t seed = 1234;
  int threads = 0;

  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_text() const;

  CascadeConfig cascade_config() const;
  TrainConfig train_config() const;
  void validate() const;
};

}  // namespace nsrc
