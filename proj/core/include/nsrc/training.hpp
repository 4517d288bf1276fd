#pragma once

#include <cstdint>
#include <vector>

#include "nsrc/metrics.hpp"
#include "nsrc/network.hpp"
#include "nsrc/simulation.hpp"

namespace nsrc {

struct LossWeights {
  double alpha1 = 1.0;   // SSIM
  double alpha2 = 0.2;   // L2
  double alpha3 = 0.05;  // brightest-pixel deviation
  void validate() const;
};

// Coil-wise L1 on the image-domain residual (mean over re/im components),
// minus alpha1 * SSIM, plus alpha2 * mean squared RSS error, plus alpha3 *
// summed squared per-frame brightest-pixel deviation. At a perfect prediction
// the value is exactly -alpha1.
ad::TensorPtr loss_total(const ad::TensorPtr& y_pred, const ComplexArray& y_full,
                         const ad::TensorPtr& x_rss_pred, const RealArray& x_rss_target,
                         const LossWeights& w);

// Linear warmup to base_lr, then cosine annealing to zero at total_steps.
double lr_at(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps,
             double base_lr);

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay, bias-corrected moments.
class AdamW {
 public:
  AdamW(ad::ParamRegistry& params, AdamWSettings s);
  // Applies one update from the accumulated gradients; grad_scale rescales
  // them first (1/accum for averaged accumulation).
  void step(double lr, double grad_scale = 1.0);
  std::int64_t step_count() const { return step_count_; }

 private:
  ad::ParamRegistry& params_;
  AdamWSettings s_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- augmentation ----
// Flips act as exact k-space index permutations (the image-domain flip
// x(n) -> x(-n mod N), which needs no conjugation in k-space); the coil
// shuffle permutes the coil axis. y_meas and the RSS target are re-derived
// from the transformed full k-space, so the same-noise-realization and
// target-consistency contracts hold bit-exactly.
struct AugmentOps {
  bool flip_y = false, flip_x = false, flip_t = false;
  std::vector<int> coil_perm;  // empty = identity
};

AugmentOps draw_augment_ops(std::uint64_t seed, int n_coils);
AcquisitionSample apply_augment(const AcquisitionSample& s, const AugmentOps& ops);

// ---- loops ----
struct TrainConfig {
  double base_lr = 2e-3;
  std::int64_t warmup_steps = 50;
  std::int64_t total_steps = 600;
  int accum_samples = 4;
  AdamWSettings adam;
  LossWeights loss;
  bool augment = true;
  std::uint64_t seed = 1234;
  int val_interval = 50;
};

struct LoadedDataset {
  std::vector<AcquisitionSample> train;
  std::vector<double> train_weights;  // oversampling repeats, >= 1
  std::vector<AcquisitionSample> val;
};

struct HistoryRow {
  std::int64_t step = 0;
  double lr = 0.0, train_loss = 0.0;
  double val_psnr = 0.0, val_ssim = 0.0, val_nmse = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  double best_val_psnr = -1e300;
  std::int64_t best_step = 0;
  std::vector<std::vector<double>> best_params;  // aligned with registry order
};

// One global scale per sample: the standard deviation of the zero-filled
// coil-image components. The network and DC operate on data divided by it;
// outputs are multiplied back.
double sample_norm_scale(const AcquisitionSample& s);
AcquisitionSample scale_sample(const AcquisitionSample& s, double inv_scale);
RealArray infer_sample(const CascadeModel& model, const AcquisitionSample& s);
Metrics evaluate_mean(const CascadeModel& model, const std::vector<AcquisitionSample>& samples);

TrainResult train(CascadeModel& model, const LoadedDataset& ds, const TrainConfig& tc);

void restore_params(CascadeModel& model, const std::vector<std::vector<double>>& values);

}  // namespace nsrc
