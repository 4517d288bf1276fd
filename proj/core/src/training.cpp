#include "nsrc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "nsrc/mri_ops.hpp"

namespace nsrc {

void LossWeights::validate() const {
  require(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha3 >= 0.0,
          "loss weights must be nonnegative");
}

ad::TensorPtr loss_total(const ad::TensorPtr& y_pred, const ComplexArray& y_full,
                         const ad::TensorPtr& x_rss_pred, const RealArray& x_rss_target,
                         const LossWeights& w) {
  w.validate();
  require(y_pred->shape.size() == 5 && y_pred->shape[0] == 1,
          "loss_total: y_pred must be [1,2*nc,t,y,x]");
  const int nc = y_pred->shape[1] / 2;
  require(nc == y_full.nc && y_pred->shape[2] == y_full.nt &&
              y_pred->shape[3] == y_full.ny && y_pred->shape[4] == y_full.nx,
          "loss_total: y_pred/y_full shape mismatch");
  require(x_rss_pred->shape ==
              std::vector<int>({x_rss_target.nt, x_rss_target.ny, x_rss_target.nx}),
          "loss_total: rss prediction/target shape mismatch");

  using namespace ad;
  const double n_img = static_cast<double>(x_rss_target.numel());

  // Coil-wise L1 on image-domain residuals, mean over all re/im components.
  TensorPtr imgs_pred = ad_ifft2c(y_pred);
  TensorPtr imgs_full = to_channels(ifft2c(y_full));
  TensorPtr l1 = mul_scalar(sum_abs(sub(imgs_pred, imgs_full)), 1.0 / (nc * n_img));

  TensorPtr target =
      constant({x_rss_target.nt, x_rss_target.ny, x_rss_target.nx}, x_rss_target.data);
  const double data_range = x_rss_target.max_value();
  require(data_range > 0.0, "loss_total: target maximum must be positive");
  TensorPtr sim = ssim(target, x_rss_pred, data_range);

  TensorPtr diff = sub(x_rss_pred, target);
  TensorPtr l2 = mul_scalar(sum(mul(diff, diff)), 1.0 / n_img);

  TensorPtr dmax = sub(frame_max(x_rss_pred), frame_max(target));
  TensorPtr max_term = sum(mul(dmax, dmax));

  return add(add(sub(l1, mul_scalar(sim, w.alpha1)), mul_scalar(l2, w.alpha2)),
             mul_scalar(max_term, w.alpha3));
}

double lr_at(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps,
             double base_lr) {
  require(step >= 0 && step <= total_steps, "lr_at: step out of range");
  require(warmup_steps >= 0 && warmup_steps < total_steps,
          "lr_at: warmup must be shorter than the schedule");
  if (step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(ad::ParamRegistry& params, AdamWSettings s) : params_(params), s_(s) {
  for (const auto& p : params_.params()) {
    m_.emplace_back(p.tensor->numel(), 0.0);
    v_.emplace_back(p.tensor->numel(), 0.0);
  }
}

void AdamW::step(double lr, double grad_scale) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(step_count_));
  auto& ps = params_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i].trainable) continue;
    ad::Tensor& t = *ps[i].tensor;
    t.ensure_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < t.value.size(); ++k) {
      const double g = t.grad[k] * grad_scale;
      m[k] = s_.beta1 * m[k] + (1.0 - s_.beta1) * g;
      v[k] = s_.beta2 * v[k] + (1.0 - s_.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      t.value[k] -= lr * (mhat / (std::sqrt(vhat) + s_.eps) + s_.weight_decay * t.value[k]);
    }
  }
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

AugmentOps draw_augment_ops(std::uint64_t seed, int n_coils) {
  std::mt19937_64 rng(splitmix64(seed));
  std::bernoulli_distribution coin(0.5);
  AugmentOps ops;
  ops.flip_y = coin(rng);
  ops.flip_x = coin(rng);
  ops.flip_t = coin(rng);
  ops.coil_perm.resize(n_coils);
  for (int c = 0; c < n_coils; ++c) ops.coil_perm[c] = c;
  std::shuffle(ops.coil_perm.begin(), ops.coil_perm.end(), rng);
  return ops;
}

AcquisitionSample apply_augment(const AcquisitionSample& s, const AugmentOps& ops) {
  const int nc = s.y_full.nc, nt = s.y_full.nt, ny = s.y_full.ny, nx = s.y_full.nx;
  std::vector<int> perm = ops.coil_perm;
  if (perm.empty()) {
    perm.resize(nc);
    for (int c = 0; c < nc; ++c) perm[c] = c;
  }
  require(static_cast<int>(perm.size()) == nc, "augment: coil permutation size mismatch");

  AcquisitionSample out;
  out.meta = s.meta;
  out.y_full = ComplexArray(nc, nt, ny, nx);
  for (int c = 0; c < nc; ++c)
    for (int t = 0; t < nt; ++t) {
      const int ts = ops.flip_t ? nt - 1 - t : t;
      for (int y = 0; y < ny; ++y) {
        const int ysrc = ops.flip_y ? (ny - y) % ny : y;
        for (int x = 0; x < nx; ++x) {
          const int xsrc = ops.flip_x ? (nx - x) % nx : x;
          out.y_full.at(c, t, y, x) = s.y_full.at(perm[c], ts, ysrc, xsrc);
        }
      }
    }

  out.mask = s.mask;
  if (ops.flip_y) {
    for (int i = 0; i < ny; ++i) out.mask.kept[(ny - i) % ny] = s.mask.kept[i];
    out.mask.offset = ((ny - s.mask.offset) % s.mask.accel + s.mask.accel) % s.mask.accel;
  }
  out.y_meas = apply_mask(out.mask, out.y_full);
  out.x_rss_target = rss(out.y_full);
  return out;
}

// ---------------------------------------------------------------------------
// loops
// ---------------------------------------------------------------------------

double sample_norm_scale(const AcquisitionSample& s) {
  const ComplexArray zf = ifft2c(s.y_meas);
  const std::size_t n = 2 * zf.numel();
  double mean = 0.0;
  for (const cplx& v : zf.data) mean += v.real() + v.imag();
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const cplx& v : zf.data) {
    const double dr = v.real() - mean, di = v.imag() - mean;
    var += dr * dr + di * di;
  }
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  return sd > 0.0 ? sd : 1.0;
}

AcquisitionSample scale_sample(const AcquisitionSample& s, double inv_scale) {
  AcquisitionSample out = s;
  for (cplx& v : out.y_meas.data) v *= inv_scale;
  for (cplx& v : out.y_full.data) v *= inv_scale;
  for (double& v : out.x_rss_target.data) v *= inv_scale;
  return out;
}

RealArray infer_sample(const CascadeModel& model, const AcquisitionSample& s) {
  const double scale = sample_norm_scale(s);
  ComplexArray y = s.y_meas;
  for (cplx& v : y.data) v /= scale;
  RealArray recon = model.reconstruct(y, s.mask, s.meta);
  for (double& v : recon.data) v *= scale;
  return recon;
}

Metrics evaluate_mean(const CascadeModel& model,
                      const std::vector<AcquisitionSample>& samples) {
  require(!samples.empty(), "evaluate_mean: empty sample list");
  Metrics acc;
  for (const auto& s : samples) {
    const Metrics m = leaderboard_metrics(infer_sample(model, s), s.x_rss_target);
    acc.psnr += m.psnr;
    acc.ssim += m.ssim;
    acc.nmse += m.nmse;
  }
  const double n = static_cast<double>(samples.size());
  return {acc.psnr / n, acc.ssim / n, acc.nmse / n};
}

void restore_params(CascadeModel& model, const std::vector<std::vector<double>>& values) {
  auto& ps = model.params().params();
  require(values.size() == ps.size(), "restore_params: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    require(values[i].size() == ps[i].tensor->value.size(),
            "restore_params: size mismatch at " + ps[i].name);
    ps[i].tensor->value = values[i];
  }
}

namespace {

std::vector<std::vector<double>> snapshot_params(const CascadeModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& p : model.params().params()) out.push_back(p.tensor->value);
  return out;
}

}  // namespace

TrainResult train(CascadeModel& model, const LoadedDataset& ds, const TrainConfig& tc) {
  require(!ds.train.empty(), "train: empty training set");
  require(tc.accum_samples >= 1, "train: accum_samples must be >= 1");
  require(tc.total_steps >= 0, "train: total_steps must be >= 0");
  tc.loss.validate();

  TrainResult res;
  res.best_params = snapshot_params(model);
  if (tc.total_steps == 0) return res;

  // Oversampling weights become integer repeats in the epoch ordering.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    double w = ds.train_weights.empty() ? 1.0 : ds.train_weights[i];
    const int repeats = std::max(1, static_cast<int>(std::llround(w)));
    for (int r = 0; r < repeats; ++r) order.push_back(i);
  }

  AdamW opt(model.params(), tc.adam);
  model.params().zero_grad();

  std::mt19937_64 shuffle_rng(splitmix64(tc.seed));
  std::int64_t step = 0;
  std::uint64_t sample_counter = 0;
  int accum = 0;
  double loss_acc = 0.0;
  std::int64_t loss_n = 0;

  auto validate_and_log = [&](double lr) {
    HistoryRow row;
    row.step = step;
    row.lr = lr;
    row.train_loss = loss_n > 0 ? loss_acc / static_cast<double>(loss_n) : 0.0;
    if (!ds.val.empty()) {
      const Metrics m = evaluate_mean(model, ds.val);
      row.val_psnr = m.psnr;
      row.val_ssim = m.ssim;
      row.val_nmse = m.nmse;
      if (m.psnr > res.best_val_psnr) {
        res.best_val_psnr = m.psnr;
        res.best_step = step;
        res.best_params = snapshot_params(model);
      }
    } else {
      res.best_params = snapshot_params(model);
      res.best_step = step;
    }
    res.history.push_back(row);
    loss_acc = 0.0;
    loss_n = 0;
  };

  while (step < tc.total_steps) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t oi = 0; oi < order.size() && step < tc.total_steps; ++oi) {
      AcquisitionSample s = ds.train[order[oi]];
      ++sample_counter;
      if (tc.augment) {
        const AugmentOps ops =
            draw_augment_ops(splitmix64(tc.seed ^ (0x5851f42dULL + sample_counter)),
                             s.y_full.nc);
        s = apply_augment(s, ops);
      }
      s = scale_sample(s, 1.0 / sample_norm_scale(s));

      CascadeModel::Output out = model.forward(s.y_meas, s.mask, s.meta);
      ad::TensorPtr loss =
          loss_total(out.y_final, s.y_full, out.x_rss, s.x_rss_target, tc.loss);
      const double lv = loss->value[0];
      if (!std::isfinite(lv))
        fail("train: non-finite loss at optimizer step " + std::to_string(step + 1));
      loss_acc += lv;
      ++loss_n;
      ad::backward(loss);
      ++accum;

      if (accum == tc.accum_samples) {
        const double lr = lr_at(step, tc.warmup_steps, tc.total_steps, tc.base_lr);
        opt.step(lr, 1.0 / static_cast<double>(tc.accum_samples));
        model.params().zero_grad();
        accum = 0;
        ++step;
        if (step % tc.val_interval == 0 || step == tc.total_steps) validate_and_log(lr);
      }
    }
  }
  if (res.history.empty() || res.history.back().step != step)
    validate_and_log(lr_at(step, tc.warmup_steps, tc.total_steps, tc.base_lr));
  return res;
}

}  // namespace nsrc
