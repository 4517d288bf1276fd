#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nsrc/arrays.hpp"
#include "nsrc/mri_ops.hpp"
#include "nsrc/tensor.hpp"

namespace nsrc {

// One-hot encoded acquisition metadata: axis (0 = SAX, 1 = LAX), slice index
// (clamped to max_slices - 1), acceleration factor in {4, 8, 10}. The
// iteration counter is appended per unrolled step.
struct MetaInfo {
  int axis = 0;
  int slice_index = 0;
  int acceleration = 4;
};

int accel_index(int r);  // 4 -> 0, 8 -> 1, 10 -> 2, anything else errors

struct CascadeConfig {
  int iterations = 2;  // T
  int xnet_scales = 4;
  int ynet_scales = 3;
  int base_width = 8;
  int gn_groups = 1;
  int max_slices = 16;
  double lambda_init = 0.05;
  // Ablation switches.
  bool no_knet = false;
  bool no_inet = false;
  bool no_latentgu = false;
  bool no_conditioning = false;
  int t_override = 0;  // > 0 replaces iterations
  // Mapping-track data-dependent normalization.
  bool mapping_norm = false;
  int mapping_norm_features = 128;

  int T() const { return t_override > 0 ? t_override : iterations; }
  int conditioning_dim() const { return 192; }
  int onehot_dim() const { return 2 + max_slices + T() + 3; }
  void validate() const;
};

namespace net {

struct FilmMapP {
  ad::TensorPtr w, b;  // cond_dim -> 2C
};

struct ResBlockP {
  int c_in = 0, c_out = 0;
  ad::TensorPtr gn1_g, gn1_b, gn2_g, gn2_b;
  std::optional<FilmMapP> film1, film2;
  ad::TensorPtr w1, b1;  // conv3x3 c_in -> c_out
  ad::TensorPtr wt, bt;  // temporal conv3 c_out -> c_out
  ad::TensorPtr w2, b2;  // conv3x3 c_out -> c_out
  ad::TensorPtr wr, br;  // 1x1 residual path when c_in != c_out
};

struct LatentGUP {
  int e_ch = 0, h_ch = 0;
  ad::TensorPtr wf, bf;  // 1x1x1 [h_ch, h_ch+e_ch]
  ad::TensorPtr wh, bh;  // 1x1x1 [h_ch, h_ch+e_ch]
  ad::TensorPtr wm, bm;  // 1x1x1 [2*e_ch, h_ch]
};

struct UNetP {
  int scales = 0, width = 0, c_in = 0, c_out = 0;
  std::vector<ResBlockP> enc;   // scales-1 encoder blocks
  ResBlockP bottleneck;
  std::vector<LatentGUP> gus;   // skips 1 .. scales-2
  std::vector<ResBlockP> dec;   // deepest first
  ad::TensorPtr w_out, b_out;   // zero-initialized 1x1 output conv
};

struct MlpP {
  ad::TensorPtr w0, b0, w1, b1, w2, b2;
};

struct DdnP {
  ad::TensorPtr w1, b1;  // [F, nt, 3, 3]
  ad::TensorPtr w2, b2;  // [2*nt, F, 3, 3], zero-initialized
};

// Standalone building blocks (also used by the verification suite).
ad::TensorPtr res_block(const ResBlockP& p, const ad::TensorPtr& x,
                        const ad::TensorPtr& c_k, int gn_groups);
struct GUOut {
  ad::TensorPtr e_mod;
  ad::TensorPtr h_next;
};
GUOut latent_gu(const LatentGUP& p, const ad::TensorPtr& e, const ad::TensorPtr& h_prev);
ad::TensorPtr mlp_forward(const MlpP& p, const ad::TensorPtr& onehot);
// Per-pixel, per-timepoint pre/post scaling factors, [2,T,Y,X], from the RSS
// intensity stack [1,1,T,Y,X] (positive via exp of the raw CNN output).
ad::TensorPtr ddn_forward(const DdnP& p, const ad::TensorPtr& rss_map);

}  // namespace net

// Hidden latent state carried across unrolled iterations, one entry per
// LatentGU site (skip scales 1 .. S-2).
struct HiddenState {
  std::vector<ad::TensorPtr> h;
};

class CascadeModel {
 public:
  CascadeModel(const CascadeConfig& cfg, int n_coils, int n_frames, std::uint64_t seed);

  struct Output {
    ad::TensorPtr x_rss;    // [T, Y, X]
    ad::TensorPtr y_final;  // [1, 2*nc, T, Y, X]
  };
  Output forward(const ComplexArray& y_meas, const SamplingMask& m,
                 const MetaInfo& meta) const;

  // Inference convenience: no-grad forward returning plain arrays.
  RealArray reconstruct(const ComplexArray& y_meas, const SamplingMask& m,
                        const MetaInfo& meta) const;

  ad::TensorPtr conditioning(const MetaInfo& meta, int iteration) const;
  std::vector<double> onehot(const MetaInfo& meta, int iteration) const;

  ad::ParamRegistry& params() { return params_; }
  const ad::ParamRegistry& params() const { return params_; }
  const CascadeConfig& config() const { return cfg_; }
  int n_coils() const { return n_coils_; }
  std::int64_t trainable_parameter_count() const { return params_.trainable_scalar_count(); }

  // U-Net forward pass exposed for tests; h_prev may be empty (zeros).
  struct UNetOut {
    ad::TensorPtr out;
    HiddenState h_next;
  };
  UNetOut unet_forward(const net::UNetP& u, const ad::TensorPtr& x, const ad::TensorPtr& c_k,
                       const HiddenState& h_prev) const;

  const net::UNetP& xnet() const { return xnet_; }
  const net::UNetP& ynet() const { return ynet_; }
  const net::MlpP& mlp() const { return mlp_; }

  // Data-dependent normalization scales, [2, T, Y, X] (pre then post).
  ad::TensorPtr ddn_scales(const ad::TensorPtr& rss_map) const;

 private:
  friend class ModelBuilder;
  CascadeConfig cfg_;
  int n_coils_ = 0;
  int n_frames_ = 0;
  ad::ParamRegistry params_;
  net::MlpP mlp_;
  net::UNetP xnet_, ynet_;
  std::vector<ad::TensorPtr> lam_w_, lam_b_;  // per iteration (conditioned)
  std::vector<ad::TensorPtr> lam_free_;       // per iteration (no_conditioning)
  net::DdnP ddn_;
};

}  // namespace nsrc
