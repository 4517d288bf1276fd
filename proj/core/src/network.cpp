#include "nsrc/network.hpp"

#include <cmath>
#include <random>

#include "nsrc/dc.hpp"

namespace nsrc {

using ad::TensorPtr;

int accel_index(int r) {
  switch (r) {
    case 4: return 0;
    case 8: return 1;
    case 10: return 2;
  }
  fail("acceleration factor must be one of {4,8,10}, got " + std::to_string(r));
}

void CascadeConfig::validate() const {
  require(iterations >= 1, "config: iterations must be >= 1");
  require(t_override >= 0, "config: t_override must be >= 0");
  require(xnet_scales >= 1 && ynet_scales >= 1, "config: scales must be >= 1");
  require(base_width >= 1, "config: base_width must be >= 1");
  require(gn_groups >= 1, "config: gn_groups must be >= 1");
  require(max_slices >= 1, "config: max_slices must be >= 1");
  require(lambda_init >= 0.0, "config: lambda_init must be >= 0");
  require(mapping_norm_features >= 1, "config: mapping_norm_features must be >= 1");
}

namespace net {

namespace {

// FiLM scale/shift from the conditioning vector: [1,2C] -> two [1,C] halves.
std::pair<TensorPtr, TensorPtr> film_params(const FilmMapP& p, const TensorPtr& c_k, int ch) {
  TensorPtr both = ad::linear(c_k, p.w, p.b);
  TensorPtr as5 = ad::reshape(both, {1, 2 * ch, 1, 1, 1});
  TensorPtr sc = ad::reshape(ad::slice_channels(as5, 0, ch), {1, ch});
  TensorPtr sh = ad::reshape(ad::slice_channels(as5, ch, 2 * ch), {1, ch});
  return {sc, sh};
}

}  // namespace

ad::TensorPtr res_block(const ResBlockP& p, const TensorPtr& x, const TensorPtr& c_k,
                        int gn_groups) {
  require(x->shape.size() == 5 && x->shape[1] == p.c_in,
          "res_block: input channels " +
              (x->shape.size() == 5 ? std::to_string(x->shape[1]) : ad::shape_str(x->shape)) +
              " do not match block c_in=" + std::to_string(p.c_in));
  TensorPtr h = ad::group_norm(x, gn_groups, p.gn1_g, p.gn1_b);
  if (p.film1) {
    require(c_k != nullptr, "res_block: FiLM block requires a conditioning vector");
    auto [sc, sh] = film_params(*p.film1, c_k, p.c_in);
    h = ad::film(h, sc, sh);
  }
  h = ad::activation(h, ad::Act::kSilu);
  h = ad::conv_spatial(h, p.w1, p.b1);
  h = ad::conv_temporal(h, p.wt, p.bt);
  h = ad::group_norm(h, gn_groups, p.gn2_g, p.gn2_b);
  if (p.film2) {
    auto [sc, sh] = film_params(*p.film2, c_k, p.c_out);
    h = ad::film(h, sc, sh);
  }
  h = ad::activation(h, ad::Act::kSilu);
  h = ad::conv_spatial(h, p.w2, p.b2);
  TensorPtr res = (p.c_in == p.c_out) ? x : ad::conv_spatial(x, p.wr, p.br);
  return ad::add(res, h);
}

GUOut latent_gu(const LatentGUP& p, const TensorPtr& e, const TensorPtr& h_prev) {
  require(e->shape.size() == 5 && h_prev->shape.size() == 5,
          "latent_gu: rank-5 inputs expected");
  require(e->shape[1] == p.e_ch && h_prev->shape[1] == p.h_ch,
          "latent_gu: channel mismatch (e=" + std::to_string(e->shape[1]) +
              ", h=" + std::to_string(h_prev->shape[1]) + ")");
  require(e->shape[2] == h_prev->shape[2] && e->shape[3] == h_prev->shape[3] &&
              e->shape[4] == h_prev->shape[4],
          "latent_gu: e and h_prev must share t/y/x dims");
  TensorPtr f = ad::activation(ad::conv_spatial(ad::concat_channels({h_prev, e}), p.wf, p.bf),
                               ad::Act::kSigmoid);
  TensorPtr fh = ad::mul(f, h_prev);
  TensorPtr h_cand = ad::activation(
      ad::conv_spatial(ad::concat_channels({fh, e}), p.wh, p.bh), ad::Act::kTanh);
  // (1-f).h + f.h~ = h - f.h + f.h~
  TensorPtr h_next = ad::add(ad::sub(h_prev, fh), ad::mul(f, h_cand));
  TensorPtr mods = ad::conv_spatial(h_next, p.wm, p.bm);
  TensorPtr scale = ad::slice_channels(mods, 0, p.e_ch);
  TensorPtr shift = ad::slice_channels(mods, p.e_ch, 2 * p.e_ch);
  TensorPtr e_mod = ad::add(ad::add(e, ad::mul(e, scale)), shift);
  return {e_mod, h_next};
}

ad::TensorPtr mlp_forward(const MlpP& p, const TensorPtr& onehot) {
  TensorPtr h = ad::activation(ad::linear(onehot, p.w0, p.b0), ad::Act::kSilu);
  h = ad::activation(ad::linear(h, p.w1, p.b1), ad::Act::kSilu);
  return ad::linear(h, p.w2, p.b2);
}

ad::TensorPtr ddn_forward(const DdnP& p, const TensorPtr& rss_map) {
  require(rss_map->shape.size() == 5 && rss_map->shape[1] == 1,
          "ddn_forward: expected [1,1,T,Y,X]");
  const int nt = rss_map->shape[2], ny = rss_map->shape[3], nx = rss_map->shape[4];
  // Time points become channels for the two-layer CNN.
  TensorPtr x = ad::reshape(rss_map, {1, nt, 1, ny, nx});
  TensorPtr h = ad::activation(ad::conv_spatial(x, p.w1, p.b1), ad::Act::kSilu);
  TensorPtr raw = ad::conv_spatial(h, p.w2, p.b2);
  return ad::reshape(ad::exp_op(raw), {2, nt, ny, nx});
}

}  // namespace net

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

class ModelBuilder {
 public:
  ModelBuilder(CascadeModel& m, std::uint64_t seed) : m_(m), rng_(seed) {}

  void build() {
    const CascadeConfig& cfg = m_.cfg_;
    if (!cfg.no_conditioning) {
      const int d = cfg.conditioning_dim();
      m_.mlp_.w0 = kaiming("mlp.fc0.weight", {d, cfg.onehot_dim()}, cfg.onehot_dim());
      m_.mlp_.b0 = filled("mlp.fc0.bias", {d}, 0.0);
      m_.mlp_.w1 = kaiming("mlp.fc1.weight", {d, d}, d);
      m_.mlp_.b1 = filled("mlp.fc1.bias", {d}, 0.0);
      m_.mlp_.w2 = kaiming("mlp.fc2.weight", {d, d}, d);
      m_.mlp_.b2 = filled("mlp.fc2.bias", {d}, 0.0);
    }
    const int nc2 = 2 * m_.n_coils_;
    if (!cfg.no_inet) m_.xnet_ = build_unet("xnet", cfg.xnet_scales, nc2, nc2);
    if (!cfg.no_knet) m_.ynet_ = build_unet("ynet", cfg.ynet_scales, 4 * m_.n_coils_ + 1, nc2);
    for (int k = 0; k < cfg.T(); ++k) {
      const std::string prefix = "dc.k" + std::to_string(k);
      if (cfg.no_conditioning) {
        m_.lam_free_.push_back(
            filled(prefix + ".lambda_free", {m_.n_coils_}, cfg.lambda_init));
      } else {
        m_.lam_w_.push_back(
            filled(prefix + ".lambda.weight", {m_.n_coils_, cfg.conditioning_dim()}, 0.0));
        m_.lam_b_.push_back(filled(prefix + ".lambda.bias", {m_.n_coils_}, cfg.lambda_init));
      }
    }
    if (cfg.mapping_norm) {
      const int f = cfg.mapping_norm_features;
      const int nt = m_.n_frames_;
      m_.ddn_.w1 = kaiming("ddn.conv1.weight", {f, nt, 3, 3}, nt * 9);
      m_.ddn_.b1 = filled("ddn.conv1.bias", {f}, 0.0);
      m_.ddn_.w2 = filled("ddn.conv2.weight", {2 * nt, f, 3, 3}, 0.0);
      m_.ddn_.b2 = filled("ddn.conv2.bias", {2 * nt}, 0.0);
    }
  }

 private:
  TensorPtr filled(const std::string& name, std::vector<int> shape, double v) {
    std::vector<double> data(ad::shape_numel(shape), v);
    return m_.params_.add(name, std::move(shape), std::move(data));
  }

  TensorPtr kaiming(const std::string& name, std::vector<int> shape, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> data(ad::shape_numel(shape));
    for (double& v : data) v = dist(rng_);
    return m_.params_.add(name, std::move(shape), std::move(data));
  }

  net::FilmMapP build_film(const std::string& prefix, int ch) {
    // Zero-initialized: modulation starts neutral regardless of c_k.
    net::FilmMapP f;
    f.w = filled(prefix + ".weight", {2 * ch, m_.cfg_.conditioning_dim()}, 0.0);
    f.b = filled(prefix + ".bias", {2 * ch}, 0.0);
    return f;
  }

  net::ResBlockP build_res(const std::string& prefix, int c_in, int c_out) {
    const int g = m_.cfg_.gn_groups;
    if (c_in % g != 0 || c_out % g != 0)
      fail("config: gn_groups=" + std::to_string(g) + " does not divide block channels (" +
           std::to_string(c_in) + " -> " + std::to_string(c_out) + ") at " + prefix);
    net::ResBlockP p;
    p.c_in = c_in;
    p.c_out = c_out;
    p.gn1_g = filled(prefix + ".gn1.gamma", {c_in}, 1.0);
    p.gn1_b = filled(prefix + ".gn1.beta", {c_in}, 0.0);
    if (!m_.cfg_.no_conditioning) p.film1 = build_film(prefix + ".film1", c_in);
    p.w1 = kaiming(prefix + ".conv1.weight", {c_out, c_in, 3, 3}, c_in * 9);
    p.b1 = filled(prefix + ".conv1.bias", {c_out}, 0.0);
    p.wt = kaiming(prefix + ".convt.weight", {c_out, c_out, 3}, c_out * 3);
    p.bt = filled(prefix + ".convt.bias", {c_out}, 0.0);
    p.gn2_g = filled(prefix + ".gn2.gamma", {c_out}, 1.0);
    p.gn2_b = filled(prefix + ".gn2.beta", {c_out}, 0.0);
    if (!m_.cfg_.no_conditioning) p.film2 = build_film(prefix + ".film2", c_out);
    p.w2 = kaiming(prefix + ".conv2.weight", {c_out, c_out, 3, 3}, c_out * 9);
    p.b2 = filled(prefix + ".conv2.bias", {c_out}, 0.0);
    if (c_in != c_out) {
      p.wr = kaiming(prefix + ".res.weight", {c_out, c_in, 1, 1}, c_in);
      p.br = filled(prefix + ".res.bias", {c_out}, 0.0);
    }
    return p;
  }

  net::LatentGUP build_gu(const std::string& prefix, int e_ch) {
    net::LatentGUP p;
    p.e_ch = e_ch;
    p.h_ch = e_ch;
    const int cat = p.h_ch + e_ch;
    p.wf = kaiming(prefix + ".f.weight", {p.h_ch, cat, 1, 1}, cat);
    p.bf = filled(prefix + ".f.bias", {p.h_ch}, 0.0);
    p.wh = kaiming(prefix + ".h.weight", {p.h_ch, cat, 1, 1}, cat);
    p.bh = filled(prefix + ".h.bias", {p.h_ch}, 0.0);
    // Zero-initialized modulation: the untrained skip is the identity.
    p.wm = filled(prefix + ".m.weight", {2 * e_ch, p.h_ch, 1, 1}, 0.0);
    p.bm = filled(prefix + ".m.bias", {2 * e_ch}, 0.0);
    return p;
  }

  net::UNetP build_unet(const std::string& prefix, int scales, int c_in, int c_out) {
    require(c_out <= c_in, "unet: output channels must not exceed input channels");
    net::UNetP u;
    u.scales = scales;
    u.width = m_.cfg_.base_width;
    u.c_in = c_in;
    u.c_out = c_out;
    const int w = u.width;
    if (scales == 1) {
      u.bottleneck = build_res(prefix + ".bott", c_in, w);
    } else {
      for (int s = 0; s <= scales - 2; ++s) {
        const int in_ch = (s == 0 ? c_in : w * (1 << (s - 1))) + 2;  // +2 CoordConv
        u.enc.push_back(build_res(prefix + ".enc" + std::to_string(s), in_ch, w * (1 << s)));
      }
      u.bottleneck = build_res(prefix + ".bott", w * (1 << (scales - 2)), w * (1 << (scales - 1)));
      if (!m_.cfg_.no_latentgu) {
        for (int s = 1; s <= scales - 2; ++s)
          u.gus.push_back(build_gu(prefix + ".gu" + std::to_string(s), w * (1 << s)));
      }
      for (int s = scales - 2; s >= 0; --s) {
        const int in_ch = w * (1 << (s + 1)) + w * (1 << s);
        u.dec.push_back(build_res(prefix + ".dec" + std::to_string(s), in_ch, w * (1 << s)));
      }
    }
    u.w_out = filled(prefix + ".out.weight", {c_out, w, 1, 1}, 0.0);
    u.b_out = filled(prefix + ".out.bias", {c_out}, 0.0);
    return u;
  }

  CascadeModel& m_;
  std::mt19937_64 rng_;
};

CascadeModel::CascadeModel(const CascadeConfig& cfg, int n_coils, int n_frames,
                           std::uint64_t seed)
    : cfg_(cfg), n_coils_(n_coils), n_frames_(n_frames) {
  cfg_.validate();
  require(n_coils >= 1, "model: need at least one coil");
  require(n_frames >= 1, "model: need at least one frame");
  ModelBuilder(*this, seed).build();
}

std::vector<double> CascadeModel::onehot(const MetaInfo& meta, int iteration) const {
  require(meta.axis == 0 || meta.axis == 1,
          "meta: axis must be 0 (SAX) or 1 (LAX), got " + std::to_string(meta.axis));
  require(meta.slice_index >= 0, "meta: slice index must be nonnegative");
  require(iteration >= 0 && iteration < cfg_.T(), "meta: iteration out of range");
  const int slice = std::min(meta.slice_index, cfg_.max_slices - 1);
  std::vector<double> v(cfg_.onehot_dim(), 0.0);
  v[meta.axis] = 1.0;
  v[2 + slice] = 1.0;
  v[2 + cfg_.max_slices + iteration] = 1.0;
  v[2 + cfg_.max_slices + cfg_.T() + accel_index(meta.acceleration)] = 1.0;
  return v;
}

ad::TensorPtr CascadeModel::conditioning(const MetaInfo& meta, int iteration) const {
  require(!cfg_.no_conditioning, "conditioning: disabled by the no_conditioning ablation");
  return net::mlp_forward(mlp_, ad::constant({1, cfg_.onehot_dim()}, onehot(meta, iteration)));
}

CascadeModel::UNetOut CascadeModel::unet_forward(const net::UNetP& u, const TensorPtr& x,
                                                 const TensorPtr& c_k,
                                                 const HiddenState& h_prev) const {
  require(x->shape.size() == 5, "unet: rank-5 input expected");
  require(x->shape[1] == u.c_in, "unet: input has " + std::to_string(x->shape[1]) +
                                     " channels, expected " + std::to_string(u.c_in));
  const int S = u.scales;
  const int div = 1 << (S - 1);
  if (x->shape[3] % div != 0 || x->shape[4] % div != 0)
    fail("unet: spatial dims " + std::to_string(x->shape[3]) + "x" +
         std::to_string(x->shape[4]) + " not divisible by 2^(scales-1)=" + std::to_string(div));

  TensorPtr residual = (u.c_in == u.c_out) ? x : ad::slice_channels(x, 0, u.c_out);
  UNetOut out;
  if (S == 1) {
    TensorPtr d = net::res_block(u.bottleneck, x, c_k, cfg_.gn_groups);
    out.out = ad::add(residual, ad::conv_spatial(d, u.w_out, u.b_out));
    return out;
  }

  std::vector<TensorPtr> skips(S - 1);
  TensorPtr cur = x;
  for (int s = 0; s <= S - 2; ++s) {
    TensorPtr e = net::res_block(u.enc[s], ad::coord_augment(cur), c_k, cfg_.gn_groups);
    skips[s] = e;
    cur = ad::resample_down(e);
  }
  TensorPtr d = net::res_block(u.bottleneck, cur, c_k, cfg_.gn_groups);

  if (!u.gus.empty()) {
    for (int s = 1; s <= S - 2; ++s) {
      const net::LatentGUP& gp = u.gus[s - 1];
      TensorPtr h = (static_cast<int>(h_prev.h.size()) >= s && h_prev.h[s - 1])
                        ? h_prev.h[s - 1]
                        : ad::zeros({1, gp.h_ch, skips[s]->shape[2], skips[s]->shape[3],
                                     skips[s]->shape[4]});
      net::GUOut g = net::latent_gu(gp, skips[s], h);
      skips[s] = g.e_mod;
      out.h_next.h.push_back(g.h_next);
    }
  }

  int di = 0;
  for (int s = S - 2; s >= 0; --s, ++di) {
    d = net::res_block(u.dec[di], ad::concat_channels({ad::resample_up(d), skips[s]}), c_k,
                       cfg_.gn_groups);
  }
  out.out = ad::add(residual, ad::conv_spatial(d, u.w_out, u.b_out));
  return out;
}

ad::TensorPtr CascadeModel::ddn_scales(const TensorPtr& rss_map) const {
  require(cfg_.mapping_norm, "ddn_scales: mapping_norm is disabled in this config");
  require(rss_map->shape.size() == 5 && rss_map->shape[1] == 1,
          "ddn_scales: expected [1,1,T,Y,X]");
  require(rss_map->shape[2] == n_frames_,
          "ddn_scales: frame count differs from model construction");
  return net::ddn_forward(ddn_, rss_map);
}

CascadeModel::Output CascadeModel::forward(const ComplexArray& y_meas,
                                           const SamplingMask& m,
                                           const MetaInfo& meta) const {
  require(y_meas.nc == n_coils_, "cascade: data has " + std::to_string(y_meas.nc) +
                                     " coils, model was built for " + std::to_string(n_coils_));
  require(m.ny == y_meas.ny, "cascade: mask/data ny mismatch");
  if (cfg_.mapping_norm)
    require(y_meas.nt == n_frames_, "cascade: mapping_norm model is frame-count specific");

  const int T = cfg_.T();
  TensorPtr ymeas_t = to_channels(apply_mask(m, y_meas));
  TensorPtr maskch = mask_channel(m, y_meas.nt, y_meas.nx);

  TensorPtr yk = ymeas_t;  // Y_0: zero-filled measured k-space
  HiddenState hx, hy;
  for (int k = 0; k < T; ++k) {
    TensorPtr ck = cfg_.no_conditioning ? nullptr : conditioning(meta, k);
    TensorPtr img = ad_ifft2c(yk);

    TensorPtr pre, post;
    if (cfg_.mapping_norm) {
      TensorPtr scales = ddn_scales(rss_channels(img));
      TensorPtr as5 = ad::reshape(scales, {1, 2, y_meas.nt, y_meas.ny, y_meas.nx});
      pre = ad::slice_channels(as5, 0, 1);
      post = ad::slice_channels(as5, 1, 2);
      img = ad::scale_by_map(img, pre);
    }

    TensorPtr zt;
    if (cfg_.no_inet) {
      zt = img;
    } else {
      UNetOut xo = unet_forward(xnet_, img, ck, hx);
      zt = xo.out;
      hx = xo.h_next;
    }
    if (cfg_.mapping_norm) zt = ad::scale_by_map(zt, post);

    TensorPtr kin = ad_fft2c(zt);
    TensorPtr z;
    if (cfg_.no_knet) {
      z = kin;
    } else {
      UNetOut yo = unet_forward(ynet_, ad::concat_channels({kin, ymeas_t, maskch}), ck, hy);
      z = yo.out;
      hy = yo.h_next;
    }

    TensorPtr lam = cfg_.no_conditioning
                        ? ad::relu(lam_free_[k])
                        : lambda_from_conditioning(ck, lam_w_[k], lam_b_[k]);
    yk = ad_dc_solve(z, lam, ymeas_t, m);
  }

  Output out;
  out.y_final = yk;
  out.x_rss =
      ad::reshape(rss_channels(ad_ifft2c(yk)), {y_meas.nt, y_meas.ny, y_meas.nx});
  return out;
}

RealArray CascadeModel::reconstruct(const ComplexArray& y_meas, const SamplingMask& m,
                                    const MetaInfo& meta) const {
  ad::NoGradGuard ng;
  Output o = forward(y_meas, m, meta);
  RealArray out(y_meas.nt, y_meas.ny, y_meas.nx);
  out.data = o.x_rss->value;
  return out;
}

}  // namespace nsrc
