#include "nsrc/gradcheck_suite.hpp"

#include <random>

#include "nsrc/dc.hpp"
#include "nsrc/metrics.hpp"
#include "nsrc/network.hpp"
#include "nsrc/simulation.hpp"
#include "nsrc/training.hpp"

namespace nsrc {

namespace {

using ad::TensorPtr;

std::vector<double> randv(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

TensorPtr rleaf(std::mt19937_64& rng, std::vector<int> shape, double lo = -1.0,
                double hi = 1.0) {
  const std::size_t n = ad::shape_numel(shape);
  return ad::leaf(std::move(shape), randv(rng, n, lo, hi));
}

TensorPtr rconst(std::mt19937_64& rng, std::vector<int> shape, double lo = -1.0,
                 double hi = 1.0) {
  const std::size_t n = ad::shape_numel(shape);
  return ad::constant(std::move(shape), randv(rng, n, lo, hi));
}

// Scalar functional <out, proj> with a fixed random projection.
TensorPtr project(const TensorPtr& out, const TensorPtr& proj) {
  return ad::sum(ad::mul(out, proj));
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(bool include_cascade) {
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, double tol, double err) {
    results.push_back({name, err, tol});
  };
  std::mt19937_64 rng(20240811);

  {  // spatial convolution
    auto x = rleaf(rng, {1, 3, 2, 6, 6});
    auto w = rleaf(rng, {2, 3, 3, 3});
    auto b = rleaf(rng, {2});
    auto proj = rconst(rng, {1, 2, 2, 6, 6});
    run("conv_spatial", 1e-4, ad::grad_check([&](const auto& p) {
          return project(ad::conv_spatial(p[0], p[1], p[2]), proj);
        }, {x, w, b}));
  }
  {  // temporal convolution
    auto x = rleaf(rng, {1, 3, 5, 4, 4});
    auto w = rleaf(rng, {2, 3, 3});
    auto b = rleaf(rng, {2});
    auto proj = rconst(rng, {1, 2, 5, 4, 4});
    run("conv_temporal", 1e-4, ad::grad_check([&](const auto& p) {
          return project(ad::conv_temporal(p[0], p[1], p[2]), proj);
        }, {x, w, b}));
  }
  {  // group normalization
    auto x = rleaf(rng, {1, 4, 2, 5, 5});
    auto g = rleaf(rng, {4}, 0.5, 1.5);
    auto b = rleaf(rng, {4});
    auto proj = rconst(rng, {1, 4, 2, 5, 5});
    run("group_norm", 1e-4, ad::grad_check([&](const auto& p) {
          return project(ad::group_norm(p[0], 2, p[1], p[2]), proj);
        }, {x, g, b}));
  }
  {  // activations
    auto x = rleaf(rng, {2, 7}, -2.0, 2.0);
    auto proj = rconst(rng, {2, 7});
    for (auto [kind, name] : {std::pair{ad::Act::kSilu, "activation_silu"},
                              std::pair{ad::Act::kSigmoid, "activation_sigmoid"},
                              std::pair{ad::Act::kTanh, "activation_tanh"}}) {
      run(name, 1e-6, ad::grad_check([&, kind = kind](const auto& p) {
            return project(ad::activation(p[0], kind), proj);
          }, {x}));
    }
  }
  {  // FiLM modulation
    auto x = rleaf(rng, {1, 3, 2, 4, 4});
    auto sc = rleaf(rng, {1, 3});
    auto sh = rleaf(rng, {1, 3});
    auto proj = rconst(rng, {1, 3, 2, 4, 4});
    run("film", 1e-6, ad::grad_check([&](const auto& p) {
          return project(ad::film(p[0], p[1], p[2]), proj);
        }, {x, sc, sh}));
  }
  {  // resampling
    auto x = rleaf(rng, {1, 2, 2, 6, 6});
    auto pd = rconst(rng, {1, 2, 2, 3, 3});
    auto pu = rconst(rng, {1, 2, 2, 12, 12});
    run("resample_down", 1e-6, ad::grad_check([&](const auto& p) {
          return project(ad::resample_down(p[0]), pd);
        }, {x}));
    run("resample_up", 1e-6, ad::grad_check([&](const auto& p) {
          return project(ad::resample_up(p[0]), pu);
        }, {x}));
  }
  {  // linear
    auto x = rleaf(rng, {2, 5});
    auto w = rleaf(rng, {3, 5});
    auto b = rleaf(rng, {3});
    auto proj = rconst(rng, {2, 3});
    run("linear", 1e-4, ad::grad_check([&](const auto& p) {
          return project(ad::linear(p[0], p[1], p[2]), proj);
        }, {x, w, b}));
  }
  {  // LatentGU, backprop through two chained iterations
    const int ec = 3, hc = 3;
    net::LatentGUP gu;
    gu.e_ch = ec;
    gu.h_ch = hc;
    auto wf = rleaf(rng, {hc, hc + ec, 1, 1}), bf = rleaf(rng, {hc});
    auto wh = rleaf(rng, {hc, hc + ec, 1, 1}), bh = rleaf(rng, {hc});
    auto wm = rleaf(rng, {2 * ec, hc, 1, 1}), bm = rleaf(rng, {2 * ec});
    auto e1 = rleaf(rng, {1, ec, 2, 3, 3});
    auto e2 = rleaf(rng, {1, ec, 2, 3, 3});
    auto h0 = rleaf(rng, {1, hc, 2, 3, 3});
    auto p1 = rconst(rng, {1, ec, 2, 3, 3});
    auto p2 = rconst(rng, {1, ec, 2, 3, 3});
    run("latent_gu_bptt2", 1e-4, ad::grad_check([&](const auto& p) {
          net::LatentGUP g{ec, hc, p[0], p[1], p[2], p[3], p[4], p[5]};
          net::GUOut o1 = net::latent_gu(g, p[6], p[8]);
          net::GUOut o2 = net::latent_gu(g, p[7], o1.h_next);
          return ad::add(project(o1.e_mod, p1), project(o2.e_mod, p2));
        }, {wf, bf, wh, bh, wm, bm, e1, e2, h0}));
  }
  {  // residual block (with FiLM conditioning)
    const int ci = 4, co = 6, cd = 8;
    std::vector<TensorPtr> leaves;
    auto L = [&](std::vector<int> s, double lo = -0.6, double hi = 0.6) {
      leaves.push_back(rleaf(rng, std::move(s), lo, hi));
      return leaves.back();
    };
    net::ResBlockP rb;
    rb.c_in = ci;
    rb.c_out = co;
    rb.gn1_g = L({ci}, 0.5, 1.5);
    rb.gn1_b = L({ci});
    rb.film1 = net::FilmMapP{L({2 * ci, cd}), L({2 * ci})};
    rb.w1 = L({co, ci, 3, 3});
    rb.b1 = L({co});
    rb.wt = L({co, co, 3});
    rb.bt = L({co});
    rb.gn2_g = L({co}, 0.5, 1.5);
    rb.gn2_b = L({co});
    rb.film2 = net::FilmMapP{L({2 * co, cd}), L({2 * co})};
    rb.w2 = L({co, co, 3, 3});
    rb.b2 = L({co});
    rb.wr = L({co, ci, 1, 1});
    rb.br = L({co});
    auto x = L({1, ci, 2, 4, 4});
    auto ck = L({1, cd});
    auto proj = rconst(rng, {1, co, 2, 4, 4});
    run("residual_block", 1e-4, ad::grad_check([&](const auto&) {
          return project(net::res_block(rb, x, ck, 2), proj);
        }, leaves, 1e-5, 24));
  }
  {  // conditioning MLP (two SiLU hidden layers, 192 wide)
    const int d = 192, in = 23;
    auto w0 = rleaf(rng, {d, in}, -0.3, 0.3), b0 = rleaf(rng, {d}, -0.1, 0.1);
    auto w1 = rleaf(rng, {d, d}, -0.08, 0.08), b1 = rleaf(rng, {d}, -0.1, 0.1);
    auto w2 = rleaf(rng, {d, d}, -0.08, 0.08), b2 = rleaf(rng, {d}, -0.1, 0.1);
    std::vector<double> onehot(in, 0.0);
    onehot[1] = onehot[4] = onehot[20] = 1.0;
    auto oh = ad::constant({1, in}, onehot);
    auto proj = rconst(rng, {1, d});
    run("conditioning_mlp", 1e-4, ad::grad_check([&](const auto& p) {
          net::MlpP m{p[0], p[1], p[2], p[3], p[4], p[5]};
          return project(net::mlp_forward(m, oh), proj);
        }, {w0, b0, w1, b1, w2, b2}, 1e-5, 60));
  }
  {  // data-dependent normalization CNN
    const int nt = 3, f = 5;
    auto w1 = rleaf(rng, {f, nt, 3, 3}), b1 = rleaf(rng, {f});
    auto w2 = rleaf(rng, {2 * nt, f, 3, 3}, -0.3, 0.3), b2 = rleaf(rng, {2 * nt});
    auto x = rleaf(rng, {1, 1, nt, 8, 8}, 0.05, 1.0);
    auto proj = rconst(rng, {2, nt, 8, 8});
    run("data_dependent_norm", 1e-4, ad::grad_check([&](const auto& p) {
          net::DdnP d{p[0], p[1], p[2], p[3]};
          return project(net::ddn_forward(d, p[4]), proj);
        }, {w1, b1, w2, b2, x}));
  }
  {  // SSIM
    auto a = rleaf(rng, {2, 10, 10}, 0.1, 1.0);
    auto b = rleaf(rng, {2, 10, 10}, 0.1, 1.0);
    run("ssim", 1e-4, ad::grad_check([&](const auto& p) {
          return ssim(p[0], p[1], 1.0);
        }, {a, b}));
  }
  {  // DC solve w.r.t. z and lambda
    const SamplingMask m = make_mask(8, 3, 2, 1);
    auto z = rleaf(rng, {1, 4, 2, 8, 8});
    auto lam = ad::leaf({2}, {0.35, 1.4});
    auto ymeas = rconst(rng, {1, 4, 2, 8, 8});
    auto proj = rconst(rng, {1, 4, 2, 8, 8});
    run("dc_solve", 1e-4, ad::grad_check([&](const auto& p) {
          return project(ad_dc_solve(p[0], p[1], ymeas, m), proj);
        }, {z, lam}));
  }
  {  // learned affine lambda map, away from the clamp
    auto ck = rleaf(rng, {1, 6}, 0.2, 1.0);
    auto w = rleaf(rng, {3, 6}, 0.1, 0.5);
    auto b = ad::leaf({3}, {0.4, 0.9, 1.5});
    auto proj = rconst(rng, {1, 3});
    run("lambda_map", 1e-6, ad::grad_check([&](const auto& p) {
          return project(lambda_from_conditioning(p[0], p[1], p[2]), proj);
        }, {ck, w, b}));
  }
  {  // full loss
    const int nc = 2, nt = 2, ny = 12, nx = 12;
    ComplexArray y_full(nc, nt, ny, nx);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (cplx& v : y_full.data) v = {u(rng), u(rng)};
    RealArray target(nt, ny, nx);
    for (double& v : target.data) v = 0.2 + 0.8 * std::fabs(u(rng));
    // Evaluate at a point whose image-domain L1 residual is bounded away from
    // zero, so no |.| kink falls inside the finite-difference step.
    ComplexArray imgs = ifft2c(y_full);
    std::uniform_real_distribution<double> d(0.2, 1.0);
    std::bernoulli_distribution sgn(0.5);
    for (cplx& v : imgs.data)
      v += cplx{(sgn(rng) ? 1.0 : -1.0) * d(rng), (sgn(rng) ? 1.0 : -1.0) * d(rng)};
    auto y_pred = ad::leaf({1, 2 * nc, nt, ny, nx}, to_channels(fft2c(imgs))->value);
    auto x_pred = rleaf(rng, {nt, ny, nx}, 0.05, 1.0);
    LossWeights w;
    // h = 1e-3: with |loss| ~ O(1), coordinates whose true gradient is ~0
    // would otherwise drown in the (f(x+h)-f(x-h)) rounding floor.
    run("loss_total", 1e-4, ad::grad_check([&](const auto& p) {
          return loss_total(p[0], y_full, p[1], target, w);
        }, {y_pred, x_pred}, 1e-3));
  }

  if (include_cascade) {  // tiny end-to-end cascade: T=2, width 4, 2 coils, 16x16x2
    CascadeConfig cfg;
    cfg.iterations = 2;
    cfg.xnet_scales = 3;
    cfg.ynet_scales = 3;
    cfg.base_width = 4;
    cfg.max_slices = 4;
    CascadeModel model(cfg, 2, 2, 99);
    PhantomSpec spec;
    spec.ny = spec.nx = 16;
    spec.nt = 2;
    spec.ellipses.push_back({0.1, -0.1, 0.5, 0.4, 0.8, 0.1, 0.3});
    const ComplexArray img = make_phantom(spec, 7);
    const CoilSensitivities coils = make_coils(2, 16, 16, 0.9, 8);
    MetaInfo meta{0, 1, 4};
    const AcquisitionSample s = simulate_acquisition(img, coils, 4, 4, 1, 0.01, 9, meta);
    // Nudge the zero-initialized layers so the check probes a generic point.
    std::mt19937_64 prng(424242);
    std::uniform_real_distribution<double> pu(-0.05, 0.05);
    std::vector<TensorPtr> leaves;
    for (auto& p : model.params().params()) {
      for (double& v : p.tensor->value) v += pu(prng);
      leaves.push_back(p.tensor);
    }
    LossWeights w;
    run("cascade_tiny", 1e-3, ad::grad_check([&](const auto&) {
          CascadeModel::Output o = model.forward(s.y_meas, s.mask, s.meta);
          return loss_total(o.y_final, s.y_full, o.x_rss, s.x_rss_target, w);
        }, leaves, 1e-5, 3));
  }

  return results;
}

}  // namespace nsrc
