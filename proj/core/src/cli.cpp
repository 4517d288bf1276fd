#include "nsrc/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nsrc/dataset.hpp"
#include "nsrc/gradcheck_suite.hpp"

namespace nsrc::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string manifest_path_of(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.txt").string();
  return data;
}

std::string recon_name(const std::string& sample_path) {
  fs::path p(sample_path);
  return p.stem().string() + ".recon.nsrc";
}

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail("cannot open '" + path + "' for writing");
  f << "step,lr,train_loss,val_psnr,val_ssim,val_nmse\n";
  for (const auto& r : rows)
    f << r.step << "," << fmt(r.lr) << "," << fmt(r.train_loss) << "," << fmt(r.val_psnr)
      << "," << fmt(r.val_ssim) << "," << fmt(r.val_nmse) << "\n";
}

int cmd_simulate(const std::string& config, const std::string& out) {
  const RunConfig cfg = RunConfig::from_file(config);
  set_num_threads(cfg.threads);
  generate_dataset(cfg, out);
  std::cout << "simulate: wrote " << cfg.n_train << " train + " << cfg.n_val
            << " val samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out) {
  const RunConfig cfg = RunConfig::from_file(config);
  set_num_threads(cfg.threads);
  const LoadedDataset ds = load_dataset(manifest_path_of(data));
  require(!ds.train.empty(), "train: dataset has no training samples");
  const AcquisitionSample& first = ds.train.front();

  CascadeModel model(cfg.cascade_config(), first.y_full.nc, first.y_full.nt,
                     static_cast<std::uint64_t>(cfg.seed));
  std::cout << "train: " << model.trainable_parameter_count() << " trainable parameters, "
            << ds.train.size() << " train / " << ds.val.size() << " val samples\n";

  const TrainResult res = train(model, ds, cfg.train_config());
  restore_params(model, res.best_params);

  fs::create_directories(out);
  save_checkpoint((fs::path(out) / "checkpoint.nsrc").string(), model, cfg);
  write_history_csv((fs::path(out) / "metrics.csv").string(), res.history);
  std::ofstream rc(fs::path(out) / "resolved_config.cfg", std::ios::trunc);
  rc << cfg.to_text();

  if (!ds.val.empty()) {
    const Metrics best = evaluate_mean(model, ds.val);
    std::cout << "train: best step " << res.best_step << " val psnr " << fmt(best.psnr)
              << " ssim " << fmt(best.ssim) << " nmse " << fmt(best.nmse) << "\n";
  }
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& input,
                    const std::string& output, const std::string& data,
                    const std::string& out_dir, const std::string& split) {
  RunConfig cfg;
  auto model = load_checkpoint(checkpoint, &cfg);
  set_num_threads(cfg.threads);

  auto write_recon = [&](const AcquisitionSample& s, const std::string& path) {
    const RealArray recon = infer_sample(*model, s);
    io::Container c;
    c.records.push_back(
        io::Record::f64("x_rss", {recon.nt, recon.ny, recon.nx}, recon.data));
    c.records.push_back(io::Record::i64(
        "meta", {3}, {s.meta.axis, s.meta.slice_index, s.meta.acceleration}));
    io::write_container(path, c);
  };

  if (!input.empty()) {
    require(!output.empty(), "reconstruct: --output is required with --input");
    write_recon(load_sample(input), output);
    return 0;
  }
  require(!data.empty() && !out_dir.empty(),
          "reconstruct: need either --input/--output or --data/--out");
  fs::create_directories(out_dir);
  const std::string manifest = manifest_path_of(data);
  const fs::path root = fs::path(manifest).parent_path();
  int count = 0;
  for (const auto& e : read_manifest(manifest)) {
    if (split != "all" && e.split != split) continue;
    write_recon(load_sample((root / e.path).string()),
                (fs::path(out_dir) / recon_name(e.path)).string());
    ++count;
  }
  std::cout << "reconstruct: wrote " << count << " reconstructions to " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& data, const std::string& pred, const std::string& out,
                 const std::string& split) {
  const std::string manifest = manifest_path_of(data);
  const fs::path root = fs::path(manifest).parent_path();
  std::ofstream f(out, std::ios::trunc);
  if (!f) fail("cannot open '" + out + "' for writing");
  f << "sample,R,psnr,ssim,nmse\n";
  Metrics acc;
  int n = 0;
  for (const auto& e : read_manifest(manifest)) {
    if (split != "all" && e.split != split) continue;
    const AcquisitionSample s = load_sample((root / e.path).string());
    const io::Container pc =
        io::read_container((fs::path(pred) / recon_name(e.path)).string());
    const auto& xr = pc.get("x_rss");
    require(xr.shape.size() == 3, "evaluate: prediction x_rss must be rank 3");
    RealArray recon(static_cast<int>(xr.shape[0]), static_cast<int>(xr.shape[1]),
                    static_cast<int>(xr.shape[2]));
    recon.data = xr.as_f64();
    const Metrics m = leaderboard_metrics(recon, s.x_rss_target);
    f << fs::path(e.path).stem().string() << "," << s.meta.acceleration << ","
      << fmt(m.psnr) << "," << fmt(m.ssim) << "," << fmt(m.nmse) << "\n";
    acc.psnr += m.psnr;
    acc.ssim += m.ssim;
    acc.nmse += m.nmse;
    ++n;
  }
  require(n > 0, "evaluate: no samples matched");
  std::cout << "evaluate: n=" << n << " mean psnr " << fmt(acc.psnr / n) << " ssim "
            << fmt(acc.ssim / n) << " nmse " << fmt(acc.nmse / n) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config, bool quick) {
  if (!config.empty()) {
    const RunConfig cfg = RunConfig::from_file(config);
    set_num_threads(cfg.threads);
  }
  const auto results = gradcheck_suite(!quick);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.pass() ? "PASS" : "FAIL") << "  " << r.name << "  err=" << fmt(r.err)
              << "  tol=" << fmt(r.tol) << "\n";
    ok = ok && r.pass();
  }
  std::cout << (ok ? "gradcheck: all checks passed\n" : "gradcheck: FAILURES\n");
  return ok ? 0 : 1;
}

int cmd_bias_demo(const std::string& config, int coils_override, double sigma,
                  const std::string& out) {
  RunConfig cfg;
  if (!config.empty()) cfg = RunConfig::from_file(config);
  set_num_threads(cfg.threads);
  const int nc = coils_override > 0 ? coils_override : cfg.nc;

  PhantomSpec spec;
  spec.ny = cfg.ny;
  spec.nx = cfg.nx;
  spec.nt = 1;
  spec.ellipses.push_back({0.0, 0.0, 0.55, 0.45, 0.8, 0.0, 0.0});
  spec.ellipses.push_back({0.15, 0.1, 0.2, 0.15, 0.15, 0.0, 0.0});
  const ComplexArray image = make_phantom(spec, static_cast<std::uint64_t>(cfg.seed));

  const CoilSensitivities multi =
      make_coils(nc, cfg.ny, cfg.nx, cfg.coil_width, static_cast<std::uint64_t>(cfg.seed) + 1);
  const BiasReport rm = bias_demo(multi, image, sigma);
  const CoilSensitivities single =
      make_coils(1, cfg.ny, cfg.nx, cfg.coil_width, static_cast<std::uint64_t>(cfg.seed) + 2);
  const BiasReport rs = bias_demo(single, image, sigma);

  std::cout << "bias-demo: coils=" << nc << " nmse(|A^H Y|, RSS) = " << fmt(rm.nmse) << "\n";
  std::cout << "bias-demo: coils=1 nmse(|A^H Y|, RSS) = " << fmt(rs.nmse) << "\n";
  if (!out.empty()) {
    io::Container c;
    c.records.push_back(io::Record::f64("nmse_multi", {1}, {rm.nmse}));
    c.records.push_back(io::Record::f64("nmse_single", {1}, {rs.nmse}));
    c.records.push_back(io::Record::f64(
        "error_map", {rm.error_map.nt, rm.error_map.ny, rm.error_map.nx}, rm.error_map.data));
    c.records.push_back(io::Record::f64(
        "rss", {rm.rss_image.nt, rm.rss_image.ny, rm.rss_image.nx}, rm.rss_image.data));
    c.records.push_back(io::Record::f64("generalized_inverse_mag",
                                        {rm.generalized_mag.nt, rm.generalized_mag.ny,
                                         rm.generalized_mag.nx},
                                        rm.generalized_mag.data));
    io::write_container(out, c);
  }
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& data, const std::string& out) {
  const RunConfig base = RunConfig::from_file(config);
  set_num_threads(base.threads);
  const LoadedDataset ds = load_dataset(manifest_path_of(data));
  require(!ds.train.empty() && !ds.val.empty(), "ablate: need train and val samples");
  const AcquisitionSample& first = ds.train.front();

  struct Variant {
    std::string name;
    RunConfig cfg;
  };
  std::vector<Variant> variants;
  variants.push_back({"full", base});
  {
    RunConfig c = base;
    c.no_knet = true;
    variants.push_back({"no_kspace_unet", c});
  }
  {
    RunConfig c = base;
    c.no_inet = true;
    variants.push_back({"no_image_unet", c});
  }
  {
    RunConfig c = base;
    c.no_latentgu = true;
    variants.push_back({"no_latentgu", c});
  }
  {
    RunConfig c = base;
    c.no_conditioning = true;
    variants.push_back({"no_conditioning", c});
  }
  {
    RunConfig c = base;
    c.t_override = 1;
    variants.push_back({"single_iteration", c});
  }

  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "ablations.csv", std::ios::trunc);
  f << "variant,params,psnr,ssim,nmse\n";
  for (const auto& v : variants) {
    CascadeModel model(v.cfg.cascade_config(), first.y_full.nc, first.y_full.nt,
                       static_cast<std::uint64_t>(v.cfg.seed));
    const TrainResult res = train(model, ds, v.cfg.train_config());
    restore_params(model, res.best_params);
    const Metrics m = evaluate_mean(model, ds.val);
    save_checkpoint((fs::path(out) / (v.name + ".nsrc")).string(), model, v.cfg);
    f << v.name << "," << model.trainable_parameter_count() << "," << fmt(m.psnr) << ","
      << fmt(m.ssim) << "," << fmt(m.nmse) << "\n";
    std::cout << "ablate: " << v.name << " psnr " << fmt(m.psnr) << " ssim " << fmt(m.ssim)
              << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"nsrc: calibration-free unrolled MRI reconstruction toolkit"};
  app.require_subcommand(1);

  std::string config, out, data, input, output, checkpoint, pred, split = "all";
  int coils = 0;
  double sigma = 0.0;
  bool quick = false;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset from a config");
  sim->add_option("--config", config, "run configuration file")->required();
  sim->add_option("--out", out, "output dataset directory")->required();

  auto* tr = app.add_subcommand("train", "train a cascade on a dataset");
  tr->add_option("--config", config, "run configuration file")->required();
  tr->add_option("--data", data, "dataset directory or manifest")->required();
  tr->add_option("--out", out, "output directory (checkpoint + metrics.csv)")->required();

  auto* rec = app.add_subcommand("reconstruct", "reconstruct samples with a checkpoint");
  rec->add_option("--checkpoint", checkpoint, "checkpoint container")->required();
  rec->add_option("--input", input, "single sample container");
  rec->add_option("--output", output, "output container for --input");
  rec->add_option("--data", data, "dataset directory or manifest");
  rec->add_option("--out", out, "output directory for --data");
  rec->add_option("--split", split, "train|val|all (default all)");

  auto* ev = app.add_subcommand("evaluate", "leaderboard metrics for predictions");
  ev->add_option("--data", data, "dataset directory or manifest")->required();
  ev->add_option("--pred", pred, "directory with *.recon.nsrc predictions")->required();
  ev->add_option("--out", out, "output metrics CSV")->required();
  ev->add_option("--split", split, "train|val|all (default all)");

  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference suite");
  gc->add_option("--config", config, "optional config (threads)");
  gc->add_flag("--quick", quick, "skip the end-to-end cascade check");

  auto* bd = app.add_subcommand("bias-demo", "generalized-inverse vs RSS bias report");
  bd->add_option("--config", config, "optional config (geometry, seed)");
  bd->add_option("--coils", coils, "coil count override");
  bd->add_option("--sigma", sigma, "k-space noise std (default 0)");
  bd->add_option("--out", out, "optional report container");

  auto* ab = app.add_subcommand("ablate", "train the ablation grid from one config");
  ab->add_option("--config", config, "run configuration file")->required();
  ab->add_option("--data", data, "dataset directory or manifest")->required();
  ab->add_option("--out", out, "output directory")->required();

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  std::string prog = "nsrc";
  argv.push_back(prog.data());
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(config, out);
    if (*tr) return cmd_train(config, data, out);
    if (*rec) return cmd_reconstruct(checkpoint, input, output, data, out, split);
    if (*ev) return cmd_evaluate(data, pred, out, split);
    if (*gc) return cmd_gradcheck(config, quick);
    if (*bd) return cmd_bias_demo(config, coils, sigma, out);
    if (*ab) return cmd_ablate(config, data, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nsrc::cli
