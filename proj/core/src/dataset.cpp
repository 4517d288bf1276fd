#include "nsrc/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace nsrc {

namespace fs = std::filesystem;

void save_sample(const std::string& path, const AcquisitionSample& s) {
  io::Container c;
  c.records.push_back(io::Record::c128(
      "y_meas", {s.y_meas.nc, s.y_meas.nt, s.y_meas.ny, s.y_meas.nx}, s.y_meas.data));
  c.records.push_back(io::Record::c128(
      "y_full", {s.y_full.nc, s.y_full.nt, s.y_full.ny, s.y_full.nx}, s.y_full.data));
  c.records.push_back(io::Record::f64(
      "x_rss", {s.x_rss_target.nt, s.x_rss_target.ny, s.x_rss_target.nx},
      s.x_rss_target.data));
  c.records.push_back(
      io::Record::u8("mask_kept", {static_cast<std::int64_t>(s.mask.kept.size())}, s.mask.kept));
  c.records.push_back(io::Record::i64(
      "mask_meta", {4}, {s.mask.ny, s.mask.accel, s.mask.acs_count, s.mask.offset}));
  c.records.push_back(io::Record::i64(
      "meta", {3}, {s.meta.axis, s.meta.slice_index, s.meta.acceleration}));
  io::write_container(path, c);
}

AcquisitionSample load_sample(const std::string& path) {
  const io::Container c = io::read_container(path);
  AcquisitionSample s;

  const auto& ym = c.get("y_meas");
  require(ym.shape.size() == 4, "sample: y_meas must be rank 4");
  s.y_meas = ComplexArray(static_cast<int>(ym.shape[0]), static_cast<int>(ym.shape[1]),
                          static_cast<int>(ym.shape[2]), static_cast<int>(ym.shape[3]));
  s.y_meas.data = ym.as_c128();
  s.y_meas.check_finite("sample: y_meas");

  const auto& yf = c.get("y_full");
  require(yf.shape == ym.shape, "sample: y_full/y_meas shape mismatch");
  s.y_full = ComplexArray(s.y_meas.nc, s.y_meas.nt, s.y_meas.ny, s.y_meas.nx);
  s.y_full.data = yf.as_c128();
  s.y_full.check_finite("sample: y_full");

  const auto& xr = c.get("x_rss");
  require(xr.shape.size() == 3, "sample: x_rss must be rank 3");
  s.x_rss_target = RealArray(static_cast<int>(xr.shape[0]), static_cast<int>(xr.shape[1]),
                             static_cast<int>(xr.shape[2]));
  s.x_rss_target.data = xr.as_f64();

  const auto mm = c.get("mask_meta").as_i64();
  require(mm.size() == 4, "sample: mask_meta must hold 4 values");
  s.mask.ny = static_cast<int>(mm[0]);
  s.mask.accel = static_cast<int>(mm[1]);
  s.mask.acs_count = static_cast<int>(mm[2]);
  s.mask.offset = static_cast<int>(mm[3]);
  s.mask.kept = c.get("mask_kept").as_u8();
  require(static_cast<int>(s.mask.kept.size()) == s.mask.ny, "sample: mask length mismatch");

  const auto me = c.get("meta").as_i64();
  require(me.size() == 3, "sample: meta must hold 3 values");
  s.meta.axis = static_cast<int>(me[0]);
  s.meta.slice_index = static_cast<int>(me[1]);
  s.meta.acceleration = static_cast<int>(me[2]);
  return s;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail("manifest: cannot open '" + path + "' for writing");
  f << "nsrc-manifest v1\n";
  for (const auto& e : entries) {
    char wbuf[32];
    std::snprintf(wbuf, sizeof(wbuf), "%.17g", e.weight);
    f << e.split << " " << wbuf << " " << e.seed << " " << e.path << "\n";
  }
  if (!f) fail("manifest: write to '" + path + "' failed");
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("manifest: cannot open '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(f, line)) && line == "nsrc-manifest v1",
          "manifest: '" + path + "' has an unknown header");
  std::vector<ManifestEntry> out;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.split >> e.weight >> e.seed >> e.path))
      fail("manifest: malformed line '" + line + "'");
    require(e.split == "train" || e.split == "val",
            "manifest: split must be train or val, got '" + e.split + "'");
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

PhantomSpec random_phantom(const RunConfig& cfg, std::mt19937_64& rng) {
  PhantomSpec spec;
  spec.ny = cfg.ny;
  spec.nx = cfg.nx;
  spec.nt = cfg.nt;
  spec.background = cfg.phantom_background;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> um(-1.0, 1.0);
  for (int e = 0; e < cfg.phantom_ellipses; ++e) {
    Ellipse el;
    el.ay = 0.12 + 0.25 * u01(rng);
    el.ax = 0.12 + 0.25 * u01(rng);
    const double amp = cfg.phantom_motion * u01(rng);
    const double ry = 1.0 - el.ay * (1.0 + amp) - 0.02;
    const double rx = 1.0 - el.ax * (1.0 + amp) - 0.02;
    el.cy = ry * um(rng);
    el.cx = rx * um(rng);
    el.intensity = 0.25 + 0.65 * u01(rng);
    el.motion_amp = amp;
    el.motion_phase = std::numbers::pi * um(rng);
    spec.ellipses.push_back(el);
  }
  return spec;
}

}  // namespace

void generate_dataset(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  const int total = cfg.n_train + cfg.n_val;
  for (int i = 0; i < total; ++i) {
    const std::uint64_t sample_seed = mix(static_cast<std::uint64_t>(cfg.seed), i);
    std::mt19937_64 rng(sample_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    MetaInfo meta;
    meta.axis = u01(rng) < cfg.lax_fraction ? 1 : 0;
    meta.slice_index = static_cast<int>(u01(rng) * cfg.max_slices) % cfg.max_slices;
    meta.acceleration = cfg.r_factors[static_cast<std::size_t>(u01(rng) * cfg.r_factors.size()) %
                                      cfg.r_factors.size()];
    const int offset = static_cast<int>(u01(rng) * meta.acceleration) % meta.acceleration;

    const PhantomSpec spec = random_phantom(cfg, rng);
    const ComplexArray image = make_phantom(spec, mix(sample_seed, 1));
    const CoilSensitivities coils =
        make_coils(cfg.nc, cfg.ny, cfg.nx, cfg.coil_width, mix(sample_seed, 2));

    double sigma = cfg.noise_sigma;
    if (cfg.noise_snr_db > 0.0) {
      const ComplexArray clean = forward_model(image, coils, full_mask(cfg.ny));
      sigma = sigma_for_snr_db(clean, cfg.noise_snr_db);
    }
    const AcquisitionSample s = simulate_acquisition(
        image, coils, meta.acceleration, cfg.acs, offset, sigma, mix(sample_seed, 3), meta);

    char name[64];
    std::snprintf(name, sizeof(name), "sample_%05d.nsrc", i);
    save_sample((fs::path(out_dir) / name).string(), s);

    ManifestEntry e;
    e.split = i < cfg.n_train ? "train" : "val";
    e.weight = meta.axis == 1 ? cfg.lax_weight : 1.0;
    e.seed = sample_seed;
    e.path = name;
    entries.push_back(std::move(e));
  }
  write_manifest((fs::path(out_dir) / "manifest.txt").string(), entries);
  std::ofstream rc(fs::path(out_dir) / "resolved_config.cfg", std::ios::trunc);
  rc << cfg.to_text();
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  const fs::path root = fs::path(manifest_path).parent_path();
  LoadedDataset ds;
  for (const auto& e : read_manifest(manifest_path)) {
    AcquisitionSample s = load_sample((root / e.path).string());
    if (e.split == "train") {
      ds.train.push_back(std::move(s));
      ds.train_weights.push_back(e.weight);
    } else {
      ds.val.push_back(std::move(s));
    }
  }
  require(!ds.train.empty() || !ds.val.empty(), "dataset: empty manifest");
  return ds;
}

void save_checkpoint(const std::string& path, const CascadeModel& model,
                     const RunConfig& cfg) {
  io::Container c;
  c.records.push_back(io::Record::text("config", cfg.to_text()));
  c.records.push_back(io::Record::i64("n_coils", {1}, {model.n_coils()}));
  for (const auto& p : model.params().params()) {
    std::vector<std::int64_t> shape(p.tensor->shape.begin(), p.tensor->shape.end());
    c.records.push_back(io::Record::f64("param/" + p.name, shape, p.tensor->value));
  }
  io::write_container(path, c);
}

std::unique_ptr<CascadeModel> load_checkpoint(const std::string& path, RunConfig* cfg_out) {
  const io::Container c = io::read_container(path);
  const RunConfig cfg = RunConfig::from_text(c.get("config").as_text());
  const auto nc = c.get("n_coils").as_i64();
  require(nc.size() == 1 && nc[0] >= 1, "checkpoint: bad coil count");
  auto model = std::make_unique<CascadeModel>(cfg.cascade_config(), static_cast<int>(nc[0]),
                                              cfg.nt, static_cast<std::uint64_t>(cfg.seed));
  for (auto& p : model->params().params()) {
    const io::Record& r = c.get("param/" + p.name);
    std::vector<double> v = r.as_f64();
    require(v.size() == p.tensor->value.size(),
            "checkpoint: parameter '" + p.name + "' has unexpected size");
    p.tensor->value = std::move(v);
  }
  if (cfg_out) *cfg_out = cfg;
  return model;
}

}  // namespace nsrc
