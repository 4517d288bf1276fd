#include "nsrc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace nsrc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    require(used == v.size(), "config: key '" + key + "' has non-integer value '" + v + "'");
    return static_cast<int>(r);
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    require(used == v.size(), "config: key '" + key + "' has non-integer value '" + v + "'");
    return r;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    require(used == v.size(), "config: key '" + key + "' has non-numeric value '" + v + "'");
    return r;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail("config: key '" + key + "' has non-numeric value '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: key '" + key + "' must be true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(key, item));
  }
  require(!out.empty(), "config: key '" + key + "' has an empty list");
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"ny", [](RunConfig& c, const std::string& k, const std::string& v) { c.ny = parse_int(k, v); }},
      {"nx", [](RunConfig& c, const std::string& k, const std::string& v) { c.nx = parse_int(k, v); }},
      {"nt", [](RunConfig& c, const std::string& k, const std::string& v) { c.nt = parse_int(k, v); }},
      {"nc", [](RunConfig& c, const std::string& k, const std::string& v) { c.nc = parse_int(k, v); }},
      {"r_factors", [](RunConfig& c, const std::string& k, const std::string& v) { c.r_factors = parse_int_list(k, v); }},
      {"acs", [](RunConfig& c, const std::string& k, const std::string& v) { c.acs = parse_int(k, v); }},
      {"noise_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.noise_sigma = parse_double(k, v); }},
      {"noise_snr_db", [](RunConfig& c, const std::string& k, const std::string& v) { c.noise_snr_db = parse_double(k, v); }},
      {"n_train", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_train = parse_int(k, v); }},
      {"n_val", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_val = parse_int(k, v); }},
      {"phantom_ellipses", [](RunConfig& c, const std::string& k, const std::string& v) { c.phantom_ellipses = parse_int(k, v); }},
      {"phantom_background", [](RunConfig& c, const std::string& k, const std::string& v) { c.phantom_background = parse_double(k, v); }},
      {"phantom_motion", [](RunConfig& c, const std::string& k, const std::string& v) { c.phantom_motion = parse_double(k, v); }},
      {"coil_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.coil_width = parse_double(k, v); }},
      {"lax_fraction", [](RunConfig& c, const std::string& k, const std::string& v) { c.lax_fraction = parse_double(k, v); }},
      {"lax_weight", [](RunConfig& c, const std::string& k, const std::string& v) { c.lax_weight = parse_double(k, v); }},
      {"iterations", [](RunConfig& c, const std::string& k, const std::string& v) { c.iterations = parse_int(k, v); }},
      {"xnet_scales", [](RunConfig& c, const std::string& k, const std::string& v) { c.xnet_scales = parse_int(k, v); }},
      {"ynet_scales", [](RunConfig& c, const std::string& k, const std::string& v) { c.ynet_scales = parse_int(k, v); }},
      {"base_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.base_width = parse_int(k, v); }},
      {"gn_groups", [](RunConfig& c, const std::string& k, const std::string& v) { c.gn_groups = parse_int(k, v); }},
      {"max_slices", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_slices = parse_int(k, v); }},
      {"lambda_init", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda_init = parse_double(k, v); }},
      {"no_knet", [](RunConfig& c, const std::string& k, const std::string& v) { c.no_knet = parse_bool(k, v); }},
      {"no_inet", [](RunConfig& c, const std::string& k, const std::string& v) { c.no_inet = parse_bool(k, v); }},
      {"no_latentgu", [](RunConfig& c, const std::string& k, const std::string& v) { c.no_latentgu = parse_bool(k, v); }},
      {"no_conditioning", [](RunConfig& c, const std::string& k, const std::string& v) { c.no_conditioning = parse_bool(k, v); }},
      {"t_override", [](RunConfig& c, const std::string& k, const std::string& v) { c.t_override = parse_int(k, v); }},
      {"mapping_norm", [](RunConfig& c, const std::string& k, const std::string& v) { c.mapping_norm = parse_bool(k, v); }},
      {"mapping_norm_features", [](RunConfig& c, const std::string& k, const std::string& v) { c.mapping_norm_features = parse_int(k, v); }},
      {"alpha1", [](RunConfig& c, const std::string& k, const std::string& v) { c.alpha1 = parse_double(k, v); }},
      {"alpha2", [](RunConfig& c, const std::string& k, const std::string& v) { c.alpha2 = parse_double(k, v); }},
      {"alpha3", [](RunConfig& c, const std::string& k, const std::string& v) { c.alpha3 = parse_double(k, v); }},
      {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"adam_beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta1 = parse_double(k, v); }},
      {"adam_beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_beta2 = parse_double(k, v); }},
      {"adam_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_eps = parse_double(k, v); }},
      {"warmup_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.warmup_steps = parse_i64(k, v); }},
      {"total_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.total_steps = parse_i64(k, v); }},
      {"accum_samples", [](RunConfig& c, const std::string& k, const std::string& v) { c.accum_samples = parse_int(k, v); }},
      {"augment", [](RunConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool(k, v); }},
      {"val_interval", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_interval = parse_int(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_i64(k, v); }},
      {"threads", [](RunConfig& c, const std::string& k, const std::string& v) { c.threads = parse_int(k, v); }},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(lineno) + " is not 'key = value': '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail("config: unknown key '" + key + "'");
    it->second(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# resolved nsrc run configuration\n";
  os << "ny = " << ny << "\nnx = " << nx << "\nnt = " << nt << "\nnc = " << nc << "\n";
  os << "r_factors = ";
  for (std::size_t i = 0; i < r_factors.size(); ++i) os << (i ? "," : "") << r_factors[i];
  os << "\nacs = " << acs << "\n";
  os << "noise_sigma = " << fmt_double(noise_sigma) << "\n";
  os << "noise_snr_db = " << fmt_double(noise_snr_db) << "\n";
  os << "n_train = " << n_train << "\nn_val = " << n_val << "\n";
  os << "phantom_ellipses = " << phantom_ellipses << "\n";
  os << "phantom_background = " << fmt_double(phantom_background) << "\n";
  os << "phantom_motion = " << fmt_double(phantom_motion) << "\n";
  os << "coil_width = " << fmt_double(coil_width) << "\n";
  os << "lax_fraction = " << fmt_double(lax_fraction) << "\n";
  os << "lax_weight = " << fmt_double(lax_weight) << "\n";
  os << "iterations = " << iterations << "\n";
  os << "xnet_scales = " << xnet_scales << "\nynet_scales = " << ynet_scales << "\n";
  os << "base_width = " << base_width << "\ngn_groups = " << gn_groups << "\n";
  os << "max_slices = " << max_slices << "\n";
  os << "lambda_init = " << fmt_double(lambda_init) << "\n";
  os << "no_knet = " << (no_knet ? "true" : "false") << "\n";
  os << "no_inet = " << (no_inet ? "true" : "false") << "\n";
  os << "no_latentgu = " << (no_latentgu ? "true" : "false") << "\n";
  os << "no_conditioning = " << (no_conditioning ? "true" : "false") << "\n";
  os << "t_override = " << t_override << "\n";
  os << "mapping_norm = " << (mapping_norm ? "true" : "false") << "\n";
  os << "mapping_norm_features = " << mapping_norm_features << "\n";
  os << "alpha1 = " << fmt_double(alpha1) << "\nalpha2 = " << fmt_double(alpha2)
     << "\nalpha3 = " << fmt_double(alpha3) << "\n";
  os << "lr = " << fmt_double(lr) << "\n";
  os << "weight_decay = " << fmt_double(weight_decay) << "\n";
  os << "adam_beta1 = " << fmt_double(adam_beta1) << "\n";
  os << "adam_beta2 = " << fmt_double(adam_beta2) << "\n";
  os << "adam_eps = " << fmt_double(adam_eps) << "\n";
  os << "warmup_steps = " << warmup_steps << "\ntotal_steps = " << total_steps << "\n";
  os << "accum_samples = " << accum_samples << "\n";
  os << "augment = " << (augment ? "true" : "false") << "\n";
  os << "val_interval = " << val_interval << "\n";
  os << "seed = " << seed << "\nthreads = " << threads << "\n";
  return os.str();
}

CascadeConfig RunConfig::cascade_config() const {
  CascadeConfig cc;
  cc.iterations = iterations;
  cc.xnet_scales = xnet_scales;
  cc.ynet_scales = ynet_scales;
  cc.base_width = base_width;
  cc.gn_groups = gn_groups;
  cc.max_slices = max_slices;
  cc.lambda_init = lambda_init;
  cc.no_knet = no_knet;
  cc.no_inet = no_inet;
  cc.no_latentgu = no_latentgu;
  cc.no_conditioning = no_conditioning;
  cc.t_override = t_override;
  cc.mapping_norm = mapping_norm;
  cc.mapping_norm_features = mapping_norm_features;
  cc.validate();
  return cc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.base_lr = lr;
  tc.warmup_steps = warmup_steps;
  tc.total_steps = total_steps;
  tc.accum_samples = accum_samples;
  tc.adam = AdamWSettings{adam_beta1, adam_beta2, adam_eps, weight_decay};
  tc.loss = LossWeights{alpha1, alpha2, alpha3};
  tc.augment = augment;
  tc.seed = static_cast<std::uint64_t>(seed);
  tc.val_interval = val_interval;
  return tc;
}

void RunConfig::validate() const {
  require(ny >= 1 && nx >= 1 && nt >= 1 && nc >= 1, "config: empty geometry");
  for (int r : r_factors) require(r >= 1, "config: acceleration factors must be >= 1");
  require(acs >= 0 && acs <= ny, "config: acs must be in [0, ny]");
  require(noise_sigma >= 0.0, "config: noise_sigma must be >= 0");
  require(n_train >= 0 && n_val >= 0, "config: sample counts must be >= 0");
  require(phantom_ellipses >= 0, "config: phantom_ellipses must be >= 0");
  require(lax_fraction >= 0.0 && lax_fraction <= 1.0, "config: lax_fraction in [0,1]");
  require(accum_samples >= 1, "config: accum_samples must be >= 1");
  require(val_interval >= 1, "config: val_interval must be >= 1");
  require(total_steps >= 0, "config: total_steps must be >= 0");
  if (total_steps > 0)
    require(warmup_steps >= 0 && warmup_steps < total_steps,
            "config: warmup_steps must be < total_steps");
  cascade_config();  // validates the cascade fields
}

}  // namespace nsrc
