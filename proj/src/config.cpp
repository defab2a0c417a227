#include "geovit/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace geovit {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t n = std::stoull(v, &used);
    if (used != v.size() || v[0] == '-') throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' needs a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "on" || v == "true") return true;
  if (v == "0" || v == "off" || v == "false") return false;
  throw std::invalid_argument("config: key '" + key + "' needs on/off, got '" + v + "'");
}

std::array<int64_t, 4> parse_widths(const std::string& key, const std::string& v) {
  std::array<int64_t, 4> out{};
  std::stringstream ss(v);
  std::string part;
  size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 4) throw std::invalid_argument("config: key '" + key + "' needs exactly 4 widths");
    out[i++] = parse_int(key, trim(part));
  }
  if (i != 4) throw std::invalid_argument("config: key '" + key + "' needs exactly 4 widths");
  return out;
}

std::string format_real(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

void RunConfig::validate() const {
  if (backbone != "tiny" && backbone != "small") {
    throw std::invalid_argument("config: backbone must be tiny or small, got '" + backbone + "'");
  }
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (per_device_batch < 1) throw std::invalid_argument("config: per_device_batch must be >= 1");
  if (devices < 1) throw std::invalid_argument("config: devices must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be non-negative");
  if (!(jitter_min > 0.0 && jitter_min <= jitter_max)) {
    throw std::invalid_argument("config: jitter range must satisfy 0 < jitter_min <= jitter_max");
  }
  if (n_tokens < 1 || d_attn < 1) throw std::invalid_argument("config: n_tokens and d_attn must be >= 1");
  model_config();  // full structural validation, including the fusion table
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.vit = backbone == "small" ? ViTConfig::small(img_size) : ViTConfig::tiny(img_size);
  mc.pyramid_channels = pyramid_channels;
  mc.n_classes = n_classes;
  mc.loc_hidden = loc_hidden;
  mc.head_widths = head_widths;
  if (fusion != "none") {
    mc.fusion_enabled = true;
    mc.fusion.strategy = parse_strategy(fusion);
    mc.fusion.placement = parse_placement(placement);
    mc.fusion.granularity = parse_granularity(granularity);
    mc.fusion.n_tokens = n_tokens;
    mc.fusion.d_attn = d_attn;
  }
  mc.validate();
  return mc;
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  out << "backbone = " << backbone << '\n';
  out << "img_size = " << img_size << '\n';
  out << "n_classes = " << n_classes << '\n';
  out << "pyramid_channels = " << pyramid_channels << '\n';
  out << "loc_hidden = " << loc_hidden << '\n';
  out << "head_widths = " << head_widths[0] << ',' << head_widths[1] << ',' << head_widths[2] << ','
      << head_widths[3] << '\n';
  out << "fusion = " << fusion << '\n';
  out << "placement = " << placement << '\n';
  out << "granularity = " << granularity << '\n';
  out << "n_tokens = " << n_tokens << '\n';
  out << "d_attn = " << d_attn << '\n';
  out << "epochs = " << epochs << '\n';
  out << "per_device_batch = " << per_device_batch << '\n';
  out << "devices = " << devices << '\n';
  out << "lr = " << format_real(lr) << '\n';
  out << "weight_decay = " << format_real(weight_decay) << '\n';
  out << "seed = " << seed << '\n';
  out << "manifest = " << manifest << '\n';
  out << "out_dir = " << out_dir << '\n';
  out << "scale_jitter = " << (scale_jitter ? "on" : "off") << '\n';
  out << "jitter_min = " << format_real(jitter_min) << '\n';
  out << "jitter_max = " << format_real(jitter_max) << '\n';
  out << "feature = " << feature << '\n';
  return out.str();
}

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) + " is not key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config: line " + std::to_string(line_no) + " has an empty key");
    if (!seen.insert(key).second) throw std::invalid_argument("config: key '" + key + "' appears twice");

    if (key == "backbone") cfg.backbone = value;
    else if (key == "img_size") cfg.img_size = parse_int(key, value);
    else if (key == "n_classes") cfg.n_classes = parse_int(key, value);
    else if (key == "pyramid_channels") cfg.pyramid_channels = parse_int(key, value);
    else if (key == "loc_hidden") cfg.loc_hidden = parse_int(key, value);
    else if (key == "head_widths") cfg.head_widths = parse_widths(key, value);
    else if (key == "fusion") cfg.fusion = value;
    else if (key == "placement") cfg.placement = value;
    else if (key == "granularity") cfg.granularity = value;
    else if (key == "n_tokens") cfg.n_tokens = parse_int(key, value);
    else if (key == "d_attn") cfg.d_attn = parse_int(key, value);
    else if (key == "epochs") cfg.epochs = parse_int(key, value);
    else if (key == "per_device_batch") cfg.per_device_batch = parse_int(key, value);
    else if (key == "devices") cfg.devices = parse_int(key, value);
    else if (key == "lr") cfg.lr = parse_real(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "manifest") cfg.manifest = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "scale_jitter") cfg.scale_jitter = parse_bool(key, value);
    else if (key == "jitter_min") cfg.jitter_min = parse_real(key, value);
    else if (key == "jitter_max") cfg.jitter_max = parse_real(key, value);
    else if (key == "feature") cfg.feature = value;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config_text(text);
}

}  // namespace geovit
