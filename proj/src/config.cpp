#include "scrl/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "scrl/errors.hpp"
#include "scrl/fileio.hpp"

namespace scrl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  return static_cast<std::size_t>(parse_u64(text, what));
}

const char* image_source_name(ImageSource s) {
  return s == ImageSource::kTinyCnn ? "tinycnn" : "precomputed";
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("format_double failed");
  return std::string(buf, end);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || end != t.data() + t.size()) {
    throw ConfigError(what + ": not a number: '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc{} || end != t.data() + t.size()) {
    throw ConfigError(what + ": not a non-negative integer: '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  if (t == "1" || t == "true" || t == "on" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "off" || t == "no") return false;
  throw ConfigError(what + ": not a boolean: '" + text + "'");
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "lr") c.lr = parse_double(v, key);
  else if (key == "epochs") c.epochs = parse_size(v, key);
  else if (key == "batch_size") c.batch_size = parse_size(v, key);
  else if (key == "weight_decay") c.weight_decay = parse_double(v, key);
  else if (key == "momentum") c.momentum = parse_double(v, key);
  else if (key == "rms_decay") c.rms_decay = parse_double(v, key);
  else if (key == "rms_eps") c.rms_eps = parse_double(v, key);
  else if (key == "seed") c.seed = parse_u64(v, key);
  else if (key == "xi") c.loss.xi = parse_double(v, key);
  else if (key == "zeta") c.loss.zeta = parse_double(v, key);
  else if (key == "eta1") c.loss.eta1 = parse_double(v, key);
  else if (key == "eta2") c.loss.eta2 = parse_double(v, key);
  else if (key == "epsilon") c.loss.epsilon = parse_double(v, key);
  else if (key == "enable_pair") c.loss.enable_pair = parse_bool(v, key);
  else if (key == "enable_intra") c.loss.enable_intra = parse_bool(v, key);
  else if (key == "enable_inter") c.loss.enable_inter = parse_bool(v, key);
  else if (key == "enable_class") c.loss.enable_class = parse_bool(v, key);
  else if (key == "dilation_override") {
    const std::string t = trim(v);
    if (t.empty() || t == "none") c.dilation_override.reset();
    else c.dilation_override = parse_size(t, key);
  }
  else if (key == "hidden_dim") c.hidden_dim = parse_size(v, key);
  else if (key == "embed_dim") c.embed_dim = parse_size(v, key);
  else if (key == "mfcc_frames") c.mfcc_frames = parse_size(v, key);
  else if (key == "image_source") {
    const std::string t = trim(v);
    if (t == "tinycnn") c.image_source = ImageSource::kTinyCnn;
    else if (t == "precomputed") c.image_source = ImageSource::kPrecomputed;
    else throw ConfigError("image_source: expected tinycnn or precomputed, got '" + v + "'");
  }
  else if (key == "backbone_seed") c.backbone_seed = parse_u64(v, key);
  else if (key == "calibration_size") c.calibration_size = parse_size(v, key);
  else if (key == "convergence_tol") c.convergence_tol = parse_double(v, key);
  else if (key == "convergence_patience") c.convergence_patience = parse_size(v, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  for (const auto& [k, v] : kv) set_config_value(cfg, k, v);
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  const auto bytes = read_file_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  try {
    apply_config(base, parse_key_values(text));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return base;
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream o;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "lr=" << format_double(c.lr) << '\n'
    << "epochs=" << c.epochs << '\n'
    << "batch_size=" << c.batch_size << '\n'
    << "weight_decay=" << format_double(c.weight_decay) << '\n'
    << "momentum=" << format_double(c.momentum) << '\n'
    << "rms_decay=" << format_double(c.rms_decay) << '\n'
    << "rms_eps=" << format_double(c.rms_eps) << '\n'
    << "seed=" << c.seed << '\n'
    << "xi=" << format_double(c.loss.xi) << '\n'
    << "zeta=" << format_double(c.loss.zeta) << '\n'
    << "eta1=" << format_double(c.loss.eta1) << '\n'
    << "eta2=" << format_double(c.loss.eta2) << '\n'
    << "epsilon=" << format_double(c.loss.epsilon) << '\n'
    << "enable_pair=" << b(c.loss.enable_pair) << '\n'
    << "enable_intra=" << b(c.loss.enable_intra) << '\n'
    << "enable_inter=" << b(c.loss.enable_inter) << '\n'
    << "enable_class=" << b(c.loss.enable_class) << '\n'
    << "dilation_override="
    << (c.dilation_override ? std::to_string(*c.dilation_override) : std::string("none")) << '\n'
    << "hidden_dim=" << c.hidden_dim << '\n'
    << "embed_dim=" << c.embed_dim << '\n'
    << "mfcc_frames=" << c.mfcc_frames << '\n'
    << "image_source=" << image_source_name(c.image_source) << '\n'
    << "backbone_seed=" << c.backbone_seed << '\n'
    << "calibration_size=" << c.calibration_size << '\n'
    << "convergence_tol=" << format_double(c.convergence_tol) << '\n'
    << "convergence_patience=" << c.convergence_patience << '\n';
  return o.str();
}

}  // namespace scrl
