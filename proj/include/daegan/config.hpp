#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "daegan/layers.hpp"

namespace daegan {

/// Every tunable in one flat struct; the key=value config file and CLI
/// flags both map onto these fields. Unknown keys are a hard error.
struct TrainConfig {
  int64_t resolution = 64;
  int64_t k = 8;  // reference frames per tuple
  int64_t d_p = 128;
  int64_t batch_size = 4;
  int64_t epochs_stage1 = 30;
  int64_t epochs_stage2 = 30;
  double lr_base = 1e-4;
  double lr_discriminator = 4e-4;
  double embedder_lr_decay_factor = 10.0;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double lambda_s = 1.0;
  double lambda_r = 1.0;
  double lambda_fm = 1.0;
  uint64_t seed = 0;
  bool spectral_norm = true;
  int64_t base_width = 16;
  int64_t max_width = 64;
  int64_t steps_per_epoch = 0;  // 0 = one pass over the training frames
  int64_t holdout = 8;          // per-video tail frames reserved for eval
  std::string alt_order = "FPGD";
  std::string dataset_dir;
  std::string checkpoint_dir = "run";
  std::string output_dir = "out";

  ArchConfig arch() const {
    ArchConfig a;
    a.resolution = resolution;
    a.d_p = d_p;
    a.base_width = base_width;
    a.max_width = max_width;
    a.spectral_norm = spectral_norm;
    return a;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& value) {
  size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  check(pos == value.size() && !value.empty(), "config: key '", key,
        "' needs an integer, got '", value, "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  check(pos == value.size() && !value.empty(), "config: key '", key,
        "' needs a number, got '", value, "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  raise("config: key '", key, "' needs true/false, got '", value, "'");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Applies one key=value pair; unknown keys raise so typos cannot silently
/// fall back to defaults.
inline void apply_config_kv(TrainConfig& cfg, const std::string& key,
                            const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  if (key == "resolution") cfg.resolution = parse_int(key, value);
  else if (key == "k") cfg.k = parse_int(key, value);
  else if (key == "d_p") cfg.d_p = parse_int(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "epochs_stage1") cfg.epochs_stage1 = parse_int(key, value);
  else if (key == "epochs_stage2") cfg.epochs_stage2 = parse_int(key, value);
  else if (key == "lr_base") cfg.lr_base = parse_double(key, value);
  else if (key == "lr_discriminator")
    cfg.lr_discriminator = parse_double(key, value);
  else if (key == "embedder_lr_decay_factor")
    cfg.embedder_lr_decay_factor = parse_double(key, value);
  else if (key == "beta1") cfg.beta1 = parse_double(key, value);
  else if (key == "beta2") cfg.beta2 = parse_double(key, value);
  else if (key == "lambda_s") cfg.lambda_s = parse_double(key, value);
  else if (key == "lambda_r") cfg.lambda_r = parse_double(key, value);
  else if (key == "lambda_fm") cfg.lambda_fm = parse_double(key, value);
  else if (key == "seed") cfg.seed = uint64_t(parse_int(key, value));
  else if (key == "spectral_norm") cfg.spectral_norm = parse_bool(key, value);
  else if (key == "base_width") cfg.base_width = parse_int(key, value);
  else if (key == "max_width") cfg.max_width = parse_int(key, value);
  else if (key == "steps_per_epoch")
    cfg.steps_per_epoch = parse_int(key, value);
  else if (key == "holdout") cfg.holdout = parse_int(key, value);
  else if (key == "alt_order") cfg.alt_order = value;
  else if (key == "dataset_dir") cfg.dataset_dir = value;
  else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
  else if (key == "output_dir") cfg.output_dir = value;
  else raise("config: unknown key '", key, "'");
}

inline void validate_config(const TrainConfig& cfg) {
  check(cfg.resolution >= 8 && cfg.resolution % 4 == 0,
        "config: resolution must be >= 8 and divisible by 4");
  check(cfg.k >= 1, "config: k must be >= 1");
  check(cfg.d_p >= 1, "config: d_p must be >= 1");
  check(cfg.batch_size >= 1, "config: batch_size must be >= 1");
  check(cfg.epochs_stage1 >= 0 && cfg.epochs_stage2 >= 0,
        "config: epoch counts must be >= 0");
  check(cfg.lr_base > 0 && cfg.lr_discriminator > 0,
        "config: learning rates must be > 0");
  check(cfg.embedder_lr_decay_factor > 0,
        "config: embedder_lr_decay_factor must be > 0");
  check(cfg.lambda_s >= 0 && cfg.lambda_r >= 0 && cfg.lambda_fm >= 0,
        "config: lambdas must be >= 0");
  check(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
        "config: betas must be in [0, 1)");
  check(cfg.base_width >= 1 && cfg.max_width >= cfg.base_width,
        "config: need 1 <= base_width <= max_width");
  check(cfg.steps_per_epoch >= 0, "config: steps_per_epoch must be >= 0");
  check(cfg.holdout >= 0, "config: holdout must be >= 0");
  std::string order = cfg.alt_order;
  std::sort(order.begin(), order.end());
  check(order == "DFGP", "config: alt_order must be a permutation of FPGD");
}

/// Parses key=value text; '#' starts a comment line, blank lines are
/// ignored.
inline void apply_config_text(TrainConfig& cfg, const std::string& text) {
  std::istringstream ss(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    check(eq != std::string::npos, "config: line ", line_no,
          " is not key=value: '", t, "'");
    apply_config_kv(cfg, detail::trim(t.substr(0, eq)),
                    detail::trim(t.substr(eq + 1)));
  }
}

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "config: cannot open ", path);
  std::ostringstream buf;
  buf << f.rdbuf();
  TrainConfig cfg;
  apply_config_text(cfg, buf.str());
  return cfg;
}

/// Deterministic key order; round-trips through apply_config_text.
inline std::string serialize_config(const TrainConfig& cfg) {
  using detail::format_double;
  std::ostringstream os;
  os << "resolution=" << cfg.resolution << "\n";
  os << "k=" << cfg.k << "\n";
  os << "d_p=" << cfg.d_p << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "epochs_stage1=" << cfg.epochs_stage1 << "\n";
  os << "epochs_stage2=" << cfg.epochs_stage2 << "\n";
  os << "lr_base=" << format_double(cfg.lr_base) << "\n";
  os << "lr_discriminator=" << format_double(cfg.lr_discriminator) << "\n";
  os << "embedder_lr_decay_factor="
     << format_double(cfg.embedder_lr_decay_factor) << "\n";
  os << "beta1=" << format_double(cfg.beta1) << "\n";
  os << "beta2=" << format_double(cfg.beta2) << "\n";
  os << "lambda_s=" << format_double(cfg.lambda_s) << "\n";
  os << "lambda_r=" << format_double(cfg.lambda_r) << "\n";
  os << "lambda_fm=" << format_double(cfg.lambda_fm) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "spectral_norm=" << (cfg.spectral_norm ? "true" : "false") << "\n";
  os << "base_width=" << cfg.base_width << "\n";
  os << "max_width=" << cfg.max_width << "\n";
  os << "steps_per_epoch=" << cfg.steps_per_epoch << "\n";
  os << "holdout=" << cfg.holdout << "\n";
  os << "alt_order=" << cfg.alt_order << "\n";
  return os.str();
}

/// Architecture-defining fields must agree between a checkpoint and the run
/// loading it; everything else (epochs, lrs) may differ.
inline void check_arch_compatible(const TrainConfig& run,
                                  const TrainConfig& ckpt) {
  check(run.resolution == ckpt.resolution,
        "checkpoint config mismatch: resolution ", ckpt.resolution, " vs ",
        run.resolution);
  check(run.d_p == ckpt.d_p, "checkpoint config mismatch: d_p ", ckpt.d_p,
        " vs ", run.d_p);
  check(run.base_width == ckpt.base_width,
        "checkpoint config mismatch: base_width ", ckpt.base_width, " vs ",
        run.base_width);
  check(run.max_width == ckpt.max_width,
        "checkpoint config mismatch: max_width ", ckpt.max_width, " vs ",
        run.max_width);
  check(run.spectral_norm == ckpt.spectral_norm,
        "checkpoint config mismatch: spectral_norm differs");
}

}  // namespace daegan
