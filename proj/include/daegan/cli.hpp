#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "daegan/eval.hpp"
#include "daegan/gradcheck_suite.hpp"
#include "daegan/image_io.hpp"
#include "daegan/training.hpp"

namespace daegan {

namespace detail {

// Exit code 2: bad flags, bad environment, bad input files. Everything the
// lower modules throw is mapped to 2 as well; exit 1 is reserved for a
// computed check exceeding its tolerance.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename... Parts>
[[noreturn]] void usage_fail(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw UsageError(os.str());
}

inline const char* kUsage = R"(usage: daegan <command> [flags]

commands:
  gen-data   write a synthetic talking-sprite corpus
  train      run stage-1 / stage-2 / auto training on a corpus
  reenact    drive a source identity with driving frames
  retrieve   rank an image directory by pose-code similarity to a query
  gradcheck  finite-difference check of every differentiable op (64-bit)
  eval       hold-out SSIM, invariance, and pose-probe report

gen-data flags:
  --out DIR        output directory (required)
  --videos N       videos to generate (default 20)
  --frames N       frames per video (default 48)
  --res N          square resolution (default 64)
  --seed N         corpus seed (default 0)
  --force          allow writing into an existing non-empty directory

train flags:
  --data DIR       corpus directory (or dataset_dir in the config file)
  --config FILE    key=value config file, '#' comments
  --stage S        1, 2, or auto (default auto); stage 2 requires --resume
  --resume CKPT    checkpoint to restore before training
  --epochs N       shorthand for epochs_stage1=N and epochs_stage2=N
  --KEY VALUE      any config key (resolution, k, batch_size, seed, ...)

reenact flags:
  --ckpt FILE      trained checkpoint (required)
  --source FILE    source-identity frame; repeat for K > 1 fusion (required)
  --driving PATH   driving frame or directory of frames (required)
  --out DIR        output directory for reenacted PNGs (required)
  --no-gan         write the stage-1 reconstruction instead of G's output

retrieve flags:
  --ckpt FILE      trained checkpoint (required)
  --index-dir DIR  directory of PNG frames to index (required)
  --query FILE     query frame (required)
  --top N          rows to print (default 5, clamped to the index size)

gradcheck flags:
  --op NAME        run a single case instead of the full sweep
  --seed N         probe seed (default 0)
  --threshold X    override every case's tolerance

eval flags:
  --ckpt FILE      checkpoint to evaluate (required)
  --data DIR       corpus directory (required)
  --holdout M      held-out tail frames per video (default: checkpoint config)
  --out DIR        report directory (default: checkpoint config output_dir)

Config precedence: built-in defaults, then the checkpoint's stored config
(--resume / --ckpt), then --config file keys, then flags. Unknown keys and
flags are hard errors. DAEGAN_THREADS caps kernel parallelism (0 = auto).
Exit codes: 0 success, 1 check/metric failure, 2 usage or environment error.
)";

// One pass over argv: `--flag value` pairs, plus a fixed set of boolean
// flags that take no value. Repeats are kept in order for --source.
struct ParsedFlags {
  std::vector<std::pair<std::string, std::string>> pairs;
  bool help = false;

  bool has(const std::string& key) const {
    for (const auto& [k, v] : pairs)
      if (k == key) return true;
    return false;
  }

  std::string one(const std::string& key, const std::string& fallback) const {
    std::string found = fallback;
    int64_t n = 0;
    for (const auto& [k, v] : pairs)
      if (k == key) {
        found = v;
        ++n;
      }
    if (n > 1) usage_fail("flag --", key, " given more than once");
    return found;
  }

  std::string require(const std::string& key) const {
    if (!has(key)) usage_fail("missing required flag --", key);
    return one(key, "");
  }

  std::vector<std::string> all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : pairs)
      if (k == key) out.push_back(v);
    return out;
  }
};

inline ParsedFlags parse_flags(const std::vector<std::string>& args,
                               size_t begin) {
  static const std::vector<std::string> kBool = {"force", "no-gan", "help"};
  ParsedFlags out;
  for (size_t i = begin; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.size() < 3 || a.substr(0, 2) != "--")
      usage_fail("expected a --flag, got '", a, "'");
    const std::string key = a.substr(2);
    if (key == "help") {
      out.help = true;
      continue;
    }
    if (std::find(kBool.begin(), kBool.end(), key) != kBool.end()) {
      out.pairs.emplace_back(key, "true");
      continue;
    }
    if (i + 1 >= args.size()) usage_fail("flag --", key, " needs a value");
    out.pairs.emplace_back(key, args[++i]);
  }
  return out;
}

inline int64_t flag_int(const ParsedFlags& f, const std::string& key,
                        int64_t fallback) {
  const std::string v = f.one(key, "");
  if (v.empty() && !f.has(key)) return fallback;
  return parse_int(key, v);
}

inline std::vector<std::string> list_pngs(const std::string& dir) {
  namespace fs = std::filesystem;
  check(fs::is_directory(dir), "not a directory: ", dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

// Loads a frame and insists on the checkpoint's square resolution; a
// mismatch is a usage error, not a numerical one.
template <typename T>
Tensor<T> load_frame_checked(const std::string& path, int64_t resolution) {
  Tensor<T> img = read_image<T>(path);
  if (img.dim(1) != resolution || img.dim(2) != resolution)
    usage_fail(path, " is ", img.dim(1), "x", img.dim(2),
               " but the checkpoint expects ", resolution, "x", resolution);
  return img;
}

template <typename T>
TrainConfig config_of(const Checkpoint<T>& ck) {
  TrainConfig cfg;
  apply_config_text(cfg, ck.config_text);
  return cfg;
}

}  // namespace detail

inline int cmd_gen_data(const detail::ParsedFlags& f, std::ostream& out) {
  namespace fs = std::filesystem;
  const std::string dir = f.require("out");
  const int64_t videos = detail::flag_int(f, "videos", 20);
  const int64_t frames = detail::flag_int(f, "frames", 48);
  const int64_t res = detail::flag_int(f, "res", 64);
  const auto seed = uint64_t(detail::flag_int(f, "seed", 0));
  if (fs::exists(dir) && (!fs::is_directory(dir) || !fs::is_empty(dir)) &&
      !f.has("force"))
    detail::usage_fail(dir, " exists and is not an empty directory",
                       " (pass --force to write anyway)");
  const DatasetIndex index = gen_dataset(videos, frames, res, seed, dir);
  out << "wrote " << videos << " videos x " << frames << " frames ("
      << res << "x" << res << ") under " << dir << "\n";
  for (const auto& v : index.videos)
    out << v.id << "\t" << v.frames.size() << "\n";
  return 0;
}

inline int cmd_train(const detail::ParsedFlags& f, std::ostream& out) {
  TrainConfig cfg;
  const std::string resume = f.one("resume", "");
  Checkpoint<float> ck;
  if (!resume.empty()) {
    ck = load_checkpoint<float>(resume);
    cfg = detail::config_of(ck);
  }
  const std::string config_path = f.one("config", "");
  if (!config_path.empty()) {
    std::ifstream cf(config_path, std::ios::binary);
    check(cf.good(), "config: cannot open ", config_path);
    std::ostringstream buf;
    buf << cf.rdbuf();
    apply_config_text(cfg, buf.str());
  }
  const std::string stage = f.one("stage", "auto");
  if (stage != "1" && stage != "2" && stage != "auto")
    detail::usage_fail("--stage must be 1, 2, or auto, got '", stage, "'");
  for (const auto& [key, value] : f.pairs) {
    if (key == "resume" || key == "config" || key == "stage") continue;
    if (key == "data") cfg.dataset_dir = value;
    else if (key == "epochs") {
      cfg.epochs_stage1 = detail::parse_int(key, value);
      cfg.epochs_stage2 = cfg.epochs_stage1;
    } else {
      apply_config_kv(cfg, key, value);
    }
  }
  if (cfg.dataset_dir.empty())
    detail::usage_fail("no corpus: pass --data or set dataset_dir");
  if (stage == "2" && resume.empty())
    detail::usage_fail("--stage 2 needs --resume with a stage-1 checkpoint");
  validate_config(cfg);

  Trainer<float> trainer(cfg, load_index(cfg.dataset_dir), cfg.checkpoint_dir);
  if (!resume.empty()) trainer.restore(ck);
  if (stage == "1") {
    trainer.run_stage1();
  } else if (stage == "2") {
    trainer.run_stage2();
  } else {
    if (trainer.stage() <= 1) trainer.run_stage1();
    trainer.run_stage2();
  }
  out << "stage " << trainer.stage() << " done at epoch " << trainer.epoch()
      << "\ncheckpoint " << trainer.last_checkpoint_path() << "\nmetrics "
      << trainer.metric_log_path() << "\n";
  return 0;
}

inline int cmd_reenact(const detail::ParsedFlags& f, std::ostream& out) {
  namespace fs = std::filesystem;
  const Checkpoint<float> ck = load_checkpoint<float>(f.require("ckpt"));
  const TrainConfig cfg = detail::config_of(ck);
  const std::vector<std::string> sources = f.all("source");
  if (sources.empty()) detail::usage_fail("missing required flag --source");
  const std::string driving = f.require("driving");
  const std::string out_dir = f.require("out");
  const bool use_gan = !f.has("no-gan");

  Models<float> models(cfg);
  restore_models(models, ck);
  Graph<float>::NoRecord nr;

  std::vector<Tensor<float>> refs;
  for (const std::string& path : sources)
    refs.push_back(reshape(
        detail::load_frame_checked<float>(path, cfg.resolution),
        {1, 3, cfg.resolution, cfg.resolution}));
  const Tensor<float> f_hat = models.F.embed(refs).f_hat;

  std::vector<std::string> frames;
  if (fs::is_directory(driving)) {
    frames = detail::list_pngs(driving);
    if (frames.empty())
      detail::usage_fail("no .png frames in directory ", driving);
  } else {
    frames.push_back(driving);
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "cannot create ", out_dir, ": ", ec.message());
  for (const std::string& path : frames) {
    const Tensor<float> frame = reshape(
        detail::load_frame_checked<float>(path, cfg.resolution),
        {1, 3, cfg.resolution, cfg.resolution});
    Tensor<float> image;
    if (use_gan) {
      const Tensor<float> pose = models.P.encode(frame);
      image = models.G(f_hat, pose);
    } else {
      image = models.P(frame, f_hat).x_hat;
    }
    const std::string dst =
        (fs::path(out_dir) / fs::path(path).filename()).string();
    write_image(dst, reshape(image, {3, cfg.resolution, cfg.resolution}));
  }
  out << "wrote " << frames.size() << " frames to " << out_dir << "\n";
  return 0;
}

inline int cmd_retrieve(const detail::ParsedFlags& f, std::ostream& out) {
  namespace fs = std::filesystem;
  const Checkpoint<float> ck = load_checkpoint<float>(f.require("ckpt"));
  const TrainConfig cfg = detail::config_of(ck);
  const std::vector<std::string> files = detail::list_pngs(f.require("index-dir"));
  if (files.empty()) detail::usage_fail("no .png frames to index");
  const std::string query_path = f.require("query");
  int64_t top = detail::flag_int(f, "top", 5);
  if (top < 1) detail::usage_fail("--top must be >= 1");

  Models<float> models(cfg);
  restore_models(models, ck);
  Graph<float>::NoRecord nr;

  RetrievalIndex index;
  for (size_t i = 0; i < files.size(); ++i) {
    const Tensor<float> frame = reshape(
        detail::load_frame_checked<float>(files[i], cfg.resolution),
        {1, 3, cfg.resolution, cfg.resolution});
    index.add(int64_t(i), models.P.encode(frame));
  }
  const Tensor<float> query =
      detail::load_frame_checked<float>(query_path, cfg.resolution);
  const std::vector<RetrievalHit> hits = pose_retrieval(query, index, models.P);

  top = std::min<int64_t>(top, int64_t(hits.size()));
  char buf[64];
  for (int64_t r = 0; r < top; ++r) {
    std::snprintf(buf, sizeof buf, "%.6f", hits[size_t(r)].similarity);
    out << (r + 1) << "\t"
        << fs::path(files[size_t(hits[size_t(r)].id)]).filename().string()
        << "\t" << buf << "\n";
  }
  return 0;
}

inline int cmd_gradcheck(const detail::ParsedFlags& f, std::ostream& out) {
  const auto seed = uint64_t(detail::flag_int(f, "seed", 0));
  const std::string only = f.one("op", "");
  const std::string threshold_text = f.one("threshold", "");
  const double threshold = threshold_text.empty()
                               ? 0.0
                               : detail::parse_double("threshold", threshold_text);
  std::vector<GradCheckCase> cases = standard_gradcheck_cases(seed);
  if (!only.empty()) {
    std::vector<GradCheckCase> picked;
    for (auto& c : cases)
      if (c.name == only) picked.push_back(std::move(c));
    if (picked.empty()) detail::usage_fail("no gradcheck case named '", only,
                                           "'; see the full table");
    cases = std::move(picked);
  }
  int64_t failures = 0;
  double worst = 0.0;
  std::string worst_name;
  char buf[64];
  for (const auto& c : cases) {
    const double err = c.run();
    const double tol = threshold_text.empty() ? c.tol : threshold;
    const bool ok = err < tol;
    if (!ok) ++failures;
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
    std::snprintf(buf, sizeof buf, "%.3e", err);
    out << c.name << "\t" << buf << "\t" << (ok ? "ok" : "FAIL") << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  out << cases.size() << " cases, worst " << buf << " (" << worst_name
      << "), " << failures << " over tolerance\n";
  return failures == 0 ? 0 : 1;
}

inline int cmd_eval(const detail::ParsedFlags& f, std::ostream& out) {
  namespace fs = std::filesystem;
  const std::string ckpt_path = f.require("ckpt");
  const Checkpoint<float> ck = load_checkpoint<float>(ckpt_path);
  TrainConfig cfg = detail::config_of(ck);
  cfg.dataset_dir = f.require("data");
  cfg.holdout = detail::flag_int(f, "holdout", cfg.holdout);
  cfg.output_dir = f.one("out", cfg.output_dir);
  if (cfg.holdout < 1) detail::usage_fail("--holdout must be >= 1");

  const DatasetIndex corpus = load_index(cfg.dataset_dir);
  bool any_usable = false;
  for (const auto& v : corpus.videos)
    any_usable |= int64_t(v.frames.size()) >= cfg.holdout + cfg.k;
  if (!any_usable)
    detail::usage_fail("holdout ", cfg.holdout, " leaves no video with ",
                       cfg.k, " reference frames plus held-out frames");

  Models<float> models(cfg);
  restore_models(models, ck);
  Graph<float>::NoRecord nr;

  EvalReport report;
  report.checkpoint_id = fs::path(ckpt_path).filename().string();
  report.config_text = serialize_config(cfg);

  Generator<float>* gan = ck.stage >= 2 ? &models.G : nullptr;
  const HoldoutSsim hs =
      holdout_reenact_ssim(models.F, models.P, gan, corpus, cfg.k, cfg.holdout);
  report.add("holdout.reenacted_ssim", hs.reenacted);
  report.add("holdout.embedded_ssim", hs.embedded);
  report.add("holdout.frames", double(hs.count));

  Rng inv_rng(cfg.seed ^ 0x5851f42d4c957f2dull);
  double inv_sum = 0.0;
  int64_t inv_videos = 0;
  for (const auto& v : corpus.videos) {
    const int64_t usable = int64_t(v.frames.size()) - cfg.holdout;
    if (usable < 2 * cfg.k) continue;
    std::vector<Tensor<float>> frames;
    for (int64_t i = 0; i < usable; ++i)
      frames.push_back(read_image<float>(v.frames[size_t(i)]));
    inv_sum += embedded_face_invariance(models.F, frames, cfg.k, 4, inv_rng);
    ++inv_videos;
  }
  if (inv_videos > 0) {
    report.add("invariance.mean_abs_delta", inv_sum / double(inv_videos));
    report.add("invariance.videos", double(inv_videos));
  }

  if (corpus.has_poses() && corpus.total_frames() >= 50) {
    const ProbeReport probe = pose_code_probe(models.P, corpus);
    report.add("probe.r2_theta", probe.theta);
    report.add("probe.r2_tx", probe.tx);
    report.add("probe.r2_ty", probe.ty);
    report.add("probe.r2_scale", probe.scale);
    report.add("probe.r2_mouth", probe.mouth);
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  check(!ec, "cannot create ", cfg.output_dir, ": ", ec.message());
  const std::string report_path =
      (fs::path(cfg.output_dir) / "eval-report.txt").string();
  {
    std::ofstream rf(report_path, std::ios::binary | std::ios::trunc);
    check(rf.good(), "cannot write ", report_path);
    rf << report.serialize();
  }
  out << report.serialize();
  out << "report " << report_path << "\n";
  return 0;
}

/// Entry point shared by the binary and the tests; `args` excludes argv[0].
/// Output goes to the injected streams so tests can run fully in-process.
inline int run_cli(const std::vector<std::string>& args,
                   std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  try {
    const char* env = std::getenv("DAEGAN_THREADS");
    if (env && *env) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || v < 0)
        detail::usage_fail("DAEGAN_THREADS must be a non-negative integer, ",
                           "got '", env, "'");
      set_max_threads(int(v));
    } else {
      set_max_threads(0);
    }

    if (args.empty()) {
      err << detail::kUsage;
      return 2;
    }
    const std::string& cmd = args[0];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
      out << detail::kUsage;
      return 0;
    }
    const detail::ParsedFlags flags = detail::parse_flags(args, 1);
    if (flags.help) {
      out << detail::kUsage;
      return 0;
    }
    if (cmd == "gen-data") return cmd_gen_data(flags, out);
    if (cmd == "train") return cmd_train(flags, out);
    if (cmd == "reenact") return cmd_reenact(flags, out);
    if (cmd == "retrieve") return cmd_retrieve(flags, out);
    if (cmd == "gradcheck") return cmd_gradcheck(flags, out);
    if (cmd == "eval") return cmd_eval(flags, out);
    detail::usage_fail("unknown command '", cmd, "'");
  } catch (const detail::UsageError& e) {
    err << "error: " << e.what() << "\n";
    err << "run 'daegan --help' for usage\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace daegan
