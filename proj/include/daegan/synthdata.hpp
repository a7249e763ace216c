#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "daegan/image_io.hpp"
#include "daegan/tensor.hpp"

namespace daegan {

/// Ground-truth frame pose: rigid similarity motion plus mouth opening.
struct PoseParams {
  double theta = 0.0;  // radians
  double tx = 0.0;     // pixels at render resolution
  double ty = 0.0;
  double scale = 1.0;
  double mouth = 0.0;  // [0, 1], vertical stretch of the mouth part
};

constexpr double kThetaRange = 0.4;
constexpr double kShiftRange = 0.12;  // fraction of width
constexpr double kScaleMin = 0.85;
constexpr double kScaleMax = 1.15;

inline void check_pose(const PoseParams& p, int64_t resolution) {
  const double shift = kShiftRange * double(resolution);
  check(std::abs(p.theta) <= kThetaRange, "pose: theta ", p.theta,
        " outside [-", kThetaRange, ", ", kThetaRange, "]");
  check(std::abs(p.tx) <= shift && std::abs(p.ty) <= shift,
        "pose: translation (", p.tx, ", ", p.ty, ") outside +-", shift, " px");
  check(p.scale >= kScaleMin && p.scale <= kScaleMax, "pose: scale ", p.scale,
        " outside [", kScaleMin, ", ", kScaleMax, "]");
  check(p.mouth >= 0.0 && p.mouth <= 1.0, "pose: mouth ", p.mouth,
        " outside [0, 1]");
}

/// Per-video sprite template: a face oval, two eyes, and a mouth bar over a
/// flat background, with colors and geometry drawn from the seed. Geometry
/// is stored as fractions of the frame width so one identity renders at any
/// resolution.
struct SpriteIdentity {
  uint64_t seed = 0;
  double bg[3], face[3], eye[3], mouth[3];
  double cx, cy;          // face center
  double rx, ry;          // face radii
  double eye_dx, eye_dy;  // eye offsets from face center (dy < 0 = above)
  double eye_r;
  double mouth_dy, mouth_hw, mouth_hh;

  explicit SpriteIdentity(uint64_t seed_in) : seed(seed_in) {
    Rng rng(seed_in);
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(-1.0, -0.4);
    for (int c = 0; c < 3; ++c) face[c] = rng.uniform(-0.1, 0.9);
    for (int c = 0; c < 3; ++c) eye[c] = rng.uniform(-1.0, -0.2);
    for (int c = 0; c < 3; ++c) mouth[c] = rng.uniform(-0.2, 0.8);
    cx = rng.uniform(0.46, 0.54);
    cy = rng.uniform(0.46, 0.54);
    rx = rng.uniform(0.24, 0.32);
    ry = rng.uniform(0.28, 0.38);
    eye_dx = rng.uniform(0.09, 0.14);
    eye_dy = rng.uniform(-0.16, -0.08);
    eye_r = rng.uniform(0.03, 0.05);
    mouth_dy = rng.uniform(0.10, 0.18);
    mouth_hw = rng.uniform(0.08, 0.14);
    mouth_hh = rng.uniform(0.015, 0.035);
  }
};

namespace detail {

// Hard-edged rasterization in normalized coordinates at the supersampled
// grid; antialiasing comes from the final 2x average.
inline void rasterize_template(const SpriteIdentity& id, double mouth_open,
                               int64_t side, std::vector<double>& out) {
  out.assign(size_t(side) * size_t(side) * 3, 0.0);
  const double inv = 1.0 / double(side);
  const double mh = id.mouth_hh * (1.0 + mouth_open);
  for (int64_t y = 0; y < side; ++y)
    for (int64_t x = 0; x < side; ++x) {
      const double px = (double(x) + 0.5) * inv;
      const double py = (double(y) + 0.5) * inv;
      const double* color = id.bg;
      const double fx = (px - id.cx) / id.rx;
      const double fy = (py - id.cy) / id.ry;
      if (fx * fx + fy * fy <= 1.0) color = id.face;
      for (int side_sign = -1; side_sign <= 1; side_sign += 2) {
        const double ex = px - (id.cx + side_sign * id.eye_dx);
        const double ey = py - (id.cy + id.eye_dy);
        if (ex * ex + ey * ey <= id.eye_r * id.eye_r) color = id.eye;
      }
      if (std::abs(px - id.cx) <= id.mouth_hw &&
          std::abs(py - (id.cy + id.mouth_dy)) <= mh)
        color = id.mouth;
      for (int c = 0; c < 3; ++c)
        out[size_t((c * side + y) * side + x)] = color[c];
    }
}

inline double sample_clamped(const std::vector<double>& img, int64_t side,
                             int64_t c, double a, double b) {
  // a = column coordinate, b = row coordinate, pixel-center convention
  const double fa = std::floor(a), fb = std::floor(b);
  const double wa = a - fa, wb = b - fb;
  auto at = [&](int64_t row, int64_t col) {
    row = std::clamp(row, int64_t(0), side - 1);
    col = std::clamp(col, int64_t(0), side - 1);
    return img[size_t((c * side + row) * side + col)];
  };
  const int64_t x0 = int64_t(fa), y0 = int64_t(fb);
  const double top = at(y0, x0) + wa * (at(y0, x0 + 1) - at(y0, x0));
  const double bot = at(y0 + 1, x0) + wa * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
  return top + wb * (bot - top);
}

}  // namespace detail

/// Renders one frame: the identity's template (mouth stretched by m) pushed
/// through the similarity transform (s, theta, tx, ty) about the frame
/// center with bilinear resampling, supersampled 2x and averaged down.
inline Tensor<double> render_frame(const SpriteIdentity& id,
                                   const PoseParams& pose,
                                   int64_t resolution) {
  check(resolution >= 8, "render_frame: resolution must be >= 8, got ",
        resolution);
  check_pose(pose, resolution);
  const int64_t s2 = resolution * 2;
  std::vector<double> tmpl;
  detail::rasterize_template(id, pose.mouth, s2, tmpl);

  const double ct = std::cos(pose.theta), st = std::sin(pose.theta);
  const double center = double(s2) / 2.0;
  const double inv_s = 1.0 / pose.scale;
  std::vector<double> warped(size_t(s2) * size_t(s2) * 3);
  for (int64_t y = 0; y < s2; ++y)
    for (int64_t x = 0; x < s2; ++x) {
      // invert p = s R(theta) (u - c) + c + 2t to find the template point u
      const double dx = double(x) + 0.5 - center - 2.0 * pose.tx;
      const double dy = double(y) + 0.5 - center - 2.0 * pose.ty;
      const double ux = inv_s * (ct * dx + st * dy) + center;
      const double uy = inv_s * (-st * dx + ct * dy) + center;
      for (int64_t c = 0; c < 3; ++c)
        warped[size_t((c * s2 + y) * s2 + x)] =
            detail::sample_clamped(tmpl, s2, c, ux - 0.5, uy - 0.5);
    }

  Tensor<double> out = Tensor<double>::uninit({3, resolution, resolution});
  double* po = out.mutable_data();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < resolution; ++y)
      for (int64_t x = 0; x < resolution; ++x) {
        const int64_t r = 2 * y, q = 2 * x;
        const double sum = warped[size_t((c * s2 + r) * s2 + q)] +
                           warped[size_t((c * s2 + r) * s2 + q + 1)] +
                           warped[size_t((c * s2 + r + 1) * s2 + q)] +
                           warped[size_t((c * s2 + r + 1) * s2 + q + 1)];
        po[(c * resolution + y) * resolution + x] = sum * 0.25;
      }
  return out;
}

struct VideoEntry {
  std::string id;
  std::vector<std::string> frames;  // paths, in frame order
  std::vector<PoseParams> poses;    // empty when no sidecar exists
};

struct DatasetIndex {
  std::string root;
  std::vector<VideoEntry> videos;

  int64_t total_frames() const {
    int64_t n = 0;
    for (const auto& v : videos) n += int64_t(v.frames.size());
    return n;
  }
  bool has_poses() const {
    for (const auto& v : videos)
      if (v.poses.size() != v.frames.size()) return false;
    return !videos.empty();
  }
};

namespace detail {

inline double reflect_into(double x, double lo, double hi) {
  while (x < lo || x > hi) {
    if (x > hi) x = 2.0 * hi - x;
    if (x < lo) x = 2.0 * lo - x;
  }
  return x;
}

inline std::string frame_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05lld.png", (long long)i);
  return buf;
}

inline std::string video_name(int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%03lld", (long long)v);
  return buf;
}

inline std::string format_pose_row(int64_t frame, const PoseParams& p) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld\t%.10g\t%.10g\t%.10g\t%.10g\t%.10g",
                (long long)frame, p.theta, p.tx, p.ty, p.scale, p.mouth);
  return buf;
}

}  // namespace detail

inline constexpr const char* kPoseHeader =
    "frame\ttheta\ttx\tty\tscale\tmouth";

/// Writes a complete corpus: per-video frame PNGs, a poses.tsv sidecar, and
/// a root index.tsv. Pure function of (seed, arguments): re-running yields
/// byte-identical output.
inline DatasetIndex gen_dataset(int64_t n_videos, int64_t frames_per_video,
                                int64_t resolution, uint64_t seed,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  check(n_videos >= 1, "gen_dataset: need at least 1 video");
  check(frames_per_video >= 2, "gen_dataset: need at least 2 frames per video");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "gen_dataset: cannot create ", out_dir, ": ", ec.message());

  const double shift = kShiftRange * double(resolution);
  Rng rng(seed);
  DatasetIndex index;
  index.root = out_dir;

  for (int64_t v = 0; v < n_videos; ++v) {
    VideoEntry entry;
    entry.id = detail::video_name(v);
    const fs::path vdir = fs::path(out_dir) / entry.id;
    fs::create_directories(vdir, ec);
    check(!ec, "gen_dataset: cannot create ", vdir.string());

    SpriteIdentity identity(rng.next_u64());
    PoseParams p;
    p.theta = rng.uniform(-kThetaRange, kThetaRange);
    p.tx = rng.uniform(-shift, shift);
    p.ty = rng.uniform(-shift, shift);
    p.scale = rng.uniform(kScaleMin, kScaleMax);
    p.mouth = rng.uniform(0.0, 1.0);

    std::ostringstream sidecar;
    sidecar << kPoseHeader << "\n";
    for (int64_t f = 0; f < frames_per_video; ++f) {
      if (f > 0) {
        p.theta = detail::reflect_into(p.theta + 0.045 * rng.normal(),
                                       -kThetaRange, kThetaRange);
        p.tx = detail::reflect_into(p.tx + 0.012 * resolution * rng.normal(),
                                    -shift, shift);
        p.ty = detail::reflect_into(p.ty + 0.012 * resolution * rng.normal(),
                                    -shift, shift);
        p.scale = detail::reflect_into(p.scale + 0.018 * rng.normal(),
                                       kScaleMin, kScaleMax);
        p.mouth = detail::reflect_into(p.mouth + 0.1 * rng.normal(), 0.0, 1.0);
      }
      const fs::path fpath = vdir / detail::frame_name(f);
      write_image(fpath.string(), render_frame(identity, p, resolution));
      sidecar << detail::format_pose_row(f, p) << "\n";
      entry.frames.push_back(fpath.string());
      entry.poses.push_back(p);
    }

    const fs::path pose_path = vdir / "poses.tsv";
    std::ofstream pf(pose_path, std::ios::binary);
    check(pf.good(), "gen_dataset: cannot write ", pose_path.string());
    pf << sidecar.str();
    check(pf.good(), "gen_dataset: write failed for ", pose_path.string());
    index.videos.push_back(std::move(entry));
  }

  const fs::path index_path = fs::path(out_dir) / "index.tsv";
  std::ofstream ixf(index_path, std::ios::binary);
  check(ixf.good(), "gen_dataset: cannot write ", index_path.string());
  for (const auto& v : index.videos)
    ixf << v.id << "\t" << v.frames.size() << "\n";
  check(ixf.good(), "gen_dataset: write failed for ", index_path.string());
  return index;
}

/// Reads index.tsv and per-video sidecars back into a DatasetIndex,
/// validating that every listed frame exists and every video has >= 2
/// frames.
inline DatasetIndex load_index(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path index_path = fs::path(root) / "index.tsv";
  std::ifstream ixf(index_path, std::ios::binary);
  check(ixf.good(), "load_index: cannot open ", index_path.string());

  DatasetIndex index;
  index.root = root;
  std::string line;
  while (std::getline(ixf, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    check(tab != std::string::npos, "load_index: malformed line in ",
          index_path.string(), ": ", line);
    VideoEntry entry;
    entry.id = line.substr(0, tab);
    const int64_t count = std::stoll(line.substr(tab + 1));
    check(count >= 2, "load_index: video ", entry.id, " has ", count,
          " frames, need >= 2");
    const fs::path vdir = fs::path(root) / entry.id;
    for (int64_t f = 0; f < count; ++f) {
      const fs::path fpath = vdir / detail::frame_name(f);
      check(fs::exists(fpath), "load_index: missing frame ", fpath.string());
      entry.frames.push_back(fpath.string());
    }
    const fs::path pose_path = vdir / "poses.tsv";
    if (fs::exists(pose_path)) {
      std::ifstream pf(pose_path, std::ios::binary);
      std::string header;
      std::getline(pf, header);
      check(header == kPoseHeader, "load_index: bad poses.tsv header in ",
            pose_path.string());
      std::string row;
      while (std::getline(pf, row)) {
        if (row.empty()) continue;
        std::istringstream ss(row);
        int64_t frame = -1;
        PoseParams p;
        ss >> frame >> p.theta >> p.tx >> p.ty >> p.scale >> p.mouth;
        check(!ss.fail(), "load_index: malformed pose row in ",
              pose_path.string(), ": ", row);
        check(frame == int64_t(entry.poses.size()),
              "load_index: out-of-order pose row in ", pose_path.string());
        entry.poses.push_back(p);
      }
      check(entry.poses.size() == entry.frames.size(),
            "load_index: pose count mismatch in ", pose_path.string());
    }
    index.videos.push_back(std::move(entry));
  }
  check(!index.videos.empty(), "load_index: empty index at ",
        index_path.string());
  return index;
}

template <typename T>
struct Batch {
  std::vector<Tensor<T>> references;  // K tensors of [B x 3 x H x W]
  Tensor<T> driving;                  // [B x 3 x H x W]
  std::vector<int64_t> video_index;
  std::vector<int64_t> driving_frame;
  std::vector<PoseParams> driving_poses;  // parallel to items when available
  bool has_poses = false;
};

/// Samples batch items: per item pick an eligible video, K distinct
/// reference frames, then a driving frame from the remainder, never mixing
/// videos within one tuple. The last `holdout_tail` frames of each video
/// are excluded from sampling so they stay unseen for evaluation.
template <typename T>
Batch<T> load_batch(const DatasetIndex& index, int64_t K, int64_t batch_size,
                    Rng& rng, int64_t holdout_tail = 0) {
  check(K >= 1 && batch_size >= 1, "load_batch: K and batch_size must be >= 1");
  std::vector<int64_t> eligible;
  for (size_t v = 0; v < index.videos.size(); ++v) {
    const int64_t usable =
        int64_t(index.videos[v].frames.size()) - holdout_tail;
    if (usable >= K + 1) {
      eligible.push_back(int64_t(v));
    } else {
      std::cerr << "load_batch: skipping video " << index.videos[v].id
                << " (" << usable << " usable frames, need " << (K + 1)
                << ")\n";
    }
  }
  check(!eligible.empty(), "load_batch: no video has K+1 = ", K + 1,
        " usable frames");

  Batch<T> batch;
  batch.has_poses = index.has_poses();
  int64_t h = 0, w = 0;
  for (int64_t b = 0; b < batch_size; ++b) {
    const int64_t v = eligible[size_t(rng.uniform_int(eligible.size()))];
    const VideoEntry& video = index.videos[size_t(v)];
    const int64_t usable = int64_t(video.frames.size()) - holdout_tail;
    std::vector<int64_t> order(static_cast<size_t>(usable));
    for (int64_t i = 0; i < usable; ++i) order[size_t(i)] = i;
    for (int64_t j = 0; j <= K; ++j) {
      const int64_t pick = j + int64_t(rng.uniform_int(uint64_t(usable - j)));
      std::swap(order[size_t(j)], order[size_t(pick)]);
    }

    for (int64_t j = 0; j <= K; ++j) {
      const std::string& path = video.frames[size_t(order[size_t(j)])];
      Tensor<T> img = read_image<T>(path);
      if (h == 0) {
        h = img.dim(1);
        w = img.dim(2);
        for (int64_t k = 0; k < K; ++k)
          batch.references.push_back(Tensor<T>::uninit({batch_size, 3, h, w}));
        batch.driving = Tensor<T>::uninit({batch_size, 3, h, w});
      }
      check(img.dim(1) == h && img.dim(2) == w,
            "load_batch: frame size mismatch at ", path);
      Tensor<T>& dst =
          j < K ? batch.references[size_t(j)] : batch.driving;
      std::copy(img.data(), img.data() + img.numel(),
                dst.mutable_data() + b * 3 * h * w);
    }

    batch.video_index.push_back(v);
    batch.driving_frame.push_back(order[size_t(K)]);
    if (batch.has_poses)
      batch.driving_poses.push_back(video.poses[size_t(order[size_t(K)])]);
  }
  return batch;
}

}  // namespace daegan
