#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "daegan/embedders.hpp"
#include "daegan/gan.hpp"
#include "daegan/synthdata.hpp"

namespace daegan {

namespace detail {

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1
inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::array<double, 11> g{};
    for (int k = 0; k < 11; ++k)
      g[size_t(k)] = std::exp(-double((k - 5) * (k - 5)) / (2.0 * 1.5 * 1.5));
    std::vector<double> out(121);
    double total = 0.0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        out[size_t(i * 11 + j)] = g[size_t(i)] * g[size_t(j)];
        total += out[size_t(i * 11 + j)];
      }
    for (double& v : out) v /= total;
    return out;
  }();
  return w;
}

template <typename T>
std::vector<double> to_gray(const Tensor<T>& img) {
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::vector<double> g(size_t(H) * size_t(W), 0.0);
  const T* p = img.data();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < H * W; ++i) g[size_t(i)] += double(p[c * H * W + i]);
  for (double& v : g) v /= double(C);
  return g;
}

}  // namespace detail

/// Mean local SSIM between two images (channel-mean grayscale, 11x11
/// Gaussian window sigma 1.5, Wang et al. constants at dynamic range 2).
/// Both statistics of a window come from one accumulation pass, so
/// ssim(x, x) is exactly 1.  The formula is symmetric, so canonicalizing
/// the operand order makes ssim(x, y) and ssim(y, x) bitwise equal even
/// when the compiler contracts multiply-adds into FMAs.
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y) {
  check(x.ndim() == 3 && y.ndim() == 3, "ssim: expected [C x H x W] images, ",
        "got ", shape_str(x.shape()), " and ", shape_str(y.shape()));
  check(x.shape() == y.shape(), "ssim: shape mismatch ", shape_str(x.shape()),
        " vs ", shape_str(y.shape()));
  const int64_t H = x.dim(1), W = x.dim(2);
  check(H >= 11 && W >= 11, "ssim: image ", H, "x", W,
        " is smaller than the 11x11 window");
  constexpr double C1 = (0.01 * 2.0) * (0.01 * 2.0);
  constexpr double C2 = (0.03 * 2.0) * (0.03 * 2.0);
  std::vector<double> a = detail::to_gray(x);
  std::vector<double> b = detail::to_gray(y);
  if (std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end(),
                                   [](double u, double v) {
                                     return std::signbit(u) != std::signbit(v)
                                                ? std::signbit(u)
                                                : u < v;
                                   }))
    std::swap(a, b);
  const std::vector<double>& win = detail::ssim_window();

  double total = 0.0;
  int64_t n = 0;
  for (int64_t r = 0; r + 11 <= H; ++r)
    for (int64_t c = 0; c + 11 <= W; ++c) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int64_t i = 0; i < 11; ++i)
        for (int64_t j = 0; j < 11; ++j) {
          const double w = win[size_t(i * 11 + j)];
          const double av = a[size_t((r + i) * W + c + j)];
          const double bv = b[size_t((r + i) * W + c + j)];
          ma += w * av;
          mb += w * bv;
          saa += w * (av * av);
          sbb += w * (bv * bv);
          sab += w * (av * bv);
        }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      const double num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
      const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
      total += num / den;
      ++n;
    }
  return total / double(n);
}

/// a.b / (|a||b|); a zero vector paired with anything is defined as 0.
template <typename T>
double cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.numel() == b.numel(), "cosine_similarity: length mismatch ",
        a.numel(), " vs ", b.numel());
  double dot = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double av = double(a.data()[i]), bv = double(b.data()[i]);
    dot += av * bv;
    na += av * av;
    nb += bv * bv;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Brute-force retrieval index over unit-normalized pose codes; cosine
/// similarity against normalized codes reduces to a dot product.
struct RetrievalIndex {
  std::vector<int64_t> ids;
  std::vector<std::vector<double>> codes;

  template <typename T>
  void add(int64_t id, const Tensor<T>& code) {
    for (int64_t existing : ids)
      check(existing != id, "retrieval: duplicate id ", id);
    std::vector<double> v(size_t(code.numel()));
    double norm = 0.0;
    for (int64_t i = 0; i < code.numel(); ++i) {
      v[size_t(i)] = double(code.data()[i]);
      norm += v[size_t(i)] * v[size_t(i)];
    }
    check(norm > 0.0, "retrieval: zero code for id ", id);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    if (!codes.empty())
      check(codes.front().size() == v.size(),
            "retrieval: code length mismatch for id ", id);
    ids.push_back(id);
    codes.push_back(std::move(v));
  }

  size_t size() const { return ids.size(); }
};

struct RetrievalHit {
  int64_t id = 0;
  double similarity = 0.0;
};

/// Ranks every index entry against a raw (unnormalized) query code:
/// descending similarity, ties broken by ascending id.
inline std::vector<RetrievalHit> rank_codes(const RetrievalIndex& index,
                                            const std::vector<double>& query) {
  check(!index.ids.empty(), "retrieval: empty index");
  check(query.size() == index.codes.front().size(),
        "retrieval: query length ", query.size(), " vs stored ",
        index.codes.front().size());
  double norm = 0.0;
  for (double v : query) norm += v * v;
  std::vector<RetrievalHit> hits(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    double dot = 0.0;
    if (norm > 0.0) {
      for (size_t j = 0; j < query.size(); ++j)
        dot += query[j] * index.codes[i][j];
      dot /= std::sqrt(norm);
    }
    hits[i] = {index.ids[i], dot};
  }
  std::sort(hits.begin(), hits.end(),
            [](const RetrievalHit& l, const RetrievalHit& r) {
              if (l.similarity != r.similarity)
                return l.similarity > r.similarity;
              return l.id < r.id;
            });
  return hits;
}

/// Encodes the query image with P and ranks the whole index.
template <typename T>
std::vector<RetrievalHit> pose_retrieval(const Tensor<T>& query_image,
                                         const RetrievalIndex& index,
                                         PoseEmbedder<T>& model) {
  typename Graph<T>::NoRecord nr;
  Tensor<T> code = model.encode(
      reshape(query_image, {1, 3, query_image.dim(1), query_image.dim(2)}));
  std::vector<double> q(size_t(code.numel()));
  for (int64_t i = 0; i < code.numel(); ++i) q[size_t(i)] = double(code.data()[i]);
  return rank_codes(index, q);
}

/// Mean pixel |difference| between embedded faces computed from `trials`
/// random disjoint K-subsets of one video's frames ([3 x H x W] each).
/// Zero for a perfectly pose-invariant embedder.
template <typename T>
double embedded_face_invariance(FaceEmbedder<T>& model,
                                const std::vector<Tensor<T>>& frames,
                                int64_t k, int64_t trials, Rng& rng) {
  const int64_t n = int64_t(frames.size());
  check(k >= 1 && trials >= 1, "invariance: k and trials must be >= 1");
  check(n >= 2 * k, "invariance: need at least 2k = ", 2 * k, " frames, got ",
        n);
  typename Graph<T>::NoRecord nr;
  std::vector<int64_t> order(static_cast<size_t>(n));
  double total = 0.0;
  for (int64_t t = 0; t < trials; ++t) {
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
    for (int64_t j = 0; j < 2 * k; ++j) {
      const int64_t pick = j + int64_t(rng.uniform_int(uint64_t(n - j)));
      std::swap(order[size_t(j)], order[size_t(pick)]);
    }
    auto batch_of = [&](int64_t offset) {
      std::vector<Tensor<T>> subset;
      for (int64_t j = 0; j < k; ++j) {
        const Tensor<T>& f = frames[size_t(order[size_t(offset + j)])];
        subset.push_back(reshape(f, {1, 3, f.dim(1), f.dim(2)}));
      }
      return model.embed(subset).f_hat;
    };
    const Tensor<T> fa = batch_of(0);
    const Tensor<T> fb = batch_of(k);
    double diff = 0.0;
    for (int64_t i = 0; i < fa.numel(); ++i)
      diff += std::abs(double(fa.data()[i]) - double(fb.data()[i]));
    total += diff / double(fa.numel());
  }
  return total / double(trials);
}

/// Held-out R^2 of ridge regressions from pose codes to each ground-truth
/// pose parameter.
struct ProbeReport {
  double theta = 0, tx = 0, ty = 0, scale = 0, mouth = 0;
};

namespace detail {

// solves (A)x = b for SPD A via Cholesky, in place over a copy
inline std::vector<double> spd_solve(std::vector<double> a, int64_t d,
                                     std::vector<double> b) {
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = a[size_t(i * d + j)];
      for (int64_t k = 0; k < j; ++k)
        s -= a[size_t(i * d + k)] * a[size_t(j * d + k)];
      if (i == j) {
        check(s > 0.0, "ridge: matrix not positive definite");
        a[size_t(i * d + j)] = std::sqrt(s);
      } else {
        a[size_t(i * d + j)] = s / a[size_t(j * d + j)];
      }
    }
  }
  for (int64_t i = 0; i < d; ++i) {
    double s = b[size_t(i)];
    for (int64_t k = 0; k < i; ++k) s -= a[size_t(i * d + k)] * b[size_t(k)];
    b[size_t(i)] = s / a[size_t(i * d + i)];
  }
  for (int64_t i = d - 1; i >= 0; --i) {
    double s = b[size_t(i)];
    for (int64_t k = i + 1; k < d; ++k)
      s -= a[size_t(k * d + i)] * b[size_t(k)];
    b[size_t(i)] = s / a[size_t(i * d + i)];
  }
  return b;
}

}  // namespace detail

/// Ridge-probe core: rows are (code, five pose targets); every 4th sample
/// (index % 4 == 3) is the held-out test split, the rest train the
/// closed-form centered ridge fit (lambda = 1e-3).
inline ProbeReport ridge_probe(
    const std::vector<std::vector<double>>& codes,
    const std::vector<std::array<double, 5>>& targets) {
  const int64_t n = int64_t(codes.size());
  check(n == int64_t(targets.size()), "probe: ", n, " codes vs ",
        targets.size(), " targets");
  check(n >= 50, "probe: need at least 50 samples, got ", n);
  const int64_t d = int64_t(codes.front().size());
  for (const auto& c : codes)
    check(int64_t(c.size()) == d, "probe: inconsistent code length");
  constexpr double lambda = 1e-3;

  std::vector<int64_t> train, test;
  for (int64_t i = 0; i < n; ++i)
    (i % 4 == 3 ? test : train).push_back(i);

  std::vector<double> x_mean(size_t(d), 0.0);
  std::array<double, 5> y_mean{};
  for (int64_t i : train) {
    for (int64_t j = 0; j < d; ++j) x_mean[size_t(j)] += codes[size_t(i)][size_t(j)];
    for (int p = 0; p < 5; ++p) y_mean[size_t(p)] += targets[size_t(i)][size_t(p)];
  }
  for (double& v : x_mean) v /= double(train.size());
  for (double& v : y_mean) v /= double(train.size());

  std::vector<double> gram(size_t(d) * size_t(d), 0.0);
  std::array<std::vector<double>, 5> rhs;
  for (auto& r : rhs) r.assign(size_t(d), 0.0);
  std::vector<double> xc(static_cast<size_t>(d));
  for (int64_t i : train) {
    for (int64_t j = 0; j < d; ++j)
      xc[size_t(j)] = codes[size_t(i)][size_t(j)] - x_mean[size_t(j)];
    for (int64_t j = 0; j < d; ++j) {
      for (int64_t l = 0; l <= j; ++l)
        gram[size_t(j * d + l)] += xc[size_t(j)] * xc[size_t(l)];
      for (int p = 0; p < 5; ++p)
        rhs[size_t(p)][size_t(j)] +=
            xc[size_t(j)] * (targets[size_t(i)][size_t(p)] - y_mean[size_t(p)]);
    }
  }
  for (int64_t j = 0; j < d; ++j) {
    for (int64_t l = 0; l < j; ++l)
      gram[size_t(l * d + j)] = gram[size_t(j * d + l)];
    gram[size_t(j * d + j)] += lambda;
  }

  std::array<double, 5> r2{};
  for (int p = 0; p < 5; ++p) {
    const std::vector<double> w =
        detail::spd_solve(gram, d, rhs[size_t(p)]);
    double yt_mean = 0.0;
    for (int64_t i : test) yt_mean += targets[size_t(i)][size_t(p)];
    yt_mean /= double(test.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (int64_t i : test) {
      double pred = y_mean[size_t(p)];
      for (int64_t j = 0; j < d; ++j)
        pred += (codes[size_t(i)][size_t(j)] - x_mean[size_t(j)]) * w[size_t(j)];
      const double y = targets[size_t(i)][size_t(p)];
      ss_res += (y - pred) * (y - pred);
      ss_tot += (y - yt_mean) * (y - yt_mean);
    }
    r2[size_t(p)] = ss_tot > 1e-12 ? 1.0 - ss_res / ss_tot : 0.0;
  }
  return ProbeReport{r2[0], r2[1], r2[2], r2[3], r2[4]};
}

/// Encodes every frame of the corpus with P and probes the codes against
/// the ground-truth sidecar poses.
template <typename T>
ProbeReport pose_code_probe(PoseEmbedder<T>& model,
                            const DatasetIndex& corpus) {
  check(corpus.has_poses(), "probe: corpus has no pose sidecars");
  typename Graph<T>::NoRecord nr;
  std::vector<std::vector<double>> codes;
  std::vector<std::array<double, 5>> targets;
  for (const auto& video : corpus.videos) {
    for (size_t f = 0; f < video.frames.size(); ++f) {
      Tensor<T> img = read_image<T>(video.frames[f]);
      Tensor<T> code =
          model.encode(reshape(img, {1, 3, img.dim(1), img.dim(2)}));
      std::vector<double> c(size_t(code.numel()));
      for (int64_t i = 0; i < code.numel(); ++i)
        c[size_t(i)] = double(code.data()[i]);
      codes.push_back(std::move(c));
      const PoseParams& p = video.poses[f];
      targets.push_back({p.theta, p.tx, p.ty, p.scale, p.mouth});
    }
  }
  return ridge_probe(codes, targets);
}

/// Mean SSIM of reenactions (and of the raw embedded face, as the baseline)
/// against each held-out driving frame. References are the first k training
/// frames per video; reenaction goes through G when given, otherwise
/// through the stage-1 warping pathway.
struct HoldoutSsim {
  double reenacted = 0.0;
  double embedded = 0.0;
  int64_t count = 0;
};

template <typename T>
HoldoutSsim holdout_reenact_ssim(FaceEmbedder<T>& F, PoseEmbedder<T>& P,
                                 Generator<T>* G, const DatasetIndex& corpus,
                                 int64_t k, int64_t holdout) {
  check(k >= 1 && holdout >= 1, "holdout_reenact: k and holdout must be >= 1");
  typename Graph<T>::NoRecord nr;
  HoldoutSsim out;
  for (const auto& video : corpus.videos) {
    const int64_t total = int64_t(video.frames.size());
    const int64_t usable = total - holdout;
    if (usable < k) continue;
    std::vector<Tensor<T>> refs;
    for (int64_t j = 0; j < k; ++j) {
      Tensor<T> img = read_image<T>(video.frames[size_t(j)]);
      refs.push_back(reshape(img, {1, 3, img.dim(1), img.dim(2)}));
    }
    const Tensor<T> f_hat = F.embed(refs).f_hat;
    const Tensor<T> f_img =
        reshape(f_hat, {3, f_hat.dim(2), f_hat.dim(3)});
    for (int64_t j = usable; j < total; ++j) {
      Tensor<T> driving = read_image<T>(video.frames[size_t(j)]);
      Tensor<T> batch =
          reshape(driving, {1, 3, driving.dim(1), driving.dim(2)});
      Tensor<T> reenacted;
      if (G != nullptr) {
        reenacted = (*G)(f_hat, P.encode(batch));
      } else {
        reenacted = P(batch, f_hat).x_hat;
      }
      const Tensor<T> img =
          reshape(reenacted, {3, reenacted.dim(2), reenacted.dim(3)});
      out.reenacted += ssim(img, driving);
      out.embedded += ssim(f_img, driving);
      ++out.count;
    }
  }
  check(out.count > 0, "holdout_reenact: no video is long enough");
  out.reenacted /= double(out.count);
  out.embedded /= double(out.count);
  return out;
}

/// Flat, deterministic key=value report: checkpoint id, metrics in
/// insertion order, then the config snapshot under a "config." prefix.
struct EvalReport {
  std::string checkpoint_id;
  std::string config_text;
  std::vector<std::pair<std::string, double>> metrics;

  void add(const std::string& name, double value) {
    check(std::isfinite(value), "eval: metric ", name, " is not finite");
    metrics.emplace_back(name, value);
  }

  std::string serialize() const {
    std::string out = "checkpoint=" + checkpoint_id + "\n";
    char buf[64];
    for (const auto& [name, value] : metrics) {
      std::snprintf(buf, sizeof buf, "%.17g", value);
      out += name + "=" + buf + "\n";
    }
    std::istringstream cfg(config_text);
    std::string line;
    while (std::getline(cfg, line))
      if (!line.empty()) out += "config." + line + "\n";
    return out;
  }
};

}  // namespace daegan
