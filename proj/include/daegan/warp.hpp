#pragma once

#include <cmath>
#include <vector>

#include "daegan/conv.hpp"
#include "daegan/ops.hpp"

// Geometric conventions used throughout:
//   displacement field  [B x 2 x H x W], channel 0 = horizontal du,
//                       channel 1 = vertical dv, in source-image pixels
//   attention map       [B x 1 x H x W], nonnegative
//   images              [B x C x H x W]

namespace daegan {

/// Backward (gather) warp with bilinear interpolation and clamp-to-edge
/// border handling. The field lives at the target resolution; base target
/// coordinates are scaled by (source/target) so the same field convention
/// covers same-resolution warps and the quarter-resolution sampler.
/// Differentiable w.r.t. both the image and the field.
template <typename T>
Tensor<T> grid_sample_bilinear(const Tensor<T>& image, const Tensor<T>& field) {
  check(image.ndim() == 4, "grid_sample: image must be 4-d, got ",
        shape_str(image.shape()));
  check(field.ndim() == 4 && field.dim(1) == 2,
        "grid_sample: field must be [B x 2 x H x W], got ",
        shape_str(field.shape()));
  const int64_t B = image.dim(0), C = image.dim(1);
  const int64_t Hs = image.dim(2), Ws = image.dim(3);
  const int64_t Ht = field.dim(2), Wt = field.dim(3);
  check(field.dim(0) == B, "grid_sample: batch mismatch, image ", B,
        " field ", field.dim(0));
  {
    const T* pf = field.data();
    for (int64_t i = 0; i < field.numel(); ++i)
      check(std::isfinite(pf[i]), "grid_sample: non-finite field value");
  }
  const T sy = T(Hs) / T(Ht);
  const T sx = T(Ws) / T(Wt);
  Tensor<T> out = Tensor<T>::uninit({B, C, Ht, Wt});
  const T* pi = image.data();
  const T* pf = field.data();
  T* po = out.mutable_data();
  auto clamp_idx = [](int64_t v, int64_t hi) {
    return v < 0 ? int64_t(0) : (v > hi ? hi : v);
  };
  parallel_for(B, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      const T* du = pf + (b * 2 + 0) * Ht * Wt;
      const T* dv = pf + (b * 2 + 1) * Ht * Wt;
      for (int64_t y = 0; y < Ht; ++y)
        for (int64_t x = 0; x < Wt; ++x) {
          const T srcx = T(x) * sx + du[y * Wt + x];
          const T srcy = T(y) * sy + dv[y * Wt + x];
          const T fxf = std::floor(srcx);
          const T fyf = std::floor(srcy);
          const T fx = srcx - fxf;
          const T fy = srcy - fyf;
          const int64_t x0 = clamp_idx(int64_t(fxf), Ws - 1);
          const int64_t x1 = clamp_idx(int64_t(fxf) + 1, Ws - 1);
          const int64_t y0 = clamp_idx(int64_t(fyf), Hs - 1);
          const int64_t y1 = clamp_idx(int64_t(fyf) + 1, Hs - 1);
          for (int64_t c = 0; c < C; ++c) {
            const T* img = pi + (b * C + c) * Hs * Ws;
            const T top = img[y0 * Ws + x0] +
                          fx * (img[y0 * Ws + x1] - img[y0 * Ws + x0]);
            const T bot = img[y1 * Ws + x0] +
                          fx * (img[y1 * Ws + x1] - img[y1 * Ws + x0]);
            po[((b * C + c) * Ht + y) * Wt + x] = top + fy * (bot - top);
          }
        }
    }
  });
  detail::record_if_needed(
      "grid_sample", image.requires_grad() || field.requires_grad(), out,
      [image, field, out, B, C, Hs, Ws, Ht, Wt, sy, sx](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const bool gi = image.requires_grad();
        const bool gf = field.requires_grad();
        std::vector<T>* gximg = gi ? &gm.acc(image) : nullptr;
        std::vector<T>* gxfld = gf ? &gm.acc(field) : nullptr;
        const T* pi2 = image.data();
        const T* pf2 = field.data();
        auto clamp_idx = [](int64_t v, int64_t hi) {
          return v < 0 ? int64_t(0) : (v > hi ? hi : v);
        };
        parallel_for(B, [&](int64_t b0, int64_t b1) {
          for (int64_t b = b0; b < b1; ++b) {
            const T* du = pf2 + (b * 2 + 0) * Ht * Wt;
            const T* dv = pf2 + (b * 2 + 1) * Ht * Wt;
            for (int64_t y = 0; y < Ht; ++y)
              for (int64_t x = 0; x < Wt; ++x) {
                const T srcx = T(x) * sx + du[y * Wt + x];
                const T srcy = T(y) * sy + dv[y * Wt + x];
                const T fxf = std::floor(srcx);
                const T fyf = std::floor(srcy);
                const T fx = srcx - fxf;
                const T fy = srcy - fyf;
                const int64_t x0 = clamp_idx(int64_t(fxf), Ws - 1);
                const int64_t x1 = clamp_idx(int64_t(fxf) + 1, Ws - 1);
                const int64_t y0 = clamp_idx(int64_t(fyf), Hs - 1);
                const int64_t y1 = clamp_idx(int64_t(fyf) + 1, Hs - 1);
                T acc_dx = T(0), acc_dy = T(0);
                for (int64_t c = 0; c < C; ++c) {
                  const T d = og->data()[((b * C + c) * Ht + y) * Wt + x];
                  const T* img = pi2 + (b * C + c) * Hs * Ws;
                  const T v00 = img[y0 * Ws + x0], v01 = img[y0 * Ws + x1];
                  const T v10 = img[y1 * Ws + x0], v11 = img[y1 * Ws + x1];
                  if (gf) {
                    acc_dx += d * ((T(1) - fy) * (v01 - v00) +
                                   fy * (v11 - v10));
                    acc_dy += d * ((T(1) - fx) * (v10 - v00) +
                                   fx * (v11 - v01));
                  }
                  if (gi) {
                    T* gim = gximg->data() + (b * C + c) * Hs * Ws;
                    gim[y0 * Ws + x0] += d * (T(1) - fy) * (T(1) - fx);
                    gim[y0 * Ws + x1] += d * (T(1) - fy) * fx;
                    gim[y1 * Ws + x0] += d * fy * (T(1) - fx);
                    gim[y1 * Ws + x1] += d * fy * fx;
                  }
                }
                if (gf) {
                  gxfld->data()[(b * 2 + 0) * Ht * Wt + y * Wt + x] += acc_dx;
                  gxfld->data()[(b * 2 + 1) * Ht * Wt + y * Wt + x] += acc_dy;
                }
              }
          }
        });
      });
  return out;
}

/// Per-pixel attention normalization with an epsilon floor:
/// A'_k = (A_k + eps/K) / (sum_j A_j + eps). Outputs sum to exactly 1 per
/// pixel; an all-zero stack degrades to uniform 1/K instead of failing.
template <typename T>
std::vector<Tensor<T>> normalize_attention(const std::vector<Tensor<T>>& maps,
                                           T eps = T(1e-6)) {
  check(!maps.empty(), "normalize_attention: need at least one map");
  const size_t K = maps.size();
  for (const auto& m : maps)
    check(m.shape() == maps[0].shape(),
          "normalize_attention: resolution mismatch, ",
          shape_str(m.shape()), " vs ", shape_str(maps[0].shape()));
  Tensor<T> total = maps[0];
  for (size_t k = 1; k < K; ++k) total = add(total, maps[k]);
  Tensor<T> denom = reciprocal(add_scalar(total, eps));
  std::vector<Tensor<T>> out;
  out.reserve(K);
  for (size_t k = 0; k < K; ++k)
    out.push_back(mul(add_scalar(maps[k], eps / T(K)), denom));
  return out;
}

/// Eq. 1: warp each reference frame by its field, then blend with the
/// normalized attention maps. Differentiable through frames, fields and
/// attentions.
template <typename T>
Tensor<T> fuse_embedded_face(const std::vector<Tensor<T>>& frames,
                             const std::vector<Tensor<T>>& fields,
                             const std::vector<Tensor<T>>& attentions,
                             T eps = T(1e-6)) {
  check(!frames.empty(), "fuse_embedded_face: need at least one frame");
  check(frames.size() == fields.size() && frames.size() == attentions.size(),
        "fuse_embedded_face: got ", frames.size(), " frames, ", fields.size(),
        " fields, ", attentions.size(), " attentions");
  std::vector<Tensor<T>> norm = normalize_attention(attentions, eps);
  Tensor<T> fused;
  for (size_t k = 0; k < frames.size(); ++k) {
    Tensor<T> warped = grid_sample_bilinear(frames[k], fields[k]);
    Tensor<T> weighted = broadcast_mul_channel(warped, norm[k]);
    fused = k == 0 ? weighted : add(fused, weighted);
  }
  return fused;
}

/// Eq. 2: x_hat = R_high + U(R_low + U(T_inv(f_hat))). T_inv lives at quarter
/// resolution with base coordinates scaled by 4; U is bilinear x2 upsampling.
template <typename T>
Tensor<T> compose_multiscale(const Tensor<T>& f_hat, const Tensor<T>& t_inv,
                             const Tensor<T>& r_low, const Tensor<T>& r_high) {
  check(f_hat.ndim() == 4, "compose_multiscale: f_hat must be 4-d, got ",
        shape_str(f_hat.shape()));
  const int64_t B = f_hat.dim(0), C = f_hat.dim(1);
  const int64_t H = f_hat.dim(2), W = f_hat.dim(3);
  check(H % 4 == 0 && W % 4 == 0,
        "compose_multiscale: resolution ", H, "x", W, " not divisible by 4");
  check(t_inv.ndim() == 4 && t_inv.dim(0) == B && t_inv.dim(1) == 2 &&
            t_inv.dim(2) == H / 4 && t_inv.dim(3) == W / 4,
        "compose_multiscale: T_inv must be [", B, " x 2 x ", H / 4, " x ",
        W / 4, "], got ", shape_str(t_inv.shape()));
  check(r_low.ndim() == 4 && r_low.dim(0) == B && r_low.dim(1) == C &&
            r_low.dim(2) == H / 2 && r_low.dim(3) == W / 2,
        "compose_multiscale: R_low must be half resolution, got ",
        shape_str(r_low.shape()));
  check(r_high.shape() == f_hat.shape(),
        "compose_multiscale: R_high must match f_hat, got ",
        shape_str(r_high.shape()));
  Tensor<T> base = grid_sample_bilinear(f_hat, t_inv);
  Tensor<T> mid = add(r_low, upsample(base, 2, UpsampleMode::bilinear));
  return add(r_high, upsample(mid, 2, UpsampleMode::bilinear));
}

/// Eq. 4 total-variation smoothness. Per field: at each forward-difference
/// site the 1-norm over both displacement channels, averaged over sites,
/// horizontal and vertical terms added; fields then summed.
template <typename T>
Tensor<T> tv_smoothness(const std::vector<Tensor<T>>& fields) {
  check(!fields.empty(), "tv_smoothness: need at least one field");
  T total = T(0);
  bool any_grad = false;
  for (const auto& f : fields) {
    check(f.ndim() == 4 && f.dim(1) == 2,
          "tv_smoothness: field must be [B x 2 x H x W], got ",
          shape_str(f.shape()));
    const int64_t h = f.dim(2), w = f.dim(3);
    check(h >= 2 || w >= 2, "tv_smoothness: field ", h, "x", w,
          " has no spatial extent to differentiate");
    any_grad = any_grad || f.requires_grad();
    const int64_t B = f.dim(0);
    const T* p = f.data();
    if (w >= 2) {
      T su = T(0);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < 2; ++c) {
          const T* ch = p + (b * 2 + c) * h * w;
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x + 1 < w; ++x)
              su += std::abs(ch[y * w + x + 1] - ch[y * w + x]);
        }
      total += su / T(B * h * (w - 1));
    }
    if (h >= 2) {
      T sv = T(0);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < 2; ++c) {
          const T* ch = p + (b * 2 + c) * h * w;
          for (int64_t y = 0; y + 1 < h; ++y)
            for (int64_t x = 0; x < w; ++x)
              sv += std::abs(ch[(y + 1) * w + x] - ch[y * w + x]);
        }
      total += sv / T(B * (h - 1) * w);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(total);
  detail::record_if_needed(
      "tv_smoothness", any_grad, out, [fields, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T d = (*og)[0];
        for (const auto& f : fields) {
          if (!f.requires_grad()) continue;
          auto& gx = gm.acc(f);
          const int64_t B = f.dim(0), h = f.dim(2), w = f.dim(3);
          const T* p = f.data();
          const T cu = w >= 2 ? d / T(B * h * (w - 1)) : T(0);
          const T cv = h >= 2 ? d / T(B * (h - 1) * w) : T(0);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < 2; ++c) {
              const T* ch = p + (b * 2 + c) * h * w;
              T* g = gx.data() + (b * 2 + c) * h * w;
              if (w >= 2)
                for (int64_t y = 0; y < h; ++y)
                  for (int64_t x = 0; x + 1 < w; ++x) {
                    const T diff = ch[y * w + x + 1] - ch[y * w + x];
                    const T s = diff > T(0) ? cu : (diff < T(0) ? -cu : T(0));
                    g[y * w + x + 1] += s;
                    g[y * w + x] -= s;
                  }
              if (h >= 2)
                for (int64_t y = 0; y + 1 < h; ++y)
                  for (int64_t x = 0; x < w; ++x) {
                    const T diff = ch[(y + 1) * w + x] - ch[y * w + x];
                    const T s = diff > T(0) ? cv : (diff < T(0) ? -cv : T(0));
                    g[(y + 1) * w + x] += s;
                    g[y * w + x] -= s;
                  }
            }
        }
      });
  return out;
}

}  // namespace daegan
