#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "daegan/ops.hpp"

namespace daegan {

namespace detail {

// Unrolls one image [Cin x H x W] into a [Cin*k*k x outH*outW] column matrix
// for the fast convolution path. Out-of-bounds taps are zero.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k,
            int64_t stride, int64_t pad, int64_t oH, int64_t oW, T* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * oH * oW;
        for (int64_t oy = 0; oy < oH; ++oy) {
          const int64_t sy = oy * stride - pad + ki;
          if (sy < 0 || sy >= H) {
            for (int64_t ox = 0; ox < oW; ++ox) row[oy * oW + ox] = T(0);
            continue;
          }
          const T* src = x + (c * H + sy) * W;
          for (int64_t ox = 0; ox < oW; ++ox) {
            const int64_t sx = ox * stride - pad + kj;
            row[oy * oW + ox] = (sx < 0 || sx >= W) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

// Inverse of im2col: scatter-adds the column matrix back into image layout.
template <typename T>
void col2im_acc(const T* col, int64_t C, int64_t H, int64_t W, int64_t k,
                int64_t stride, int64_t pad, int64_t oH, int64_t oW, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < k; ++ki) {
      for (int64_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * oH * oW;
        for (int64_t oy = 0; oy < oH; ++oy) {
          const int64_t sy = oy * stride - pad + ki;
          if (sy < 0 || sy >= H) continue;
          T* dst = x + (c * H + sy) * W;
          for (int64_t ox = 0; ox < oW; ++ox) {
            const int64_t sx = ox * stride - pad + kj;
            if (sx >= 0 && sx < W) dst[sx] += row[oy * oW + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-d convolution, im2col + GEMM path, differentiable w.r.t. input, weight
/// and bias. Pass an undefined bias tensor for no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, int64_t stride, int64_t padding) {
  check(x.ndim() == 4, "conv2d: input must be [B x Cin x H x W], got ",
        shape_str(x.shape()));
  check(weight.ndim() == 4, "conv2d: weight must be [Cout x Cin x k x k], got ",
        shape_str(weight.shape()));
  check(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square, got ",
        weight.dim(2), "x", weight.dim(3));
  check(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
  check(padding >= 0, "conv2d: padding must be >= 0, got ", padding);
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = weight.dim(0), k = weight.dim(2);
  check(weight.dim(1) == Cin, "conv2d: input has ", Cin,
        " channels but weight expects ", weight.dim(1));
  const int64_t oH = (H + 2 * padding - k) / stride + 1;
  const int64_t oW = (W + 2 * padding - k) / stride + 1;
  check(H + 2 * padding >= k && W + 2 * padding >= k,
        "conv2d: kernel ", k, " larger than padded input ", H + 2 * padding,
        "x", W + 2 * padding);
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.numel() == Cout, "conv2d: bias length ", bias.numel(),
          " != output channels ", Cout);
  const int64_t R = Cin * k * k;
  const int64_t P = oH * oW;
  Tensor<T> out = Tensor<T>::uninit({B, Cout, oH, oW});
  const T* px = x.data();
  const T* pw = weight.data();
  T* po = out.mutable_data();
  parallel_for(B, [&](int64_t b0, int64_t b1) {
    std::vector<T> col(size_t(R * P));
    for (int64_t b = b0; b < b1; ++b) {
      detail::im2col(px + b * Cin * H * W, Cin, H, W, k, stride, padding, oH,
                     oW, col.data());
      T* ob = po + b * Cout * P;
      for (int64_t oc = 0; oc < Cout; ++oc) {
        const T bv = has_bias ? bias.data()[oc] : T(0);
        T* orow = ob + oc * P;
        for (int64_t p = 0; p < P; ++p) orow[p] = bv;
      }
      detail::gemm_acc(Cout, P, R, pw, col.data(), ob);
    }
  });
  const bool need = x.requires_grad() || weight.requires_grad() ||
                    (has_bias && bias.requires_grad());
  detail::record_if_needed(
      "conv2d", need, out,
      [x, weight, bias, out, B, Cin, H, W, Cout, k, stride, padding, oH, oW, R,
       P, has_bias](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pdy = og->data();
        if (has_bias && bias.requires_grad()) {
          auto& gb = gm.acc(bias);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t oc = 0; oc < Cout; ++oc) {
              const T* dy = pdy + (b * Cout + oc) * P;
              T acc = T(0);
              for (int64_t p = 0; p < P; ++p) acc += dy[p];
              gb[size_t(oc)] += acc;
            }
        }
        if (weight.requires_grad()) {
          auto& gw = gm.acc(weight);
          const T* px2 = x.data();
          std::vector<T> col(size_t(R * P));
          // batch loop stays serial so each dW element accumulates in a fixed
          // order no matter how the channel loop is split
          for (int64_t b = 0; b < B; ++b) {
            detail::im2col(px2 + b * Cin * H * W, Cin, H, W, k, stride,
                           padding, oH, oW, col.data());
            const T* dyb = pdy + b * Cout * P;
            parallel_for(Cout, [&](int64_t c0, int64_t c1) {
              for (int64_t oc = c0; oc < c1; ++oc) {
                const T* dy = dyb + oc * P;
                T* gwr = gw.data() + oc * R;
                for (int64_t r = 0; r < R; ++r) {
                  const T* cr = col.data() + r * P;
                  T acc = T(0);
                  for (int64_t p = 0; p < P; ++p) acc += dy[p] * cr[p];
                  gwr[r] += acc;
                }
              }
            });
          }
        }
        if (x.requires_grad()) {
          auto& gx = gm.acc(x);
          const T* pw2 = weight.data();
          // W^T once, shared read-only by every batch task
          std::vector<T> wt(size_t(R * Cout));
          for (int64_t oc = 0; oc < Cout; ++oc)
            for (int64_t r = 0; r < R; ++r) wt[r * Cout + oc] = pw2[oc * R + r];
          parallel_for(B, [&](int64_t b0, int64_t b1) {
            std::vector<T> dcol(size_t(R * P));
            for (int64_t b = b0; b < b1; ++b) {
              std::fill(dcol.begin(), dcol.end(), T(0));
              detail::gemm_acc(R, P, Cout, wt.data(), pdy + b * Cout * P,
                               dcol.data());
              detail::col2im_acc(dcol.data(), Cin, H, W, k, stride, padding,
                                 oH, oW, gx.data() + b * Cin * H * W);
            }
          });
        }
      });
  return out;
}

/// Direct nested-loop convolution, forward only. Slow on purpose; serves as
/// the correctness reference for the fast path.
template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias, int64_t stride,
                           int64_t padding) {
  check(x.ndim() == 4 && weight.ndim() == 4, "conv2d_reference: bad rank");
  const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = weight.dim(0), k = weight.dim(2);
  check(weight.dim(1) == Cin && weight.dim(3) == k,
        "conv2d_reference: weight shape ", shape_str(weight.shape()));
  const int64_t oH = (H + 2 * padding - k) / stride + 1;
  const int64_t oW = (W + 2 * padding - k) / stride + 1;
  Tensor<T> out = Tensor<T>::uninit({B, Cout, oH, oW});
  const T* px = x.data();
  const T* pw = weight.data();
  T* po = out.mutable_data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t oc = 0; oc < Cout; ++oc)
      for (int64_t oy = 0; oy < oH; ++oy)
        for (int64_t ox = 0; ox < oW; ++ox) {
          T acc = bias.defined() ? bias.data()[oc] : T(0);
          for (int64_t c = 0; c < Cin; ++c)
            for (int64_t ki = 0; ki < k; ++ki)
              for (int64_t kj = 0; kj < k; ++kj) {
                const int64_t sy = oy * stride - padding + ki;
                const int64_t sx = ox * stride - padding + kj;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += px[((b * Cin + c) * H + sy) * W + sx] *
                       pw[((oc * Cin + c) * k + ki) * k + kj];
              }
          po[((b * Cout + oc) * oH + oy) * oW + ox] = acc;
        }
  return out;
}

enum class UpsampleMode { nearest, bilinear };

namespace detail {
// Precomputed 1-d interpolation taps for align-corners-false upsampling:
// source index pair and the weight of the second tap.
template <typename T>
struct UpTaps {
  std::vector<int64_t> i0, i1;
  std::vector<T> w1;
};

template <typename T>
UpTaps<T> make_up_taps(int64_t in, int64_t factor) {
  UpTaps<T> t;
  const int64_t out = in * factor;
  t.i0.resize(size_t(out));
  t.i1.resize(size_t(out));
  t.w1.resize(size_t(out));
  for (int64_t i = 0; i < out; ++i) {
    const T src = (T(i) + T(0.5)) / T(factor) - T(0.5);
    T f = std::floor(src);
    int64_t lo = int64_t(f);
    T w = src - f;
    if (lo < 0) { lo = 0; w = T(0); }
    if (lo >= in - 1) { lo = in - 1; w = T(0); }
    t.i0[size_t(i)] = lo;
    t.i1[size_t(i)] = std::min(lo + 1, in - 1);
    t.w1[size_t(i)] = w;
  }
  return t;
}
}  // namespace detail

/// Integer-factor spatial upsampling, differentiable.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, int64_t factor, UpsampleMode mode) {
  check(x.ndim() == 4, "upsample: input must be 4-d, got ",
        shape_str(x.shape()));
  check(factor >= 1, "upsample: factor must be >= 1, got ", factor);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t oH = H * factor, oW = W * factor;
  if (factor == 1) return reshape(x, x.shape());
  Tensor<T> out = Tensor<T>::uninit({B, C, oH, oW});
  const T* px = x.data();
  T* po = out.mutable_data();
  if (mode == UpsampleMode::nearest) {
    for (int64_t i = 0; i < B * C; ++i) {
      const T* src = px + i * H * W;
      T* dst = po + i * oH * oW;
      for (int64_t y = 0; y < oH; ++y) {
        const T* sr = src + (y / factor) * W;
        for (int64_t x2 = 0; x2 < oW; ++x2) dst[y * oW + x2] = sr[x2 / factor];
      }
    }
    detail::record_if_needed(
        "upsample_nearest", x.requires_grad(), out,
        [x, out, B, C, H, W, oH, oW, factor](GradMap<T>& gm) {
          const auto* og = gm.find(out);
          if (!og) return;
          auto& gx = gm.acc(x);
          for (int64_t i = 0; i < B * C; ++i) {
            const T* dy = og->data() + i * oH * oW;
            T* dx = gx.data() + i * H * W;
            for (int64_t y = 0; y < oH; ++y) {
              T* dr = dx + (y / factor) * W;
              for (int64_t x2 = 0; x2 < oW; ++x2)
                dr[x2 / factor] += dy[y * oW + x2];
            }
          }
        });
    return out;
  }
  auto ty = std::make_shared<detail::UpTaps<T>>(
      detail::make_up_taps<T>(H, factor));
  auto tx = std::make_shared<detail::UpTaps<T>>(
      detail::make_up_taps<T>(W, factor));
  for (int64_t i = 0; i < B * C; ++i) {
    const T* src = px + i * H * W;
    T* dst = po + i * oH * oW;
    for (int64_t y = 0; y < oH; ++y) {
      const int64_t y0 = ty->i0[size_t(y)], y1 = ty->i1[size_t(y)];
      const T wy = ty->w1[size_t(y)];
      const T* r0 = src + y0 * W;
      const T* r1 = src + y1 * W;
      for (int64_t x2 = 0; x2 < oW; ++x2) {
        const int64_t x0 = tx->i0[size_t(x2)], x1 = tx->i1[size_t(x2)];
        const T wx = tx->w1[size_t(x2)];
        const T top = r0[x0] + wx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + wx * (r1[x1] - r1[x0]);
        dst[y * oW + x2] = top + wy * (bot - top);
      }
    }
  }
  detail::record_if_needed(
      "upsample_bilinear", x.requires_grad(), out,
      [x, out, B, C, H, W, oH, oW, ty, tx](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& gx = gm.acc(x);
        for (int64_t i = 0; i < B * C; ++i) {
          const T* dy = og->data() + i * oH * oW;
          T* dx = gx.data() + i * H * W;
          for (int64_t y = 0; y < oH; ++y) {
            const int64_t y0 = ty->i0[size_t(y)], y1 = ty->i1[size_t(y)];
            const T wy = ty->w1[size_t(y)];
            for (int64_t x2 = 0; x2 < oW; ++x2) {
              const int64_t x0 = tx->i0[size_t(x2)], x1 = tx->i1[size_t(x2)];
              const T wx = tx->w1[size_t(x2)];
              const T d = dy[y * oW + x2];
              dx[y0 * W + x0] += d * (T(1) - wy) * (T(1) - wx);
              dx[y0 * W + x1] += d * (T(1) - wy) * wx;
              dx[y1 * W + x0] += d * wy * (T(1) - wx);
              dx[y1 * W + x1] += d * wy * wx;
            }
          }
        }
      });
  return out;
}

}  // namespace daegan
