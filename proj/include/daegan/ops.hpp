#pragma once

#include <algorithm>
#include <cmath>

#include "daegan/tensor.hpp"

namespace daegan {

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::record_if_needed(
      "add", a.requires_grad() || b.requires_grad(), out,
      [a, b, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        if (a.requires_grad()) {
          auto& ga = gm.acc(a);
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
        }
        if (b.requires_grad()) {
          auto& gb = gm.acc(b);
          for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i];
        }
      });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  detail::record_if_needed(
      "sub", a.requires_grad() || b.requires_grad(), out,
      [a, b, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        if (a.requires_grad()) {
          auto& ga = gm.acc(a);
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
        }
        if (b.requires_grad()) {
          auto& gb = gm.acc(b);
          for (size_t i = 0; i < gb.size(); ++i) gb[i] -= (*og)[i];
        }
      });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::record_if_needed(
      "mul", a.requires_grad() || b.requires_grad(), out,
      [a, b, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        if (a.requires_grad()) {
          auto& ga = gm.acc(a);
          const T* pb2 = b.data();
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i] * pb2[i];
        }
        if (b.requires_grad()) {
          auto& gb = gm.acc(b);
          const T* pa2 = a.data();
          for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i] * pa2[i];
        }
      });
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("div", a, b);
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  detail::record_if_needed(
      "div", a.requires_grad() || b.requires_grad(), out,
      [a, b, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pb2 = b.data();
        if (a.requires_grad()) {
          auto& ga = gm.acc(a);
          for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i] / pb2[i];
        }
        if (b.requires_grad()) {
          auto& gb = gm.acc(b);
          const T* py = out.data();
          for (size_t i = 0; i < gb.size(); ++i)
            gb[i] -= (*og)[i] * py[i] / pb2[i];
        }
      });
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = -pa[i];
  detail::record_if_needed("neg", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] -= (*og)[i];
                           });
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  detail::record_if_needed("add_scalar", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[i];
                           });
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  detail::record_if_needed("mul_scalar", a.requires_grad(), out,
                           [a, out, c](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[i] * c;
                           });
  return out;
}

/// y = x * s where s is a one-element tensor (learned scalar gate).
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  check(s.numel() == 1, "scale_by: scale must be a one-element tensor");
  const T sv = s.data()[0];
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T* px = x.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * sv;
  detail::record_if_needed(
      "scale_by", x.requires_grad() || s.requires_grad(), out,
      [x, s, out, sv](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        if (x.requires_grad()) {
          auto& gx = gm.acc(x);
          for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*og)[i] * sv;
        }
        if (s.requires_grad()) {
          auto& gs = gm.acc(s);
          const T* px2 = x.data();
          T acc = T(0);
          for (size_t i = 0; i < og->size(); ++i) acc += (*og)[i] * px2[i];
          gs[0] += acc;
        }
      });
  return out;
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = T(1) / pa[i];
  detail::record_if_needed("reciprocal", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             const T* py = out.data();
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] -= (*og)[i] * py[i] * py[i];
                           });
  return out;
}

template <typename T>
Tensor<T> abs_val(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::abs(pa[i]);
  detail::record_if_needed(
      "abs", a.requires_grad(), out, [a, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& ga = gm.acc(a);
        const T* pa2 = a.data();
        for (size_t i = 0; i < ga.size(); ++i) {
          const T s = pa2[i] > T(0) ? T(1) : (pa2[i] < T(0) ? T(-1) : T(0));
          ga[i] += (*og)[i] * s;
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  detail::record_if_needed("relu", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             const T* pa2 = a.data();
                             for (size_t i = 0; i < ga.size(); ++i)
                               if (pa2[i] > T(0)) ga[i] += (*og)[i];
                           });
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T alpha) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i)
    po[i] = pa[i] > T(0) ? pa[i] : alpha * pa[i];
  detail::record_if_needed(
      "leaky_relu", a.requires_grad(), out, [a, out, alpha](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& ga = gm.acc(a);
        const T* pa2 = a.data();
        for (size_t i = 0; i < ga.size(); ++i)
          ga[i] += (*og)[i] * (pa2[i] > T(0) ? T(1) : alpha);
      });
  return out;
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::tanh(pa[i]);
  detail::record_if_needed("tanh", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             const T* py = out.data();
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[i] * (T(1) - py[i] * py[i]);
                           });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T x = pa[i];
    po[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                      : std::exp(x) / (T(1) + std::exp(x));
  }
  detail::record_if_needed("sigmoid", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             const T* py = out.data();
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[i] * py[i] * (T(1) - py[i]);
                           });
  return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T x = pa[i];
    // log(1+e^x) without overflow for large |x|
    po[i] = x > T(30) ? x : (x < T(-30) ? std::exp(x) : std::log1p(std::exp(x)));
  }
  detail::record_if_needed(
      "softplus", a.requires_grad(), out, [a, out](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& ga = gm.acc(a);
        const T* pa2 = a.data();
        for (size_t i = 0; i < ga.size(); ++i) {
          const T x = pa2[i];
          const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                : std::exp(x) / (T(1) + std::exp(x));
          ga[i] += (*og)[i] * s;
        }
      });
  return out;
}

enum class Act { relu, leaky_relu, tanh, sigmoid, softplus };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind, T alpha = T(0.2)) {
  switch (kind) {
    case Act::relu: return relu(x);
    case Act::leaky_relu: return leaky_relu(x, alpha);
    case Act::tanh: return tanh_act(x);
    case Act::sigmoid: return sigmoid(x);
    case Act::softplus: return softplus(x);
  }
  raise("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::record_if_needed("sum_all", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[0];
                           });
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  check(a.numel() > 0, "mean_all: empty tensor");
  T acc = T(0);
  const T* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  const T inv = T(1) / T(a.numel());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  detail::record_if_needed("mean_all", a.requires_grad(), out,
                           [a, out, inv](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[0] * inv;
                           });
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  check(shape_numel(new_shape) == a.numel(), "reshape: cannot view ",
        shape_str(a.shape()), " as ", shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), a.vec());
  detail::record_if_needed("reshape", a.requires_grad(), out,
                           [a, out](GradMap<T>& gm) {
                             const auto* og = gm.find(out);
                             if (!og) return;
                             auto& ga = gm.acc(a);
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += (*og)[i];
                           });
  return out;
}

namespace detail {
template <typename T>
void transpose_copy(const T* src, T* dst, int64_t batch, int64_t rows,
                    int64_t cols) {
  for (int64_t b = 0; b < batch; ++b) {
    const T* s = src + b * rows * cols;
    T* d = dst + b * rows * cols;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) d[c * rows + r] = s[r * cols + c];
  }
}
}  // namespace detail

/// Swaps the last two dimensions (copying).
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  check(a.ndim() >= 2, "transpose_last2: need at least 2 dims, got ",
        shape_str(a.shape()));
  Shape s = a.shape();
  const int64_t cols = s.back();
  const int64_t rows = s[s.size() - 2];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  const int64_t batch = a.numel() / (rows * cols);
  Tensor<T> out = Tensor<T>::uninit(std::move(s));
  detail::transpose_copy(a.data(), out.mutable_data(), batch, rows, cols);
  detail::record_if_needed(
      "transpose_last2", a.requires_grad(), out,
      [a, out, batch, rows, cols](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& ga = gm.acc(a);
        // transpose the gradient back
        for (int64_t b = 0; b < batch; ++b) {
          const T* s2 = og->data() + b * rows * cols;
          T* d = ga.data() + b * rows * cols;
          for (int64_t c = 0; c < cols; ++c)
            for (int64_t r = 0; r < rows; ++r)
              d[r * cols + c] += s2[c * rows + r];
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products and softmax
// ---------------------------------------------------------------------------

namespace detail {
// C[M x N] += A[M x K] * B[K x N]; row-major, fixed k-ascending accumulation
// order per element so results are independent of outer parallel splits.
template <typename T>
void gemm_acc(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
  constexpr int64_t KB = 64;
  for (int64_t k0 = 0; k0 < K; k0 += KB) {
    const int64_t k1 = std::min(K, k0 + KB);
    for (int64_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      for (int64_t k = k0; k < k1; ++k) {
        const T a = A[i * K + k];
        const T* b = B + k * N;
        for (int64_t j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
  }
}
}  // namespace detail

/// Batched matmul: a is [B x M x K] (or [M x K], broadcast over the batch),
/// b is [B x K x N]; result [B x M x N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(b.ndim() == 3, "matmul: rhs must be 3-d [B x K x N], got ",
        shape_str(b.shape()));
  check(a.ndim() == 2 || a.ndim() == 3, "matmul: lhs must be 2-d or 3-d, got ",
        shape_str(a.shape()));
  const bool bcast = a.ndim() == 2;
  const int64_t B = b.dim(0), K = b.dim(1), N = b.dim(2);
  const int64_t M = bcast ? a.dim(0) : a.dim(1);
  const int64_t aK = bcast ? a.dim(1) : a.dim(2);
  check(aK == K, "matmul: inner dims differ, lhs ", shape_str(a.shape()),
        " rhs ", shape_str(b.shape()));
  if (!bcast)
    check(a.dim(0) == B, "matmul: batch dims differ, lhs ",
          shape_str(a.shape()), " rhs ", shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({B, M, N});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < B; ++i)
    detail::gemm_acc(M, N, K, pa + (bcast ? 0 : i * M * K), pb + i * K * N,
                     po + i * M * N);
  detail::record_if_needed(
      "matmul", a.requires_grad() || b.requires_grad(), out,
      [a, b, out, bcast, B, M, N, K](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pa2 = a.data();
        const T* pb2 = b.data();
        if (a.requires_grad()) {
          auto& ga = gm.acc(a);
          // dA += dC * B^T
          for (int64_t i = 0; i < B; ++i) {
            const T* dc = og->data() + i * M * N;
            const T* bb = pb2 + i * K * N;
            T* da = ga.data() + (bcast ? 0 : i * M * K);
            for (int64_t m = 0; m < M; ++m)
              for (int64_t k = 0; k < K; ++k) {
                T acc = T(0);
                for (int64_t n = 0; n < N; ++n)
                  acc += dc[m * N + n] * bb[k * N + n];
                da[m * K + k] += acc;
              }
          }
        }
        if (b.requires_grad()) {
          auto& gb = gm.acc(b);
          // dB += A^T * dC
          for (int64_t i = 0; i < B; ++i) {
            const T* dc = og->data() + i * M * N;
            const T* aa = pa2 + (bcast ? 0 : i * M * K);
            T* db = gb.data() + i * K * N;
            for (int64_t m = 0; m < M; ++m) {
              const T* dcr = dc + m * N;
              for (int64_t k = 0; k < K; ++k) {
                const T av = aa[m * K + k];
                T* dbr = db + k * N;
                for (int64_t n = 0; n < N; ++n) dbr[n] += av * dcr[n];
              }
            }
          }
        }
      });
  return out;
}

/// Softmax over the last dimension.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
  check(a.ndim() >= 1, "softmax_lastdim: scalar input");
  const int64_t cols = a.shape().back();
  const int64_t rows = a.numel() / cols;
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const T* pa = a.data();
  T* po = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = pa + r * cols;
    T* y = po + r * cols;
    T mx = x[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    T denom = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      denom += y[c];
    }
    const T inv = T(1) / denom;
    for (int64_t c = 0; c < cols; ++c) y[c] *= inv;
  }
  detail::record_if_needed(
      "softmax", a.requires_grad(), out,
      [a, out, rows, cols](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& ga = gm.acc(a);
        const T* py = out.data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = py + r * cols;
          const T* dy = og->data() + r * cols;
          T dot = T(0);
          for (int64_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
          T* dx = ga.data() + r * cols;
          for (int64_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Linear layer op: out = x * W^T + bias
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  check(x.ndim() == 2, "linear: input must be [B x Din], got ",
        shape_str(x.shape()));
  check(weight.ndim() == 2, "linear: weight must be [Dout x Din], got ",
        shape_str(weight.shape()));
  const int64_t B = x.dim(0), Din = x.dim(1);
  const int64_t Dout = weight.dim(0);
  check(weight.dim(1) == Din, "linear: inner dimension mismatch, input has ",
        Din, " features but weight expects ", weight.dim(1));
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.numel() == Dout, "linear: bias length ", bias.numel(),
          " != output features ", Dout);
  Tensor<T> out = Tensor<T>::uninit({B, Dout});
  const T* px = x.data();
  const T* pw = weight.data();
  T* po = out.mutable_data();
  parallel_for(B, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      for (int64_t o = 0; o < Dout; ++o) {
        T acc = has_bias ? bias.data()[o] : T(0);
        const T* wr = pw + o * Din;
        const T* xr = px + b * Din;
        for (int64_t i = 0; i < Din; ++i) acc += xr[i] * wr[i];
        po[b * Dout + o] = acc;
      }
    }
  });
  const bool need = x.requires_grad() || weight.requires_grad() ||
                    (has_bias && bias.requires_grad());
  detail::record_if_needed(
      "linear", need, out, [x, weight, bias, out, B, Din, Dout,
                            has_bias](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pdy = og->data();
        if (x.requires_grad()) {
          auto& gx = gm.acc(x);
          const T* pw2 = weight.data();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < Dout; ++o) {
              const T d = pdy[b * Dout + o];
              const T* wr = pw2 + o * Din;
              T* gxr = gx.data() + b * Din;
              for (int64_t i = 0; i < Din; ++i) gxr[i] += d * wr[i];
            }
        }
        if (weight.requires_grad()) {
          auto& gw = gm.acc(weight);
          const T* px2 = x.data();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < Dout; ++o) {
              const T d = pdy[b * Dout + o];
              const T* xr = px2 + b * Din;
              T* gwr = gw.data() + o * Din;
              for (int64_t i = 0; i < Din; ++i) gwr[i] += d * xr[i];
            }
        }
        if (has_bias && bias.requires_grad()) {
          auto& gb = gm.acc(bias);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < Dout; ++o) gb[o] += pdy[b * Dout + o];
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Instance normalization and AdaIN
// ---------------------------------------------------------------------------

/// Per-(sample, channel) normalization to zero mean / unit variance.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  check(x.ndim() == 4, "instance_norm: input must be [B x C x H x W], got ",
        shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t N = H * W;
  check(N >= 2, "instance_norm: spatial size ", H, "x", W,
        " too small (variance undefined)");
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(size_t(B * C));
  const T* px = x.data();
  T* po = out.mutable_data();
  parallel_for(B * C, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* ch = px + i * N;
      T* oc = po + i * N;
      T mean = T(0);
      for (int64_t j = 0; j < N; ++j) mean += ch[j];
      mean /= T(N);
      T var = T(0);
      for (int64_t j = 0; j < N; ++j) {
        const T d = ch[j] - mean;
        var += d * d;
      }
      var /= T(N);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[size_t(i)] = is;
      for (int64_t j = 0; j < N; ++j) oc[j] = (ch[j] - mean) * is;
    }
  });
  detail::record_if_needed(
      "instance_norm", x.requires_grad(), out,
      [x, out, inv_std, B, C, N](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        auto& gx = gm.acc(x);
        const T* py = out.data();
        for (int64_t i = 0; i < B * C; ++i) {
          const T* y = py + i * N;
          const T* dy = og->data() + i * N;
          T* dx = gx.data() + i * N;
          T mean_dy = T(0), mean_dyy = T(0);
          for (int64_t j = 0; j < N; ++j) {
            mean_dy += dy[j];
            mean_dyy += dy[j] * y[j];
          }
          mean_dy /= T(N);
          mean_dyy /= T(N);
          const T is = (*inv_std)[size_t(i)];
          for (int64_t j = 0; j < N; ++j)
            dx[j] += is * (dy[j] - mean_dy - y[j] * mean_dyy);
        }
      });
  return out;
}

/// y[b,c,:,:] = x[b,c,:,:] * gamma[b,c] + beta[b,c]; gamma/beta are [B x C].
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma,
                         const Tensor<T>& beta) {
  check(x.ndim() == 4, "channel_affine: input must be 4-d, got ",
        shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  check(gamma.ndim() == 2 && gamma.dim(0) == B && gamma.dim(1) == C,
        "channel_affine: gamma shape ", shape_str(gamma.shape()),
        " does not match [", B, "x", C, "]");
  detail::check_same_shape("channel_affine(gamma,beta)", gamma, beta);
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.mutable_data();
  for (int64_t i = 0; i < B * C; ++i) {
    const T g = pg[i], bt = pb[i];
    const T* xc = px + i * N;
    T* oc = po + i * N;
    for (int64_t j = 0; j < N; ++j) oc[j] = xc[j] * g + bt;
  }
  const bool need = x.requires_grad() || gamma.requires_grad() ||
                    beta.requires_grad();
  detail::record_if_needed(
      "channel_affine", need, out,
      [x, gamma, beta, out, B, C, N](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pdy = og->data();
        if (x.requires_grad()) {
          auto& gx = gm.acc(x);
          const T* pg2 = gamma.data();
          for (int64_t i = 0; i < B * C; ++i) {
            const T g = pg2[i];
            const T* dy = pdy + i * N;
            T* dx = gx.data() + i * N;
            for (int64_t j = 0; j < N; ++j) dx[j] += dy[j] * g;
          }
        }
        if (gamma.requires_grad()) {
          auto& gg = gm.acc(gamma);
          const T* px2 = x.data();
          for (int64_t i = 0; i < B * C; ++i) {
            const T* dy = pdy + i * N;
            const T* xc = px2 + i * N;
            T acc = T(0);
            for (int64_t j = 0; j < N; ++j) acc += dy[j] * xc[j];
            gg[size_t(i)] += acc;
          }
        }
        if (beta.requires_grad()) {
          auto& gb = gm.acc(beta);
          for (int64_t i = 0; i < B * C; ++i) {
            const T* dy = pdy + i * N;
            T acc = T(0);
            for (int64_t j = 0; j < N; ++j) acc += dy[j];
            gb[size_t(i)] += acc;
          }
        }
      });
  return out;
}

/// Adaptive instance normalization: normalize, then per-channel affine from
/// an external condition.
template <typename T>
Tensor<T> adain(const Tensor<T>& x, const Tensor<T>& gamma,
                const Tensor<T>& beta, T eps = T(1e-5)) {
  return channel_affine(instance_norm(x, eps), gamma, beta);
}

/// Channel-broadcast product: x is [B x C x H x W], m is [B x 1 x H x W].
template <typename T>
Tensor<T> broadcast_mul_channel(const Tensor<T>& x, const Tensor<T>& m) {
  check(x.ndim() == 4 && m.ndim() == 4, "broadcast_mul_channel: need 4-d");
  const int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  check(m.dim(0) == B && m.dim(1) == 1 && m.dim(2) == x.dim(2) &&
            m.dim(3) == x.dim(3),
        "broadcast_mul_channel: map shape ", shape_str(m.shape()),
        " does not broadcast over ", shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const T* px = x.data();
  const T* pm = m.data();
  T* po = out.mutable_data();
  for (int64_t b = 0; b < B; ++b) {
    const T* mb = pm + b * N;
    for (int64_t c = 0; c < C; ++c) {
      const T* xc = px + (b * C + c) * N;
      T* oc = po + (b * C + c) * N;
      for (int64_t j = 0; j < N; ++j) oc[j] = xc[j] * mb[j];
    }
  }
  detail::record_if_needed(
      "broadcast_mul_channel", x.requires_grad() || m.requires_grad(), out,
      [x, m, out, B, C, N](GradMap<T>& gm) {
        const auto* og = gm.find(out);
        if (!og) return;
        const T* pdy = og->data();
        if (x.requires_grad()) {
          auto& gx = gm.acc(x);
          const T* pm2 = m.data();
          for (int64_t b = 0; b < B; ++b) {
            const T* mb = pm2 + b * N;
            for (int64_t c = 0; c < C; ++c) {
              const T* dy = pdy + (b * C + c) * N;
              T* dx = gx.data() + (b * C + c) * N;
              for (int64_t j = 0; j < N; ++j) dx[j] += dy[j] * mb[j];
            }
          }
        }
        if (m.requires_grad()) {
          auto& gmap = gm.acc(m);
          const T* px2 = x.data();
          for (int64_t b = 0; b < B; ++b) {
            T* dm = gmap.data() + b * N;
            for (int64_t c = 0; c < C; ++c) {
              const T* dy = pdy + (b * C + c) * N;
              const T* xc = px2 + (b * C + c) * N;
              for (int64_t j = 0; j < N; ++j) dm[j] += dy[j] * xc[j];
            }
          }
        }
      });
  return out;
}

}  // namespace daegan
