#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "daegan/conv.hpp"
#include "daegan/ops.hpp"

namespace daegan {

/// Network construction parameters shared by all four nets. Widths follow
/// min(base_width * 2^level, max_width); encoder depth is the largest d <= 4
/// with resolution divisible by 2^d and a bottleneck of at least 2 pixels.
struct ArchConfig {
  int64_t resolution = 64;
  int64_t d_p = 128;
  int64_t base_width = 32;
  int64_t max_width = 96;
  bool spectral_norm = true;
};

inline int64_t net_depth(int64_t resolution) {
  check(resolution >= 8 && resolution % 4 == 0,
        "net_depth: resolution must be >= 8 and divisible by 4, got ",
        resolution);
  int64_t d = 0;
  while (d < 4 && resolution % (int64_t(1) << (d + 1)) == 0 &&
         (resolution >> (d + 1)) >= 2)
    ++d;
  check(d >= 2, "net_depth: resolution ", resolution,
        " cannot support the multi-scale heads");
  return d;
}

inline int64_t level_width(const ArchConfig& cfg, int64_t level) {
  const int64_t w = cfg.base_width << level;
  return std::min(w, cfg.max_width);
}

/// Owns the named parameters and persistent buffers of one network, in
/// registration order. That order is the single source of truth for
/// optimizer state layout and checkpoint layout, so construction must be
/// deterministic.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>>> buffers;

  Tensor<T> add_param(std::string name, Tensor<T> t) {
    t.set_requires_grad(true);
    params.emplace_back(std::move(name), t);
    return t;
  }

  Tensor<T> add_buffer(std::string name, Tensor<T> t) {
    buffers.emplace_back(std::move(name), t);
    return t;
  }

  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return &t;
    for (auto& [n, t] : buffers)
      if (n == name) return &t;
    return nullptr;
  }

  void set_trainable(bool on) {
    for (auto& [n, t] : params) t.set_requires_grad(on);
  }

  void zero_grads() {
    for (auto& [n, t] : params)
      if (t.has_grad()) t.zero_grad();
  }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
  }
};

namespace detail {

template <typename T>
Tensor<T> he_normal(Shape shape, int64_t fan_in, Rng& rng, T gain) {
  Tensor<T> t = Tensor<T>::uninit(shape);
  const T std_dev = gain * std::sqrt(T(2) / T(fan_in));
  T* p = t.mutable_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = T(rng.normal()) * std_dev;
  return t;
}

// One Miyato-style power iteration on the flattened weight, operating on raw
// buffers outside the autodiff graph.
template <typename T>
void power_iterate(const T* w, int64_t rows, int64_t cols, T* u,
                   std::vector<T>& v) {
  const T tiny = T(1e-12);
  v.assign(size_t(cols), T(0));
  for (int64_t r = 0; r < rows; ++r) {
    const T ur = u[r];
    const T* wr = w + r * cols;
    for (int64_t c = 0; c < cols; ++c) v[size_t(c)] += ur * wr[c];
  }
  T vn = T(0);
  for (T x : v) vn += x * x;
  vn = std::sqrt(vn) + tiny;
  for (T& x : v) x /= vn;
  std::vector<T> un(size_t(rows), T(0));
  for (int64_t r = 0; r < rows; ++r) {
    const T* wr = w + r * cols;
    T acc = T(0);
    for (int64_t c = 0; c < cols; ++c) acc += wr[c] * v[size_t(c)];
    un[size_t(r)] = acc;
  }
  T un_norm = T(0);
  for (T x : un) un_norm += x * x;
  un_norm = std::sqrt(un_norm) + tiny;
  for (int64_t r = 0; r < rows; ++r) u[r] = un[size_t(r)] / un_norm;
}

// sigma = u^T W v recorded through the graph so the normalized weight gets
// the full spectral-norm gradient, with u and v held constant.
template <typename T>
Tensor<T> sn_scaled_weight(const Tensor<T>& w, Tensor<T>& u_buf,
                           bool update_u, std::vector<T>& v_scratch) {
  const int64_t rows = w.dim(0);
  const int64_t cols = w.numel() / rows;
  if (update_u) {
    power_iterate(w.data(), rows, cols, u_buf.mutable_data(), v_scratch);
  } else {
    // recompute v from the stored u without touching it
    std::vector<T> utmp(u_buf.data(), u_buf.data() + rows);
    power_iterate(w.data(), rows, cols, utmp.data(), v_scratch);
  }
  Tensor<T> v_row = Tensor<T>::from({1, cols}, std::vector<T>(v_scratch));
  Tensor<T> wf = reshape(w, {rows, cols});
  Tensor<T> wv = reshape(linear(wf, v_row, Tensor<T>()), {rows});
  Tensor<T> u_const = Tensor<T>::from({rows}, std::vector<T>(
      u_buf.data(), u_buf.data() + rows));
  Tensor<T> sigma = sum_all(mul(wv, u_const));
  return scale_by(w, reciprocal(sigma));
}

}  // namespace detail

/// Convolution layer owning weight and bias, with optional spectral
/// normalization of the weight (one power iteration per update-enabled
/// forward; the u vector persists as a checkpoint buffer).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamRegistry<T>& reg, const std::string& name, int64_t cin,
         int64_t cout, int64_t k, int64_t stride, int64_t pad, Rng& rng,
         bool spectral = false, T init_gain = T(1))
      : stride_(stride), pad_(pad), spectral_(spectral) {
    w_ = reg.add_param(name + ".w",
                       detail::he_normal<T>({cout, cin, k, k}, cin * k * k,
                                            rng, init_gain));
    b_ = reg.add_param(name + ".b", Tensor<T>::zeros({cout}));
    if (spectral_) {
      Tensor<T> u = Tensor<T>::uninit({cout});
      T norm = T(0);
      for (int64_t i = 0; i < cout; ++i) {
        u.mutable_data()[i] = T(rng.normal());
        norm += u.data()[i] * u.data()[i];
      }
      norm = std::sqrt(norm) + T(1e-12);
      for (int64_t i = 0; i < cout; ++i) u.mutable_data()[i] /= norm;
      u_ = reg.add_buffer(name + ".u", u);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) {
    return conv2d(x, effective_weight(), b_, stride_, pad_);
  }

  void set_sn_update(bool on) { sn_update_ = on; }
  const Tensor<T>& weight() const { return w_; }
  const Tensor<T>& bias() const { return b_; }
  bool spectral() const { return spectral_; }

  Tensor<T> effective_weight() {
    if (!spectral_) return w_;
    return detail::sn_scaled_weight(w_, u_, sn_update_, v_scratch_);
  }

 private:
  Tensor<T> w_, b_, u_;
  std::vector<T> v_scratch_;
  int64_t stride_ = 1, pad_ = 0;
  bool spectral_ = false;
  bool sn_update_ = false;
};

/// Fully connected layer, optionally spectral-normalized like Conv2d.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry<T>& reg, const std::string& name, int64_t din,
         int64_t dout, Rng& rng, bool spectral = false, T init_gain = T(1))
      : spectral_(spectral) {
    w_ = reg.add_param(name + ".w",
                       detail::he_normal<T>({dout, din}, din, rng, init_gain));
    b_ = reg.add_param(name + ".b", Tensor<T>::zeros({dout}));
    if (spectral_) {
      Tensor<T> u = Tensor<T>::uninit({dout});
      T norm = T(0);
      for (int64_t i = 0; i < dout; ++i) {
        u.mutable_data()[i] = T(rng.normal());
        norm += u.data()[i] * u.data()[i];
      }
      norm = std::sqrt(norm) + T(1e-12);
      for (int64_t i = 0; i < dout; ++i) u.mutable_data()[i] /= norm;
      u_ = reg.add_buffer(name + ".u", u);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x) {
    return linear(x, effective_weight(), b_);
  }

  void set_sn_update(bool on) { sn_update_ = on; }
  const Tensor<T>& weight() const { return w_; }
  const Tensor<T>& bias() const { return b_; }

  Tensor<T> effective_weight() {
    if (!spectral_) return w_;
    return detail::sn_scaled_weight(w_, u_, sn_update_, v_scratch_);
  }

 private:
  Tensor<T> w_, b_, u_;
  std::vector<T> v_scratch_;
  bool spectral_ = false;
  bool sn_update_ = false;
};

/// Self-attention over spatial positions with a learned residual gate
/// initialized to zero, so a fresh block is the identity map.
template <typename T>
class SelfAttention2d {
 public:
  SelfAttention2d() = default;
  SelfAttention2d(ParamRegistry<T>& reg, const std::string& name,
                  int64_t channels, Rng& rng)
      : channels_(channels) {
    const int64_t inner = std::max<int64_t>(1, channels / 8);
    query_ = Conv2d<T>(reg, name + ".q", channels, inner, 1, 1, 0, rng);
    key_ = Conv2d<T>(reg, name + ".k", channels, inner, 1, 1, 0, rng);
    value_ = Conv2d<T>(reg, name + ".v", channels, channels, 1, 1, 0, rng);
    gamma_ = reg.add_param(name + ".gamma", Tensor<T>::zeros({1}));
  }

  Tensor<T> operator()(const Tensor<T>& x) {
    check(x.ndim() == 4 && x.dim(1) == channels_,
          "self_attention: expected [B x ", channels_, " x H x W], got ",
          shape_str(x.shape()));
    const int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int64_t N = H * W;
    const int64_t inner = std::max<int64_t>(1, channels_ / 8);
    Tensor<T> q = reshape(query_(x), {B, inner, N});
    Tensor<T> k = reshape(key_(x), {B, inner, N});
    Tensor<T> v = reshape(value_(x), {B, channels_, N});
    Tensor<T> attn = softmax_lastdim(matmul(transpose_last2(q), k));
    Tensor<T> gathered = matmul(v, transpose_last2(attn));
    Tensor<T> res = reshape(gathered, {B, channels_, H, W});
    return add(x, scale_by(res, gamma_));
  }

  /// Attention matrix alone, for inspection in tests.
  Tensor<T> attention_matrix(const Tensor<T>& x) {
    const int64_t B = x.dim(0), N = x.dim(2) * x.dim(3);
    const int64_t inner = std::max<int64_t>(1, channels_ / 8);
    Tensor<T> q = reshape(query_(x), {B, inner, N});
    Tensor<T> k = reshape(key_(x), {B, inner, N});
    return softmax_lastdim(matmul(transpose_last2(q), k));
  }

  const Tensor<T>& gamma() const { return gamma_; }
  Conv2d<T>& query() { return query_; }
  Conv2d<T>& key() { return key_; }
  Conv2d<T>& value() { return value_; }

 private:
  Conv2d<T> query_, key_, value_;
  Tensor<T> gamma_;
  int64_t channels_ = 0;
};

}  // namespace daegan
