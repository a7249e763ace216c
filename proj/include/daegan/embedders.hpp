#pragma once

#include <string>
#include <vector>

#include "daegan/layers.hpp"
#include "daegan/warp.hpp"

namespace daegan {

/// Eq. 3: mean absolute difference over every pixel and channel.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& x, const Tensor<T>& x_hat) {
  check(x.shape() == x_hat.shape(), "reconstruction_loss: shape mismatch ",
        shape_str(x.shape()), " vs ", shape_str(x_hat.shape()));
  return mean_all(abs_val(sub(x, x_hat)));
}

/// Face embedder F. One shared encoder-decoder trunk is applied to each
/// reference frame, emitting a displacement field (tanh, scaled to
/// +-max_disp pixels) and a nonnegative attention map (softplus) per frame;
/// the embedded face is the Eq. 1 fusion of the warped frames.
template <typename T>
class FaceEmbedder {
 public:
  struct FrameOut {
    Tensor<T> field;
    Tensor<T> attention;
  };
  struct Output {
    Tensor<T> f_hat;
    std::vector<Tensor<T>> fields;
    std::vector<Tensor<T>> attentions;
  };

  FaceEmbedder() = default;

  FaceEmbedder(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
    depth_ = net_depth(cfg.resolution);
    max_disp_ = T(0.35) * T(cfg.resolution);
    int64_t c = 3;
    for (int64_t i = 0; i < depth_; ++i) {
      const int64_t w = level_width(cfg, i);
      enc_.emplace_back(reg_, "F.enc" + std::to_string(i), c, w, 3, 2, 1,
                        rng);
      c = w;
    }
    for (int64_t i = depth_ - 1; i >= 0; --i) {
      const int64_t w = i == 0 ? level_width(cfg, 0) : level_width(cfg, i - 1);
      dec_.emplace_back(reg_, "F.dec" + std::to_string(depth_ - 1 - i), c, w,
                        3, 1, 1, rng);
      c = w;
    }
    flow_head_ = Conv2d<T>(reg_, "F.flow", c, 2, 3, 1, 1, rng, false,
                           T(0.2));
    att_head_ = Conv2d<T>(reg_, "F.att", c, 1, 3, 1, 1, rng, false, T(0.2));
  }

  /// Field and attention for a single frame batch [B x 3 x H x W].
  FrameOut frame_forward(const Tensor<T>& frame) {
    check(frame.ndim() == 4 && frame.dim(1) == 3 &&
              frame.dim(2) == cfg_.resolution &&
              frame.dim(3) == cfg_.resolution,
          "face_embed: expected [B x 3 x ", cfg_.resolution, " x ",
          cfg_.resolution, "], got ", shape_str(frame.shape()));
    Tensor<T> x = frame;
    for (auto& conv : enc_)
      x = leaky_relu(instance_norm(conv(x)), T(0.2));
    for (auto& conv : dec_) {
      x = upsample(x, 2, UpsampleMode::nearest);
      x = leaky_relu(instance_norm(conv(x)), T(0.2));
    }
    FrameOut out;
    out.field = mul_scalar(tanh_act(flow_head_(x)), max_disp_);
    out.attention = softplus(att_head_(x));
    return out;
  }

  /// Eq. 1 over K reference frames (each [B x 3 x H x W], same shape).
  Output embed(const std::vector<Tensor<T>>& frames) {
    check(!frames.empty(), "face_embed: need at least one frame");
    for (const auto& f : frames)
      check(f.shape() == frames[0].shape(),
            "face_embed: mixed frame resolutions, ", shape_str(f.shape()),
            " vs ", shape_str(frames[0].shape()));
    Output out;
    for (const auto& f : frames) {
      FrameOut fo = frame_forward(f);
      out.fields.push_back(fo.field);
      out.attentions.push_back(fo.attention);
    }
    out.f_hat = fuse_embedded_face(frames, out.fields, out.attentions);
    return out;
  }

  ParamRegistry<T>& reg() { return reg_; }
  const ArchConfig& config() const { return cfg_; }
  T max_disp() const { return max_disp_; }

 private:
  ArchConfig cfg_;
  ParamRegistry<T> reg_;
  std::vector<Conv2d<T>> enc_;
  std::vector<Conv2d<T>> dec_;
  Conv2d<T> flow_head_, att_head_;
  int64_t depth_ = 0;
  T max_disp_ = T(0);
};

/// Pose embedder P. The encoder reduces the driving frame to the pose code
/// p_hat (the frame alone: the embedded face never enters the encoder); the
/// decoder expands p_hat and emits T_inv at quarter, R_low at half and
/// R_high at full resolution. Eq. 2 assembles the reconstruction.
template <typename T>
class PoseEmbedder {
 public:
  struct Heads {
    Tensor<T> t_inv;
    Tensor<T> r_low;
    Tensor<T> r_high;
  };
  struct Output {
    Tensor<T> pose_code;
    Tensor<T> t_inv;
    Tensor<T> r_low;
    Tensor<T> r_high;
    Tensor<T> x_hat;
  };

  PoseEmbedder() = default;

  PoseEmbedder(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
    depth_ = net_depth(cfg.resolution);
    max_disp_ = T(0.35) * T(cfg.resolution);
    bottom_ = cfg.resolution >> depth_;
    int64_t c = 3;
    for (int64_t i = 0; i < depth_; ++i) {
      const int64_t w = level_width(cfg, i);
      enc_.emplace_back(reg_, "P.enc" + std::to_string(i), c, w, 3, 2, 1,
                        rng);
      c = w;
    }
    bottom_ch_ = c;
    to_code_ = Linear<T>(reg_, "P.to_code", c * bottom_ * bottom_, cfg.d_p,
                         rng);
    from_code_ = Linear<T>(reg_, "P.from_code", cfg.d_p,
                           c * bottom_ * bottom_, rng);
    for (int64_t i = depth_ - 1; i >= 0; --i) {
      const int64_t w = i == 0 ? level_width(cfg, 0) : level_width(cfg, i - 1);
      dec_.emplace_back(reg_, "P.dec" + std::to_string(depth_ - 1 - i), c, w,
                        3, 1, 1, rng);
      dec_widths_.push_back(w);
      c = w;
    }
    // trunk widths at the three head resolutions (quarter, half, full)
    const int64_t w_quarter =
        depth_ == 2 ? bottom_ch_ : dec_widths_[size_t(depth_ - 3)];
    const int64_t w_half = dec_widths_[size_t(depth_ - 2)];
    const int64_t w_full = dec_widths_[size_t(depth_ - 1)];
    tinv_head_ = Conv2d<T>(reg_, "P.tinv", w_quarter, 2, 3, 1, 1, rng, false,
                           T(0.2));
    rlow_head_ = Conv2d<T>(reg_, "P.rlow", w_half, 3, 3, 1, 1, rng, false,
                           T(0.2));
    rhigh_head_ = Conv2d<T>(reg_, "P.rhigh", w_full, 3, 3, 1, 1, rng, false,
                            T(0.2));
  }

  /// Pose code from the driving frame alone.
  Tensor<T> encode(const Tensor<T>& frame) {
    check(frame.ndim() == 4 && frame.dim(1) == 3 &&
              frame.dim(2) == cfg_.resolution &&
              frame.dim(3) == cfg_.resolution,
          "pose_embed: expected [B x 3 x ", cfg_.resolution, " x ",
          cfg_.resolution, "], got ", shape_str(frame.shape()));
    Tensor<T> x = frame;
    for (auto& conv : enc_)
      x = leaky_relu(instance_norm(conv(x)), T(0.2));
    const int64_t B = x.dim(0);
    return to_code_(reshape(x, {B, bottom_ch_ * bottom_ * bottom_}));
  }

  /// Multi-scale decoder outputs from a pose code [B x d_p].
  Heads decode(const Tensor<T>& pose_code) {
    check(pose_code.ndim() == 2 && pose_code.dim(1) == cfg_.d_p,
          "pose_embed: pose code must be [B x ", cfg_.d_p, "], got ",
          shape_str(pose_code.shape()));
    const int64_t B = pose_code.dim(0);
    Tensor<T> x = leaky_relu(
        reshape(from_code_(pose_code), {B, bottom_ch_, bottom_, bottom_}),
        T(0.2));
    Heads heads;
    if (depth_ == 2) heads.t_inv = tinv_head_(x);
    for (int64_t i = 0; i < depth_; ++i) {
      x = upsample(x, 2, UpsampleMode::nearest);
      x = leaky_relu(instance_norm(dec_[size_t(i)](x)), T(0.2));
      if (i == depth_ - 3) heads.t_inv = tinv_head_(x);
      if (i == depth_ - 2) heads.r_low = rlow_head_(x);
      if (i == depth_ - 1) heads.r_high = rhigh_head_(x);
    }
    heads.t_inv = mul_scalar(tanh_act(heads.t_inv), max_disp_);
    return heads;
  }

  /// Full pose_embed: p_hat, decoder heads, and the Eq. 2 reconstruction.
  Output operator()(const Tensor<T>& frame, const Tensor<T>& f_hat) {
    check(f_hat.shape() == frame.shape(),
          "pose_embed: frame and embedded face differ, ",
          shape_str(frame.shape()), " vs ", shape_str(f_hat.shape()));
    Output out;
    out.pose_code = encode(frame);
    Heads heads = decode(out.pose_code);
    out.t_inv = heads.t_inv;
    out.r_low = heads.r_low;
    out.r_high = heads.r_high;
    out.x_hat = compose_multiscale(f_hat, out.t_inv, out.r_low, out.r_high);
    return out;
  }

  ParamRegistry<T>& reg() { return reg_; }
  const ArchConfig& config() const { return cfg_; }

 private:
  ArchConfig cfg_;
  ParamRegistry<T> reg_;
  std::vector<Conv2d<T>> enc_;
  std::vector<Conv2d<T>> dec_;
  std::vector<int64_t> dec_widths_;
  Linear<T> to_code_, from_code_;
  Conv2d<T> tinv_head_, rlow_head_, rhigh_head_;
  int64_t depth_ = 0, bottom_ = 0, bottom_ch_ = 0;
  T max_disp_ = T(0);
};

/// Eq. 5 for one batch: L_REC on the driving frame plus lambda_s times the
/// smoothness of every field (the K forward fields and T_inv).
template <typename T>
struct EmbedderLoss {
  Tensor<T> total;
  Tensor<T> l_rec;
  Tensor<T> l_s;
};

template <typename T>
EmbedderLoss<T> embedder_objective(FaceEmbedder<T>& F, PoseEmbedder<T>& P,
                                   const std::vector<Tensor<T>>& references,
                                   const Tensor<T>& driving, T lambda_s) {
  typename FaceEmbedder<T>::Output fo = F.embed(references);
  typename PoseEmbedder<T>::Output po = P(driving, fo.f_hat);
  EmbedderLoss<T> loss;
  loss.l_rec = reconstruction_loss(driving, po.x_hat);
  std::vector<Tensor<T>> fields = fo.fields;
  fields.push_back(po.t_inv);
  loss.l_s = tv_smoothness(fields);
  loss.total = lambda_s == T(0)
                   ? loss.l_rec
                   : add(loss.l_rec, mul_scalar(loss.l_s, lambda_s));
  return loss;
}

}  // namespace daegan
