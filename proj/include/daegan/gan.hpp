#pragma once

#include <string>
#include <vector>

#include "daegan/embedders.hpp"
#include "daegan/layers.hpp"

namespace daegan {

/// Conditional generator G. The embedded face enters through the strided
/// front end; the pose code conditions every AdaIN site via one shared
/// linear layer plus per-site (gamma, beta) heads. Residual middle blocks
/// carry one self-attention module; output is tanh-bounded.
template <typename T>
class Generator {
 public:
  Generator() = default;

  Generator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
    check(cfg.resolution % 4 == 0 && cfg.resolution >= 8,
          "generator: resolution must be >= 8 and divisible by 4, got ",
          cfg.resolution);
    const int64_t w0 = level_width(cfg, 0);
    const int64_t w1 = level_width(cfg, 1);
    gm_width_ = w1;
    front_ = Conv2d<T>(reg_, "G.front", 3, w0, 3, 1, 1, rng);
    down1_ = Conv2d<T>(reg_, "G.down1", w0, w1, 3, 2, 1, rng);
    down2_ = Conv2d<T>(reg_, "G.down2", w1, gm_width_, 3, 2, 1, rng);
    for (int64_t b = 0; b < kResBlocks; ++b) {
      const std::string base = "G.res" + std::to_string(b);
      res_a_.emplace_back(reg_, base + ".c1", gm_width_, gm_width_, 3, 1, 1,
                          rng);
      res_b_.emplace_back(reg_, base + ".c2", gm_width_, gm_width_, 3, 1, 1,
                          rng);
    }
    attn_ = SelfAttention2d<T>(reg_, "G.attn", gm_width_, rng);
    up1_ = Conv2d<T>(reg_, "G.up1", gm_width_, w0, 3, 1, 1, rng);
    up2_ = Conv2d<T>(reg_, "G.up2", w0, w0, 3, 1, 1, rng);
    out_ = Conv2d<T>(reg_, "G.out", w0, 3, 3, 1, 1, rng, false, T(0.5));
    cond_shared_ = Linear<T>(reg_, "G.cond.shared", cfg.d_p, kCondHidden,
                             rng);
    // AdaIN sites in forward order: two per residual block, then the two
    // decoder blocks
    for (int64_t b = 0; b < kResBlocks; ++b) {
      add_site("G.cond.res" + std::to_string(b) + "a", gm_width_, rng);
      add_site("G.cond.res" + std::to_string(b) + "b", gm_width_, rng);
    }
    add_site("G.cond.up1", w0, rng);
    add_site("G.cond.up2", w0, rng);
  }

  Tensor<T> operator()(const Tensor<T>& f_hat, const Tensor<T>& pose_code) {
    check(f_hat.ndim() == 4 && f_hat.dim(1) == 3 &&
              f_hat.dim(2) == cfg_.resolution &&
              f_hat.dim(3) == cfg_.resolution,
          "generate: expected [B x 3 x ", cfg_.resolution, " x ",
          cfg_.resolution, "], got ", shape_str(f_hat.shape()));
    check(pose_code.ndim() == 2 && pose_code.dim(1) == cfg_.d_p,
          "generate: pose code must be [B x ", cfg_.d_p, "], got ",
          shape_str(pose_code.shape()));
    check(pose_code.dim(0) == f_hat.dim(0),
          "generate: batch mismatch between f_hat and pose code");
    Tensor<T> h = relu(cond_shared_(pose_code));
    size_t site = 0;
    auto next_adain = [&](const Tensor<T>& x) {
      Tensor<T> gamma =
          add_scalar(site_gamma_[site](h), T(1));
      Tensor<T> beta = site_beta_[site](h);
      ++site;
      return adain(x, gamma, beta);
    };
    Tensor<T> x = leaky_relu(instance_norm(front_(f_hat)), T(0.2));
    x = leaky_relu(instance_norm(down1_(x)), T(0.2));
    x = leaky_relu(instance_norm(down2_(x)), T(0.2));
    for (int64_t b = 0; b < kResBlocks; ++b) {
      Tensor<T> r = leaky_relu(next_adain(res_a_[size_t(b)](x)), T(0.2));
      r = next_adain(res_b_[size_t(b)](r));
      x = add(x, r);
      if (b == 1) x = attn_(x);
    }
    x = upsample(x, 2, UpsampleMode::nearest);
    x = leaky_relu(next_adain(up1_(x)), T(0.2));
    x = upsample(x, 2, UpsampleMode::nearest);
    x = leaky_relu(next_adain(up2_(x)), T(0.2));
    return tanh_act(out_(x));
  }

  ParamRegistry<T>& reg() { return reg_; }
  SelfAttention2d<T>& attention() { return attn_; }
  const ArchConfig& config() const { return cfg_; }

  static constexpr int64_t kResBlocks = 4;
  static constexpr int64_t kCondHidden = 128;

 private:
  void add_site(const std::string& name, int64_t channels, Rng& rng) {
    site_gamma_.emplace_back(reg_, name + ".g", kCondHidden, channels, rng,
                             false, T(0.2));
    site_beta_.emplace_back(reg_, name + ".b", kCondHidden, channels, rng,
                            false, T(0.2));
  }

  ArchConfig cfg_;
  ParamRegistry<T> reg_;
  Conv2d<T> front_, down1_, down2_, up1_, up2_, out_;
  std::vector<Conv2d<T>> res_a_, res_b_;
  SelfAttention2d<T> attn_;
  Linear<T> cond_shared_;
  std::vector<Linear<T>> site_gamma_, site_beta_;
  int64_t gm_width_ = 0;
};

/// Discriminator D: strided leaky-relu conv stack (spectral-normalized when
/// enabled), exposing each post-activation feature map for L_FM, with a
/// final linear score head.
template <typename T>
class Discriminator {
 public:
  struct Output {
    Tensor<T> scores;  // [B]
    std::vector<Tensor<T>> features;
  };

  Discriminator() = default;

  Discriminator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
    depth_ = net_depth(cfg.resolution);
    const bool sn = cfg.spectral_norm;
    int64_t c = 3;
    for (int64_t i = 0; i < depth_; ++i) {
      const int64_t w = level_width(cfg, i);
      convs_.emplace_back(reg_, "D.conv" + std::to_string(i), c, w, 3, 2, 1,
                          rng, sn);
      c = w;
    }
    const int64_t bottom = cfg.resolution >> depth_;
    head_ = Linear<T>(reg_, "D.head", c * bottom * bottom, 1, rng, sn);
    bottom_ = bottom;
    bottom_ch_ = c;
  }

  Output operator()(const Tensor<T>& x) {
    check(x.ndim() == 4 && x.dim(1) == 3 && x.dim(2) == cfg_.resolution &&
              x.dim(3) == cfg_.resolution,
          "discriminate: expected [B x 3 x ", cfg_.resolution, " x ",
          cfg_.resolution, "], got ", shape_str(x.shape()));
    Output out;
    Tensor<T> h = x;
    for (auto& conv : convs_) {
      h = leaky_relu(conv(h), T(0.2));
      out.features.push_back(h);
    }
    const int64_t B = h.dim(0);
    out.scores = reshape(
        head_(reshape(h, {B, bottom_ch_ * bottom_ * bottom_})), {B});
    return out;
  }

  void set_sn_update(bool on) {
    for (auto& conv : convs_) conv.set_sn_update(on);
    head_.set_sn_update(on);
  }

  ParamRegistry<T>& reg() { return reg_; }
  int64_t feature_count() const { return depth_; }
  std::vector<Conv2d<T>>& convs() { return convs_; }

 private:
  ArchConfig cfg_;
  ParamRegistry<T> reg_;
  std::vector<Conv2d<T>> convs_;
  Linear<T> head_;
  int64_t depth_ = 0, bottom_ = 0, bottom_ch_ = 0;
};

/// Eq. 7 discriminator side: mean relu(1 - D(real)) + mean relu(1 + D(fake)).
template <typename T>
Tensor<T> hinge_d_loss(const Tensor<T>& score_real,
                       const Tensor<T>& score_fake) {
  Tensor<T> real_term = mean_all(relu(add_scalar(neg(score_real), T(1))));
  Tensor<T> fake_term = mean_all(relu(add_scalar(score_fake, T(1))));
  return add(real_term, fake_term);
}

/// Eq. 7 generator side: -mean D(fake).
template <typename T>
Tensor<T> hinge_g_loss(const Tensor<T>& score_fake) {
  return neg(mean_all(score_fake));
}

/// L1 feature matching over discriminator layers; the real-branch features
/// are detached so this loss never trains D.
template <typename T>
Tensor<T> feature_matching_loss(const std::vector<Tensor<T>>& features_real,
                                const std::vector<Tensor<T>>& features_fake) {
  check(features_real.size() == features_fake.size(),
        "feature_matching_loss: ", features_real.size(), " real layers vs ",
        features_fake.size(), " fake layers");
  check(!features_real.empty(), "feature_matching_loss: empty feature lists");
  Tensor<T> total;
  for (size_t l = 0; l < features_real.size(); ++l) {
    check(features_real[l].shape() == features_fake[l].shape(),
          "feature_matching_loss: layer ", l, " shape mismatch ",
          shape_str(features_real[l].shape()), " vs ",
          shape_str(features_fake[l].shape()));
    Tensor<T> layer =
        mean_all(abs_val(sub(features_fake[l], features_real[l].detach())));
    total = l == 0 ? layer : add(total, layer);
  }
  return mul_scalar(total, T(1) / T(features_real.size()));
}

/// Eq. 6 totals for one batch, from precomputed f_hat and pose code.
template <typename T>
struct Stage2Loss {
  Tensor<T> l_d;
  Tensor<T> l_g_total;
  Tensor<T> l_g_adv;
  Tensor<T> l_r;
  Tensor<T> l_fm;
  Tensor<T> x_tilde;
};

template <typename T>
Stage2Loss<T> stage2_objective(Generator<T>& G, Discriminator<T>& D,
                               const Tensor<T>& f_hat,
                               const Tensor<T>& pose_code,
                               const Tensor<T>& target, T lambda_r,
                               T lambda_fm) {
  Stage2Loss<T> loss;
  loss.x_tilde = G(f_hat, pose_code);
  typename Discriminator<T>::Output real = D(target);
  typename Discriminator<T>::Output fake = D(loss.x_tilde);
  loss.l_d = hinge_d_loss(real.scores, fake.scores);
  loss.l_g_adv = hinge_g_loss(fake.scores);
  loss.l_r = reconstruction_loss(target, loss.x_tilde);
  loss.l_fm = feature_matching_loss(real.features, fake.features);
  loss.l_g_total = loss.l_g_adv;
  if (lambda_r != T(0))
    loss.l_g_total = add(loss.l_g_total, mul_scalar(loss.l_r, lambda_r));
  if (lambda_fm != T(0))
    loss.l_g_total = add(loss.l_g_total, mul_scalar(loss.l_fm, lambda_fm));
  return loss;
}

}  // namespace daegan
