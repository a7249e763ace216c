#pragma once

#include <cstdint>
#include <vector>

#include "daegan/embedders.hpp"
#include "daegan/gan.hpp"
#include "daegan/gradcheck.hpp"

namespace daegan {

namespace detail {

// Random values with |x| in [lo, hi]; keeps probes away from the kinks of
// relu, abs, and friends.
inline Tensor<double> signed_away_from_zero(const Shape& s, Rng& rng,
                                            double lo, double hi) {
  Tensor<double> t = Tensor<double>::uninit(s);
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(lo, hi);
    t.mutable_data()[i] = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return t;
}

inline Tensor<double> positive_values(const Shape& s, Rng& rng, double lo,
                                      double hi) {
  Tensor<double> t = Tensor<double>::uninit(s);
  for (int64_t i = 0; i < t.numel(); ++i)
    t.mutable_data()[i] = rng.uniform(lo, hi);
  return t;
}

// Displacements that keep every sampled source coordinate well clear of
// integer lattice lines, where bilinear weights are not differentiable.
inline Tensor<double> safe_field(const Shape& s, Rng& rng) {
  return signed_away_from_zero(s, rng, 0.2, 0.45);
}

}  // namespace detail

/// Builds the full op-by-op gradient sweep: every differentiable primitive
/// against central differences in 64-bit, plus whole-model probes through
/// the embedder and GAN objectives. Consumers compare each case's returned
/// worst relative error against its `tol`.
inline std::vector<GradCheckCase> standard_gradcheck_cases(uint64_t seed = 0) {
  using detail::positive_values;
  using detail::safe_field;
  using detail::signed_away_from_zero;
  using V = std::vector<Tensor<double>>;

  std::vector<GradCheckCase> cases;
  uint64_t stream = seed * 0x9e3779b97f4a7c15ull;
  auto add_case = [&](std::string name, std::function<double(uint64_t)> run,
                      double tol = 1e-4) {
    const uint64_t case_seed = ++stream;
    cases.push_back({std::move(name), tol,
                     [run = std::move(run), case_seed]() {
                       return run(case_seed);
                     }});
  };

  add_case("add", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(add(in[0], in[1]), in[0])); },
        {a, b});
  });

  add_case("sub", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(sub(in[0], in[1]), in[1])); },
        {a, b});
  });

  add_case("mul", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(in[0], in[1])); }, {a, b});
  });

  add_case("div", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = signed_away_from_zero({2, 3}, rng, 0.4, 1.5);
    return grad_check<double>(
        [](const V& in) { return sum_all(div(in[0], in[1])); }, {a, b});
  });

  add_case("neg", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(neg(in[0]), in[0])); }, {a});
  });

  add_case("add_scalar", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(add_scalar(in[0], 0.7), in[0])); },
        {a});
  });

  add_case("mul_scalar", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(mul_scalar(in[0], 1.3), in[0])); },
        {a});
  });

  add_case("scale_by", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3}, rng);
    auto s = Tensor<double>::randn({1}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(scale_by(in[0], in[1]), in[0])); },
        {x, s});
  });

  add_case("reciprocal", [](uint64_t cs) {
    Rng rng(cs);
    auto a = signed_away_from_zero({2, 3}, rng, 0.4, 1.5);
    return grad_check<double>(
        [](const V& in) { return sum_all(reciprocal(in[0])); }, {a});
  });

  add_case("abs", [](uint64_t cs) {
    Rng rng(cs);
    auto a = signed_away_from_zero({2, 3}, rng, 0.2, 1.0);
    return grad_check<double>(
        [](const V& in) { return sum_all(abs_val(in[0])); }, {a});
  });

  add_case("relu", [](uint64_t cs) {
    Rng rng(cs);
    auto a = signed_away_from_zero({2, 3}, rng, 0.2, 1.0);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(relu(in[0]), in[0])); }, {a});
  });

  add_case("leaky_relu", [](uint64_t cs) {
    Rng rng(cs);
    auto a = signed_away_from_zero({2, 3}, rng, 0.2, 1.0);
    return grad_check<double>(
        [](const V& in) { return sum_all(leaky_relu(in[0], 0.2)); }, {a});
  });

  add_case("tanh", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(tanh_act(in[0])); }, {a});
  });

  add_case("sigmoid", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(sigmoid(in[0])); }, {a});
  });

  add_case("softplus", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(softplus(in[0])); }, {a});
  });

  add_case("sum_all", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return mul(sum_all(in[0]), sum_all(in[0])); }, {a});
  });

  add_case("mean_all", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return mul(mean_all(in[0]), mean_all(in[0])); }, {a});
  });

  add_case("reshape", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({3, 2}, rng);
    return grad_check<double>(
        [](const V& in) {
          return sum_all(mul(reshape(in[0], {6}), reshape(in[1], {6})));
        },
        {a, b});
  });

  add_case("transpose_last2", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3, 4}, rng);
    auto b = Tensor<double>::randn({2, 4, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return sum_all(mul(transpose_last2(in[0]), in[1])); },
        {a, b});
  });

  add_case("matmul_2d_lhs", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3, 4}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = matmul(in[0], in[1]);
          return mean_all(mul(y, y));
        },
        {a, b});
  });

  add_case("matmul_3d_lhs", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3, 4}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = matmul(in[0], in[1]);
          return mean_all(mul(y, y));
        },
        {a, b});
  });

  add_case("softmax", [](uint64_t cs) {
    Rng rng(cs);
    auto a = Tensor<double>::randn({2, 5}, rng);
    auto w = Tensor<double>::randn({2, 5}, rng);
    return grad_check<double>(
        [w](const V& in) { return sum_all(mul(softmax_lastdim(in[0]), w)); },
        {a});
  });

  add_case("linear", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({3, 4}, rng);
    auto w = Tensor<double>::randn({2, 4}, rng);
    auto b = Tensor<double>::randn({2}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = linear(in[0], in[1], in[2]);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  add_case("linear_no_bias", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({3, 4}, rng);
    auto w = Tensor<double>::randn({2, 4}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = linear(in[0], in[1], Tensor<double>());
          return mean_all(mul(y, y));
        },
        {x, w});
  });

  add_case("instance_norm", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3, 4, 4}, rng);
    auto w = Tensor<double>::randn({2, 3, 4, 4}, rng);
    return grad_check<double>(
        [w](const V& in) { return sum_all(mul(instance_norm(in[0]), w)); },
        {x});
  });

  add_case("channel_affine", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3, 2, 2}, rng);
    auto g = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) {
          return sum_all(mul(channel_affine(in[0], in[1], in[2]), in[0]));
        },
        {x, g, b});
  });

  add_case("adain", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3, 3, 3}, rng);
    auto g = Tensor<double>::randn({2, 3}, rng);
    auto b = Tensor<double>::randn({2, 3}, rng);
    return grad_check<double>(
        [](const V& in) {
          return mean_all(mul(adain(in[0], in[1], in[2]), in[0]));
        },
        {x, g, b});
  });

  add_case("broadcast_mul_channel", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3, 2, 2}, rng);
    auto m = Tensor<double>::randn({2, 1, 2, 2}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = broadcast_mul_channel(in[0], in[1]);
          return sum_all(mul(y, in[0]));
        },
        {x, m});
  });

  add_case("conv2d_s1p0", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({1, 2, 5, 5}, rng);
    auto w = Tensor<double>::randn({3, 2, 3, 3}, rng);
    auto b = Tensor<double>::randn({3}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = conv2d(in[0], in[1], in[2], 1, 0);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  add_case("conv2d_s2p1", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 2, 5, 5}, rng);
    auto w = Tensor<double>::randn({2, 2, 3, 3}, rng);
    auto b = Tensor<double>::randn({2}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = conv2d(in[0], in[1], in[2], 2, 1);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  add_case("conv2d_k1", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({1, 3, 4, 4}, rng);
    auto w = Tensor<double>::randn({2, 3, 1, 1}, rng);
    auto b = Tensor<double>::randn({2}, rng);
    return grad_check<double>(
        [](const V& in) {
          auto y = conv2d(in[0], in[1], in[2], 1, 0);
          return mean_all(mul(y, y));
        },
        {x, w, b});
  });

  add_case("upsample_nearest", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({1, 2, 3, 3}, rng);
    auto w = Tensor<double>::randn({1, 2, 6, 6}, rng);
    return grad_check<double>(
        [w](const V& in) {
          return sum_all(mul(upsample(in[0], 2, UpsampleMode::nearest), w));
        },
        {x});
  });

  add_case("upsample_bilinear", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({1, 2, 3, 3}, rng);
    auto w = Tensor<double>::randn({1, 2, 6, 6}, rng);
    return grad_check<double>(
        [w](const V& in) {
          return sum_all(mul(upsample(in[0], 2, UpsampleMode::bilinear), w));
        },
        {x});
  });

  add_case("grid_sample", [](uint64_t cs) {
    Rng rng(cs);
    auto img = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto field = safe_field({1, 2, 4, 4}, rng);
    auto w = Tensor<double>::randn({1, 2, 4, 4}, rng);
    return grad_check<double>(
        [w](const V& in) {
          return sum_all(mul(grid_sample_bilinear(in[0], in[1]), w));
        },
        {img, field});
  });

  add_case("grid_sample_downscale", [](uint64_t cs) {
    Rng rng(cs);
    auto img = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto field = safe_field({1, 2, 2, 2}, rng);
    auto w = Tensor<double>::randn({1, 2, 2, 2}, rng);
    return grad_check<double>(
        [w](const V& in) {
          return sum_all(mul(grid_sample_bilinear(in[0], in[1]), w));
        },
        {img, field});
  });

  add_case("normalize_attention", [](uint64_t cs) {
    Rng rng(cs);
    auto m0 = positive_values({1, 1, 2, 2}, rng, 0.1, 1.0);
    auto m1 = positive_values({1, 1, 2, 2}, rng, 0.1, 1.0);
    auto m2 = positive_values({1, 1, 2, 2}, rng, 0.1, 1.0);
    auto w0 = Tensor<double>::randn({1, 1, 2, 2}, rng);
    auto w1 = Tensor<double>::randn({1, 1, 2, 2}, rng);
    auto w2 = Tensor<double>::randn({1, 1, 2, 2}, rng);
    return grad_check<double>(
        [&](const V& in) {
          auto out = normalize_attention(V{in[0], in[1], in[2]});
          return sum_all(add(mul(out[0], w0),
                             add(mul(out[1], w1), mul(out[2], w2))));
        },
        {m0, m1, m2});
  });

  add_case("fuse_embedded_face", [](uint64_t cs) {
    Rng rng(cs);
    auto f0 = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto f1 = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto d0 = safe_field({1, 2, 4, 4}, rng);
    auto d1 = safe_field({1, 2, 4, 4}, rng);
    auto a0 = positive_values({1, 1, 4, 4}, rng, 0.1, 1.0);
    auto a1 = positive_values({1, 1, 4, 4}, rng, 0.1, 1.0);
    auto w = Tensor<double>::randn({1, 2, 4, 4}, rng);
    return grad_check<double>(
        [&](const V& in) {
          auto fused = fuse_embedded_face(V{in[0], in[1]}, V{in[2], in[3]},
                                          V{in[4], in[5]});
          return sum_all(mul(fused, w));
        },
        {f0, f1, d0, d1, a0, a1});
  });

  add_case("compose_multiscale", [](uint64_t cs) {
    Rng rng(cs);
    auto f_hat = Tensor<double>::randn({1, 2, 8, 8}, rng);
    auto t_inv = safe_field({1, 2, 2, 2}, rng);
    auto r_low = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto r_high = Tensor<double>::randn({1, 2, 8, 8}, rng);
    auto w = Tensor<double>::randn({1, 2, 8, 8}, rng);
    return grad_check<double>(
        [w](const V& in) {
          return sum_all(
              mul(compose_multiscale(in[0], in[1], in[2], in[3]), w));
        },
        {f_hat, t_inv, r_low, r_high});
  });

  add_case("tv_smoothness", [](uint64_t cs) {
    Rng rng(cs);
    auto f0 = Tensor<double>::randn({1, 2, 3, 4}, rng);
    auto f1 = Tensor<double>::randn({2, 2, 4, 3}, rng);
    return grad_check<double>(
        [](const V& in) { return tv_smoothness(V{in[0], in[1]}); }, {f0, f1});
  });

  add_case("reconstruction_loss", [](uint64_t cs) {
    Rng rng(cs);
    auto x = Tensor<double>::randn({2, 3, 4, 4}, rng);
    auto off = signed_away_from_zero({2, 3, 4, 4}, rng, 0.2, 0.6);
    auto y = Tensor<double>::uninit({2, 3, 4, 4});
    for (int64_t i = 0; i < x.numel(); ++i)
      y.mutable_data()[i] = x.data()[i] + off.data()[i];
    return grad_check<double>(
        [](const V& in) { return reconstruction_loss(in[0], in[1]); }, {x, y});
  });

  add_case("hinge_d_loss", [](uint64_t cs) {
    Rng rng(cs);
    auto real = Tensor<double>::uninit({4});
    auto fake = Tensor<double>::uninit({4});
    auto off_r = signed_away_from_zero({4}, rng, 0.2, 1.0);
    auto off_f = signed_away_from_zero({4}, rng, 0.2, 1.0);
    for (int64_t i = 0; i < 4; ++i) {
      real.mutable_data()[i] = 1.0 + off_r.data()[i];
      fake.mutable_data()[i] = -1.0 + off_f.data()[i];
    }
    return grad_check<double>(
        [](const V& in) { return hinge_d_loss(in[0], in[1]); }, {real, fake});
  });

  add_case("hinge_g_loss", [](uint64_t cs) {
    Rng rng(cs);
    auto fake = Tensor<double>::randn({4}, rng);
    return grad_check<double>(
        [](const V& in) { return hinge_g_loss(in[0]); }, {fake});
  });

  add_case("feature_matching_loss", [](uint64_t cs) {
    Rng rng(cs);
    // only the fake branch carries gradient; the real branch is a constant
    std::vector<Tensor<double>> real, fake;
    for (int l = 0; l < 2; ++l) {
      auto r = Tensor<double>::randn({1, 2, 3, 3}, rng);
      auto off = signed_away_from_zero({1, 2, 3, 3}, rng, 0.2, 0.6);
      auto f = Tensor<double>::uninit({1, 2, 3, 3});
      for (int64_t i = 0; i < r.numel(); ++i)
        f.mutable_data()[i] = r.data()[i] + off.data()[i];
      real.push_back(r);
      fake.push_back(f);
    }
    return grad_check<double>(
        [&](const V& in) {
          return feature_matching_loss(real, V{in[0], in[1]});
        },
        fake);
  });

  add_case("self_attention", [](uint64_t cs) {
    Rng rng(cs);
    ParamRegistry<double> reg;
    SelfAttention2d<double> attn(reg, "a", 8, rng);
    reg.find("a.gamma")->mutable_data()[0] = 0.5;
    auto x = Tensor<double>::randn({1, 8, 3, 3}, rng);
    auto w = Tensor<double>::randn({1, 8, 3, 3}, rng);
    const double via_input = grad_check<double>(
        [&](const V& in) { return sum_all(mul(attn(in[0]), w)); }, {x});
    const double via_params = grad_check_params<double>(
        [&]() { return sum_all(mul(attn(x), w)); }, reg.params);
    return std::max(via_input, via_params);
  });

  add_case(
      "embedder_objective_end_to_end",
      [](uint64_t cs) {
        Rng rng(cs);
        ArchConfig cfg;
        cfg.resolution = 8;
        cfg.d_p = 8;
        cfg.base_width = 4;
        cfg.max_width = 8;
        FaceEmbedder<double> F(cfg, rng);
        PoseEmbedder<double> P(cfg, rng);
        std::vector<Tensor<double>> refs = {
            tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng)),
            tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng))};
        auto driving = tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng));
        std::vector<std::pair<std::string, Tensor<double>>> params =
            F.reg().params;
        params.insert(params.end(), P.reg().params.begin(),
                      P.reg().params.end());
        return grad_check_params<double>(
            [&]() {
              return embedder_objective(F, P, refs, driving, 0.1).total;
            },
            params, 1e-5, 6);
      },
      1e-3);

  add_case(
      "gan_generator_end_to_end",
      [](uint64_t cs) {
        Rng rng(cs);
        ArchConfig cfg;
        cfg.resolution = 8;
        cfg.d_p = 8;
        cfg.base_width = 4;
        cfg.max_width = 8;
        Generator<double> G(cfg, rng);
        Discriminator<double> D(cfg, rng);
        auto f_hat = tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng));
        auto target = tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng));
        auto code = Tensor<double>::randn({1, 8}, rng);
        return grad_check_params<double>(
            [&]() {
              return stage2_objective(G, D, f_hat, code, target, 1.0, 1.0)
                  .l_g_total;
            },
            G.reg().params, 1e-5, 4);
      },
      1e-3);

  add_case(
      "gan_discriminator_end_to_end",
      [](uint64_t cs) {
        Rng rng(cs);
        ArchConfig cfg;
        cfg.resolution = 8;
        cfg.d_p = 8;
        cfg.base_width = 4;
        cfg.max_width = 8;
        Generator<double> G(cfg, rng);
        Discriminator<double> D(cfg, rng);
        auto f_hat = tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng));
        auto target = tanh_act(Tensor<double>::randn({1, 3, 8, 8}, rng));
        auto code = Tensor<double>::randn({1, 8}, rng);
        Tensor<double> x_tilde;
        {
          typename Graph<double>::NoRecord nr;
          x_tilde = G(f_hat, code);
        }
        return grad_check_params<double>(
            [&]() {
              auto real = D(target);
              auto fake = D(x_tilde);
              return hinge_d_loss(real.scores, fake.scores);
            },
            D.reg().params, 1e-5, 4);
      },
      1e-3);

  return cases;
}

}  // namespace daegan
