#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "daegan/gan.hpp"

using daegan::ArchConfig;
using daegan::Discriminator;
using daegan::Generator;
using daegan::Graph;
using daegan::Rng;
using daegan::SelfAttention2d;
using daegan::Shape;
using daegan::Tensor;

namespace {

ArchConfig tiny_cfg() {
  ArchConfig cfg;
  cfg.resolution = 16;
  cfg.d_p = 8;
  cfg.base_width = 4;
  cfg.max_width = 8;
  return cfg;
}

// top singular value by long power iteration on the raw matrix
double top_singular_value(const double* w, int64_t rows, int64_t cols) {
  std::vector<double> u(size_t(rows), 1.0 / std::sqrt(double(rows)));
  std::vector<double> v(size_t(cols), 0.0);
  for (int iter = 0; iter < 1000; ++iter) {
    std::fill(v.begin(), v.end(), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) v[size_t(c)] += u[size_t(r)] * w[r * cols + c];
    double vn = 0;
    for (double x : v) vn += x * x;
    vn = std::sqrt(vn) + 1e-300;
    for (double& x : v) x /= vn;
    std::vector<double> un(size_t(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (int64_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[size_t(c)];
      un[size_t(r)] = acc;
    }
    double n = 0;
    for (double x : un) n += x * x;
    n = std::sqrt(n) + 1e-300;
    for (int64_t r = 0; r < rows; ++r) u[size_t(r)] = un[size_t(r)] / n;
  }
  double sigma = 0;
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0;
    for (int64_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[size_t(c)];
    sigma += u[size_t(r)] * acc;
  }
  return sigma;
}

}  // namespace

TEST(Generator, ShapeContractAndBound) {
  ArchConfig cfg;
  cfg.resolution = 64;
  cfg.d_p = 128;
  Rng rng(1);
  Generator<float> G(cfg, rng);
  auto fhat = Tensor<float>::randn({1, 3, 64, 64}, rng);
  auto code = Tensor<float>::randn({1, 128}, rng);
  auto out = G(fhat, code);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 64, 64}));
  for (int64_t i = 0; i < out.numel(); ++i) {
    ASSERT_TRUE(std::isfinite(out.data()[i]));
    ASSERT_LE(std::abs(out.data()[i]), 1.0f);
  }
}

TEST(Generator, Deterministic) {
  Rng rng(2);
  Generator<double> G(tiny_cfg(), rng);
  auto fhat = Tensor<double>::randn({2, 3, 16, 16}, rng);
  auto code = Tensor<double>::randn({2, 8}, rng);
  auto a = G(fhat, code);
  auto b = G(fhat, code);
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Generator, PoseCodeSizeMismatchRejected) {
  Rng rng(3);
  Generator<double> G(tiny_cfg(), rng);
  auto fhat = Tensor<double>::zeros({1, 3, 16, 16});
  EXPECT_THROW(G(fhat, Tensor<double>::zeros({1, 5})), std::runtime_error);
}

TEST(Generator, ConditionPathIsLive) {
  Rng rng(4);
  Generator<double> G(tiny_cfg(), rng);
  Discriminator<double> D(tiny_cfg(), rng);
  auto fhat = daegan::tanh_act(Tensor<double>::randn({2, 3, 16, 16}, rng));
  auto target = daegan::tanh_act(Tensor<double>::randn({2, 3, 16, 16}, rng));
  auto code = Tensor<double>::randn({2, 8}, rng);
  code.set_requires_grad(true);
  {
    Graph<double>::Recording rec;
    auto loss = daegan::stage2_objective(G, D, fhat, code, target, 1.0, 1.0);
    Graph<double>::active().backward(loss.l_g_total);
  }
  ASSERT_TRUE(code.has_grad());
  double mx = 0;
  for (double g : code.grad()) mx = std::max(mx, std::abs(g));
  EXPECT_GT(mx, 0.0);
}

TEST(SelfAttention, IdentityAtInit) {
  Rng rng(5);
  daegan::ParamRegistry<double> reg;
  SelfAttention2d<double> attn(reg, "a", 8, rng);
  auto x = Tensor<double>::randn({2, 8, 4, 4}, rng);
  auto y = attn(x);
  for (int64_t i = 0; i < x.numel(); ++i) ASSERT_EQ(y.data()[i], x.data()[i]);
}

TEST(SelfAttention, RowsSumToOne) {
  Rng rng(6);
  daegan::ParamRegistry<double> reg;
  SelfAttention2d<double> attn(reg, "a", 8, rng);
  auto x = Tensor<double>::randn({1, 8, 3, 3}, rng);
  auto m = attn.attention_matrix(x);
  ASSERT_EQ(m.shape(), (Shape{1, 9, 9}));
  for (int64_t r = 0; r < 9; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 9; ++c) s += m.data()[r * 9 + c];
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(SelfAttention, MatchesDenseOracle) {
  Rng rng(7);
  daegan::ParamRegistry<double> reg;
  SelfAttention2d<double> attn(reg, "a", 8, rng);
  // open the residual gate so the attention path contributes
  daegan::Tensor<double>* gamma = reg.find("a.gamma");
  ASSERT_NE(gamma, nullptr);
  gamma->mutable_data()[0] = 0.7;
  auto x = Tensor<double>::randn({1, 8, 2, 2}, rng);
  auto y = attn(x);

  // dense re-computation from the layer's own weights
  const int64_t N = 4, C = 8, inner = 1;
  auto q = attn.query()(x);
  auto k = attn.key()(x);
  auto v = attn.value()(x);
  std::vector<double> scores(size_t(N * N), 0.0);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j) {
      double acc = 0;
      for (int64_t c = 0; c < inner; ++c)
        acc += q.data()[c * N + i] * k.data()[c * N + j];
      scores[size_t(i * N + j)] = acc;
    }
  for (int64_t i = 0; i < N; ++i) {
    double mx = scores[size_t(i * N)];
    for (int64_t j = 1; j < N; ++j)
      mx = std::max(mx, scores[size_t(i * N + j)]);
    double denom = 0;
    for (int64_t j = 0; j < N; ++j) {
      scores[size_t(i * N + j)] = std::exp(scores[size_t(i * N + j)] - mx);
      denom += scores[size_t(i * N + j)];
    }
    for (int64_t j = 0; j < N; ++j) scores[size_t(i * N + j)] /= denom;
  }
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < N; ++i) {
      double acc = 0;
      for (int64_t j = 0; j < N; ++j)
        acc += v.data()[c * N + j] * scores[size_t(i * N + j)];
      const double want = x.data()[c * N + i] + 0.7 * acc;
      EXPECT_NEAR(y.data()[c * N + i], want, 1e-5);
    }
}

TEST(Discriminator, ShapeContractAndDeterminism) {
  Rng rng(8);
  Discriminator<double> D(tiny_cfg(), rng);
  auto x = Tensor<double>::randn({4, 3, 16, 16}, rng);
  auto out = D(x);
  EXPECT_EQ(out.scores.shape(), (Shape{4}));
  EXPECT_EQ(int64_t(out.features.size()), D.feature_count());
  auto out2 = D(x);
  for (int64_t i = 0; i < 4; ++i)
    ASSERT_EQ(out.scores.data()[i], out2.scores.data()[i]);
}

TEST(Discriminator, SpectralNormBoundsSingularValue) {
  ArchConfig cfg = tiny_cfg();
  cfg.spectral_norm = true;
  Rng rng(9);
  Discriminator<double> D(cfg, rng);
  // widen the raw weights so normalization has real work to do
  for (auto& [name, t] : D.reg().params)
    for (int64_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] *= 3.0;
  D.set_sn_update(true);
  auto x = Tensor<double>::randn({1, 3, 16, 16}, rng);
  for (int i = 0; i < 50; ++i) (void)D(x);
  D.set_sn_update(false);
  for (auto& conv : D.convs()) {
    auto w = conv.effective_weight();
    const int64_t rows = w.dim(0);
    const int64_t cols = w.numel() / rows;
    const double sigma = top_singular_value(w.data(), rows, cols);
    EXPECT_LE(sigma, 1.05) << "conv weight not spectrally bounded";
    EXPECT_GT(sigma, 0.5);
  }
}

TEST(Discriminator, NoSpectralNormLeavesWeightsAlone) {
  ArchConfig cfg = tiny_cfg();
  cfg.spectral_norm = false;
  Rng rng(10);
  Discriminator<double> D(cfg, rng);
  auto& conv = D.convs()[0];
  auto w = conv.effective_weight();
  EXPECT_TRUE(w.same_impl(conv.weight()));
}

TEST(HingeLosses, SpecValues) {
  auto s = [](double v) { return Tensor<double>::from({1}, {v}); };
  EXPECT_DOUBLE_EQ(daegan::hinge_d_loss(s(2.0), s(-2.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(daegan::hinge_d_loss(s(0.0), s(0.0)).item(), 2.0);
  EXPECT_DOUBLE_EQ(daegan::hinge_d_loss(s(-1.0), s(1.0)).item(), 4.0);
  EXPECT_DOUBLE_EQ(daegan::hinge_g_loss(s(0.3)).item(), -0.3);
  EXPECT_DOUBLE_EQ(daegan::hinge_g_loss(s(0.0)).item(), 0.0);
  auto pair = Tensor<double>::from({2}, {1.0, -1.0});
  EXPECT_DOUBLE_EQ(daegan::hinge_g_loss(pair).item(), 0.0);
}

TEST(HingeLosses, DLossNonNegativeAndZeroOnlyAtMargin) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = Tensor<double>::randn({3}, rng);
    auto f = Tensor<double>::randn({3}, rng);
    const double ld = daegan::hinge_d_loss(r, f).item();
    EXPECT_GE(ld, 0.0);
    bool margins = true;
    for (int64_t i = 0; i < 3; ++i) {
      if (r.data()[i] < 1.0) margins = false;
      if (f.data()[i] > -1.0) margins = false;
    }
    if (margins) EXPECT_DOUBLE_EQ(ld, 0.0);
    if (ld == 0.0) EXPECT_TRUE(margins);
  }
}

TEST(FeatureMatching, HandCases) {
  Rng rng(12);
  std::vector<Tensor<double>> a = {Tensor<double>::randn({1, 2, 3, 3}, rng)};
  EXPECT_DOUBLE_EQ(daegan::feature_matching_loss(a, a).item(), 0.0);

  std::vector<Tensor<double>> b = {daegan::add_scalar(a[0], 0.2)};
  EXPECT_NEAR(daegan::feature_matching_loss(a, b).item(), 0.2, 1e-12);

  std::vector<Tensor<double>> wrong = {Tensor<double>::randn({1, 2, 2, 2}, rng)};
  EXPECT_THROW(daegan::feature_matching_loss(a, wrong), std::runtime_error);
}

TEST(FeatureMatching, MatchesPerLayerOracle) {
  Rng rng(13);
  std::vector<Tensor<double>> real, fake;
  for (int l = 0; l < 3; ++l) {
    real.push_back(Tensor<double>::randn({2, 2, 4, 4}, rng));
    fake.push_back(Tensor<double>::randn({2, 2, 4, 4}, rng));
  }
  double want = 0;
  for (int l = 0; l < 3; ++l) {
    double acc = 0;
    for (int64_t i = 0; i < real[size_t(l)].numel(); ++i)
      acc += std::abs(fake[size_t(l)].data()[i] - real[size_t(l)].data()[i]);
    want += acc / double(real[size_t(l)].numel());
  }
  want /= 3.0;
  EXPECT_NEAR(daegan::feature_matching_loss(real, fake).item(), want, 1e-6);
}

TEST(FeatureMatching, RealBranchIsDetachedFromD) {
  Rng rng(14);
  Discriminator<double> D(tiny_cfg(), rng);
  auto x = Tensor<double>::randn({1, 3, 16, 16}, rng);
  // fake features are plain constants, so the only conceivable path into D
  // is the real branch, and that branch is detached
  {
    Graph<double>::Recording rec;
    auto real = D(x);
    std::vector<Tensor<double>> fake;
    for (const auto& f : real.features) fake.push_back(f.detach());
    auto loss = daegan::feature_matching_loss(real.features, fake);
    if (loss.requires_grad()) Graph<double>::active().backward(loss);
  }
  for (auto& [name, t] : D.reg().params) EXPECT_FALSE(t.has_grad()) << name;
}

TEST(Stage2Objective, ComponentSum) {
  Rng rng(15);
  Generator<double> G(tiny_cfg(), rng);
  Discriminator<double> D(tiny_cfg(), rng);
  auto fhat = daegan::tanh_act(Tensor<double>::randn({2, 3, 16, 16}, rng));
  auto target = daegan::tanh_act(Tensor<double>::randn({2, 3, 16, 16}, rng));
  auto code = Tensor<double>::randn({2, 8}, rng);
  auto loss = daegan::stage2_objective(G, D, fhat, code, target, 1.0, 1.0);
  const double sum =
      loss.l_g_adv.item() + loss.l_r.item() + loss.l_fm.item();
  EXPECT_NEAR(loss.l_g_total.item(), sum, 1e-6);

  auto pure = daegan::stage2_objective(G, D, fhat, code, target, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(pure.l_g_total.item(), pure.l_g_adv.item());
}
