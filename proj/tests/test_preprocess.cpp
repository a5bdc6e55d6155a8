#include <gtest/gtest.h>

#include <cmath>

#include "decompkan/preprocess.hpp"
#include "oracles.hpp"

using namespace decompkan;

namespace {

AdaptiveNormParams random_adaptive(Rng& rng, std::size_t L) {
  AdaptiveNormParams p = init_adaptive(rng, L, 8);
  // Move away from the identity initialization so every block carries gradient.
  p.norm_head = init_dense(rng, 8, 2);
  p.denorm_out = init_dense(rng, 8, 2);
  return p;
}

}  // namespace

TEST(Revin, NormalizesToZeroMeanUnitStd) {
  const auto [xn, st] = revin_normalize(Tensor2{{1}, {2}, {3}});
  double m = 0, v = 0;
  for (std::size_t t = 0; t < 3; ++t) m += xn(t, 0);
  m /= 3;
  for (std::size_t t = 0; t < 3; ++t) v += (xn(t, 0) - m) * (xn(t, 0) - m);
  EXPECT_NEAR(m, 0.0, 1e-15);
  EXPECT_NEAR(std::sqrt(v / 3), 1.0, 1e-4);  // eps inside the sqrt
  EXPECT_DOUBLE_EQ(st.mu[0], 2.0);
  EXPECT_DOUBLE_EQ(st.sigma[0], std::sqrt(2.0 / 3.0 + kRevinEps));
}

TEST(Revin, ConstantChannelMapsToZeroAndRestoresMean) {
  const auto [xn, st] = revin_normalize(Tensor2{{5}, {5}, {5}});
  for (double v : xn.values()) EXPECT_EQ(v, 0.0);
  EXPECT_GE(st.sigma[0], std::sqrt(st.eps) * 0.999);
  const Tensor2 back = revin_denormalize(xn, st);
  for (double v : back.values()) EXPECT_EQ(v, 5.0);
}

TEST(Revin, DenormalizeHandArithmetic) {
  RevinState st{{1.0}, {2.0}, kRevinEps};
  EXPECT_EQ(revin_denormalize(Tensor2{{1.0}}, st)(0, 0), 3.0);
  const Tensor2 restored = revin_denormalize(Tensor2(4, 1), st);
  for (double v : restored.values()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(revin_denormalize(Tensor2(2, 2), st), ShapeError);
}

TEST(Revin, RoundTripProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 2 + rng.below(50), C = 1 + rng.below(5);
    Tensor2 x = rand_normal(rng, rng.uniform(-100, 100), rng.uniform(0.01, 50), L, C);
    const auto [xn, st] = revin_normalize(x);
    const Tensor2 back = revin_denormalize(xn, st);
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(back[i], x[i], 1e-9);
  }
}

TEST(Adaptive, IdentityAtInitialization) {
  Rng rng(2);
  const AdaptiveNormParams p = init_adaptive(rng, 24);
  const Tensor2 x = rand_normal(rng, 0, 1, 24, 3);
  const AdaptiveResult r = adaptive_forward(x, p);
  EXPECT_EQ(r.x_hat, x);
  const Tensor2 y = rand_normal(rng, 0, 1, 6, 3);
  EXPECT_EQ(adaptive_denorm(y, r.stats, p), y);
}

TEST(Adaptive, ZeroingNormHeadRestoresIdentity) {
  Rng rng(3);
  AdaptiveNormParams p = random_adaptive(rng, 16);
  const Tensor2 x = rand_normal(rng, 0, 1, 16, 2);
  EXPECT_NE(adaptive_forward(x, p).x_hat, x);
  p.norm_head.weight.fill(0.0);
  p.norm_head.bias.fill(0.0);
  const AdaptiveResult r = adaptive_forward(x, p);
  EXPECT_EQ(r.x_hat, x);
  for (double s : r.scale) EXPECT_EQ(s, 1.0);
  for (double b : r.shift) EXPECT_EQ(b, 0.0);
}

TEST(Adaptive, DenormHeadSharesNoWeightsWithNormHead) {
  Rng rng(4);
  AdaptiveNormParams p = random_adaptive(rng, 16);
  const Tensor2 x = rand_normal(rng, 0, 1, 16, 2), y = rand_normal(rng, 0, 1, 5, 2);
  const Tensor2 stats = adaptive_forward(x, p).stats;
  const Tensor2 before = adaptive_denorm(y, stats, p);
  for (auto& v : p.norm_head.weight.values()) v += 0.5;
  EXPECT_EQ(adaptive_denorm(y, stats, p), before);
}

TEST(Adaptive, LengthMismatch) {
  Rng rng(5);
  const AdaptiveNormParams p = init_adaptive(rng, 16);
  EXPECT_THROW(adaptive_forward(Tensor2(12, 2), p), ShapeError);
  EXPECT_THROW(adaptive_denorm(Tensor2(4, 2), Tensor2(3, 8), p), ShapeError);
}

TEST(Adaptive, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const std::size_t L = 4 + rng.below(12), H = 1 + rng.below(6), R = 1 + rng.below(4);
    AdaptiveNormParams p = random_adaptive(rng, L);
    const Tensor2 x = rand_normal(rng, 0, 1, R, L);
    const Tensor2 y = rand_normal(rng, 0, 1, R, H);
    const Tensor2 wx = rand_normal(rng, 0, 1, R, L), wy = rand_normal(rng, 0, 1, R, H);
    // Loss couples both heads through the shared statistics.
    auto loss = [&] {
      AdaptiveCache c;
      AdaptiveDenormCache dc;
      const Tensor2 xh = adaptive_forward_rows(x, p, c);
      const Tensor2 yh = adaptive_denorm_rows(y, c.stats, p, dc);
      return oracle::weighted_sum(xh, wx) + oracle::weighted_sum(yh, wy);
    };
    AdaptiveCache c;
    AdaptiveDenormCache dc;
    adaptive_forward_rows(x, p, c);
    adaptive_denorm_rows(y, c.stats, p, dc);
    AdaptiveNormParams g = p;
    g.for_each("g", [](const std::string&, Tensor2& t) { t.fill(0.0); });
    Tensor2 dstats(R, 8);
    adaptive_denorm_backward(dc, p, wy, dstats, g);
    adaptive_forward_backward(c, p, wx, dstats, g);
    adaptive_stats_backward(c, p, dstats, g);

    std::vector<Tensor2*> grads;
    g.for_each("g", [&](const std::string&, Tensor2& t) { grads.push_back(&t); });
    std::size_t k = 0;
    p.for_each("p", [&](const std::string& name, Tensor2& t) {
      EXPECT_LT(oracle::max_grad_err(t, *grads[k++], loss), 1e-4) << name << " seed " << seed;
    });
  }
}

TEST(Decompose, ConstantSeries) {
  const Tensor2 x(40, 2, 3.25);
  const Decomposition d = decompose(x, 25);
  EXPECT_EQ(d.trend, x);
  for (double v : d.residual.values()) EXPECT_EQ(v, 0.0);
}

TEST(Decompose, LinearRampInteriorIsExact) {
  Tensor2 x(100, 1);
  for (std::size_t t = 0; t < 100; ++t) x(t, 0) = static_cast<double>(t);
  const Decomposition d = decompose(x, 25);
  // Oracle: direct average of the symmetric window.
  for (std::size_t t = 12; t + 12 < 100; ++t) {
    double s = 0.0;
    for (std::size_t u = t - 12; u <= t + 12; ++u) s += static_cast<double>(u);
    EXPECT_EQ(d.trend(t, 0), s / 25.0);
    EXPECT_EQ(d.trend(t, 0), static_cast<double>(t));
    EXPECT_EQ(d.residual(t, 0), 0.0);
  }
}

TEST(Decompose, ReplicatePaddingAtEdges) {
  Tensor2 x(10, 1);
  for (std::size_t t = 0; t < 10; ++t) x(t, 0) = static_cast<double>(t * t);
  const Decomposition d = decompose(x, 5);
  EXPECT_DOUBLE_EQ(d.trend(0, 0), (0 + 0 + 0 + 1 + 4) / 5.0);
  EXPECT_DOUBLE_EQ(d.trend(9, 0), (49 + 64 + 81 + 81 + 81) / 5.0);
}

TEST(Decompose, EvenKernelRejected) {
  EXPECT_THROW(decompose(Tensor2(10, 1), 24), ConfigError);
  EXPECT_THROW(decompose(Tensor2(10, 1), 0), ConfigError);
}

TEST(Decompose, AdditivityIsExactWithinOneBinade) {
  // When trend and input share sign and magnitude (Sterbenz), x - trend is
  // exact and so is the reconstruction.
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = 1 + rng.below(80);
    const Tensor2 x = rand_uniform(rng, 1.0, 2.0, L, 3);
    const Decomposition d = decompose(x, 1 + 2 * rng.below(13));
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(d.trend[i] + d.residual[i], x[i]);
  }
}

TEST(Decompose, AdditivityWithinOneUlpInGeneral) {
  // Near zero crossings the trend dominates x and no pair of doubles close to
  // (trend, x - trend) sums back to x exactly; the error is bounded by one
  // ulp of the larger part.
  Rng rng(6);
  std::size_t exact = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t L = 1 + rng.below(80);
    const Tensor2 x = rand_normal(rng, rng.uniform(-1e3, 1e3), rng.uniform(1e-3, 1e3), L, 3);
    const Decomposition d = decompose(x, 1 + 2 * rng.below(13));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sum = d.trend[i] + d.residual[i];
      const double m = std::max(std::abs(d.trend[i]), std::abs(d.residual[i]));
      ASSERT_LE(std::abs(sum - x[i]), std::nextafter(m, INFINITY) - m);
      exact += sum == x[i];
      ++total;
    }
  }
  EXPECT_GT(exact, total * 9 / 10);
}

TEST(Decompose, AdjointMatchesTranspose) {
  Rng rng(7);
  const Tensor2 x = rand_normal(rng, 0, 1, 2, 30), g = rand_normal(rng, 0, 1, 2, 30);
  // <MA x, g> == <x, MAᵀ g>
  const double lhs = oracle::weighted_sum(moving_average_rows(x, 7), g);
  const double rhs = oracle::weighted_sum(x, moving_average_adjoint_rows(g, 7));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Patch, Counts) {
  EXPECT_EQ((PatchSpec{16, 8, 32, 336}.patch_count()), 41u);
  EXPECT_EQ((PatchSpec{16, 8, 32, 336}.flat_dim()), 1312u);
  EXPECT_EQ((PatchSpec{16, 8, 32, 512}.patch_count()), 63u);
  EXPECT_EQ((PatchSpec{16, 8, 32, 512}.flat_dim()), 2016u);
  EXPECT_EQ((PatchSpec{16, 8, 32, 16}.patch_count()), 1u);
  EXPECT_THROW((PatchSpec{16, 8, 32, 12}.patch_count()), ConfigError);
}

TEST(Patch, CoverageDropsTrailingSamples) {
  // L = 30, P = 8, S = 8: N = 3, covers [0, 24); the last 6 samples are unused.
  const PatchSpec spec{8, 8, 1, 30};
  ASSERT_EQ(spec.patch_count(), 3u);
  Tensor2 x(1, 30);
  for (std::size_t t = 0; t < 30; ++t) x(0, t) = static_cast<double>(t);
  const Tensor2 patches = extract_patches_rows(x, spec);
  EXPECT_EQ(patches(2, 7), 23.0);
  const Tensor2 cover = scatter_patches_rows(Tensor2(3, 8, 1.0), 1, spec);
  for (std::size_t t = 0; t < 24; ++t) EXPECT_EQ(cover(0, t), 1.0);
  for (std::size_t t = 24; t < 30; ++t) EXPECT_EQ(cover(0, t), 0.0);
}

TEST(Patch, EmbedConcatenatesInPatchOrder) {
  Rng rng(8);
  const PatchSpec spec{4, 2, 3, 10};
  const DenseParams embed = init_dense(rng, 4, 3);
  Tensor2 series(10, 1);
  for (std::size_t t = 0; t < 10; ++t) series(t, 0) = rng.normal();
  const Tensor2 flat = patch_embed(series, spec, embed);
  ASSERT_EQ(flat.rows(), 1u);
  ASSERT_EQ(flat.cols(), spec.flat_dim());
  for (std::size_t n = 0; n < spec.patch_count(); ++n) {
    Tensor2 patch(1, 4);
    for (std::size_t k = 0; k < 4; ++k) patch(0, k) = series(n * 2 + k, 0);
    const Tensor2 e = dense_forward(patch, embed);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(flat(0, n * 3 + j), e(0, j));
  }
  EXPECT_THROW(patch_embed(Tensor2(3, 1), spec, embed), ShapeError);
}

TEST(Preprocess, CompositeGradientThroughNormalizeDecomposeEmbed) {
  // adaptive norm → decompose → patch-embed each part, loss on both.
  Rng rng(9);
  const std::size_t L = 20, R = 3;
  const PatchSpec spec{6, 3, 4, L};
  AdaptiveNormParams ad = random_adaptive(rng, L);
  DenseParams et = init_dense(rng, 6, 4), er = init_dense(rng, 6, 4);
  RevinState st;
  const Tensor2 xn = revin_normalize_rows(rand_normal(rng, 3, 2, R, L), st);
  const Tensor2 wt = rand_normal(rng, 0, 1, R, spec.flat_dim()), wr = rand_normal(rng, 0, 1, R, spec.flat_dim());
  auto loss = [&] {
    AdaptiveCache c;
    const Decomposition d = decompose_rows(adaptive_forward_rows(xn, ad, c), 5);
    return oracle::weighted_sum(patch_embed_rows(d.trend, spec, et), wt) +
           oracle::weighted_sum(patch_embed_rows(d.residual, spec, er), wr);
  };
  AdaptiveCache c;
  const Decomposition d = decompose_rows(adaptive_forward_rows(xn, ad, c), 5);
  PatchCache pt, pr;
  patch_embed_rows(d.trend, spec, et, &pt);
  patch_embed_rows(d.residual, spec, er, &pr);
  DenseParams get(6, 4), ger(6, 4);
  const Tensor2 dt = patch_embed_backward(pt, spec, et, wt, get);
  const Tensor2 dr = patch_embed_backward(pr, spec, er, wr, ger);
  const Tensor2 dz = add(dr, moving_average_adjoint_rows(sub(dt, dr), 5));
  AdaptiveNormParams gad = ad;
  gad.for_each("g", [](const std::string&, Tensor2& t) { t.fill(0.0); });
  Tensor2 dstats(R, 8);
  adaptive_forward_backward(c, ad, dz, dstats, gad);
  adaptive_stats_backward(c, ad, dstats, gad);

  EXPECT_LT(oracle::max_grad_err(et.weight, get.weight, loss), 1e-4);
  EXPECT_LT(oracle::max_grad_err(er.bias, ger.bias, loss), 1e-4);
  EXPECT_LT(oracle::max_grad_err(ad.stats_in.weight, gad.stats_in.weight, loss), 1e-4);
  EXPECT_LT(oracle::max_grad_err(ad.norm_head.weight, gad.norm_head.weight, loss), 1e-4);
}
