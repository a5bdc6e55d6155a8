#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "decompkan/eval.hpp"

using namespace decompkan;

TEST(ParallelMap, ResultsByIndexAndFirstErrorRethrown) {
  for (std::size_t jobs : {1u, 3u, 16u}) {
    const auto v = parallel_map<std::size_t>(20, jobs, [](std::size_t k) { return k * k; });
    ASSERT_EQ(v.size(), 20u);
    for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(v[k], k * k);
  }
  EXPECT_THROW(parallel_map<int>(5, 2,
                                 [](std::size_t k) -> int {
                                   if (k == 3) throw std::runtime_error("boom");
                                   return 0;
                                 }),
               std::runtime_error);
  EXPECT_TRUE(parallel_map<int>(0, 4, [](std::size_t) { return 1; }).empty());
}

TEST(Seeds, SampleStdAgainstHandComputation) {
  const SeedSummary s = summarize({0, 1, 2}, {1.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3.0);
  // deviations -4/3, -1/3, 5/3 -> squares sum 42/9, over n-1 = 2
  EXPECT_NEAR(s.std, std::sqrt(42.0 / 18.0), 1e-15);
  EXPECT_EQ(format_mean_std(summarize({0, 1}, {0.1484, 0.1476})), "0.148±0.001");
}

TEST(Seeds, StdInvariantToShiftAndOrder) {
  const std::vector<double> v{0.31, 0.29, 0.35, 0.30, 0.33};
  std::vector<double> shifted, reversed(v.rbegin(), v.rend());
  for (double x : v) shifted.push_back(x + 10.0);
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  const double s0 = summarize(seeds, v).std;
  EXPECT_NEAR(summarize(seeds, shifted).std, s0, 1e-12);
  EXPECT_NEAR(summarize(seeds, reversed).std, s0, 1e-15);
}

TEST(Seeds, FailedSeedsAreFlaggedAndExcluded) {
  std::vector<std::string> errors;
  const SeedSummary s = multi_seed(
      [](std::size_t, std::uint64_t seed) {
        if (seed == 7) throw NumericError("diverged");
        return static_cast<double>(seed);
      },
      {1, 7, 3}, 2, &errors);
  EXPECT_TRUE(s.flagged());
  EXPECT_EQ(s.failed, std::vector<std::uint64_t>{7});
  EXPECT_EQ(s.values, (std::vector<double>{1.0, 3.0}));
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("seed 7"), std::string::npos);
  EXPECT_THROW(multi_seed([](std::size_t, std::uint64_t) { return 0.0; }, {1}), ConfigError);
}

TEST(Grid, TwelvePointsAndTieRule) {
  const auto pts = tuning_points();
  ASSERT_EQ(pts.size(), 12u);
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) EXPECT_FALSE(pts[a] == pts[b]);
  // All equal: the lowest learning rate, L = 336, augmentation off wins.
  const std::vector<double> flat(12, 0.5);
  const GridPoint w = pts[select_grid_winner(pts, flat)];
  EXPECT_EQ(w.lr, 2e-4);
  EXPECT_EQ(w.lookback, 336u);
  EXPECT_FALSE(w.bidirectional);

  std::vector<double> val(12, 1.0);
  val[5] = 0.25;
  val[9] = 0.25;
  const std::size_t best = select_grid_winner(pts, val);
  EXPECT_EQ(best, pts[5].lr < pts[9].lr ? 5u : 9u);

  const GridResult g = tuning_grid([](const GridPoint& p) { return p.lr * (p.bidirectional ? 1.0 : 2.0); }, 3);
  EXPECT_EQ(g.points[g.best].lr, 2e-4);
  EXPECT_TRUE(g.points[g.best].bidirectional);
  EXPECT_EQ(g.points[g.best].lookback, 336u);
}

TEST(Ablation, DeltaPercentAndSweep) {
  EXPECT_DOUBLE_EQ(delta_percent(1.1, 1.0), 10.000000000000009);
  EXPECT_DOUBLE_EQ(delta_percent(0.5, 1.0), -50.0);
  const auto rows = ablation_sweep([](const std::string& v) { return v == "full" ? 2.0 : 3.0; },
                                   {"full", "no_revin"});
  EXPECT_EQ(rows[1].delta_pct, 50.0);
  EXPECT_EQ(ablation_table(rows).rows[1][2], "+50.0%");
  EXPECT_THROW(ablation_sweep([](const std::string&) { return 1.0; }, {"no_revin", "full"}), ConfigError);

  const auto variants = sweep_variants();
  EXPECT_EQ(variants.front(), "full");
  EXPECT_EQ(variants.back(), "no_bidirectional");
  TrainConfig t;
  t.bidirectional = true;
  const auto [m, t2] = apply_variant(ModelConfig{}, t, "no_bidirectional");
  EXPECT_FALSE(t2.bidirectional);
  EXPECT_EQ(count_params(m), count_params(ModelConfig{}));
}

TEST(WinRate, UniqueMinimumWinsAndTies) {
  WinRateResult r;
  r.contenders = {"a", "b", "c"};
  r.mse = {{1.0, 2.0, 3.0}, {2.0, 1.0, 3.0}, {1.0, 1.0, 3.0}, {0.5, 4.0, 1.0}};
  tally_wins(r);
  EXPECT_EQ(r.wins, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_EQ(r.ties, 1u);
  EXPECT_EQ(r.beats("a", "b"), 2u);
  EXPECT_EQ(r.beats("b", "a"), 1u);
  const RatioStats s = r.ratio("a", "b");
  EXPECT_EQ(s.min, 0.5);
  EXPECT_EQ(s.median, 1.5);
  EXPECT_EQ(s.max, 8.0);
  EXPECT_DOUBLE_EQ(r.mean_mse("a"), 1.125);
  EXPECT_THROW(r.index("d"), ConfigError);
}

TEST(Synth, MlpWidthMatchesKanBudget) {
  const SynthOptions o;
  const std::size_t kan = count_params(synth_kan(o));
  const ModelConfig mlp = synth_mlp(o);
  const double gap = std::abs(static_cast<double>(count_params(mlp)) - static_cast<double>(kan));
  EXPECT_LE(gap, 0.2 * static_cast<double>(kan));
  // No other width gets closer.
  for (std::size_t h : {mlp.mlp_hidden - 1, mlp.mlp_hidden + 1}) {
    ModelConfig other = mlp;
    other.mlp_hidden = h;
    EXPECT_GE(std::abs(static_cast<double>(count_params(other)) - static_cast<double>(kan)), gap);
  }
  EXPECT_THROW(match_mlp_hidden(mlp, 5), ConfigError);
  const ModelConfig hybrid = synth_hybrid(o);
  EXPECT_TRUE(hybrid.use_decomposition);
  EXPECT_FALSE(hybrid.use_revin);
  EXPECT_TRUE(synth_kan_patched(o).use_patching);
}

TEST(Synth, TinyWinRateRunIsDeterministic) {
  SynthOptions o;
  o.trials = 2;
  o.epochs = 1;
  o.lookback = 32;
  o.horizon = 8;
  o.length = 600;
  o.kan_hidden = 4;
  auto run = [&] { return synth_experiment(1, o); };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].to_json().dump(), b[0].to_json().dump());
  EXPECT_EQ(a[1].to_json().dump(), b[1].to_json().dump());
  EXPECT_EQ(a[0].trials(), 2u);
  EXPECT_THROW(synth_experiment(4, o), ConfigError);
}

TEST(Tables, MarkdownAndCsv) {
  const Table t{{"a", "b"}, {{"1", "2"}}};
  EXPECT_EQ(t.markdown(), "| a | b |\n| --- | --- |\n| 1 | 2 |\n");
  EXPECT_EQ(t.csv(), "a,b\n1,2\n");
  const SeedSummary s = multi_seed([](std::size_t, std::uint64_t seed) { return 0.1 * static_cast<double>(seed); },
                                   {1, 2, 3});
  EXPECT_EQ(seed_table("etth2", 96, s).rows[0][3], "0.200±0.100");
}
