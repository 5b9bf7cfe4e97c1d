#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace skipdqn;

namespace {

BackgroundSet background_of(std::vector<std::vector<double>> rows, std::uint64_t seed = 0) {
  BackgroundSet bg{Eigen::MatrixXd(rows.front().size(), rows.size()), seed};
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) bg.states(i, j) = rows[j][i];
  return bg;
}

BackgroundSet random_background(std::size_t width, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  BackgroundSet bg{Eigen::MatrixXd(width, n), seed};
  for (Eigen::Index i = 0; i < bg.states.size(); ++i) bg.states.data()[i] = z(rng);
  return bg;
}

double local_error(const ShapResult& r) {
  double total = r.base;
  for (double p : r.phi) total += p;
  return std::abs(total - r.fx);
}

}  // namespace

TEST(Shap, LinearModelClosedForm) {
  const BatchFunction f = pointwise([](std::span<const double> x) { return 2 * x[0] + 3 * x[1]; });
  const BackgroundSet bg = background_of({{1, -1}, {-1, 1}});
  const std::vector<double> x = {1, 1};
  for (const ShapResult& r : {exact_shap(f, x, bg, singleton_players(2)),
                              kernel_shap(f, x, bg, singleton_players(2), 100, 1)}) {
    EXPECT_NEAR(r.phi[0], 2.0, 1e-12);
    EXPECT_NEAR(r.phi[1], 3.0, 1e-12);
    EXPECT_NEAR(r.base, 0.0, 1e-12);
  }
}

TEST(Shap, ConstantModelGetsNoAttribution) {
  const BatchFunction f = pointwise([](std::span<const double>) { return 4.25; });
  const BackgroundSet bg = random_background(5, 10, 2);
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const ShapResult r = kernel_shap(f, x, bg, singleton_players(5), 64, 3);
  for (double p : r.phi) EXPECT_NEAR(p, 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.base, 4.25);
}

TEST(Shap, ProductSplitsEvenly) {
  const BatchFunction f = pointwise([](std::span<const double> x) { return x[0] * x[1]; });
  const BackgroundSet bg = background_of({{0, 0}});
  const std::vector<double> x = {1, 1};
  const ShapResult r = exact_shap(f, x, bg, singleton_players(2));
  EXPECT_NEAR(r.phi[0], 0.5, 1e-15);
  EXPECT_NEAR(r.phi[1], 0.5, 1e-15);
  EXPECT_EQ(r.base, 0.0);
}

TEST(Shap, SingleFeatureIsADifference) {
  const BatchFunction f = pointwise([](std::span<const double> x) { return x[0] * x[0]; });
  const BackgroundSet bg = background_of({{1}, {3}});
  const std::vector<double> x = {2};
  const ShapResult r = exact_shap(f, x, bg, singleton_players(1));
  EXPECT_NEAR(r.phi[0], 4.0 - 5.0, 1e-15);
}

TEST(Shap, SymmetricFeaturesShareEqually) {
  const BatchFunction f = pointwise([](std::span<const double> x) {
    return std::tanh(x[0] + x[1]) * x[2] + x[0] * x[1];
  });
  const BackgroundSet bg = random_background(3, 7, 4);
  const std::vector<double> x = {0.7, 0.7, -1.2};
  // Symmetrize the background so swapping features 0 and 1 preserves v.
  BackgroundSet sym{Eigen::MatrixXd(3, 14), 0};
  sym.states.leftCols(7) = bg.states;
  sym.states.rightCols(7) = bg.states;
  sym.states.row(0).tail(7) = bg.states.row(1);
  sym.states.row(1).tail(7) = bg.states.row(0);
  const ShapResult r = exact_shap(f, x, sym, singleton_players(3));
  EXPECT_NEAR(r.phi[0], r.phi[1], 1e-12);
}

TEST(Shap, TooManyPlayersForExactEnumeration) {
  const BatchFunction f = pointwise([](std::span<const double> x) { return x[0]; });
  const std::vector<double> x(13, 0.0);
  EXPECT_THROW(exact_shap(f, x, random_background(13, 2, 1), singleton_players(13)), Error);
}

// Random 8-input network: kernel estimate against enumeration.
TEST(ShapOracle, KernelMatchesExactAtEightPlayers) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = QNetworkParams<double>::initialized(8, {16, 16}, rng());
    const BatchFunction f = q_function(net, ExplanationTarget::QMargin);
    const BackgroundSet bg = random_background(8, 20, rng());
    std::vector<double> x(8);
    for (auto& v : x) v = std::normal_distribution<double>()(rng);
    const ShapResult exact = exact_shap(f, x, bg, singleton_players(8));
    const ShapResult kernel = kernel_shap(f, x, bg, singleton_players(8), 256 * 4, rng());
    double worst = 0;
    for (int i = 0; i < 8; ++i) worst = std::max(worst, std::abs(exact.phi[i] - kernel.phi[i]));
    EXPECT_LT(worst, 1e-3);
    EXPECT_LT(local_error(kernel), 1e-6);
    EXPECT_LT(local_error(exact), 1e-12);
  }
}

TEST(ShapOracle, FullEnumerationAgreesTightlyUpToTenPlayers) {
  std::mt19937_64 rng(5);
  for (int m = 2; m <= 10; ++m) {
    const auto net = QNetworkParams<double>::initialized(m, {8}, rng());
    const BatchFunction f = q_function(net, ExplanationTarget::QSkip);
    const BackgroundSet bg = random_background(m, 6, rng());
    std::vector<double> x(m, 0.5);
    const ShapResult exact = exact_shap(f, x, bg, singleton_players(m));
    const ShapResult kernel = kernel_shap(f, x, bg, singleton_players(m), (1u << m) - 2, 1);
    for (int i = 0; i < m; ++i) EXPECT_NEAR(kernel.phi[i], exact.phi[i], 1e-6) << m;
  }
}

TEST(ShapProperty, SampledRegimeKeepsLocalAccuracy) {
  std::mt19937_64 rng(12);
  const auto net = QNetworkParams<double>::initialized(30, {32}, 3);
  const BatchFunction f = q_function(net, ExplanationTarget::QMargin);
  const BackgroundSet bg = random_background(30, 25, 9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(30);
    for (auto& v : x) v = std::normal_distribution<double>()(rng);
    EXPECT_LT(local_error(kernel_shap(f, x, bg, singleton_players(30), 200, rng())), 1e-6);
  }
}

TEST(ShapProperty, IgnoredFeatureGetsNothing) {
  auto net = QNetworkParams<double>::initialized(6, {12}, 8);
  net.layers[0].weight.col(3).setZero();
  const BatchFunction f = q_function(net, ExplanationTarget::QMargin);
  const BackgroundSet bg = random_background(6, 15, 2);
  const std::vector<double> x = {1, -2, 0.5, 9, 0.1, -0.4};
  EXPECT_LT(std::abs(exact_shap(f, x, bg, singleton_players(6)).phi[3]), 1e-6);
  EXPECT_LT(std::abs(kernel_shap(f, x, bg, singleton_players(6), 62, 1).phi[3]), 1e-6);
}

TEST(ShapProperty, SeedDeterminesEstimate) {
  const auto net = QNetworkParams<double>::initialized(20, {16}, 4);
  const BatchFunction f = q_function(net, ExplanationTarget::QMargin);
  const BackgroundSet bg = random_background(20, 10, 1);
  const std::vector<double> x(20, 0.3);
  EXPECT_EQ(kernel_shap(f, x, bg, singleton_players(20), 150, 9).phi,
            kernel_shap(f, x, bg, singleton_players(20), 150, 9).phi);
}

TEST(Background, SampledWithRecordedSeed) {
  const auto sessions = fixtures::synthetic(20, 1);
  const FeatureSchema s = fixtures::fitted(sessions);
  const auto enc = encode_sessions(sessions, s);
  const BackgroundSet a = sample_background(enc, 100, 3), b = sample_background(enc, 100, 3);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a.seed, 3u);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), sample_background(enc, 100, 4).fingerprint());
  EXPECT_THROW(sample_background(enc, 0, 1), Error);
}

TEST(Attribution, ReportShapeAndLocalAccuracy) {
  const auto sessions = fixtures::synthetic(10, 1);
  const FeatureSchema s = fixtures::fitted(sessions);
  const auto enc = encode_sessions(sessions, s);
  const Params p = Params::initialized(s.active_width(), {16}, 2);
  AttributionConfig c;
  c.n_episodes = 2;
  c.n_samples = 100;
  const AttributionReport r = attribute_sessions(p, enc, s, sample_background(enc, 20, 1), c);
  EXPECT_EQ(r.rows.size(), s.active_width());  // one row per active column
  EXPECT_EQ(r.n_records, enc[0].size() + enc[1].size());
  EXPECT_LT(r.max_local_accuracy_error, 1e-6);
  for (std::size_t i = 1; i < r.rows.size(); ++i)
    EXPECT_GE(r.rows[i - 1].mean_abs_shap, r.rows[i].mean_abs_shap);
  const auto j = to_json(r);
  EXPECT_EQ(j["metadata"]["explained_output"], "q_margin");
  EXPECT_EQ(attribution_csv(r).substr(0, 34), "feature,group,type,mean_abs_shap\n\"");
}

// A network that reads only the premium slot concentrates attribution there.
TEST(Attribution, SingleInputNetworkRanksThatInputFirst) {
  const auto sessions = fixtures::synthetic(10, 1);
  const FeatureSchema s = fixtures::fitted(sessions);
  const auto enc = encode_sessions(sessions, s);
  Params p(s.active_width(), {1});
  const auto premium = *s.offsets()[*s.index_of("premium")];
  p.layers[0].weight(0, static_cast<Eigen::Index>(premium)) = 1.0f;
  p.layers[1].weight(1, 0) = 2.0f;
  AttributionConfig c;
  c.n_episodes = 3;
  c.n_samples = 100;
  const AttributionReport r = attribute_sessions(p, enc, s, sample_background(enc, 50, 2), c);
  EXPECT_EQ(r.rows[0].name, "Premium");
  EXPECT_GE(r.rows[0].mean_abs_shap, 5 * r.rows[1].mean_abs_shap);
  EXPECT_EQ(r.rank_of("PR"), 1u);
}

TEST(ShapProperty, TooFewSamplesIsAnError) {
  const BatchFunction f = pointwise([](std::span<const double> x) { return x[0]; });
  const std::vector<double> x(30, 1.0);
  EXPECT_THROW(kernel_shap(f, x, random_background(30, 3, 1), singleton_players(30), 40, 1), Error);
}
