#include <gtest/gtest.h>

#include <map>
#include <random>

#include "support.hpp"

using namespace skipdqn;

TEST(Split, SecondHalfPositions) {
  EXPECT_EQ(split_session(20), (std::vector<int>{11, 12, 13, 14, 15, 16, 17, 18, 19, 20}));
  EXPECT_EQ(split_session(11), (std::vector<int>{7, 8, 9, 10, 11}));
  EXPECT_EQ(split_session(10), (std::vector<int>{6, 7, 8, 9, 10}));
  EXPECT_THROW(split_session(9), Error);
}

TEST(Maa, Examples) {
  EXPECT_DOUBLE_EQ(maa({true, true, true}), 1.0);
  EXPECT_DOUBLE_EQ(maa({false, false, false, false}), 0.0);
  EXPECT_NEAR(maa({true, false, true, true}), 0.6041666666666666, 1e-12);
  EXPECT_THROW(maa(std::vector<bool>{}), Error);
}

// Properties over random correctness lists.
TEST(MaaProperty, BoundsAndPrefixDominance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<bool> l(1 + rng() % 12);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = rng() % 2;
    const double m = maa(l);
    double mean = 0;
    for (bool b : l) mean += b;
    mean /= static_cast<double>(l.size());
    ASSERT_GE(m, 0.0);
    ASSERT_LE(m, mean + 1e-15);
    ASSERT_EQ(m == 1.0, mean == 1.0);
    std::vector<bool> with1 = l, with0 = l;
    with1.insert(with1.begin(), true);
    with0.insert(with0.begin(), false);
    ASSERT_GE(maa(with1), maa(with0));
  }
}

namespace {

struct Stub {
  std::map<std::vector<double>, int> label;
  explicit Stub(const std::vector<EncodedSession>& sessions) {
    for (const auto& e : sessions)
      for (std::size_t i = 0; i < e.size(); ++i) label[e.states[i].values] = e.labels[i];
  }
};

}  // namespace

TEST(Evaluate, OracleAndAntiOracleBounds) {
  // Leakage corpus: every state carries its label, so a lookup is an oracle.
  const auto sessions = fixtures::synthetic(50, 2, true);
  const FeatureSchema s = fixtures::fitted(sessions);
  const auto encoded = encode_sessions(sessions, s);
  const Stub stub(encoded);
  const EvalReport best = evaluate([&](const StateVector& x) { return stub.label.at(x.values); }, encoded);
  EXPECT_DOUBLE_EQ(best.mean_maa, 1.0);
  EXPECT_DOUBLE_EQ(best.mean_fpa, 1.0);
  const EvalReport worst =
      evaluate([&](const StateVector& x) { return 1 - stub.label.at(x.values); }, encoded);
  EXPECT_DOUBLE_EQ(worst.mean_maa, 0.0);
  EXPECT_DOUBLE_EQ(worst.mean_fpa, 0.0);
}

TEST(Evaluate, FpaIsFirstPredictedPosition) {
  const auto sessions = fixtures::synthetic(80, 5);
  const FeatureSchema s = fixtures::fitted(sessions);
  const auto encoded = encode_sessions(sessions, s);
  const EvalReport r = evaluate([](const StateVector&) { return 1; }, encoded);
  double fpa = 0, maa_sum = 0;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    const int n = static_cast<int>(encoded[i].size());
    const auto targets = split_session(n);
    fpa += encoded[i].labels[targets.front() - 1] == 1;
    std::vector<bool> l;
    for (int p : targets) l.push_back(encoded[i].labels[p - 1] == 1);
    EXPECT_DOUBLE_EQ(r.sessions[i].maa, maa(l));
    maa_sum += maa(l);
  }
  EXPECT_DOUBLE_EQ(r.mean_fpa, fpa / static_cast<double>(encoded.size()));
  EXPECT_NEAR(r.mean_maa, maa_sum / static_cast<double>(encoded.size()), 1e-12);
}

TEST(Evaluate, WidthMismatchIsAnError) {
  const auto sessions = fixtures::synthetic(5, 5);
  const FeatureSchema s = fixtures::fitted(sessions);
  EXPECT_THROW(evaluate(Params(10, {4}), encode_sessions(sessions, s), s), Error);
}

TEST(Evaluate, ReportJsonRoundTrip) {
  const auto sessions = fixtures::synthetic(10, 5);
  const FeatureSchema s = fixtures::fitted(sessions);
  const EvalReport r =
      evaluate(Params::initialized(s.active_width(), {8}, 1), encode_sessions(sessions, s), s, 42);
  EXPECT_EQ(to_json(eval_report_from_json(to_json(r))), to_json(r));
}

TEST(Distribution, MatchesReferenceValues) {
  // Reference values from scipy.stats.t.
  EXPECT_NEAR(student_t_quantile(0.975, 4), 2.7764451051977987, 1e-9);
  EXPECT_NEAR(student_t_two_sided_p(2.5, 7), 0.040992218585752874, 1e-12);
  EXPECT_NEAR(student_t_cdf(-1.3, 3.5), 0.13629770790218498, 1e-12);
  EXPECT_DOUBLE_EQ(incomplete_beta(2, 3, 0), 0.0);
  EXPECT_NEAR(incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
}

TEST(ConfidenceInterval, ThreeSampleExample) {
  const std::vector<double> x = {0.80, 0.82, 0.84};
  const Interval ci = confidence_interval(x);
  EXPECT_NEAR(ci.mean, 0.82, 1e-15);
  EXPECT_NEAR(ci.half_width(), 0.04968275423439082, 1e-9);
}

TEST(ConfidenceInterval, EqualSamplesGiveZeroWidth) {
  const std::vector<double> x = {0.7, 0.7, 0.7, 0.7};
  const Interval ci = confidence_interval(x);
  EXPECT_DOUBLE_EQ(ci.lo, 0.7);
  EXPECT_DOUBLE_EQ(ci.hi, 0.7);
  EXPECT_THROW(confidence_interval(std::vector<double>{1.0}), Error);
}

TEST(ConfidenceInterval, CoverageIsNominal) {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> z(3.0, 2.0);
  int covered = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> x(5);
    for (auto& v : x) v = z(rng);
    const Interval ci = confidence_interval(x);
    covered += ci.lo <= 3.0 && 3.0 <= ci.hi;
  }
  EXPECT_GE(covered, 930);
  EXPECT_LE(covered, 970);
}

TEST(PairedT, HandExample) {
  const std::vector<double> a = {0.1, 0.2, 0.15, 0.25}, b(4, 0.0);
  const StatResult r = paired_t_test(a, b);
  EXPECT_NEAR(r.t_statistic, 5.422176684690385, 1e-9);
  EXPECT_NEAR(r.p_value, 0.012307551821486276, 1e-10);
  EXPECT_EQ(r.dof, 3);
  EXPECT_EQ(significance_marker(r.p_value), "*");
}

TEST(PairedT, IdenticalSamples) {
  const std::vector<double> a = {0.3, 0.6, 0.2};
  const StatResult r = paired_t_test(a, a);
  EXPECT_EQ(r.t_statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(PairedT, ConstantShiftIsDegenerate) {
  const std::vector<double> a = {1.5, 2.5, 3.25}, b = {1.0, 2.0, 2.75};
  const StatResult r = paired_t_test(a, b);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 0.0);
}

TEST(PairedT, LengthMismatchIsAnError) {
  const std::vector<double> a = {0.1, 0.2}, b = {0.1, 0.2, 0.3};
  EXPECT_THROW(paired_t_test(a, b), Error);
}

TEST(PairedTProperty, SwappingArgumentsNegatesT) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(2 + rng() % 30), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = z(rng);
      b[i] = z(rng);
    }
    const StatResult ab = paired_t_test(a, b), ba = paired_t_test(b, a);
    ASSERT_NEAR(ab.t_statistic, -ba.t_statistic, 1e-12);
    ASSERT_NEAR(ab.p_value, ba.p_value, 1e-12);
  }
}

TEST(Markers, Thresholds) {
  EXPECT_EQ(significance_marker(0.0009), "**");
  EXPECT_EQ(significance_marker(0.001), "*");
  EXPECT_EQ(significance_marker(0.0499), "*");
  EXPECT_EQ(significance_marker(0.05), "");
}
