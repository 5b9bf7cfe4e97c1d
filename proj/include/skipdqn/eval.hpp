#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skipdqn/agent.hpp"
#include "skipdqn/env.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

// ---------------------------------------------------------------------------
// Challenge metrics

// 1-based positions to predict: the second half, with the first half holding
// ceil(n/2) records.
inline std::vector<int> split_session(int n) {
  if (n < kMinSessionLength || n > kMaxSessionLength)
    throw Error("session length " + std::to_string(n) + " outside [10, 20]");
  std::vector<int> targets;
  for (int p = (n + 1) / 2 + 1; p <= n; ++p) targets.push_back(p);
  return targets;
}

// Mean average accuracy: sum_i A(i) L(i) / T with A(i) the running accuracy.
// `correct` is any range of bool-convertible values.
template <std::ranges::input_range R>
double maa(const R& correct) {
  double hits = 0.0, total = 0.0;
  std::size_t i = 0;
  for (const auto& c : correct) {
    ++i;
    if (!static_cast<bool>(c)) continue;
    hits += 1.0;
    total += hits / static_cast<double>(i);
  }
  if (i == 0) throw Error("MAA of an empty prediction list");
  return total / static_cast<double>(i);
}

inline double maa(std::initializer_list<bool> correct) {
  return maa(std::vector<bool>(correct));
}

struct SessionScore {
  std::string session_id;
  int length = 0;
  double maa = 0.0;
  bool fpa_correct = false;
};

struct EvalReport {
  std::vector<SessionScore> sessions;
  double mean_maa = 0.0;
  double mean_fpa = 0.0;
  std::uint64_t seed = 0;
  std::string schema_fingerprint;

  std::size_t n_sessions() const { return sessions.size(); }
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.sessions)
    rows.push_back({{"session_id", s.session_id},
                    {"length", s.length},
                    {"maa", s.maa},
                    {"fpa_correct", s.fpa_correct}});
  return {{"format", "skipdqn.eval"},
          {"version", 1},
          {"seed", r.seed},
          {"schema_fingerprint", r.schema_fingerprint},
          {"n_sessions", r.n_sessions()},
          {"mean_maa", r.mean_maa},
          {"mean_fpa", r.mean_fpa},
          {"sessions", rows}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "skipdqn.eval") throw Error("not an eval report");
  EvalReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
  r.mean_maa = j.at("mean_maa").get<double>();
  r.mean_fpa = j.at("mean_fpa").get<double>();
  for (const auto& s : j.at("sessions"))
    r.sessions.push_back({s.at("session_id").get<std::string>(), s.at("length").get<int>(),
                          s.at("maa").get<double>(), s.at("fpa_correct").get<bool>()});
  return r;
}

// Runs every session in Eval mode under `policy` and scores the second half.
inline EvalReport evaluate(const Policy& policy, std::span<const EncodedSession> sessions) {
  EvalReport report;
  SkipEnvironment env;
  double maa_sum = 0.0;
  std::size_t fpa_hits = 0;
  for (const auto& episode : sessions) {
    const int n = static_cast<int>(episode.size());
    const auto targets = split_session(n);
    std::vector<char> outcome(n, 0);
    StateVector state = env.reset(episode, EnvMode::Eval);
    for (int pos = 1;; ++pos) {
      StepOutcome o = env.step(policy(state));
      outcome[pos - 1] = o.correct;
      if (o.done) break;
      state = std::move(*o.next_state);
    }
    const std::span<const char> second(outcome.data() + (targets.front() - 1), targets.size());
    SessionScore score{episode.id, n, maa(second), second.front() != 0};
    maa_sum += score.maa;
    fpa_hits += score.fpa_correct;
    report.sessions.push_back(std::move(score));
  }
  if (!report.sessions.empty()) {
    report.mean_maa = maa_sum / static_cast<double>(report.sessions.size());
    report.mean_fpa = static_cast<double>(fpa_hits) / static_cast<double>(report.sessions.size());
  }
  return report;
}

inline EvalReport evaluate(const Params& params, std::span<const EncodedSession> sessions,
                           const FeatureSchema& schema, std::uint64_t seed = 0) {
  if (params.input_dim() != schema.active_width())
    throw Error("network width " + std::to_string(params.input_dim()) +
                " does not match schema width " + std::to_string(schema.active_width()));
  EvalReport r = evaluate([&](const StateVector& s) { return act_greedy(params, s); }, sessions);
  r.seed = seed;
  r.schema_fingerprint = schema.fingerprint();
  return r;
}

// ---------------------------------------------------------------------------
// Statistics

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a - 1.0 + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + 1.0 + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw Error("incomplete beta needs positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for Student-t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof) {
  if (dof <= 0.0) throw Error("degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

inline double student_t_cdf(double t, double dof) {
  const double tail = 0.5 * student_t_two_sided_p(t, dof);
  return t >= 0.0 ? 1.0 - tail : tail;
}

// Quantile of the Student-t distribution for probability q in (0, 1).
inline double student_t_quantile(double q, double dof) {
  if (!(q > 0.0 && q < 1.0)) throw Error("quantile probability must lie in (0, 1)");
  if (q == 0.5) return 0.0;
  const double upper = q > 0.5 ? q : 1.0 - q;
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, dof) < upper) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, dof) < upper ? lo : hi) = mid;
  }
  const double t = 0.5 * (lo + hi);
  return q > 0.5 ? t : -t;
}

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  double half_width() const { return 0.5 * (hi - lo); }
};

inline nlohmann::json to_json(const Interval& i) {
  return {{"mean", i.mean}, {"lo", i.lo}, {"hi", i.hi}, {"half_width", i.half_width()}};
}

inline double sample_mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Sample standard deviation (1/(n-1)).
inline double sample_stddev(std::span<const double> xs) {
  const double m = sample_mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Student-t interval mean +/- t_{(1+level)/2, n-1} s / sqrt(n).
inline Interval confidence_interval(std::span<const double> samples, double level = 0.95) {
  if (samples.size() < 2) throw Error("confidence interval needs at least 2 samples");
  if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0, 1)");
  const double n = static_cast<double>(samples.size());
  const double m = sample_mean(samples);
  const double s = sample_stddev(samples);
  const double half = student_t_quantile(0.5 * (1.0 + level), n - 1.0) * s / std::sqrt(n);
  return {m, m - half, m + half};
}

struct StatResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  int dof = 0;
  Interval ci95;  // of the mean difference a - b
  bool degenerate = false;
  std::string pairing;
};

inline nlohmann::json to_json(const StatResult& s) {
  return {{"t_statistic", std::isfinite(s.t_statistic) ? nlohmann::json(s.t_statistic)
                                                       : nlohmann::json(s.t_statistic > 0 ? "inf" : "-inf")},
          {"p_value", s.p_value},
          {"dof", s.dof},
          {"ci95", to_json(s.ci95)},
          {"degenerate", s.degenerate},
          {"pairing", s.pairing}};
}

// Two-sided paired t-test on d = a - b.
inline StatResult paired_t_test(std::span<const double> a, std::span<const double> b,
                                std::string pairing = "per-session MAA, averaged over runs") {
  if (a.size() != b.size()) throw Error("paired t-test needs samples of equal length");
  if (a.size() < 2) throw Error("paired t-test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double m = sample_mean(d);
  const double s = sample_stddev(d);
  StatResult r;
  r.dof = static_cast<int>(d.size()) - 1;
  r.pairing = std::move(pairing);
  if (s == 0.0) {
    r.ci95 = {m, m, m};
    if (m == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), m);
      r.p_value = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t_statistic = m / (s / std::sqrt(n));
  r.p_value = student_t_two_sided_p(r.t_statistic, n - 1.0);
  r.ci95 = confidence_interval(d, 0.95);
  return r;
}

// "**" for p < .001, "*" for p < .05, "" otherwise.
inline std::string significance_marker(double p_value) {
  if (p_value < 0.001) return "**";
  if (p_value < 0.05) return "*";
  return "";
}

}  // namespace skipdqn
