#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "skipdqn/agent.hpp"
#include "skipdqn/env.hpp"
#include "skipdqn/network.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

// Scalar model over a batch: column j of the input is one state, entry j of
// the result its output.
using BatchFunction = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

// Each player is the set of state columns it controls.
using Players = std::vector<std::vector<std::size_t>>;

inline BatchFunction pointwise(std::function<double(std::span<const double>)> f) {
  return [f = std::move(f)](const Eigen::MatrixXd& x) {
    Eigen::VectorXd out(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out[j] = f(std::span<const double>(x.col(j).data(), static_cast<std::size_t>(x.rows())));
    return out;
  };
}

inline Players singleton_players(std::size_t width) {
  Players p(width);
  for (std::size_t i = 0; i < width; ++i) p[i] = {i};
  return p;
}

// One player per active descriptor; one-hot blocks move together.
inline Players schema_players(const FeatureSchema& schema) {
  Players p;
  const auto offsets = schema.offsets();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!offsets[i]) continue;
    std::vector<std::size_t> cols(schema.descriptor(i).width());
    std::iota(cols.begin(), cols.end(), *offsets[i]);
    p.push_back(std::move(cols));
  }
  return p;
}

struct BackgroundSet {
  Eigen::MatrixXd states;  // width x B
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }

  std::string fingerprint() const {
    return to_hex(fnv1a({reinterpret_cast<const char*>(states.data()),
                         static_cast<std::size_t>(states.size()) * sizeof(double)}));
  }
};

// Uniform sample (with replacement) of `size` records from the stream.
inline BackgroundSet sample_background(std::span<const EncodedSession> sessions, std::size_t size,
                                       std::uint64_t seed) {
  std::vector<const StateVector*> pool;
  for (const auto& s : sessions)
    for (const auto& st : s.states) pool.push_back(&st);
  if (pool.empty() || size == 0) throw Error("background set needs at least one record");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  BackgroundSet bg{Eigen::MatrixXd(pool.front()->size(), size), seed};
  for (std::size_t j = 0; j < size; ++j) {
    const StateVector& s = *pool[pick(rng)];
    for (std::size_t r = 0; r < s.size(); ++r) bg.states(r, j) = s[r];
  }
  return bg;
}

struct ShapResult {
  std::vector<double> phi;
  double base = 0.0;
  double fx = 0.0;
};

namespace detail {

using Mask = std::vector<char>;

// v(S) = mean over background rows of f(x_S, b_{not S}), for each mask.
inline std::vector<double> coalition_values(const BatchFunction& f, std::span<const double> x,
                                            const BackgroundSet& bg, const Players& players,
                                            const std::vector<Mask>& masks) {
  const auto width = static_cast<Eigen::Index>(x.size());
  const auto B = static_cast<Eigen::Index>(bg.size());
  if (bg.states.rows() != width) throw Error("background width does not match the explained state");
  const std::size_t per_chunk = std::max<std::size_t>(1, 16384 / bg.size());
  std::vector<double> out(masks.size());
  for (std::size_t start = 0; start < masks.size(); start += per_chunk) {
    const std::size_t count = std::min(per_chunk, masks.size() - start);
    Eigen::MatrixXd batch(width, static_cast<Eigen::Index>(count) * B);
    for (std::size_t k = 0; k < count; ++k) {
      auto block = batch.middleCols(static_cast<Eigen::Index>(k) * B, B);
      block = bg.states;
      const Mask& m = masks[start + k];
      for (std::size_t p = 0; p < players.size(); ++p) {
        if (!m[p]) continue;
        for (std::size_t c : players[p]) block.row(static_cast<Eigen::Index>(c)).setConstant(x[c]);
      }
    }
    const Eigen::VectorXd y = f(batch);
    for (std::size_t k = 0; k < count; ++k)
      out[start + k] = y.segment(static_cast<Eigen::Index>(k) * B, B).mean();
  }
  return out;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
}

inline double evaluate_point(const BatchFunction& f, std::span<const double> x) {
  Eigen::MatrixXd m(x.size(), 1);
  for (std::size_t i = 0; i < x.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = x[i];
  return f(m)[0];
}

template <typename Fn>
void for_each_subset(int m, int size, Fn&& fn) {
  std::vector<int> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    fn(idx);
    int i = size - 1;
    while (i >= 0 && idx[i] == m - size + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < size; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace detail

inline constexpr int kMaxExactPlayers = 12;

// Shapley values by full enumeration of the 2^M coalitions.
inline ShapResult exact_shap(const BatchFunction& f, std::span<const double> x,
                             const BackgroundSet& background, const Players& players) {
  const int m = static_cast<int>(players.size());
  if (m < 1) throw Error("no players to attribute");
  if (m > kMaxExactPlayers)
    throw Error("exact Shapley enumeration limited to " + std::to_string(kMaxExactPlayers) + " players");
  const std::size_t n_masks = std::size_t{1} << m;
  std::vector<detail::Mask> masks(n_masks, detail::Mask(m, 0));
  for (std::size_t s = 0; s < n_masks; ++s)
    for (int p = 0; p < m; ++p) masks[s][p] = (s >> p) & 1U;
  const auto v = detail::coalition_values(f, x, background, players, masks);

  std::vector<double> weight(m);
  for (int k = 0; k < m; ++k)
    weight[k] = std::exp(std::lgamma(k + 1.0) + std::lgamma(m - k) - std::lgamma(m + 1.0));
  ShapResult r;
  r.phi.assign(m, 0.0);
  for (std::size_t s = 0; s < n_masks; ++s) {
    const int size = std::popcount(s);
    for (int p = 0; p < m; ++p) {
      if ((s >> p) & 1U) continue;
      r.phi[p] += weight[size] * (v[s | (std::size_t{1} << p)] - v[s]);
    }
  }
  r.base = v[0];
  r.fx = v[n_masks - 1];
  return r;
}

// Kernel SHAP: weighted least squares over coalitions under the Shapley
// kernel, with v(empty) = base and v(full) = f(x) imposed as constraints.
// Subset sizes whose coalitions fit in the budget are enumerated exactly
// (smallest and largest first); the rest of the budget is sampled in
// complementary pairs.
inline ShapResult kernel_shap(const BatchFunction& f, std::span<const double> x,
                              const BackgroundSet& background, const Players& players,
                              std::size_t n_samples, std::uint64_t seed, int max_retries = 5) {
  const int m = static_cast<int>(players.size());
  if (m < 1) throw Error("no players to attribute");
  if (background.size() == 0) throw Error("empty background set");
  ShapResult r;
  r.fx = detail::evaluate_point(f, x);
  {
    const Eigen::VectorXd b = f(background.states);
    r.base = b.mean();
  }
  const double delta = r.fx - r.base;
  if (m == 1) {
    r.phi = {delta};
    return r;
  }
  const double max_coalitions = std::ldexp(1.0, m) - 2.0;
  // A coalition and its complement give the same regression direction once
  // the last player is eliminated, so paired sampling needs about 2M draws.
  if (static_cast<double>(n_samples) < std::min(2.0 * m, max_coalitions))
    throw Error("kernel SHAP needs at least min(2M, 2^M - 2) samples");
  const auto budget_total = static_cast<double>(std::min<double>(n_samples, max_coalitions));

  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    std::mt19937_64 rng(attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::vector<detail::Mask> masks;
    std::vector<double> weights;
    std::unordered_map<std::string, std::size_t> seen;

    const int n_sizes = (m - 1 + 1) / 2;  // ceil((m-1)/2)
    const int n_paired = (m - 1) / 2;
    std::vector<double> size_weight(n_sizes);
    for (int s = 1; s <= n_sizes; ++s) {
      size_weight[s - 1] = (m - 1.0) / (s * double(m - s));
      if (s <= n_paired) size_weight[s - 1] *= 2.0;
    }
    const double total_w = std::accumulate(size_weight.begin(), size_weight.end(), 0.0);
    for (auto& w : size_weight) w /= total_w;

    double budget = budget_total;
    int complete = 0;
    std::vector<double> remaining = size_weight;
    for (int s = 1; s <= n_sizes; ++s) {
      double n_subsets = detail::binomial(m, s);
      if (s <= n_paired) n_subsets *= 2.0;
      const double rem_total =
          std::accumulate(remaining.begin() + (s - 1), remaining.end(), 0.0);
      if (budget * remaining[s - 1] / rem_total < n_subsets - 1e-8) break;
      ++complete;
      budget -= n_subsets;
      double w = size_weight[s - 1] / detail::binomial(m, s);
      if (s <= n_paired) w /= 2.0;
      detail::for_each_subset(m, s, [&](const std::vector<int>& idx) {
        detail::Mask mask(m, 0);
        for (int i : idx) mask[i] = 1;
        masks.push_back(mask);
        weights.push_back(w);
        if (s <= n_paired) {
          for (auto& c : mask) c = !c;
          masks.push_back(mask);
          weights.push_back(w);
        }
      });
    }
    const std::size_t n_fixed = masks.size();
    const double fixed_weight =
        complete == 0 ? 0.0 : std::accumulate(size_weight.begin(), size_weight.begin() + complete, 0.0);

    if (complete < n_sizes && budget >= 1.0) {
      std::vector<double> tail(size_weight.begin() + complete, size_weight.end());
      std::discrete_distribution<int> size_dist(tail.begin(), tail.end());
      std::vector<int> order(m);
      std::iota(order.begin(), order.end(), 0);
      auto add = [&](const detail::Mask& mask) {
        std::string key(mask.begin(), mask.end());
        auto it = seen.find(key);
        if (it != seen.end()) {
          weights[it->second] += 1.0;
        } else {
          seen.emplace(std::move(key), masks.size());
          masks.push_back(mask);
          weights.push_back(1.0);
        }
      };
      auto remaining_budget = static_cast<long long>(budget);
      const long long max_draws = remaining_budget * 4 + 100;
      long long draws = 0;
      while (static_cast<long long>(masks.size() - n_fixed) < remaining_budget && draws < max_draws) {
        ++draws;
        const int s = complete + 1 + size_dist(rng);
        std::shuffle(order.begin(), order.end(), rng);
        detail::Mask mask(m, 0);
        for (int i = 0; i < s; ++i) mask[order[i]] = 1;
        add(mask);
        if (s <= n_paired && static_cast<long long>(masks.size() - n_fixed) < remaining_budget) {
          for (auto& c : mask) c = !c;
          add(mask);
        }
      }
      double sampled = 0.0;
      for (std::size_t k = n_fixed; k < weights.size(); ++k) sampled += weights[k];
      const double left = 1.0 - fixed_weight;
      for (std::size_t k = n_fixed; k < weights.size(); ++k) weights[k] *= left / sampled;
    }
    if (masks.empty()) continue;

    const auto v = detail::coalition_values(f, x, background, players, masks);
    // Eliminate the last player through the efficiency constraint.
    const auto n = static_cast<Eigen::Index>(masks.size());
    Eigen::MatrixXd design(n, m - 1);
    Eigen::VectorXd target(n);
    Eigen::VectorXd w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& mask = masks[static_cast<std::size_t>(k)];
      const double last = mask[m - 1];
      for (int j = 0; j < m - 1; ++j) design(k, j) = mask[j] - last;
      target[k] = v[static_cast<std::size_t>(k)] - r.base - last * delta;
      w[k] = weights[static_cast<std::size_t>(k)];
    }
    const Eigen::MatrixXd normal = design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd rhs = design.transpose() * w.asDiagonal() * target;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(normal);
    qr.setThreshold(1e-10);
    if (qr.rank() < m - 1) continue;
    const Eigen::VectorXd beta = qr.solve(rhs);
    r.phi.assign(m, 0.0);
    double sum = 0.0;
    for (int j = 0; j < m - 1; ++j) {
      r.phi[j] = beta[j];
      sum += beta[j];
    }
    r.phi[m - 1] = delta - sum;
    return r;
  }
  throw Error("kernel SHAP regression stayed singular after retries");
}

// ---------------------------------------------------------------------------
// Attribution over sessions

enum class ExplanationTarget { QMargin, QSkip, ChosenQ };

inline std::string_view to_string(ExplanationTarget t) {
  switch (t) {
    case ExplanationTarget::QMargin: return "q_margin";
    case ExplanationTarget::QSkip: return "q_skip";
    case ExplanationTarget::ChosenQ: return "chosen_q";
  }
  return "?";
}

inline ExplanationTarget parse_explanation_target(std::string_view s) {
  for (auto t : {ExplanationTarget::QMargin, ExplanationTarget::QSkip, ExplanationTarget::ChosenQ})
    if (to_string(t) == s) return t;
  throw Error("unknown explanation target '" + std::string(s) + "'");
}

template <typename Scalar>
BatchFunction q_function(const QNetworkParams<Scalar>& params, ExplanationTarget target) {
  return [&params, target](const Eigen::MatrixXd& x) {
    const MatrixX<Scalar> q = forward_batch(params, MatrixX<Scalar>(x.cast<Scalar>()));
    Eigen::VectorXd out(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double q0 = q(0, j), q1 = q(1, j);
      switch (target) {
        case ExplanationTarget::QMargin: out[j] = q1 - q0; break;
        case ExplanationTarget::QSkip: out[j] = q1; break;
        case ExplanationTarget::ChosenQ: out[j] = std::max(q0, q1); break;
      }
    }
    return out;
  };
}

struct AttributionConfig {
  std::size_t n_episodes = 50;
  std::size_t n_samples = 200;
  std::size_t background_size = 100;
  std::uint64_t background_seed = 0;
  std::uint64_t seed = 0;
  ExplanationTarget target = ExplanationTarget::QMargin;
};

struct AttributionRow {
  std::string name;  // category or descriptor label
  Group group = Group::UB;
  FType ftype = FType::TR;
  double mean_abs_shap = 0.0;
  std::vector<std::pair<double, double>> summary;  // (value percentile, phi)

  std::string display() const {
    return name + " | " + std::string(to_string(group)) + " | " + std::string(to_string(ftype));
  }
  std::string short_name() const { return std::string(to_string(ftype)) + " " + name; }
};

struct AttributionReport {
  std::vector<AttributionRow> rows;  // sorted by mean |phi|, descending
  std::size_t n_episodes = 0;
  std::size_t n_records = 0;
  std::size_t n_samples_per_record = 0;
  std::size_t background_size = 0;
  std::uint64_t background_seed = 0;
  std::string background_fingerprint;
  std::string schema_fingerprint;
  ExplanationTarget target = ExplanationTarget::QMargin;
  double max_local_accuracy_error = 0.0;

  // 1-based rank of the first row of the given feature type, or 0.
  std::size_t rank_of(std::string_view ftype_code) const {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (to_string(rows[i].ftype) == ftype_code) return i + 1;
    return 0;
  }
};

inline nlohmann::json to_json(const AttributionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& [pct, phi] : row.summary) summary.push_back({pct, phi});
    rows.push_back({{"feature", row.display()},
                    {"name", row.short_name()},
                    {"group", to_string(row.group)},
                    {"type", to_string(row.ftype)},
                    {"mean_abs_shap", row.mean_abs_shap},
                    {"summary", summary}});
  }
  return {{"format", "skipdqn.attribution"},
          {"version", 1},
          {"metadata",
           {{"n_episodes", r.n_episodes},
            {"n_records", r.n_records},
            {"n_samples_per_record", r.n_samples_per_record},
            {"background_size", r.background_size},
            {"background_seed", r.background_seed},
            {"background_fingerprint", r.background_fingerprint},
            {"schema_fingerprint", r.schema_fingerprint},
            {"explained_output", to_string(r.target)},
            {"imputation", "interventional mean over background"},
            {"max_local_accuracy_error", r.max_local_accuracy_error}}},
          {"rows", rows}};
}

inline std::string attribution_csv(const AttributionReport& r) {
  std::string out = "feature,group,type,mean_abs_shap\n";
  char buf[40];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g", row.mean_abs_shap);
    out += "\"" + row.display() + "\"," + std::string(to_string(row.group)) + "," +
           std::string(to_string(row.ftype)) + "," + buf + "\n";
  }
  return out;
}

// Explains every record of the first `n_episodes` sessions. One-hot blocks
// are single players; each block's phi is reported on the row of the
// category the record actually holds (other categories of the block get 0).
inline AttributionReport attribute_sessions(const Params& params,
                                            std::span<const EncodedSession> sessions,
                                            const FeatureSchema& schema,
                                            const BackgroundSet& background,
                                            const AttributionConfig& config) {
  if (params.input_dim() != schema.active_width())
    throw Error("network width does not match schema width");
  const Players players = schema_players(schema);
  const BatchFunction f = q_function(params, config.target);

  struct RowRef {
    std::size_t player;
    std::optional<std::size_t> column;  // set for one-hot category rows
  };
  std::vector<AttributionRow> rows;
  std::vector<RowRef> refs;
  {
    std::size_t player = 0;
    const auto offsets = schema.offsets();
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!offsets[i]) continue;
      const auto& d = schema.descriptor(i);
      if (d.encoding == Encoding::OneHot) {
        for (std::size_t c = 0; c < d.categories.size(); ++c) {
          rows.push_back({title_case(d.categories[c]), d.group(), d.ftype, 0.0, {}});
          refs.push_back({player, *offsets[i] + c});
        }
      } else {
        rows.push_back({d.label, d.group(), d.ftype, 0.0, {}});
        refs.push_back({player, std::nullopt});
      }
      ++player;
    }
  }

  AttributionReport report;
  report.n_samples_per_record = config.n_samples;
  report.background_size = background.size();
  report.background_seed = background.seed;
  report.background_fingerprint = background.fingerprint();
  report.schema_fingerprint = schema.fingerprint();
  report.target = config.target;

  std::vector<std::vector<double>> values(rows.size()), phis(rows.size());
  const std::size_t n_eps = std::min(config.n_episodes, sessions.size());
  std::uint64_t record_index = 0;
  for (std::size_t e = 0; e < n_eps; ++e) {
    for (const auto& state : sessions[e].states) {
      const ShapResult shap = kernel_shap(f, state.view(), background, players, config.n_samples,
                                          derive_seed(config.seed, record_index++));
      const double total = shap.base + std::accumulate(shap.phi.begin(), shap.phi.end(), 0.0);
      report.max_local_accuracy_error =
          std::max(report.max_local_accuracy_error, std::abs(total - shap.fx));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const RowRef& ref = refs[k];
        double value, phi;
        if (ref.column) {
          value = state[*ref.column];
          phi = value > 0.5 ? shap.phi[ref.player] : 0.0;
        } else {
          value = state[players[ref.player].front()];
          phi = shap.phi[ref.player];
        }
        values[k].push_back(value);
        phis[k].push_back(phi);
      }
    }
  }
  report.n_episodes = n_eps;
  report.n_records = static_cast<std::size_t>(record_index);

  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t n = values[k].size();
    if (n == 0) continue;
    std::vector<double> sorted = values[k];
    std::sort(sorted.begin(), sorted.end());
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto lo = std::lower_bound(sorted.begin(), sorted.end(), values[k][i]) - sorted.begin();
      const auto hi = std::upper_bound(sorted.begin(), sorted.end(), values[k][i]) - sorted.begin();
      const double pct = (static_cast<double>(lo) + 0.5 * static_cast<double>(hi - lo)) / static_cast<double>(n);
      rows[k].summary.emplace_back(pct, phis[k][i]);
      abs_sum += std::abs(phis[k][i]);
    }
    rows[k].mean_abs_shap = abs_sum / static_cast<double>(n);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const AttributionRow& a, const AttributionRow& b) {
    return a.mean_abs_shap > b.mean_abs_shap;
  });
  report.rows = std::move(rows);
  return report;
}

}  // namespace skipdqn
