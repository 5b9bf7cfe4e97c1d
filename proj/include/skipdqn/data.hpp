#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "skipdqn/record.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

// ---------------------------------------------------------------------------
// CSV plumbing

namespace csv {

// Splits one line; honours double-quoted fields with "" escapes.
inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "True" || s == "TRUE" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "False" || s == "FALSE" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

inline bool parse_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (*end != '\0') {
    // Some exports write integral columns as "3.0".
    const double d = std::strtod(s.c_str(), &end);
    if (*end != '\0' || d != std::floor(d)) return false;
    out = static_cast<int>(d);
    return true;
  }
  out = static_cast<int>(v);
  return true;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return *end == '\0' && std::isfinite(out);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace csv

inline const std::vector<std::string>& mssd_log_columns() {
  static const std::vector<std::string> cols = {
      "session_id",
      "session_position",
      "session_length",
      "track_id_clean",
      "skip_1",
      "skip_2",
      "skip_3",
      "not_skipped",
      "context_switch",
      "no_pause_before_play",
      "short_pause_before_play",
      "long_pause_before_play",
      "hist_user_behavior_n_seekfwd",
      "hist_user_behavior_n_seekback",
      "hist_user_behavior_is_shuffle",
      "hour_of_day",
      "date",
      "premium",
      "context_type",
      "hist_user_behavior_reason_start",
      "hist_user_behavior_reason_end"};
  return cols;
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t malformed_rows = 0;
  std::size_t missing_track_features = 0;
  std::size_t unknown_category = 0;
  std::size_t sessions_seen = 0;
  std::size_t sessions_accepted = 0;
  std::size_t records_accepted = 0;
  std::size_t short_sessions = 0;
  std::size_t long_sessions = 0;
  std::size_t invalid_sessions = 0;

  nlohmann::json to_json() const {
    return {{"rows_read", rows_read},
            {"malformed_rows", malformed_rows},
            {"missing_track_features", missing_track_features},
            {"unknown_category", unknown_category},
            {"sessions_seen", sessions_seen},
            {"sessions_accepted", sessions_accepted},
            {"records_accepted", records_accepted},
            {"short_sessions", short_sessions},
            {"long_sessions", long_sessions},
            {"invalid_sessions", invalid_sessions}};
  }
};

struct IngestResult {
  std::vector<Session> sessions;
  IngestReport report;
};

using TrackTable = std::unordered_map<std::string, std::array<double, kNumTrackFeatures>>;

// Reads a track-features file keyed by `track_id`. Rows with unparsable
// features are skipped.
inline TrackTable read_track_features(std::istream& in) {
  std::string line;
  if (!in || !std::getline(in, line)) throw Error("unreadable track-features stream");
  const auto header = csv::split_line(line);
  auto col = [&](std::string_view name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw Error("track-features file is missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = col("track_id");
  std::array<std::size_t, kNumTrackFeatures> fcols{};
  for (std::size_t k = 0; k < kNumTrackFeatures; ++k) fcols[k] = col(kTrackFeatureNames[k]);
  TrackTable table;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split_line(line);
    if (f.size() != header.size()) continue;
    std::array<double, kNumTrackFeatures> values{};
    bool ok = true;
    for (std::size_t k = 0; k < kNumTrackFeatures && ok; ++k) ok = csv::parse_double(f[fcols[k]], values[k]);
    if (ok) table.emplace(f[id_col], values);
  }
  return table;
}

namespace detail {

inline void count_unknown(const FeatureSchema& schema, Field field, const std::string& value,
                          IngestReport& report) {
  for (const auto& d : schema.descriptors()) {
    if (d.field != field || d.encoding != Encoding::OneHot) continue;
    if (std::find(d.categories.begin(), d.categories.end(), value) == d.categories.end())
      ++report.unknown_category;
  }
}

inline void close_session(Session& current, std::vector<Session>& out, IngestReport& report) {
  if (current.records.empty()) return;
  ++report.sessions_seen;
  const std::string why = session_violation(current);
  if (why.empty()) {
    ++report.sessions_accepted;
    report.records_accepted += current.records.size();
    out.push_back(std::move(current));
  } else if (why == "short") {
    ++report.short_sessions;
  } else if (why == "long") {
    ++report.long_sessions;
  } else {
    ++report.invalid_sessions;
  }
  current = Session{};
}

}  // namespace detail

// Parses an MSSD session log. When `tracks` is null the log must already
// carry the track-feature columns (pre-joined layout). Rows are grouped into
// sessions by consecutive session_id; sessions failing any invariant are
// dropped and counted, never repaired.
inline IngestResult parse_mssd(std::istream& log, const FeatureSchema& schema,
                               const TrackTable* tracks = nullptr) {
  std::string line;
  if (!log || !std::getline(log, line)) throw Error("unreadable session-log stream");
  const auto header = csv::split_line(line);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index.emplace(header[i], i);

  std::vector<std::string> missing;
  for (const auto& c : mssd_log_columns())
    if (c != "date" && !index.count(c)) missing.push_back(c);
  std::array<std::size_t, kNumTrackFeatures> track_cols{};
  if (!tracks) {
    for (std::size_t k = 0; k < kNumTrackFeatures; ++k) {
      auto it = index.find(std::string(kTrackFeatureNames[k]));
      if (it == index.end()) missing.emplace_back(kTrackFeatureNames[k]);
      else track_cols[k] = it->second;
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing required columns:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
  }
  auto at = [&](const std::vector<std::string>& f, const char* name) -> const std::string& {
    return f[index.at(name)];
  };
  const bool has_date = index.count("date") > 0;

  IngestResult result;
  IngestReport& report = result.report;
  Session current;
  while (std::getline(log, line)) {
    if (line.empty() || line == "\r") continue;
    ++report.rows_read;
    const auto f = csv::split_line(line);
    RawRecord r;
    bool ok = f.size() == header.size();
    if (ok) {
      r.session_id = at(f, "session_id");
      r.track_id = at(f, "track_id_clean");
      if (has_date) r.date = at(f, "date");
      r.context_type = at(f, "context_type");
      r.reason_start = at(f, "hist_user_behavior_reason_start");
      r.reason_end = at(f, "hist_user_behavior_reason_end");
      ok = csv::parse_int(at(f, "session_position"), r.session_position) &&
           csv::parse_int(at(f, "session_length"), r.session_length) &&
           csv::parse_int(at(f, "hour_of_day"), r.hour_of_day) &&
           csv::parse_int(at(f, "hist_user_behavior_n_seekfwd"), r.n_seekfwd) &&
           csv::parse_int(at(f, "hist_user_behavior_n_seekback"), r.n_seekback) &&
           csv::parse_bool(at(f, "skip_1"), r.skip_1) &&
           csv::parse_bool(at(f, "skip_2"), r.skip_2) &&
           csv::parse_bool(at(f, "skip_3"), r.skip_3) &&
           csv::parse_bool(at(f, "not_skipped"), r.not_skipped) &&
           csv::parse_bool(at(f, "context_switch"), r.context_switch) &&
           csv::parse_bool(at(f, "no_pause_before_play"), r.no_pause) &&
           csv::parse_bool(at(f, "short_pause_before_play"), r.short_pause) &&
           csv::parse_bool(at(f, "long_pause_before_play"), r.long_pause) &&
           csv::parse_bool(at(f, "hist_user_behavior_is_shuffle"), r.shuffle) &&
           csv::parse_bool(at(f, "premium"), r.premium) && !r.session_id.empty();
    }
    if (ok) {
      if (tracks) {
        auto it = tracks->find(r.track_id);
        if (it == tracks->end()) {
          ++report.missing_track_features;
          ok = false;
        } else {
          r.track_features = it->second;
        }
      } else {
        for (std::size_t k = 0; k < kNumTrackFeatures && ok; ++k)
          ok = csv::parse_double(f[track_cols[k]], r.track_features[k]);
      }
    }
    if (!ok) {
      ++report.malformed_rows;
      // A dropped row breaks position contiguity, so its session will be
      // rejected when it closes.
      if (f.size() == header.size() && !f[index.at("session_id")].empty()) {
        const std::string& sid = f[index.at("session_id")];
        if (sid != current.id) {
          detail::close_session(current, result.sessions, report);
          current.id = sid;
        }
      }
      continue;
    }
    if (r.session_id != current.id) {
      detail::close_session(current, result.sessions, report);
      current.id = r.session_id;
    }
    detail::count_unknown(schema, Field::ReasonStart, r.reason_start, report);
    detail::count_unknown(schema, Field::ReasonEnd, r.reason_end, report);
    detail::count_unknown(schema, Field::ContextType, r.context_type, report);
    current.records.push_back(std::move(r));
  }
  detail::close_session(current, result.sessions, report);
  if (result.sessions.empty()) throw Error("all sessions rejected during ingestion");
  return result;
}

// Writes sessions in the MSSD log layout. With `tracks` set, track features
// go to a separate keyed file; otherwise they are appended as columns.
inline void write_mssd(const std::vector<Session>& sessions, std::ostream& log,
                       std::ostream* tracks = nullptr) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  const auto& cols = mssd_log_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) log << (i ? "," : "") << cols[i];
  if (!tracks)
    for (auto name : kTrackFeatureNames) log << ',' << name;
  log << '\n';
  std::set<std::string> written;
  if (tracks) {
    *tracks << "track_id";
    for (auto name : kTrackFeatureNames) *tracks << ',' << name;
    *tracks << '\n';
  }
  for (const auto& s : sessions) {
    for (const auto& r : s.records) {
      log << r.session_id << ',' << r.session_position << ',' << r.session_length << ','
          << r.track_id << ',' << b(r.skip_1) << ',' << b(r.skip_2) << ',' << b(r.skip_3) << ','
          << b(r.not_skipped) << ',' << int(r.context_switch) << ',' << int(r.no_pause) << ','
          << int(r.short_pause) << ',' << int(r.long_pause) << ',' << r.n_seekfwd << ','
          << r.n_seekback << ',' << b(r.shuffle) << ',' << r.hour_of_day << ',' << r.date << ','
          << b(r.premium) << ',' << r.context_type << ',' << r.reason_start << ','
          << r.reason_end;
      if (!tracks) {
        for (double v : r.track_features) log << ',' << csv::format_double(v);
      } else if (written.insert(r.track_id).second) {
        *tracks << r.track_id;
        for (double v : r.track_features) *tracks << ',' << csv::format_double(v);
        *tracks << '\n';
      }
      log << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic sessions

enum class Archetype { Listener, Skipper, ListenThenSkip, SkipThenListen };

inline constexpr std::array<std::string_view, 4> kArchetypeNames = {
    "listener", "skipper", "listen-then-skip", "skip-then-listen"};

// How skip_2 is produced. `CopyPremium` is a deterministic toy task whose
// label equals the record's premium flag.
enum class LabelModel { Archetype, CopyPremium };

struct GeneratorConfig {
  std::size_t n_sessions = 1000;
  std::array<double, 4> archetype_mix = {0.25, 0.25, 0.25, 0.25};
  bool leakage_mode = false;
  std::uint64_t seed = 0;
  LabelModel label_model = LabelModel::Archetype;
  double low_skip_probability = 0.1;
  double high_skip_probability = 0.9;
  // Probability that reason_start ignores the previous label.
  double reason_start_noise = 0.1;
  // Behaviour-field noise (label-independent).
  double context_switch_rate = 0.05;
  double seek_rate = 0.2;
  // Spread of track features around their nominal means, in units of the
  // nominal scale.
  double track_feature_scale = 1.0;
  std::size_t track_pool = 2000;
  std::string date = "2018-07-15";

  void validate() const {
    if (n_sessions == 0) throw Error("n_sessions must be at least 1");
    double sum = 0;
    for (double p : archetype_mix) {
      if (p < 0 || !std::isfinite(p)) throw Error("invalid archetype mix");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw Error("archetype mix must sum to 1");
    for (double p : {low_skip_probability, high_skip_probability, reason_start_noise,
                     context_switch_rate})
      if (p < 0 || p > 1) throw Error("generator probability outside [0, 1]");
    if (seek_rate < 0 || track_feature_scale <= 0 || track_pool == 0)
      throw Error("invalid generator noise parameters");
  }
};

inline nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"n_sessions", c.n_sessions},
          {"archetype_mix", c.archetype_mix},
          {"leakage_mode", c.leakage_mode},
          {"seed", c.seed},
          {"label_model", c.label_model == LabelModel::Archetype ? "archetype" : "copy-premium"},
          {"low_skip_probability", c.low_skip_probability},
          {"high_skip_probability", c.high_skip_probability},
          {"reason_start_noise", c.reason_start_noise},
          {"context_switch_rate", c.context_switch_rate},
          {"seek_rate", c.seek_rate},
          {"track_feature_scale", c.track_feature_scale},
          {"track_pool", c.track_pool},
          {"date", c.date}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.n_sessions = j.value("n_sessions", c.n_sessions);
  c.archetype_mix = j.value("archetype_mix", c.archetype_mix);
  c.leakage_mode = j.value("leakage_mode", c.leakage_mode);
  c.seed = j.value("seed", c.seed);
  const std::string model = j.value("label_model", std::string("archetype"));
  if (model == "archetype") c.label_model = LabelModel::Archetype;
  else if (model == "copy-premium") c.label_model = LabelModel::CopyPremium;
  else throw Error("unknown label_model '" + model + "'");
  c.low_skip_probability = j.value("low_skip_probability", c.low_skip_probability);
  c.high_skip_probability = j.value("high_skip_probability", c.high_skip_probability);
  c.reason_start_noise = j.value("reason_start_noise", c.reason_start_noise);
  c.context_switch_rate = j.value("context_switch_rate", c.context_switch_rate);
  c.seek_rate = j.value("seek_rate", c.seek_rate);
  c.track_feature_scale = j.value("track_feature_scale", c.track_feature_scale);
  c.track_pool = j.value("track_pool", c.track_pool);
  c.date = j.value("date", c.date);
  c.validate();
  return c;
}

inline double archetype_skip_probability(Archetype a, int position, int length,
                                         const GeneratorConfig& c) {
  const bool first_half = position <= (length + 1) / 2;
  switch (a) {
    case Archetype::Listener: return c.low_skip_probability;
    case Archetype::Skipper: return c.high_skip_probability;
    case Archetype::ListenThenSkip:
      return first_half ? c.low_skip_probability : c.high_skip_probability;
    case Archetype::SkipThenListen:
      return first_half ? c.high_skip_probability : c.low_skip_probability;
  }
  return 0.5;
}

namespace detail {

struct TrackFeatureModel {
  double mean;
  double scale;
  bool integral;
};

inline const std::array<TrackFeatureModel, kNumTrackFeatures>& track_feature_models() {
  static const std::array<TrackFeatureModel, kNumTrackFeatures> m = {{
      {230.0, 45.0, false},  // duration
      {2010.0, 7.0, true},   // release_year
      {0.98, 0.02, false},   // us_popularity_estimate
      {0.3, 0.25, false},    {0.55, 0.12, false}, {0.6, 0.12, false},  {0.6, 0.15, false},
      {8.0, 2.5, false},     {0.65, 0.2, false},  {0.95, 0.03, false}, {0.1, 0.2, false},
      {5.0, 3.5, true},      // key
      {0.2, 0.15, false},    {-8.0, 3.5, false}, {0.5, 0.2, false},   {0.4, 0.2, false},
      {0.08, 0.06, false},   {120.0, 28.0, false},
      {4.0, 0.4, true},      // time_signature
      {0.5, 0.22, false},    {0.0, 0.3, false},  {0.0, 0.3, false},   {0.0, 0.3, false},
      {0.0, 0.3, false},     {0.0, 0.3, false},  {0.0, 0.3, false},   {0.0, 0.3, false},
      {0.0, 0.3, false},
  }};
  return m;
}

struct SyntheticTrack {
  std::string id;
  std::array<double, kNumTrackFeatures> features;
};

inline std::vector<SyntheticTrack> synthetic_track_pool(const GeneratorConfig& c) {
  std::mt19937_64 rng(derive_seed(c.seed, 0xfeedfacecafeULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SyntheticTrack> pool(c.track_pool);
  const auto& models = track_feature_models();
  for (std::size_t t = 0; t < pool.size(); ++t) {
    pool[t].id = "t_" + std::to_string(t);
    for (std::size_t k = 0; k < kNumTrackFeatures; ++k) {
      double v = models[k].mean + c.track_feature_scale * models[k].scale * normal(rng);
      if (models[k].integral) v = std::round(v);
      pool[t].features[k] = v;
    }
  }
  return pool;
}

template <typename Rng>
bool bernoulli(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

template <typename Rng, typename Container>
const auto& pick(Rng& rng, const Container& items) {
  return items[std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng)];
}

inline Session synthetic_session(const GeneratorConfig& c, std::size_t index,
                                 const std::vector<SyntheticTrack>& pool) {
  static const std::array<std::string, 4> openers = {"appload", "clickrow", "playbtn", "remote"};
  static const std::array<std::string, 6> noisy_starts = {"trackdone", "fwdbtn", "backbtn",
                                                          "clickrow",  "playbtn", "remote"};
  static const std::array<std::string, 5> free_ends = {"trackdone", "fwdbtn", "endplay",
                                                       "backbtn", "remote"};
  const auto& contexts = default_context_type_categories();

  std::mt19937_64 rng(derive_seed(c.seed, index));
  std::discrete_distribution<int> archetype_dist(c.archetype_mix.begin(), c.archetype_mix.end());
  const auto archetype = static_cast<Archetype>(archetype_dist(rng));
  const int length = std::uniform_int_distribution<int>(kMinSessionLength, kMaxSessionLength)(rng);
  const int hour = std::uniform_int_distribution<int>(0, 23)(rng);
  const bool premium = bernoulli(rng, 0.7);
  const bool shuffle = bernoulli(rng, 0.3);
  const std::string context = pick(rng, contexts);
  std::poisson_distribution<int> seeks(c.seek_rate);
  std::discrete_distribution<int> pause({0.8, 0.15, 0.05});

  Session s;
  s.id = "syn_" + std::to_string(index);
  bool prev_skip = false;
  for (int pos = 1; pos <= length; ++pos) {
    RawRecord r;
    r.session_id = s.id;
    r.session_position = pos;
    r.session_length = length;
    r.hour_of_day = hour;
    r.date = c.date;
    r.shuffle = shuffle;
    r.context_type = context;
    r.premium = premium;
    if (c.label_model == LabelModel::CopyPremium) {
      r.premium = bernoulli(rng, 0.5);
      r.skip_2 = r.premium;
    } else {
      r.skip_2 = bernoulli(rng, archetype_skip_probability(archetype, pos, length, c));
    }
    if (pos == 1) {
      r.reason_start = pick(rng, openers);
    } else if (bernoulli(rng, c.reason_start_noise)) {
      r.reason_start = pick(rng, noisy_starts);
    } else {
      r.reason_start = prev_skip ? "fwdbtn" : "trackdone";
    }
    if (c.leakage_mode) {
      r.reason_end = r.skip_2 ? "fwdbtn" : "trackdone";
    } else {
      r.reason_end = pick(rng, free_ends);
    }
    r.skip_1 = r.skip_2 && bernoulli(rng, 0.6);
    r.skip_3 = r.skip_2 || bernoulli(rng, 0.1);
    r.not_skipped = !r.skip_3;
    r.context_switch = pos > 1 && bernoulli(rng, c.context_switch_rate);
    const int p = pause(rng);
    r.no_pause = p == 0;
    r.short_pause = p == 1;
    r.long_pause = p == 2;
    r.n_seekfwd = seeks(rng);
    r.n_seekback = seeks(rng);
    const auto& track = pick(rng, pool);
    r.track_id = track.id;
    r.track_features = track.features;
    prev_skip = r.skip_2;
    s.records.push_back(std::move(r));
  }
  return s;
}

}  // namespace detail

// Labelled sessions from archetype behaviour profiles. Each session draws
// from its own stream derived from (seed, index), so output does not depend
// on generation order.
inline std::vector<Session> generate_synthetic(const GeneratorConfig& config) {
  config.validate();
  const auto pool = detail::synthetic_track_pool(config);
  std::vector<Session> out;
  out.reserve(config.n_sessions);
  for (std::size_t i = 0; i < config.n_sessions; ++i)
    out.push_back(detail::synthetic_session(config, i, pool));
  return out;
}

// ---------------------------------------------------------------------------
// Train/test construction

struct NamedLog {
  std::string name;
  std::vector<Session> sessions;
};

struct FractionSplit {
  double train_fraction = 0.8;
};

// Named logs for training, each named test log becomes its own test stream.
struct LogSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

using SplitPolicy = std::variant<FractionSplit, LogSplit>;

struct TrainTestSplit {
  std::vector<Session> train;
  std::vector<NamedLog> test;
};

// "first k logs train, the rest each test".
inline LogSplit first_logs_for_training(const std::vector<NamedLog>& logs, std::size_t k) {
  LogSplit p;
  for (std::size_t i = 0; i < logs.size(); ++i)
    (i < k ? p.train : p.test).push_back(logs[i].name);
  return p;
}

inline TrainTestSplit split_train_test(const std::vector<NamedLog>& logs, const SplitPolicy& policy) {
  TrainTestSplit out;
  if (const auto* frac = std::get_if<FractionSplit>(&policy)) {
    if (!(frac->train_fraction > 0.0 && frac->train_fraction < 1.0))
      throw Error("train fraction must lie strictly between 0 and 1");
    std::vector<Session> all;
    for (const auto& l : logs) all.insert(all.end(), l.sessions.begin(), l.sessions.end());
    const auto n_train = static_cast<std::size_t>(
        std::llround(frac->train_fraction * static_cast<double>(all.size())));
    NamedLog test{"holdout", {}};
    for (std::size_t i = 0; i < all.size(); ++i)
      (i < n_train ? out.train : test.sessions).push_back(std::move(all[i]));
    out.test.push_back(std::move(test));
  } else {
    const auto& split = std::get<LogSplit>(policy);
    auto find = [&](const std::string& name) -> const NamedLog& {
      for (const auto& l : logs)
        if (l.name == name) return l;
      throw Error("split policy names missing log '" + name + "'");
    };
    std::set<std::string> used;
    for (const auto& name : split.train) {
      if (!used.insert(name).second) throw Error("log '" + name + "' used twice in split");
      const auto& l = find(name);
      out.train.insert(out.train.end(), l.sessions.begin(), l.sessions.end());
    }
    for (const auto& name : split.test) {
      if (!used.insert(name).second) throw Error("log '" + name + "' used twice in split");
      out.test.push_back(find(name));
    }
  }
  if (out.train.empty()) throw Error("empty training side of split");
  if (out.test.empty() ||
      std::all_of(out.test.begin(), out.test.end(), [](const NamedLog& l) { return l.sessions.empty(); }))
    throw Error("empty test side of split");
  return out;
}

inline TrainTestSplit split_train_test(std::vector<Session> sessions, double train_fraction) {
  std::vector<NamedLog> logs;
  logs.push_back({"all", std::move(sessions)});
  return split_train_test(logs, FractionSplit{train_fraction});
}

}  // namespace skipdqn
