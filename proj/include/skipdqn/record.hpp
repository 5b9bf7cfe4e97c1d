#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace skipdqn {

inline constexpr int kMinSessionLength = 10;
inline constexpr int kMaxSessionLength = 20;
inline constexpr std::size_t kNumTrackFeatures = 28;

// Numeric track metadata and audio features carried by every record, in
// column order of the track-features file. `mode` (major/minor) is not part
// of the default set.
inline constexpr std::array<std::string_view, kNumTrackFeatures> kTrackFeatureNames = {
    "duration",         "release_year",      "us_popularity_estimate",
    "acousticness",     "beat_strength",     "bounciness",
    "danceability",     "dyn_range_mean",    "energy",
    "flatness",         "instrumentalness",  "key",
    "liveness",         "loudness",          "mechanism",
    "organism",         "speechiness",       "tempo",
    "time_signature",   "valence",           "acoustic_vector_0",
    "acoustic_vector_1", "acoustic_vector_2", "acoustic_vector_3",
    "acoustic_vector_4", "acoustic_vector_5", "acoustic_vector_6",
    "acoustic_vector_7"};

// One logged playback. Skip labels other than skip_2 are kept only so that
// records can be re-emitted in the original log layout.
struct RawRecord {
  std::string session_id;
  std::string track_id;
  int session_position = 1;
  int session_length = 1;
  int hour_of_day = 0;
  std::string date;
  bool premium = false;
  bool shuffle = false;
  bool context_switch = false;
  bool no_pause = true;
  bool short_pause = false;
  bool long_pause = false;
  int n_seekfwd = 0;
  int n_seekback = 0;
  std::string context_type;
  std::string reason_start;
  std::string reason_end;
  bool skip_1 = false;
  bool skip_2 = false;
  bool skip_3 = false;
  bool not_skipped = true;
  std::array<double, kNumTrackFeatures> track_features{};

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

struct Session {
  std::string id;
  std::vector<RawRecord> records;

  std::size_t size() const { return records.size(); }
  friend bool operator==(const Session&, const Session&) = default;
};

// Returns an empty string when the session satisfies every structural
// invariant, otherwise a short reason.
inline std::string session_violation(const Session& session) {
  const auto n = static_cast<int>(session.records.size());
  if (n < kMinSessionLength) return "short";
  if (n > kMaxSessionLength) return "long";
  for (int i = 0; i < n; ++i) {
    const RawRecord& r = session.records[i];
    if (r.session_id != session.id) return "mixed session ids";
    if (r.session_position != i + 1) return "non-contiguous positions";
    if (r.session_length != n) return "session_length mismatch";
    if (r.hour_of_day < 0 || r.hour_of_day > 23) return "hour_of_day out of range";
    if (r.n_seekfwd < 0 || r.n_seekback < 0) return "negative seek count";
    if (int(r.no_pause) + int(r.short_pause) + int(r.long_pause) != 1) return "pause flags";
  }
  return {};
}

}  // namespace skipdqn
