#pragma once

#include <random>
#include <string>
#include <vector>

#include "skipdqn/skipdqn.hpp"

namespace skipdqn::fixtures {

// Valid session of length n; labels cycle through `labels` when given.
inline Session make_session(int n, const std::string& id = "s0", std::vector<int> labels = {},
                            std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Session s{id, {}};
  for (int i = 1; i <= n; ++i) {
    RawRecord r;
    r.session_id = id;
    r.track_id = "t" + std::to_string(i);
    r.session_position = i;
    r.session_length = n;
    r.hour_of_day = 13;
    r.date = "2018-07-15";
    r.premium = i % 2 == 0;
    r.context_type = "user_collection";
    r.reason_start = i % 3 == 0 ? "fwdbtn" : "trackdone";
    r.reason_end = "trackdone";
    r.skip_2 = labels.empty() ? (i % 2 == 1) : labels[(i - 1) % labels.size()] != 0;
    for (auto& f : r.track_features) f = z(rng);
    s.records.push_back(r);
  }
  return s;
}

inline std::vector<Session> synthetic(std::size_t n, std::uint64_t seed, bool leakage = false) {
  GeneratorConfig c;
  c.n_sessions = n;
  c.seed = seed;
  c.leakage_mode = leakage;
  return generate_synthetic(c);
}

inline FeatureSchema fitted(const std::vector<Session>& sessions, SchemaConfig cfg = {}) {
  return fit_standardizer(build_schema(cfg), sessions);
}

}  // namespace skipdqn::fixtures
