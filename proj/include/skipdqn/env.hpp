#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "skipdqn/record.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

// Train terminates the episode on the first wrong guess; Eval walks the
// complete session.
enum class EnvMode { Train, Eval };

// A session pre-encoded under one schema, with its skip_2 labels.
struct EncodedSession {
  std::string id;
  std::vector<StateVector> states;
  std::vector<int> labels;

  std::size_t size() const { return states.size(); }
};

inline EncodedSession encode_session(const Session& session, const FeatureSchema& schema,
                                     EncodeDiagnostics* diag = nullptr) {
  EncodedSession out;
  out.id = session.id;
  out.states.reserve(session.size());
  out.labels.reserve(session.size());
  for (const auto& r : session.records) {
    out.states.push_back(encode_record(r, schema, diag));
    out.labels.push_back(r.skip_2 ? 1 : 0);
  }
  return out;
}

inline std::vector<EncodedSession> encode_sessions(const std::vector<Session>& sessions,
                                                   const FeatureSchema& schema) {
  std::vector<EncodedSession> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(encode_session(s, schema));
  return out;
}

struct StepOutcome {
  double reward = 0.0;
  std::optional<StateVector> next_state;
  bool done = false;
  bool correct = false;
};

struct Transition {
  StateVector state;
  int action = 0;
  double reward = 0.0;
  std::optional<StateVector> next_state;
  bool done = false;
};

// Episodic skip-guessing environment over one logged session. Successor
// states are always the session's own next record.
class SkipEnvironment {
 public:
  const StateVector& reset(const Session& session, const FeatureSchema& schema, EnvMode mode) {
    if (session.records.empty()) throw Error("cannot reset on an empty session");
    owned_ = encode_session(session, schema);
    return start(&*owned_, mode);
  }

  // `episode` must outlive the episode.
  const StateVector& reset(const EncodedSession& episode, EnvMode mode) {
    if (episode.states.empty()) throw Error("cannot reset on an empty session");
    owned_.reset();
    return start(&episode, mode);
  }

  StepOutcome step(int action) {
    if (!episode_) throw Error("step before reset");
    if (finished_) throw Error("step on a finished episode");
    if (action != 0 && action != 1) throw Error("action must be 0 or 1");
    StepOutcome out;
    out.correct = action == episode_->labels[cursor_ - 1];
    out.reward = out.correct ? 1.0 : 0.0;
    const bool last = cursor_ == episode_->size();
    out.done = last || (mode_ == EnvMode::Train && !out.correct);
    if (out.done) {
      finished_ = true;
    } else {
      ++cursor_;
      out.next_state = episode_->states[cursor_ - 1];
    }
    return out;
  }

  // 1-based position of the record awaiting a guess.
  std::size_t cursor() const { return cursor_; }
  bool finished() const { return finished_; }
  EnvMode mode() const { return mode_; }
  int label() const { return episode_->labels[cursor_ - 1]; }

 private:
  const StateVector& start(const EncodedSession* episode, EnvMode mode) {
    episode_ = episode;
    mode_ = mode;
    cursor_ = 1;
    finished_ = false;
    return episode_->states.front();
  }

  std::optional<EncodedSession> owned_;
  const EncodedSession* episode_ = nullptr;
  EnvMode mode_ = EnvMode::Train;
  std::size_t cursor_ = 1;
  bool finished_ = false;
};

using Policy = std::function<int(const StateVector&)>;

inline std::vector<Transition> rollout(const Policy& policy, const EncodedSession& episode,
                                       EnvMode mode) {
  SkipEnvironment env;
  StateVector state = env.reset(episode, mode);
  std::vector<Transition> out;
  while (true) {
    const int action = policy(state);
    StepOutcome o = env.step(action);
    out.push_back({state, action, o.reward, o.next_state, o.done});
    if (o.done) break;
    state = std::move(*o.next_state);
  }
  return out;
}

inline std::vector<Transition> rollout(const Policy& policy, const Session& session,
                                       const FeatureSchema& schema, EnvMode mode) {
  return rollout(policy, encode_session(session, schema), mode);
}

}  // namespace skipdqn
