#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skipdqn/env.hpp"
#include "skipdqn/network.hpp"
#include "skipdqn/schema.hpp"
#include "skipdqn/util.hpp"

namespace skipdqn {

using Params = QNetworkParams<float>;

struct AgentConfig {
  double learning_rate = 1e-3;
  double gamma = 0.9;
  std::size_t batch_size = 256;
  // Gradient steps between target-network syncs.
  std::size_t target_sync_every = 256;
  // Environment steps between gradient steps. 256 gives the alternate
  // reading of "frequency of updates".
  std::size_t learn_every = 1;
  std::size_t replay_capacity = 10000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  // Fraction of training episodes over which epsilon decays linearly.
  double epsilon_decay_fraction = 0.2;
  LossKind loss = LossKind::Huber;
  std::vector<std::size_t> hidden = {128, 128, 128};
  std::size_t episodes = 20000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
    if (batch_size == 0 || batch_size > replay_capacity)
      throw Error("batch_size must be in [1, replay_capacity]");
    if (target_sync_every == 0 || learn_every == 0) throw Error("update cadences must be positive");
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    for (double e : {epsilon_start, epsilon_end, epsilon_decay_fraction})
      if (e < 0.0 || e > 1.0) throw Error("epsilon schedule values must lie in [0, 1]");
    if (hidden.empty()) throw Error("at least one hidden layer is required");
  }
};

inline nlohmann::json to_json(const AgentConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"gamma", c.gamma},
          {"batch_size", c.batch_size},
          {"target_sync_every", c.target_sync_every},
          {"learn_every", c.learn_every},
          {"replay_capacity", c.replay_capacity},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_fraction", c.epsilon_decay_fraction},
          {"loss", c.loss == LossKind::Huber ? "huber" : "mse"},
          {"hidden", c.hidden},
          {"episodes", c.episodes},
          {"seed", c.seed}};
}

inline AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.gamma = j.value("gamma", c.gamma);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.target_sync_every = j.value("target_sync_every", c.target_sync_every);
  c.learn_every = j.value("learn_every", c.learn_every);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
  c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
  c.epsilon_decay_fraction = j.value("epsilon_decay_fraction", c.epsilon_decay_fraction);
  const std::string loss = j.value("loss", std::string("huber"));
  if (loss == "huber") c.loss = LossKind::Huber;
  else if (loss == "mse") c.loss = LossKind::MSE;
  else throw Error("unknown loss '" + loss + "'");
  c.hidden = j.value("hidden", c.hidden);
  c.episodes = j.value("episodes", c.episodes);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// Fixed-capacity FIFO ring of transitions with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw Error("replay capacity must be positive");
    storage_.reserve(capacity);
  }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i-th oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= storage_.size()) throw Error("replay index out of range");
    return storage_[(head_ + i) % storage_.size()];
  }

  template <typename Rng>
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    if (n > storage_.size()) throw Error("replay buffer holds fewer transitions than requested");
    std::uniform_int_distribution<std::size_t> pick(0, storage_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &storage_[pick(rng)];
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> storage_;
};

// argmax over (Q(s,0), Q(s,1)); ties go to 0 (no skip).
inline int greedy_action(const QValues& q) { return q.skip > q.no_skip ? 1 : 0; }

template <typename Scalar>
int act_greedy(const QNetworkParams<Scalar>& params, const StateVector& state) {
  return greedy_action(q_forward(params, state.view()));
}

template <typename Rng>
int explore(int greedy, double epsilon, Rng& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon)
    return std::uniform_int_distribution<int>(0, 1)(rng);
  return greedy;
}

template <typename Scalar, typename Rng>
int act_epsilon(const QNetworkParams<Scalar>& params, const StateVector& state, double epsilon,
                Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw Error("epsilon must lie in [0, 1]");
  if (epsilon >= 1.0) return std::uniform_int_distribution<int>(0, 1)(rng);
  return explore(act_greedy(params, state), epsilon, rng);
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> stack_states(std::span<const StateVector* const> states, std::size_t width) {
  MatrixX<Scalar> m(width, states.size());
  for (std::size_t c = 0; c < states.size(); ++c) {
    if (states[c]->size() != width) throw Error("state width mismatch in batch");
    for (std::size_t r = 0; r < width; ++r) m(r, c) = static_cast<Scalar>((*states[c])[r]);
  }
  return m;
}

}  // namespace detail

// y_i = r_i for terminal transitions, else r_i + gamma * max_a Q_target(s'_i, a).
template <typename Scalar>
std::vector<Scalar> td_targets(std::span<const Transition* const> batch,
                               const QNetworkParams<Scalar>& target, double gamma) {
  if (batch.empty()) throw Error("empty batch");
  std::vector<Scalar> y(batch.size());
  std::vector<const StateVector*> next;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = static_cast<Scalar>(batch[i]->reward);
    if (batch[i]->done) continue;
    if (!batch[i]->next_state) throw Error("non-terminal transition without successor");
    next.push_back(&*batch[i]->next_state);
    where.push_back(i);
  }
  if (!next.empty() && gamma != 0.0) {
    const MatrixX<Scalar> q =
        forward_batch(target, detail::stack_states<Scalar>(next, target.input_dim()));
    for (std::size_t k = 0; k < where.size(); ++k)
      y[where[k]] += static_cast<Scalar>(gamma) * q.col(static_cast<Eigen::Index>(k)).maxCoeff();
  }
  return y;
}

template <typename Scalar>
std::vector<Scalar> td_targets(const std::vector<Transition>& batch,
                               const QNetworkParams<Scalar>& target, double gamma) {
  std::vector<const Transition*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  return td_targets<Scalar>(ptrs, target, gamma);
}

// Online network, its frozen copy and the optimizer state.
template <typename Scalar = float>
struct DqnLearner {
  QNetworkParams<Scalar> online;
  QNetworkParams<Scalar> target;
  AdamOptimizer<Scalar> optimizer;
  Gradients<Scalar> grads;
  std::uint64_t gradient_steps = 0;

  DqnLearner(QNetworkParams<Scalar> init, double learning_rate)
      : online(std::move(init)), target(online), optimizer(learning_rate) {}

  void sync_target() { target = online; }
};

// One gradient step on a uniformly sampled batch; returns the batch loss
// before the update.
template <typename Scalar, typename Rng>
double learn_step(const ReplayBuffer& buffer, DqnLearner<Scalar>& learner,
                  const AgentConfig& config, Rng& rng) {
  if (buffer.size() < config.batch_size)
    throw Error("replay buffer underfull: " + std::to_string(buffer.size()) + " < " +
                std::to_string(config.batch_size));
  const auto batch = buffer.sample(config.batch_size, rng);
  const std::vector<Scalar> y = td_targets<Scalar>(batch, learner.target, config.gamma);
  std::vector<const StateVector*> states(batch.size());
  std::vector<int> actions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    states[i] = &batch[i]->state;
    actions[i] = batch[i]->action;
  }
  const MatrixX<Scalar> x = detail::stack_states<Scalar>(states, learner.online.input_dim());
  const Scalar loss =
      loss_and_gradient<Scalar>(learner.online, x, actions, y, config.loss, &learner.grads);
  learner.optimizer.step(learner.online, learner.grads);
  ++learner.gradient_steps;
  return static_cast<double>(loss);
}

inline double epsilon_at(const AgentConfig& c, std::size_t episode) {
  const double horizon = c.epsilon_decay_fraction * static_cast<double>(c.episodes);
  if (horizon <= 0.0) return c.epsilon_end;
  const double f = static_cast<double>(episode) / horizon;
  if (f >= 1.0) return c.epsilon_end;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * f;
}

struct TraceEntry {
  std::size_t episode = 0;
  double reward = 0.0;
  double mean_loss = std::numeric_limits<double>::quiet_NaN();  // NaN before warm-up
  double epsilon = 0.0;
};

struct TrainResult {
  Params params;
  std::vector<TraceEntry> trace;
  std::uint64_t env_steps = 0;
  std::uint64_t gradient_steps = 0;
};

// Offline DQN training over logged sessions in Train mode. Single-threaded
// and fully determined by config.seed.
inline TrainResult train(std::span<const EncodedSession> sessions, std::size_t input_dim,
                         const AgentConfig& config) {
  config.validate();
  if (sessions.empty()) throw Error("empty training stream");
  std::mt19937_64 explore_rng(derive_seed(config.seed, 2));
  std::mt19937_64 replay_rng(derive_seed(config.seed, 3));
  std::mt19937_64 order_rng(derive_seed(config.seed, 4));

  DqnLearner<float> learner(Params::initialized(input_dim, config.hidden, derive_seed(config.seed, 1)),
                            config.learning_rate);
  ReplayBuffer buffer(config.replay_capacity);
  SkipEnvironment env;
  TrainResult result;
  result.trace.reserve(config.episodes);

  std::vector<std::size_t> order(sessions.size());
  std::size_t order_pos = order.size();
  for (std::size_t ep = 0; ep < config.episodes; ++ep) {
    if (order_pos == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
      order_pos = 0;
    }
    const EncodedSession& episode = sessions[order[order_pos++]];
    const double eps = epsilon_at(config, ep);
    TraceEntry entry{ep, 0.0, std::numeric_limits<double>::quiet_NaN(), eps};
    double loss_sum = 0.0;
    std::size_t loss_n = 0;

    StateVector state = env.reset(episode, EnvMode::Train);
    while (true) {
      const int action = act_epsilon(learner.online, state, eps, explore_rng);
      StepOutcome o = env.step(action);
      entry.reward += o.reward;
      ++result.env_steps;
      const bool done = o.done;
      std::optional<StateVector> next = o.next_state;
      buffer.push({std::move(state), action, o.reward, std::move(o.next_state), done});
      if (buffer.size() >= config.batch_size && result.env_steps % config.learn_every == 0) {
        loss_sum += learn_step(buffer, learner, config, replay_rng);
        ++loss_n;
        if (learner.gradient_steps % config.target_sync_every == 0) learner.sync_target();
      }
      if (done) break;
      state = std::move(*next);
    }
    if (loss_n) entry.mean_loss = loss_sum / static_cast<double>(loss_n);
    result.trace.push_back(entry);
  }
  result.gradient_steps = learner.gradient_steps;
  result.params = std::move(learner.online);
  return result;
}

inline TrainResult train(const std::vector<Session>& sessions, const FeatureSchema& schema,
                         const AgentConfig& config) {
  const auto encoded = encode_sessions(sessions, schema);
  return train(encoded, schema.active_width(), config);
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename Scalar>
nlohmann::json params_to_json(const QNetworkParams<Scalar>& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", w}, {"bias", b}});
  }
  return layers;
}

template <typename Scalar>
QNetworkParams<Scalar> params_from_json(const nlohmann::json& layers) {
  QNetworkParams<Scalar> p;
  Eigen::Index prev_rows = -1;
  for (const auto& jl : layers) {
    const auto rows = jl.at("rows").get<Eigen::Index>();
    const auto cols = jl.at("cols").get<Eigen::Index>();
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
        static_cast<Eigen::Index>(b.size()) != rows || (prev_rows >= 0 && cols != prev_rows))
      throw Error("malformed layer in checkpoint");
    DenseLayer<Scalar> layer{MatrixX<Scalar>(rows, cols), VectorX<Scalar>(rows)};
    for (Eigen::Index i = 0; i < rows * cols; ++i) layer.weight.data()[i] = static_cast<Scalar>(w[i]);
    for (Eigen::Index i = 0; i < rows; ++i) layer.bias[i] = static_cast<Scalar>(b[i]);
    p.layers.push_back(std::move(layer));
    prev_rows = rows;
  }
  if (p.layers.empty() || p.layers.back().weight.rows() != kNumActions)
    throw Error("checkpoint network must end in a two-unit head");
  return p;
}

struct Checkpoint {
  FeatureSchema schema;
  AgentConfig config;
  Params params;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "skipdqn.checkpoint"},
          {"version", 1},
          {"schema_fingerprint", c.schema.fingerprint()},
          {"input_dim", c.schema.active_width()},
          {"schema", schema_to_json(c.schema)},
          {"agent_config", to_json(c.config)},
          {"layers", params_to_json(c.params)}};
}

// Verifies the embedded schema fingerprint, the network width and, when
// given, the caller's expected fingerprint.
inline Checkpoint checkpoint_from_json(const nlohmann::json& j,
                                       const std::string& expected_fingerprint = {}) {
  if (j.value("format", "") != "skipdqn.checkpoint" || j.value("version", 0) != 1)
    throw Error("not a version-1 checkpoint");
  Checkpoint c;
  c.schema = schema_from_json(j.at("schema"));
  const auto fp = j.at("schema_fingerprint").get<std::string>();
  if (c.schema.fingerprint() != fp) throw Error("checkpoint schema fingerprint mismatch");
  if (!expected_fingerprint.empty() && fp != expected_fingerprint)
    throw Error("checkpoint was trained on a different schema (" + fp + " vs " +
                expected_fingerprint + ")");
  c.config = agent_config_from_json(j.at("agent_config"));
  c.params = params_from_json<float>(j.at("layers"));
  if (c.params.input_dim() != c.schema.active_width() ||
      j.at("input_dim").get<std::size_t>() != c.schema.active_width())
    throw Error("checkpoint network width does not match its schema");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << checkpoint_to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::string& expected_fingerprint = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  return checkpoint_from_json(nlohmann::json::parse(in), expected_fingerprint);
}

}  // namespace skipdqn
