#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "skipdqn/util.hpp"

namespace skipdqn {

inline constexpr int kNumActions = 2;

enum class LossKind { Huber, MSE };

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out
};

struct QValues {
  double no_skip = 0.0;
  double skip = 0.0;
};

// Fully-connected Q-network: rectified-linear hidden layers and a linear
// two-unit head, Q(s, no-skip) and Q(s, skip).
template <typename Scalar = float>
struct QNetworkParams {
  std::vector<DenseLayer<Scalar>> layers;

  QNetworkParams() = default;

  // Zero-initialized network of the given shape.
  QNetworkParams(std::size_t input_dim, const std::vector<std::size_t>& hidden) {
    if (input_dim == 0) throw Error("Q-network input dimension must be positive");
    std::size_t in = input_dim;
    for (std::size_t h : hidden) {
      layers.push_back({MatrixX<Scalar>::Zero(h, in), VectorX<Scalar>::Zero(h)});
      in = h;
    }
    layers.push_back({MatrixX<Scalar>::Zero(kNumActions, in), VectorX<Scalar>::Zero(kNumActions)});
  }

  // He-style uniform fan-in initialization, biases zero.
  static QNetworkParams initialized(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                    std::uint64_t seed) {
    QNetworkParams p(input_dim, hidden);
    std::mt19937_64 rng(seed);
    for (auto& layer : p.layers) {
      const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
          layer.weight(r, c) = static_cast<Scalar>(u(rng));
    }
    return p;
  }

  std::size_t input_dim() const {
    return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols());
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  template <typename Other>
  QNetworkParams<Other> cast() const {
    QNetworkParams<Other> out;
    for (const auto& l : layers)
      out.layers.push_back({l.weight.template cast<Other>(), l.bias.template cast<Other>()});
    return out;
  }

  friend bool operator==(const QNetworkParams& a, const QNetworkParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
          a.layers[i].weight.cols() != b.layers[i].weight.cols())
        return false;
      if (a.layers[i].weight != b.layers[i].weight || a.layers[i].bias != b.layers[i].bias)
        return false;
    }
    return true;
  }
};

// FNV-1a over the raw parameter bytes, in layer order.
template <typename Scalar>
std::string parameter_checksum(const QNetworkParams<Scalar>& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : p.layers) {
    h = fnv1a({reinterpret_cast<const char*>(l.weight.data()), l.weight.size() * sizeof(Scalar)}, h);
    h = fnv1a({reinterpret_cast<const char*>(l.bias.data()), l.bias.size() * sizeof(Scalar)}, h);
  }
  return to_hex(h);
}

// Batched forward pass. `inputs` is input_dim x batch; returns 2 x batch.
template <typename Scalar>
MatrixX<Scalar> forward_batch(const QNetworkParams<Scalar>& params, const MatrixX<Scalar>& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != params.input_dim())
    throw Error("state width " + std::to_string(inputs.rows()) +
                " does not match network input " + std::to_string(params.input_dim()));
  MatrixX<Scalar> h = inputs;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    MatrixX<Scalar> z = l.weight * h;
    z.colwise() += l.bias;
    if (i + 1 < params.layers.size()) z = z.cwiseMax(Scalar(0));
    h = std::move(z);
  }
  return h;
}

template <typename Scalar>
QValues q_forward(const QNetworkParams<Scalar>& params, std::span<const double> state) {
  if (state.size() != params.input_dim())
    throw Error("state width " + std::to_string(state.size()) +
                " does not match network input " + std::to_string(params.input_dim()));
  VectorX<Scalar> h(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) h[i] = static_cast<Scalar>(state[i]);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    VectorX<Scalar> z = l.weight * h + l.bias;
    if (i + 1 < params.layers.size()) z = z.cwiseMax(Scalar(0));
    h = std::move(z);
  }
  return {static_cast<double>(h[0]), static_cast<double>(h[1])};
}

template <typename Scalar>
using Gradients = QNetworkParams<Scalar>;

template <typename Scalar>
Scalar huber(Scalar delta) {
  const Scalar a = std::abs(delta);
  return a <= Scalar(1) ? Scalar(0.5) * delta * delta : a - Scalar(0.5);
}

template <typename Scalar>
Scalar huber_derivative(Scalar delta) {
  return std::clamp(delta, Scalar(-1), Scalar(1));
}

// Mean per-sample loss between Q(s_i, a_i) and targets y_i, and its gradient
// with respect to every parameter (backpropagation).
template <typename Scalar>
Scalar loss_and_gradient(const QNetworkParams<Scalar>& params, const MatrixX<Scalar>& inputs,
                         std::span<const int> actions,
                         std::type_identity_t<std::span<const Scalar>> targets,
                         LossKind loss_kind, Gradients<Scalar>* grads) {
  const Eigen::Index batch = inputs.cols();
  if (batch == 0 || static_cast<std::size_t>(batch) != actions.size() ||
      actions.size() != targets.size())
    throw Error("inconsistent batch sizes");
  const std::size_t n_layers = params.layers.size();
  std::vector<MatrixX<Scalar>> activations;
  activations.reserve(n_layers + 1);
  activations.push_back(inputs);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = params.layers[i];
    MatrixX<Scalar> z = l.weight * activations.back();
    z.colwise() += l.bias;
    if (i + 1 < n_layers) z = z.cwiseMax(Scalar(0));
    activations.push_back(std::move(z));
  }
  const MatrixX<Scalar>& q = activations.back();
  MatrixX<Scalar> delta = MatrixX<Scalar>::Zero(kNumActions, batch);
  Scalar loss = 0;
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int a = actions[b];
    if (a < 0 || a >= kNumActions) throw Error("action out of range");
    const Scalar r = q(a, b) - targets[b];
    if (loss_kind == LossKind::Huber) {
      loss += huber(r);
      delta(a, b) = huber_derivative(r) * inv_batch;
    } else {
      loss += Scalar(0.5) * r * r;
      delta(a, b) = r * inv_batch;
    }
  }
  loss *= inv_batch;
  if (!grads) return loss;

  if (grads->layers.size() != n_layers) *grads = params;
  for (std::size_t i = n_layers; i-- > 0;) {
    const MatrixX<Scalar>& input = activations[i];
    grads->layers[i].weight.noalias() = delta * input.transpose();
    grads->layers[i].bias = delta.rowwise().sum();
    if (i == 0) break;
    MatrixX<Scalar> upstream = params.layers[i].weight.transpose() * delta;
    // ReLU gate: activation > 0 iff pre-activation > 0.
    delta = upstream.cwiseProduct((input.array() > Scalar(0)).template cast<Scalar>().matrix());
  }
  return loss;
}

// Adaptive-moment gradient descent.
template <typename Scalar>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(QNetworkParams<Scalar>& params, const Gradients<Scalar>& grads) {
    if (m_.layers.size() != params.layers.size()) {
      m_ = QNetworkParams<Scalar>(params);
      v_ = QNetworkParams<Scalar>(params);
      for (auto* moments : {&m_, &v_})
        for (auto& l : moments->layers) {
          l.weight.setZero();
          l.bias.setZero();
        }
      t_ = 0;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto step_size = static_cast<Scalar>(lr_ * std::sqrt(c2) / c1);
    const auto eps_hat = static_cast<Scalar>(eps_ * std::sqrt(c2));
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight,
             v_.layers[i].weight, b1, b2, step_size, eps_hat);
      update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias,
             b1, b2, step_size, eps_hat);
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  template <typename Mat>
  static void update(Mat& p, const Mat& g, Mat& m, Mat& v, Scalar b1, Scalar b2, Scalar step_size,
                     Scalar eps_hat) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= step_size * m.array() / (v.array().sqrt() + eps_hat);
  }

  double lr_, beta1_, beta2_, eps_;
  QNetworkParams<Scalar> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace skipdqn
