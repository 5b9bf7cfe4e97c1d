#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace skipdqn;

namespace {

// 2 -> 2 -> 2 network with hand-picked weights.
QNetworkParams<double> hand_network() {
  QNetworkParams<double> p(2, {2});
  p.layers[0].weight << 1, 0, 0, 1;
  p.layers[1].weight << 1, 1, 2, -1;
  p.layers[1].bias << 0.5, 0;
  return p;
}

struct Batch {
  MatrixX<double> x;
  std::vector<int> actions;
  std::vector<double> targets;
};

Batch random_batch(std::size_t dim, int n, std::mt19937_64& rng, double target_scale) {
  std::normal_distribution<double> z;
  Batch b{MatrixX<double>(dim, n), {}, {}};
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = z(rng);
  for (int i = 0; i < n; ++i) {
    b.actions.push_back(static_cast<int>(rng() % 2));
    b.targets.push_back(target_scale * z(rng));
  }
  return b;
}

double max_relative_gradient_error(QNetworkParams<double> p, const Batch& b, LossKind kind) {
  Gradients<double> g;
  loss_and_gradient<double>(p, b.x, b.actions, b.targets, kind, &g);
  constexpr double h = 1e-5;
  double worst = 0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss_and_gradient<double>(p, b.x, b.actions, b.targets, kind, nullptr);
    param = saved - h;
    const double down = loss_and_gradient<double>(p, b.x, b.actions, b.targets, kind, nullptr);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < p.layers[l].weight.size(); ++i)
      check(p.layers[l].weight.data()[i], g.layers[l].weight.data()[i]);
    for (Eigen::Index i = 0; i < p.layers[l].bias.size(); ++i)
      check(p.layers[l].bias[i], g.layers[l].bias[i]);
  }
  return worst;
}

}  // namespace

TEST(QNetwork, ZeroNetworkOutputsZero) {
  const Params p(70, {128, 128, 128});
  std::vector<double> s(70, 3.5);
  const QValues q = q_forward(p, s);
  EXPECT_EQ(q.no_skip, 0.0);
  EXPECT_EQ(q.skip, 0.0);
}

TEST(QNetwork, HandComputedForwardPass) {
  // x = (3, -2): hidden relu(3, -2) = (3, 0); q0 = 3 + 0 + 0.5, q1 = 6 - 0.
  const std::vector<double> x = {3, -2};
  const QValues q = q_forward(hand_network(), x);
  EXPECT_DOUBLE_EQ(q.no_skip, 3.5);
  EXPECT_DOUBLE_EQ(q.skip, 6.0);
}

TEST(QNetwork, DoublingInputDoublesLinearRegimeOutput) {
  QNetworkParams<double> p = hand_network();
  p.layers[1].bias.setZero();
  const std::vector<double> x = {1.5, 0.25}, x2 = {3.0, 0.5};
  const QValues a = q_forward(p, x), b = q_forward(p, x2);
  EXPECT_DOUBLE_EQ(b.no_skip, 2 * a.no_skip);
  EXPECT_DOUBLE_EQ(b.skip, 2 * a.skip);
}

TEST(QNetwork, WidthMismatchIsAnError) {
  const Params p(4, {8});
  const std::vector<double> x(5, 0.0);
  EXPECT_THROW(q_forward(p, x), Error);
}

TEST(QNetwork, BatchMatchesSingleForward) {
  const auto p = QNetworkParams<double>::initialized(6, {16, 16}, 4);
  std::mt19937_64 rng(1);
  const Batch b = random_batch(6, 9, rng, 1.0);
  const MatrixX<double> q = forward_batch(p, b.x);
  for (int c = 0; c < 9; ++c) {
    std::vector<double> col(b.x.col(c).data(), b.x.col(c).data() + 6);
    const QValues v = q_forward(p, col);
    EXPECT_NEAR(q(0, c), v.no_skip, 1e-12);
    EXPECT_NEAR(q(1, c), v.skip, 1e-12);
  }
}

TEST(QNetwork, InitializationIsSeeded) {
  EXPECT_EQ(Params::initialized(70, {128}, 9), Params::initialized(70, {128}, 9));
  EXPECT_NE(parameter_checksum(Params::initialized(70, {128}, 9)),
            parameter_checksum(Params::initialized(70, {128}, 10)));
  EXPECT_EQ(Params::initialized(70, {128, 128, 128}, 1).parameter_count(),
            70u * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 2 + 2);
}

TEST(Loss, HuberPieces) {
  EXPECT_DOUBLE_EQ(huber(0.5), 0.125);
  EXPECT_DOUBLE_EQ(huber(-3.0), 2.5);
  EXPECT_DOUBLE_EQ(huber_derivative(-3.0), -1.0);
  EXPECT_DOUBLE_EQ(huber_derivative(0.25), 0.25);
}

TEST(Loss, ZeroResidualGivesZeroLossAndGradient) {
  const auto p = QNetworkParams<double>::initialized(4, {8}, 2);
  std::mt19937_64 rng(3);
  Batch b = random_batch(4, 5, rng, 1.0);
  const MatrixX<double> q = forward_batch(p, b.x);
  for (int i = 0; i < 5; ++i) b.targets[i] = q(b.actions[i], i);
  Gradients<double> g;
  EXPECT_EQ(loss_and_gradient<double>(p, b.x, b.actions, b.targets, LossKind::Huber, &g), 0.0);
  for (const auto& l : g.layers) {
    EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(l.bias.cwiseAbs().maxCoeff(), 0.0);
  }
  // Adam with a zero gradient leaves parameters untouched.
  QNetworkParams<double> moved = p;
  AdamOptimizer<double>(1e-3).step(moved, g);
  EXPECT_EQ(moved, p);
}

// Analytic gradients against central differences on random small networks.
TEST(GradientCheck, RandomNetworksMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 2 + rng() % 5;
    const std::vector<std::size_t> hidden = {3 + rng() % 6, 3 + rng() % 6};
    auto p = QNetworkParams<double>::initialized(dim, hidden, rng());
    // Nonzero biases keep every unit off the ReLU kink at exactly zero.
    for (auto& l : p.layers)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = std::normal_distribution<double>(0, 0.5)(rng);
    // Targets far from Q keep every residual on one side of the Huber kink.
    const Batch huber_batch = random_batch(dim, 7, rng, 10.0);
    EXPECT_LT(max_relative_gradient_error(p, huber_batch, LossKind::Huber), 1e-4) << trial;
    const Batch mse_batch = random_batch(dim, 7, rng, 1.0);
    EXPECT_LT(max_relative_gradient_error(p, mse_batch, LossKind::MSE), 1e-4) << trial;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  QNetworkParams<double> p(1, {1});
  Gradients<double> g = p;
  g.layers[0].weight(0, 0) = 0.3;
  g.layers[1].bias(1) = -2.0;
  AdamOptimizer<double> opt(0.01);
  opt.step(p, g);
  EXPECT_NEAR(p.layers[0].weight(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.layers[1].bias(1), 0.01, 1e-9);
  EXPECT_EQ(p.layers[1].bias(0), 0.0);
  EXPECT_EQ(opt.steps(), 1u);
}
