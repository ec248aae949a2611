#include <cmath>

#include <gtest/gtest.h>

#include "biser/optim.hpp"

namespace biser {
namespace {

TEST(Xavier, BoundForTwoByTwo) {
  const double bound = std::sqrt(6.0 / 4.0);
  EXPECT_NEAR(bound, 1.2247, 1e-4);
  Matrix w = xavier_init(2, 2, 1);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), bound);
}

TEST(Xavier, DeterministicForSeed) {
  EXPECT_EQ(xavier_init(5, 7, 42), xavier_init(5, 7, 42));
  EXPECT_NE(xavier_init(5, 7, 42), xavier_init(5, 7, 43));
}

TEST(Xavier, EmpiricalVariance) {
  // 400 x 250 = 1e5 draws; uniform on [-b, b] has variance b^2 / 3 = 2 / (fan_in + fan_out).
  for (auto variant : {XavierVariant::kUniform, XavierVariant::kNormal}) {
    Matrix w = xavier_init(400, 250, 7, variant);
    const double mean = w.mean();
    const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
    const double expected = 2.0 / 650.0;
    EXPECT_NEAR(var / expected, 1.0, 0.05);
  }
}

TEST(Xavier, RejectsEmptyShapes) { EXPECT_THROW(xavier_init(0, 3, 1), std::invalid_argument); }

TEST(Adagrad, FirstStepIsSignTimesRate) {
  Vector p = Vector::Zero(3), accum = Vector::Zero(3), g(3);
  g << 0.3, -2.0, 1e-3;
  adagrad_update(p, g, accum, 0.1);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(p[i], -0.1 * g[i] / (std::abs(g[i]) + kAdagradEpsilon));
    EXPECT_NEAR(p[i], -0.1 * (g[i] > 0 ? 1 : -1), 1e-6);
  }
}

TEST(Adagrad, ZeroGradientLeavesParameters) {
  Vector p(2), accum = Vector::Zero(2);
  p << 1.5, -0.5;
  const Vector before = p;
  adagrad_update(p, Vector(Vector::Zero(2)), accum, 0.3);
  EXPECT_EQ(p, before);
}

TEST(Adagrad, SecondStepClosedForm) {
  const double g = 0.4, lr = 0.05;
  Vector p = Vector::Zero(1), accum = Vector::Zero(1), grad = Vector::Constant(1, g);
  adagrad_update(p, grad, accum, lr);
  const double after_one = p[0];
  adagrad_update(p, grad, accum, lr);
  EXPECT_DOUBLE_EQ(p[0] - after_one, -lr * g / (std::sqrt(2 * g * g) + kAdagradEpsilon));
  EXPECT_DOUBLE_EQ(accum[0], 2 * g * g);
}

TEST(Adagrad, WorksOnMatrixRows) {
  RowMatrix p = RowMatrix::Zero(3, 2), accum = RowMatrix::Zero(3, 2);
  RowMatrix g = RowMatrix::Ones(1, 2);
  adagrad_update(p.row(1), g.row(0), accum.row(1), 0.5);
  EXPECT_EQ(p.row(0).squaredNorm(), 0.0);
  EXPECT_NEAR(p(1, 0), -0.5, 1e-7);
}

TEST(Adagrad, StepUpdatesAllAutoencoderParameters) {
  AEParams p = AEParams::zeros(Orientation::kUser, 3, 2);
  AEOptimizerState state = AEOptimizerState::for_params(p);
  AEGradients g = AEParams::zeros(Orientation::kUser, 3, 2);
  g.encoder_weights.setConstant(1.0);
  g.encoder_bias.setConstant(-1.0);
  g.decoder_weights.setConstant(2.0);
  g.decoder_bias.setConstant(0.0);
  adagrad_step(p, g, state, 0.1);
  EXPECT_NEAR(p.encoder_weights(2, 1), -0.1, 1e-7);
  EXPECT_NEAR(p.encoder_bias[0], 0.1, 1e-7);
  EXPECT_NEAR(p.decoder_weights(1, 2), -0.1, 1e-7);
  EXPECT_EQ(p.decoder_bias[1], 0.0);
  EXPECT_DOUBLE_EQ(state.decoder_weights(0, 0), 4.0);
}

TEST(Adagrad, NonFiniteGradientThrows) {
  AEParams p = AEParams::zeros(Orientation::kUser, 2, 2);
  AEOptimizerState state = AEOptimizerState::for_params(p);
  AEGradients g = AEParams::zeros(Orientation::kUser, 2, 2);
  g.decoder_bias[0] = std::nan("");
  EXPECT_THROW(adagrad_step(p, g, state, 0.1), std::runtime_error);
  EXPECT_EQ(p, AEParams::zeros(Orientation::kUser, 2, 2));
}

}  // namespace
}  // namespace biser
