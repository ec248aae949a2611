#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "biser/common.hpp"
#include "biser/models.hpp"

namespace biser {

inline constexpr double kAdagradEpsilon = 1e-8;

enum class XavierVariant { kUniform, kNormal };

// Glorot initialization with fan_in = rows, fan_out = cols. Uniform draws
// from [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]; the normal
// variant uses std sqrt(2/(fan_in+fan_out)).
inline Matrix xavier_init(Index rows, Index cols, std::uint64_t seed,
                          XavierVariant variant = XavierVariant::kUniform) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("xavier_init: dims must be positive");
  const double fan_sum = static_cast<double>(rows) + static_cast<double>(cols);
  Rng rng(seed);
  Matrix out(rows, cols);
  if (variant == XavierVariant::kUniform) {
    const double bound = std::sqrt(6.0 / fan_sum);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) out(r, c) = rng.uniform(-bound, bound);
    }
  } else {
    const double sd = std::sqrt(2.0 / fan_sum);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) out(r, c) = sd * rng.normal();
    }
  }
  return out;
}

// accum += g^2; param -= lr * g / (sqrt(accum) + eps). Works on any
// same-shaped Eigen expressions (blocks and rows included).
template <typename P, typename G, typename A>
void adagrad_update(const Eigen::MatrixBase<P>& param, const Eigen::MatrixBase<G>& grad,
                    const Eigen::MatrixBase<A>& accum, double lr, double eps = kAdagradEpsilon) {
  auto& p = const_cast<Eigen::MatrixBase<P>&>(param);
  auto& a = const_cast<Eigen::MatrixBase<A>&>(accum);
  a.array() += grad.array().square();
  p.array() -= lr * grad.array() / (a.array().sqrt() + eps);
}

struct AEOptimizerState {
  RowMatrix encoder_weights;
  Vector encoder_bias;
  Matrix decoder_weights;
  Vector decoder_bias;
  double epsilon = kAdagradEpsilon;

  static AEOptimizerState for_params(const AEParams& p) {
    AEOptimizerState s;
    s.encoder_weights = RowMatrix::Zero(p.encoder_weights.rows(), p.encoder_weights.cols());
    s.encoder_bias = Vector::Zero(p.encoder_bias.size());
    s.decoder_weights = Matrix::Zero(p.decoder_weights.rows(), p.decoder_weights.cols());
    s.decoder_bias = Vector::Zero(p.decoder_bias.size());
    return s;
  }
};

inline void adagrad_step(AEParams& params, const AEGradients& grads, AEOptimizerState& state, double lr) {
  if (!grads.encoder_weights.allFinite() || !grads.encoder_bias.allFinite() ||
      !grads.decoder_weights.allFinite() || !grads.decoder_bias.allFinite()) {
    throw std::runtime_error("adagrad_step: non-finite gradient");
  }
  adagrad_update(params.encoder_weights, grads.encoder_weights, state.encoder_weights, lr, state.epsilon);
  adagrad_update(params.encoder_bias, grads.encoder_bias, state.encoder_bias, lr, state.epsilon);
  adagrad_update(params.decoder_weights, grads.decoder_weights, state.decoder_weights, lr, state.epsilon);
  adagrad_update(params.decoder_bias, grads.decoder_bias, state.decoder_bias, lr, state.epsilon);
}

}  // namespace biser
