#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "biser/common.hpp"
#include "biser/data.hpp"
#include "biser/propensity.hpp"

namespace biser {

// Predictions are clamped to [kProbEps, 1 - kProbEps] inside the log-losses.
inline constexpr double kProbEps = 1e-8;

inline double clamp_prob(double r) { return std::clamp(r, kProbEps, 1.0 - kProbEps); }

// Cross-entropy pieces: positive loss -log r, negative loss -log(1 - r).
inline double positive_loss(double r_hat) { return -std::log(clamp_prob(r_hat)); }
inline double negative_loss(double r_hat) { return -std::log(1.0 - clamp_prob(r_hat)); }

inline double biased_loss(double y, double r_hat) {
  return y * positive_loss(r_hat) + (1.0 - y) * negative_loss(r_hat);
}

inline double ideal_loss(double rho, double r_hat) {
  return rho * positive_loss(r_hat) + (1.0 - rho) * negative_loss(r_hat);
}

// IPW loss with propensity omega. Negative when y = 1 and omega < 1 is
// possible and allowed.
inline double sipw_loss(double y, double r_hat, double omega) {
  const double w = y / omega;
  return w * positive_loss(r_hat) + (1.0 - w) * negative_loss(r_hat);
}

// d sipw_loss / d r_hat, zero where the clamp is active.
inline double sipw_loss_derivative(double y, double r_hat, double omega) {
  if (r_hat <= kProbEps || r_hat >= 1.0 - kProbEps) return 0.0;
  const double w = y / omega;
  return -w / r_hat + (1.0 - w) / (1.0 - r_hat);
}

inline double bu_loss(std::span<const double> pred_a, std::span<const double> pred_b) {
  if (pred_a.size() != pred_b.size()) throw std::invalid_argument("bu_loss: length mismatch");
  if (pred_a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < pred_a.size(); ++k) {
    const double d = pred_a[k] - pred_b[k];
    sum += d * d;
  }
  return sum / static_cast<double>(pred_a.size());
}

// ---------------------------------------------------------------------------
// Shallow autoencoder (one sigmoid hidden layer, sigmoid output).

enum class Orientation { kUser, kItem };

inline const char* to_string(Orientation o) { return o == Orientation::kUser ? "USER" : "ITEM"; }

struct AEParams {
  Orientation orientation = Orientation::kUser;
  RowMatrix encoder_weights;  // input_dim x hidden_dim
  Vector encoder_bias;        // hidden_dim
  Matrix decoder_weights;     // hidden_dim x input_dim
  Vector decoder_bias;        // input_dim

  static AEParams zeros(Orientation orientation, Index input_dim, Index hidden_dim) {
    AEParams p;
    p.orientation = orientation;
    p.encoder_weights = RowMatrix::Zero(input_dim, hidden_dim);
    p.encoder_bias = Vector::Zero(hidden_dim);
    p.decoder_weights = Matrix::Zero(hidden_dim, input_dim);
    p.decoder_bias = Vector::Zero(input_dim);
    return p;
  }

  Index input_dim() const { return static_cast<Index>(encoder_weights.rows()); }
  Index hidden_dim() const { return static_cast<Index>(encoder_weights.cols()); }

  bool operator==(const AEParams& o) const {
    return orientation == o.orientation && encoder_weights == o.encoder_weights &&
           encoder_bias == o.encoder_bias && decoder_weights == o.decoder_weights &&
           decoder_bias == o.decoder_bias;
  }
};

// Gradients share the parameter layout.
using AEGradients = AEParams;

struct AEActivations {
  Vector hidden;
  Vector output;
};

// Forward pass for a binary input row given by its active (=1) positions.
inline AEActivations ae_activations(const AEParams& params, std::span<const Index> active) {
  AEActivations act;
  act.hidden = params.encoder_bias;
  for (Index i : active) {
    if (i < 0 || i >= params.input_dim()) throw std::out_of_range("ae_forward: input index out of range");
    act.hidden.noalias() += params.encoder_weights.row(i).transpose();
  }
  act.hidden = act.hidden.unaryExpr([](double x) { return sigmoid(x); });
  act.output.noalias() = params.decoder_weights.transpose() * act.hidden;
  act.output += params.decoder_bias;
  act.output = act.output.unaryExpr([](double x) { return sigmoid(x); });
  return act;
}

inline Vector ae_forward(const AEParams& params, std::span<const Index> active) {
  return ae_activations(params, active).output;
}

inline Vector ae_forward(const AEParams& params, const Vector& input_row) {
  if (input_row.size() != params.input_dim()) {
    throw std::invalid_argument("ae_forward: input length " + std::to_string(input_row.size()) +
                                " != input_dim " + std::to_string(params.input_dim()));
  }
  std::vector<Index> active;
  for (Index i = 0; i < input_row.size(); ++i) {
    if (input_row[i] != 0.0) active.push_back(i);
  }
  return ae_forward(params, active);
}

// Predictions for every row of `inputs` (rows x input_dim), batched.
inline RowMatrix ae_predict_all(const AEParams& params, const Interactions& inputs) {
  if (inputs.num_items != params.input_dim()) throw std::invalid_argument("ae_predict_all: dimension mismatch");
  const Index rows = inputs.num_users;
  RowMatrix hidden(rows, params.hidden_dim());
  for (Index r = 0; r < rows; ++r) {
    Vector h = params.encoder_bias;
    for (Index i : inputs.row(r)) h.noalias() += params.encoder_weights.row(i).transpose();
    hidden.row(r) = h.unaryExpr([](double x) { return sigmoid(x); }).transpose();
  }
  RowMatrix out = hidden * params.decoder_weights;
  out.rowwise() += params.decoder_bias.transpose();
  return out.unaryExpr([](double x) { return sigmoid(x); });
}

// Full user x item score matrix for an autoencoder of either orientation.
inline RowMatrix ae_score_matrix(const AEParams& params, const Interactions& train) {
  if (params.orientation == Orientation::kUser) return ae_predict_all(params, train);
  return ae_predict_all(params, train.transposed()).transpose();
}

// Scores of `scores` (users x items) at the pairs of `pairs`.
inline PairValues gather_pairs(const RowMatrix& scores, const Interactions& pairs) {
  PairValues out(pairs.rows.size());
  for (Index u = 0; u < pairs.num_users; ++u) {
    auto& row = out[static_cast<std::size_t>(u)];
    row.reserve(pairs.row(u).size());
    for (Index i : pairs.row(u)) row.push_back(scores(u, i));
  }
  return out;
}

struct LossBreakdown {
  double sipw_term = 0.0;
  double bu_term = 0.0;
  double l2_term = 0.0;
  double lambda = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    sipw_term += o.sipw_term;
    bu_term += o.bu_term;
    l2_term += o.l2_term;
    total += o.total;
    return *this;
  }
};

// Global normalizers: |D| for the pointwise term, |D~| for the BU term.
struct LossScale {
  double num_pairs = 1.0;
  double num_observed = 1.0;
};

// One training row (a user for UAE, an item for IAE). `omega` and
// `pseudo_labels` are aligned with `positives`; an empty omega means
// omega = 1 everywhere, empty pseudo_labels require lambda = 0. Absent
// positions carry y = 0, where the inverse weight does not enter the loss.
struct RowBatch {
  std::span<const Index> positives;
  std::span<const double> omega;
  std::span<const double> pseudo_labels;
};

namespace detail {

inline void check_finite(const auto& m, const char* name) {
  if (!m.allFinite()) throw std::runtime_error(std::string("non-finite gradient in ") + name);
}

}  // namespace detail

// Loss of one row and its exact gradient, written into `grads` (resized as
// needed). Pointwise SIPW over every position of the row, lambda-weighted BU
// over the row's positives, and l2/2 * ||W||^2 over both weight matrices.
inline LossBreakdown combined_loss_and_grads_into(const AEParams& params, const RowBatch& batch,
                                                  double lambda, double l2, const LossScale& scale,
                                                  AEGradients& grads) {
  const Index n = params.input_dim();
  const auto npos = batch.positives.size();
  if (!batch.omega.empty() && batch.omega.size() != npos) {
    throw std::invalid_argument("combined_loss_and_grads: omega not aligned with positives");
  }
  if (lambda != 0.0 && batch.pseudo_labels.size() != npos) {
    throw std::invalid_argument("combined_loss_and_grads: pseudo labels not aligned with positives");
  }
  const AEActivations act = ae_activations(params, batch.positives);

  Vector dz(n);
  double sipw_sum = 0.0;
  std::size_t k = 0;
  for (Index j = 0; j < n; ++j) {
    const double r = act.output[j];
    double y = 0.0;
    double omega = 1.0;
    if (k < npos && batch.positives[k] == j) {
      y = 1.0;
      if (!batch.omega.empty()) omega = batch.omega[k];
      ++k;
    }
    sipw_sum += sipw_loss(y, r, omega);
    dz[j] = sipw_loss_derivative(y, r, omega) * r * (1.0 - r) / scale.num_pairs;
  }

  double bu_sum = 0.0;
  if (lambda != 0.0 || !batch.pseudo_labels.empty()) {
    for (std::size_t p = 0; p < npos && p < batch.pseudo_labels.size(); ++p) {
      const Index j = batch.positives[p];
      const double r = act.output[j];
      const double diff = r - batch.pseudo_labels[p];
      bu_sum += diff * diff;
      dz[j] += lambda * 2.0 * diff * r * (1.0 - r) / scale.num_observed;
    }
  }

  grads.orientation = params.orientation;
  grads.decoder_bias = dz;
  grads.decoder_weights.noalias() = act.hidden * dz.transpose();
  Vector dh = params.decoder_weights * dz;
  dh.array() *= act.hidden.array() * (1.0 - act.hidden.array());
  grads.encoder_bias = dh;
  grads.encoder_weights = l2 * params.encoder_weights;
  for (Index i : batch.positives) grads.encoder_weights.row(i) += dh.transpose();
  grads.decoder_weights += l2 * params.decoder_weights;

  detail::check_finite(grads.encoder_weights, "encoder_weights");
  detail::check_finite(grads.encoder_bias, "encoder_bias");
  detail::check_finite(grads.decoder_weights, "decoder_weights");
  detail::check_finite(grads.decoder_bias, "decoder_bias");

  LossBreakdown loss;
  loss.sipw_term = sipw_sum / scale.num_pairs;
  loss.bu_term = bu_sum / scale.num_observed;
  loss.l2_term = 0.5 * l2 *
                 (params.encoder_weights.squaredNorm() + params.decoder_weights.squaredNorm());
  loss.lambda = lambda;
  loss.total = loss.sipw_term + lambda * loss.bu_term + loss.l2_term;
  return loss;
}

inline std::pair<LossBreakdown, AEGradients> combined_loss_and_grads(const AEParams& params,
                                                                     const RowBatch& batch,
                                                                     double lambda, double l2,
                                                                     const LossScale& scale) {
  AEGradients grads;
  LossBreakdown loss = combined_loss_and_grads_into(params, batch, lambda, l2, scale, grads);
  return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// Matrix factorization with a sigmoid link, no biases.

struct MFParams {
  RowMatrix user_factors;  // m x k
  RowMatrix item_factors;  // n x k

  Index num_users() const { return static_cast<Index>(user_factors.rows()); }
  Index num_items() const { return static_cast<Index>(item_factors.rows()); }
  Index rank() const { return static_cast<Index>(user_factors.cols()); }

  bool operator==(const MFParams&) const = default;
};

inline double mf_score(const MFParams& params, Index u, Index i) {
  if (u < 0 || u >= params.num_users() || i < 0 || i >= params.num_items()) {
    throw std::out_of_range("mf_score: index (" + std::to_string(u) + ", " + std::to_string(i) +
                            ") out of range");
  }
  return sigmoid(params.user_factors.row(u).dot(params.item_factors.row(i)));
}

inline RowMatrix mf_score_matrix(const MFParams& params) {
  RowMatrix logits = params.user_factors * params.item_factors.transpose();
  return logits.unaryExpr([](double x) { return sigmoid(x); });
}

inline RowMatrix predict_final(const RowMatrix& pred_uae, const RowMatrix& pred_iae) {
  if (pred_uae.rows() != pred_iae.rows() || pred_uae.cols() != pred_iae.cols()) {
    throw std::invalid_argument("predict_final: shape mismatch");
  }
  return 0.5 * (pred_uae + pred_iae);
}

// ---------------------------------------------------------------------------
// Checkpoints: text, hex-float values, bit-exact round trip.

struct Checkpoint {
  KeyValues meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw DataError("checkpoint has no tensor '" + name + "'");
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "biser-checkpoint 1\n";
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
  char buf[64];
  for (const auto& [name, t] : ckpt.tensors) {
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%a", t(r, c));
        out << (c ? " " : "") << buf;
      }
      out << '\n';
    }
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "biser-checkpoint 1") {
    throw DataError(path.string() + ": not a version-1 checkpoint");
  }
  Checkpoint ckpt;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind, name;
    ls >> kind >> name;
    if (kind == "meta") {
      std::string value;
      ls >> value;
      ckpt.meta[name] = value;
    } else if (kind == "tensor") {
      Eigen::Index rows = 0, cols = 0;
      if (!(ls >> rows >> cols) || rows < 0 || cols < 0) throw DataError(path.string() + ": bad tensor header");
      Matrix t(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) throw DataError(path.string() + ": truncated tensor " + name);
        const char* p = line.c_str();
        for (Eigen::Index c = 0; c < cols; ++c) {
          char* end = nullptr;
          t(r, c) = std::strtod(p, &end);
          if (end == p) throw DataError(path.string() + ": bad value in tensor " + name);
          p = end;
        }
      }
      ckpt.tensors.emplace_back(name, std::move(t));
    } else if (!kind.empty()) {
      throw DataError(path.string() + ": unexpected line '" + line + "'");
    }
  }
  return ckpt;
}

inline Checkpoint to_checkpoint(const AEParams& p) {
  Checkpoint c;
  c.meta["model"] = "AE";
  c.meta["orientation"] = to_string(p.orientation);
  c.tensors.emplace_back("encoder_weights", p.encoder_weights);
  c.tensors.emplace_back("encoder_bias", p.encoder_bias);
  c.tensors.emplace_back("decoder_weights", p.decoder_weights);
  c.tensors.emplace_back("decoder_bias", p.decoder_bias);
  return c;
}

inline AEParams ae_from_checkpoint(const Checkpoint& c) {
  auto it = c.meta.find("model");
  if (it == c.meta.end() || it->second != "AE") throw DataError("checkpoint is not an autoencoder");
  AEParams p;
  p.orientation = c.meta.at("orientation") == "ITEM" ? Orientation::kItem : Orientation::kUser;
  p.encoder_weights = c.tensor("encoder_weights");
  p.encoder_bias = c.tensor("encoder_bias");
  p.decoder_weights = c.tensor("decoder_weights");
  p.decoder_bias = c.tensor("decoder_bias");
  if (p.decoder_weights.rows() != p.hidden_dim() || p.decoder_weights.cols() != p.input_dim() ||
      p.encoder_bias.size() != p.hidden_dim() || p.decoder_bias.size() != p.input_dim()) {
    throw DataError("autoencoder checkpoint has inconsistent shapes");
  }
  return p;
}

inline Checkpoint to_checkpoint(const MFParams& p) {
  Checkpoint c;
  c.meta["model"] = "MF";
  c.tensors.emplace_back("user_factors", p.user_factors);
  c.tensors.emplace_back("item_factors", p.item_factors);
  return c;
}

inline MFParams mf_from_checkpoint(const Checkpoint& c) {
  auto it = c.meta.find("model");
  if (it == c.meta.end() || it->second != "MF") throw DataError("checkpoint is not a factorization model");
  MFParams p;
  p.user_factors = c.tensor("user_factors");
  p.item_factors = c.tensor("item_factors");
  if (p.user_factors.cols() != p.item_factors.cols()) throw DataError("MF checkpoint rank mismatch");
  return p;
}

}  // namespace biser
