#pragma once

// Straightforward reference implementations used as test oracles. They share
// no code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "biser/models.hpp"

namespace biser::oracle {

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamp01(double r) { return std::min(std::max(r, 1e-8), 1.0 - 1e-8); }

// Dense forward pass: x is a 0/1 vector over the row's inputs.
inline std::vector<double> forward(const AEParams& p, const std::vector<double>& x) {
  const int n = p.input_dim(), h = p.hidden_dim();
  std::vector<double> hidden(h), out(n);
  for (int k = 0; k < h; ++k) {
    double z = p.encoder_bias[k];
    for (int i = 0; i < n; ++i) z += p.encoder_weights(i, k) * x[i];
    hidden[k] = sig(z);
  }
  for (int j = 0; j < n; ++j) {
    double z = p.decoder_bias[j];
    for (int k = 0; k < h; ++k) z += p.decoder_weights(k, j) * hidden[k];
    out[j] = sig(z);
  }
  return out;
}

struct RowProblem {
  std::vector<double> x;       // labels of the row (0/1 per position)
  std::vector<double> omega;   // per position; only used where x = 1
  std::vector<double> pseudo;  // per position; only used where x = 1
  double lambda = 0.0;
  double l2 = 0.0;
  double num_pairs = 1.0;
  double num_observed = 1.0;
};

// Loss of one row written directly from the definitions.
inline double row_loss(const AEParams& p, const RowProblem& prob) {
  const auto r = forward(p, prob.x);
  double pointwise = 0.0, bu = 0.0;
  for (std::size_t j = 0; j < r.size(); ++j) {
    const double rr = clamp01(r[j]);
    const double w = prob.x[j] > 0 ? prob.x[j] / prob.omega[j] : 0.0;
    pointwise += -w * std::log(rr) - (1.0 - w) * std::log(1.0 - rr);
    if (prob.x[j] > 0) bu += (r[j] - prob.pseudo[j]) * (r[j] - prob.pseudo[j]);
  }
  double sq = 0.0;
  for (Eigen::Index i = 0; i < p.encoder_weights.size(); ++i) sq += p.encoder_weights.data()[i] * p.encoder_weights.data()[i];
  for (Eigen::Index i = 0; i < p.decoder_weights.size(); ++i) sq += p.decoder_weights.data()[i] * p.decoder_weights.data()[i];
  return pointwise / prob.num_pairs + prob.lambda * bu / prob.num_observed + 0.5 * prob.l2 * sq;
}

// Central finite-difference gradient of `loss` with respect to every
// parameter, in the AEParams layout.
inline AEParams numeric_gradient(const AEParams& p, const std::function<double(const AEParams&)>& loss,
                                 double step = 1e-5) {
  AEParams g = AEParams::zeros(p.orientation, p.input_dim(), p.hidden_dim());
  AEParams q = p;
  auto probe = [&](double* value, double* slot) {
    const double saved = *value;
    *value = saved + step;
    const double up = loss(q);
    *value = saved - step;
    const double down = loss(q);
    *value = saved;
    *slot = (up - down) / (2.0 * step);
  };
  for (Eigen::Index i = 0; i < q.encoder_weights.size(); ++i) probe(q.encoder_weights.data() + i, g.encoder_weights.data() + i);
  for (Eigen::Index i = 0; i < q.encoder_bias.size(); ++i) probe(q.encoder_bias.data() + i, g.encoder_bias.data() + i);
  for (Eigen::Index i = 0; i < q.decoder_weights.size(); ++i) probe(q.decoder_weights.data() + i, g.decoder_weights.data() + i);
  for (Eigen::Index i = 0; i < q.decoder_bias.size(); ++i) probe(q.decoder_bias.data() + i, g.decoder_bias.data() + i);
  return g;
}

// max over entries of |a - b| / max(|a| + |b|, floor).
inline double max_relative_error(const AEParams& a, const AEParams& b, double floor = 1e-7) {
  double worst = 0.0;
  auto scan = [&](const double* x, const double* y, Eigen::Index size) {
    for (Eigen::Index i = 0; i < size; ++i) {
      worst = std::max(worst, std::abs(x[i] - y[i]) / std::max(std::abs(x[i]) + std::abs(y[i]), floor));
    }
  };
  scan(a.encoder_weights.data(), b.encoder_weights.data(), a.encoder_weights.size());
  scan(a.encoder_bias.data(), b.encoder_bias.data(), a.encoder_bias.size());
  scan(a.decoder_weights.data(), b.decoder_weights.data(), a.decoder_weights.size());
  scan(a.decoder_bias.data(), b.decoder_bias.data(), a.decoder_bias.size());
  return worst;
}

// ---------------------------------------------------------------------------
// Ranking metrics from their textbook definitions over a full ranking.

// Full ranking of candidates: stable sort by score descending after sorting
// candidates ascending, so ties fall back to the item index.
inline std::vector<int> full_ranking(const std::vector<double>& scores, std::vector<int> candidates) {
  std::sort(candidates.begin(), candidates.end());
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return candidates;
}

inline double ndcg(const std::vector<int>& ranking, const std::set<int>& rel, int n) {
  double dcg = 0.0;
  for (int r = 0; r < static_cast<int>(ranking.size()); ++r) {
    const double g = rel.count(ranking[r]) ? 1.0 : 0.0;
    if (r < n) dcg += g / std::log2(r + 2.0);
  }
  // Ideal: all relevant items first.
  double idcg = 0.0;
  for (int r = 0; r < static_cast<int>(rel.size()) && r < n; ++r) idcg += 1.0 / std::log2(r + 2.0);
  return dcg / idcg;
}

inline double average_precision(const std::vector<int>& ranking, const std::set<int>& rel, int n) {
  double sum = 0.0;
  for (int r = 0; r < static_cast<int>(ranking.size()) && r < n; ++r) {
    if (!rel.count(ranking[r])) continue;
    int hits_so_far = 0;
    for (int q = 0; q <= r; ++q) hits_so_far += rel.count(ranking[q]) ? 1 : 0;
    sum += static_cast<double>(hits_so_far) / (r + 1);
  }
  return sum / static_cast<double>(rel.size());
}

inline double recall(const std::vector<int>& ranking, const std::set<int>& rel, int n) {
  int hits = 0;
  for (int r = 0; r < static_cast<int>(ranking.size()) && r < n; ++r) hits += rel.count(ranking[r]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

// Per item: (#users with the item in their top n and relevant) / (#users
// with the item in their top n). Missing key = never shown.
inline std::map<int, double> item_precision(const std::vector<std::vector<int>>& rankings,
                                            const std::vector<std::set<int>>& rel, int n) {
  std::map<int, int> shown, hits;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    for (int r = 0; r < static_cast<int>(rankings[u].size()) && r < n; ++r) {
      ++shown[rankings[u][r]];
      if (rel[u].count(rankings[u][r])) ++hits[rankings[u][r]];
    }
  }
  std::map<int, double> out;
  for (auto [item, count] : shown) out[item] = static_cast<double>(hits[item]) / count;
  return out;
}

}  // namespace biser::oracle
