#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "biser/common.hpp"
#include "biser/data.hpp"
#include "biser/propensity.hpp"

namespace biser {

enum class ExposureMode { kPerItem, kPerPair };

struct SynthConfig {
  Index num_users = 200;
  Index num_items = 300;
  Index latent_rank = 8;
  double popularity_exponent = 0.5;
  // Affine map of the latent dot product before the sigmoid; the defaults put
  // the mean relevance near 0.2.
  double relevance_scale = 2.5;
  double relevance_offset = -2.0;
  ExposureMode exposure = ExposureMode::kPerItem;
  std::uint64_t seed = 0;
};

struct SynthGroundTruth {
  RowMatrix rho;    // users x items
  RowMatrix omega;  // users x items (constant down columns in per-item mode)
  std::vector<double> item_exposure;
  Index latent_rank = 0;
  std::uint64_t seed = 0;

  Index num_users() const { return static_cast<Index>(rho.rows()); }
  Index num_items() const { return static_cast<Index>(rho.cols()); }
};

inline constexpr double kRelevanceThreshold = 0.5;

// rho = sigmoid(scale * <a_u, b_i> / sqrt(rank) + offset) with standard normal
// factors. Item exposure follows a power law over a random popularity order:
// the item at popularity rank k (1-based) gets (1/k)^exponent, so the most
// exposed item has omega = 1 and exponent 0 gives flat exposure. Per-pair mode
// multiplies in a user activity factor drawn from [0.5, 1].
inline SynthGroundTruth generate_ground_truth(const SynthConfig& cfg) {
  if (cfg.num_users < 2 || cfg.num_items < 2) throw ConfigError("synthetic data needs at least 2 users and 2 items");
  if (cfg.latent_rank < 1) throw ConfigError("latent_rank must be >= 1");
  if (cfg.popularity_exponent < 0) throw ConfigError("popularity_exponent must be >= 0");
  const Index m = cfg.num_users, n = cfg.num_items, k = cfg.latent_rank;

  Rng factor_rng(derive_seed(cfg.seed, 1));
  RowMatrix a(m, k), b(n, k);
  for (Index u = 0; u < m; ++u)
    for (Index d = 0; d < k; ++d) a(u, d) = factor_rng.normal();
  for (Index i = 0; i < n; ++i)
    for (Index d = 0; d < k; ++d) b(i, d) = factor_rng.normal();

  SynthGroundTruth gt;
  gt.latent_rank = k;
  gt.seed = cfg.seed;
  gt.rho = RowMatrix(m, n);
  const double scale = cfg.relevance_scale / std::sqrt(static_cast<double>(k));
  for (Index u = 0; u < m; ++u) {
    for (Index i = 0; i < n; ++i) gt.rho(u, i) = sigmoid(scale * a.row(u).dot(b.row(i)) + cfg.relevance_offset);
  }

  Rng exposure_rng(derive_seed(cfg.seed, 2));
  std::vector<Index> order = iota_indices(n);
  exposure_rng.shuffle(order);
  gt.item_exposure.assign(static_cast<std::size_t>(n), 1.0);
  for (Index r = 0; r < n; ++r) {
    gt.item_exposure[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
        std::pow(1.0 / static_cast<double>(r + 1), cfg.popularity_exponent);
  }
  gt.omega = RowMatrix(m, n);
  for (Index u = 0; u < m; ++u) {
    const double activity = cfg.exposure == ExposureMode::kPerPair ? exposure_rng.uniform(0.5, 1.0) : 1.0;
    for (Index i = 0; i < n; ++i) gt.omega(u, i) = activity * gt.item_exposure[static_cast<std::size_t>(i)];
  }
  return gt;
}

inline SynthGroundTruth generate_ground_truth(Index m, Index n, Index latent_rank, double popularity_exponent,
                                              std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_users = m;
  cfg.num_items = n;
  cfg.latent_rank = latent_rank;
  cfg.popularity_exponent = popularity_exponent;
  cfg.seed = seed;
  return generate_ground_truth(cfg);
}

// One Bernoulli(omega * rho) click per pair, drawn in row-major order.
inline Interactions sample_clicks(const RowMatrix& omega, const RowMatrix& rho, std::uint64_t seed) {
  if (omega.rows() != rho.rows() || omega.cols() != rho.cols()) {
    throw std::invalid_argument("sample_clicks: omega and rho shapes differ");
  }
  Rng rng(seed);
  Interactions out(static_cast<Index>(rho.rows()), static_cast<Index>(rho.cols()));
  for (Index u = 0; u < out.num_users; ++u) {
    auto& row = out.rows[static_cast<std::size_t>(u)];
    for (Index i = 0; i < out.num_items; ++i) {
      if (rng.bernoulli(omega(u, i) * rho(u, i))) row.push_back(i);
    }
  }
  return out;
}

inline Interactions sample_clicks(const SynthGroundTruth& gt, std::uint64_t seed) {
  return sample_clicks(gt.omega, gt.rho, seed);
}

// Pairs with rho >= 0.5.
inline Interactions relevant_pairs(const SynthGroundTruth& gt, double threshold = kRelevanceThreshold) {
  Interactions out(gt.num_users(), gt.num_items());
  for (Index u = 0; u < out.num_users; ++u) {
    for (Index i = 0; i < out.num_items; ++i) {
      if (gt.rho(u, i) >= threshold) out.rows[static_cast<std::size_t>(u)].push_back(i);
    }
  }
  return out;
}

// The true item exposure as a propensity table (clip 0 keeps it exact).
inline PropensityTable true_propensity(const SynthGroundTruth& gt, double clip_min = 0.0) {
  return PropensityTable::per_item(gt.item_exposure, clip_min);
}

// Writes clicks.tsv and relevant.tsv (triplets) plus omega.tsv and rho.tsv
// (user\titem\tvalue, full precision).
inline void dump_synthetic(const std::filesystem::path& dir, const SynthGroundTruth& gt, const Interactions& clicks) {
  std::filesystem::create_directories(dir);
  write_interactions(dir / "clicks.tsv", clicks);
  write_interactions(dir / "relevant.tsv", relevant_pairs(gt));
  char buf[64];
  {
    std::ofstream out(dir / "omega.tsv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "omega.tsv").string());
    for (Index u = 0; u < gt.num_users(); ++u) {
      for (Index i = 0; i < gt.num_items(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", gt.omega(u, i));
        out << u << '\t' << i << '\t' << buf << '\n';
      }
    }
  }
  std::ofstream out(dir / "rho.tsv", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "rho.tsv").string());
  for (Index u = 0; u < gt.num_users(); ++u) {
    for (Index i = 0; i < gt.num_items(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", gt.rho(u, i));
      out << u << '\t' << i << '\t' << buf << '\n';
    }
  }
}

}  // namespace biser
