#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "biser/common.hpp"
#include "biser/data.hpp"

namespace biser {

inline constexpr double kDefaultClipMin = 0.1;

// Values aligned with the rows of an Interactions: values[u][k] belongs to
// the pair (u, rows[u][k]).
using PairValues = std::vector<std::vector<double>>;

enum class PropensityMode { kPerItem, kPerPair };

// Observation probabilities in [clip_min, 1]. PER_PAIR tables only hold the
// pairs they were built for (the observed positives, the only pairs where
// the inverse weight enters a loss).
class PropensityTable {
 public:
  static PropensityTable per_item(std::vector<double> values, double clip_min) {
    PropensityTable t(PropensityMode::kPerItem, clip_min);
    for (double& v : values) v = t.clip(v);
    t.item_values_ = std::move(values);
    return t;
  }

  static PropensityTable per_pair(const Interactions& pairs, PairValues values, double clip_min) {
    if (values.size() != pairs.rows.size()) throw std::invalid_argument("per_pair: row count mismatch");
    PropensityTable t(PropensityMode::kPerPair, clip_min);
    for (std::size_t u = 0; u < values.size(); ++u) {
      if (values[u].size() != pairs.rows[u].size()) {
        throw std::invalid_argument("per_pair: row " + std::to_string(u) + " length mismatch");
      }
      for (double& v : values[u]) v = t.clip(v);
    }
    t.pairs_ = pairs.rows;
    t.pair_values_ = std::move(values);
    t.num_items_ = pairs.num_items;
    return t;
  }

  PropensityMode mode() const { return mode_; }
  double clip_min() const { return clip_min_; }

  Index num_items() const {
    return mode_ == PropensityMode::kPerItem ? static_cast<Index>(item_values_.size()) : num_items_;
  }

  double at(Index u, Index i) const {
    if (mode_ == PropensityMode::kPerItem) return item_values_.at(static_cast<std::size_t>(i));
    const auto& row = pairs_.at(static_cast<std::size_t>(u));
    auto it = std::lower_bound(row.begin(), row.end(), i);
    if (it == row.end() || *it != i) {
      throw std::out_of_range("propensity for (" + std::to_string(u) + ", " + std::to_string(i) +
                              ") not materialized");
    }
    return pair_values_[static_cast<std::size_t>(u)][static_cast<std::size_t>(it - row.begin())];
  }

  const std::vector<double>& item_values() const { return item_values_; }

  // Weights aligned with the pairs of `inter` (user-major rows, or item-major
  // rows when item_major is set).
  PairValues gather(const Interactions& inter, bool item_major = false) const {
    PairValues out(inter.rows.size());
    for (Index r = 0; r < static_cast<Index>(inter.rows.size()); ++r) {
      auto& dst = out[static_cast<std::size_t>(r)];
      dst.reserve(inter.row(r).size());
      for (Index c : inter.row(r)) dst.push_back(item_major ? at(c, r) : at(r, c));
    }
    return out;
  }

  bool operator==(const PropensityTable&) const = default;

 private:
  PropensityTable(PropensityMode mode, double clip_min) : mode_(mode), clip_min_(clip_min) {
    if (!(clip_min >= 0.0 && clip_min <= 1.0)) throw ConfigError("clip_min must lie in [0,1]");
  }

  double clip(double v) const { return std::clamp(v, clip_min_, 1.0); }

  PropensityMode mode_;
  double clip_min_;
  Index num_items_ = 0;
  std::vector<double> item_values_;
  std::vector<std::vector<Index>> pairs_;
  PairValues pair_values_;
};

namespace detail {

inline PropensityTable power_of_popularity(const ItemStats& stats, double exponent, double clip_min) {
  if (stats.max_count <= 0) throw DataError("item popularity is all zero");
  std::vector<double> values(stats.counts.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::pow(static_cast<double>(stats.counts[i]) / stats.max_count, exponent);
  }
  return PropensityTable::per_item(std::move(values), clip_min);
}

}  // namespace detail

// Rel-IPW heuristic: (n_i / max n)^eta.
inline PropensityTable popularity_propensity(const ItemStats& stats, double eta,
                                             double clip_min = kDefaultClipMin) {
  if (!(eta > 0)) throw ConfigError("eta must be positive");
  return detail::power_of_popularity(stats, eta, clip_min);
}

// Self-propensity: the model's own (detached) predictions on the given pairs,
// clamped to [clip_min, 1].
inline PropensityTable self_propensity(const Interactions& pairs, const PairValues& predictions,
                                       double clip_min = kDefaultClipMin) {
  if (!(clip_min > 0 && clip_min <= 1)) throw ConfigError("SIPW clip_min must lie in (0,1]");
  for (const auto& row : predictions) {
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::logic_error("self_propensity: prediction " + std::to_string(p) + " outside [0,1]");
      }
    }
  }
  return PropensityTable::per_pair(pairs, predictions, clip_min);
}

// Evaluation-time item propensity: (n_i / max n)^((gamma + 1) / 2).
inline PropensityTable eval_propensity(const ItemStats& stats, double gamma,
                                       double clip_min = kDefaultClipMin) {
  return detail::power_of_popularity(stats, (gamma + 1.0) / 2.0, clip_min);
}

inline void dump_item_propensities(const std::filesystem::path& path, const PropensityTable& table) {
  if (table.mode() != PropensityMode::kPerItem) throw std::invalid_argument("dump expects a PER_ITEM table");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < table.item_values().size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", table.item_values()[i]);
    out << i << '\t' << buf << '\n';
  }
}

}  // namespace biser
