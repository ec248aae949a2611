#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "biser/common.hpp"
#include "biser/data.hpp"
#include "biser/log.hpp"
#include "biser/propensity.hpp"

namespace biser {

struct RankedList {
  Index user = 0;
  std::vector<Index> items;  // best first
};

enum class Metric { kNdcg, kMap, kRecall };
enum class Scheme { kAoa, kUnbiased };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::kNdcg: return "NDCG";
    case Metric::kMap: return "MAP";
    case Metric::kRecall: return "RECALL";
  }
  return "?";
}

inline const char* to_string(Scheme s) { return s == Scheme::kAoa ? "AOA" : "UNBIASED"; }

// Candidates sorted by score descending, ties by ascending item index,
// truncated to max_n.
inline RankedList rank_items(Index user, std::span<const double> scores,
                             std::span<const Index> candidates, Index max_n) {
  RankedList out;
  out.user = user;
  out.items.assign(candidates.begin(), candidates.end());
  auto better = [&](Index a, Index b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  };
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max<Index>(max_n, 0)), out.items.size());
  std::partial_sort(out.items.begin(), out.items.begin() + static_cast<std::ptrdiff_t>(keep),
                    out.items.end(), better);
  out.items.resize(keep);
  return out;
}

// One ranking per user with a non-empty candidate list.
inline std::vector<RankedList> rank_all(const RowMatrix& scores,
                                        const std::vector<std::vector<Index>>& candidates,
                                        Index max_n) {
  std::vector<RankedList> out;
  Index skipped = 0;
  for (Index u = 0; u < static_cast<Index>(candidates.size()); ++u) {
    const auto& cand = candidates[static_cast<std::size_t>(u)];
    if (cand.empty()) {
      ++skipped;
      continue;
    }
    out.push_back(rank_items(u, std::span<const double>(scores.row(u).data(), static_cast<std::size_t>(scores.cols())),
                             cand, max_n));
  }
  if (skipped > 0) log_info(std::to_string(skipped) + " users without candidates skipped");
  return out;
}

namespace detail {

inline bool is_relevant(std::span<const Index> relevant_sorted, Index item) {
  return std::binary_search(relevant_sorted.begin(), relevant_sorted.end(), item);
}

inline double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

inline double idcg(std::size_t num_relevant, int n) {
  double s = 0.0;
  for (std::size_t r = 1; r <= std::min<std::size_t>(num_relevant, static_cast<std::size_t>(n)); ++r) {
    s += discount(r);
  }
  return s;
}

inline std::size_t depth(const RankedList& ranked, int n) {
  return std::min<std::size_t>(ranked.items.size(), static_cast<std::size_t>(n));
}

}  // namespace detail

// The per-user metrics return NaN for an empty relevant set; aggregates skip
// such users.
inline double ndcg_at(const RankedList& ranked, std::span<const Index> relevant_sorted, int n) {
  if (n < 1) throw std::invalid_argument("cutoff must be >= 1");
  if (relevant_sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  double dcg = 0.0;
  for (std::size_t r = 0; r < detail::depth(ranked, n); ++r) {
    if (detail::is_relevant(relevant_sorted, ranked.items[r])) dcg += detail::discount(r + 1);
  }
  return dcg / detail::idcg(relevant_sorted.size(), n);
}

inline double map_at(const RankedList& ranked, std::span<const Index> relevant_sorted, int n) {
  if (n < 1) throw std::invalid_argument("cutoff must be >= 1");
  if (relevant_sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  int hits = 0;
  for (std::size_t r = 0; r < detail::depth(ranked, n); ++r) {
    if (detail::is_relevant(relevant_sorted, ranked.items[r])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(relevant_sorted.size());
}

inline double recall_at(const RankedList& ranked, std::span<const Index> relevant_sorted, int n) {
  if (n < 1) throw std::invalid_argument("cutoff must be >= 1");
  if (relevant_sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  int hits = 0;
  for (std::size_t r = 0; r < detail::depth(ranked, n); ++r) {
    if (detail::is_relevant(relevant_sorted, ranked.items[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant_sorted.size());
}

inline double metric_at(Metric metric, const RankedList& ranked, std::span<const Index> relevant, int n) {
  switch (metric) {
    case Metric::kNdcg: return ndcg_at(ranked, relevant, n);
    case Metric::kMap: return map_at(ranked, relevant, n);
    case Metric::kRecall: return recall_at(ranked, relevant, n);
  }
  return 0.0;
}

// Per-item share of the standard per-user metric: the shares over the
// relevant items sum to the metric. Only hits in the top n carry a share.
// The per-item gain c_i of the averaged-over-items form is |S_u| * share_i.
inline std::vector<std::pair<Index, double>> item_shares(Metric metric, const RankedList& ranked,
                                                         std::span<const Index> relevant_sorted, int n) {
  std::vector<std::pair<Index, double>> out;
  if (relevant_sorted.empty()) return out;
  const double num_rel = static_cast<double>(relevant_sorted.size());
  const double norm_ndcg = detail::idcg(relevant_sorted.size(), n);
  int hits = 0;
  for (std::size_t r = 0; r < detail::depth(ranked, n); ++r) {
    const Index item = ranked.items[r];
    if (!detail::is_relevant(relevant_sorted, item)) continue;
    ++hits;
    double share = 0.0;
    switch (metric) {
      case Metric::kNdcg: share = detail::discount(r + 1) / norm_ndcg; break;
      case Metric::kMap: share = static_cast<double>(hits) / static_cast<double>(r + 1) / num_rel; break;
      case Metric::kRecall: share = 1.0 / num_rel; break;
    }
    out.emplace_back(item, share);
  }
  return out;
}

struct MetricReport {
  struct Entry {
    int n = 0;
    double value = 0.0;
    double std_error = 0.0;
    std::vector<Index> users;
    std::vector<double> per_user;
  };

  Scheme scheme = Scheme::kAoa;
  Metric metric = Metric::kNdcg;
  std::vector<Entry> entries;

  const Entry& at(int n) const {
    for (const auto& e : entries) {
      if (e.n == n) return e;
    }
    throw std::out_of_range("no entry for cutoff " + std::to_string(n));
  }
};

namespace detail {

inline void finish_entry(MetricReport::Entry& e) {
  const auto k = static_cast<double>(e.per_user.size());
  if (e.per_user.empty()) {
    e.value = std::numeric_limits<double>::quiet_NaN();
    e.std_error = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double sum = 0.0;
  for (double v : e.per_user) sum += v;
  e.value = sum / k;
  double ss = 0.0;
  for (double v : e.per_user) ss += (v - e.value) * (v - e.value);
  e.std_error = e.per_user.size() > 1 ? std::sqrt(ss / (k - 1.0) / k) : 0.0;
}

}  // namespace detail

// Average over users of the standard per-user metric.
inline MetricReport aoa_evaluate(const std::vector<RankedList>& rankings, const Interactions& relevance,
                                 Metric metric, const std::vector<int>& cutoffs) {
  MetricReport report;
  report.scheme = Scheme::kAoa;
  report.metric = metric;
  for (int n : cutoffs) {
    MetricReport::Entry e;
    e.n = n;
    for (const auto& ranked : rankings) {
      const auto& rel = relevance.row(ranked.user);
      if (rel.empty()) continue;
      e.users.push_back(ranked.user);
      e.per_user.push_back(metric_at(metric, ranked, rel, n));
    }
    detail::finish_entry(e);
    report.entries.push_back(std::move(e));
  }
  return report;
}

// Per-user mean over relevant items of c_i / P_i, then mean over users.
// With self_normalize the per-user value is divided by the mean of 1/P_i.
inline MetricReport unbiased_evaluate(const std::vector<RankedList>& rankings,
                                      const Interactions& relevance, const PropensityTable& propensity,
                                      Metric metric, const std::vector<int>& cutoffs,
                                      bool self_normalize = false, double clip_min = kDefaultClipMin) {
  MetricReport report;
  report.scheme = Scheme::kUnbiased;
  report.metric = metric;
  auto weight = [&](Index u, Index i) { return 1.0 / std::max(propensity.at(u, i), clip_min); };
  for (int n : cutoffs) {
    MetricReport::Entry e;
    e.n = n;
    for (const auto& ranked : rankings) {
      const auto& rel = relevance.row(ranked.user);
      if (rel.empty()) continue;
      double value = 0.0;
      for (const auto& [item, share] : item_shares(metric, ranked, rel, n)) {
        value += share * weight(ranked.user, item);
      }
      if (self_normalize) {
        double mean_w = 0.0;
        for (Index i : rel) mean_w += weight(ranked.user, i);
        value /= mean_w / static_cast<double>(rel.size());
      }
      e.users.push_back(ranked.user);
      e.per_user.push_back(value);
    }
    detail::finish_entry(e);
    report.entries.push_back(std::move(e));
  }
  return report;
}

// For every item: fraction of its top-n appearances that are relevant.
// nullopt for items that never reach the top n.
inline std::vector<std::optional<double>> item_precision_at(const std::vector<RankedList>& rankings,
                                                            const Interactions& relevance, int n) {
  if (n < 1) throw std::invalid_argument("cutoff must be >= 1");
  std::vector<int> shown(static_cast<std::size_t>(relevance.num_items), 0);
  std::vector<int> hit(static_cast<std::size_t>(relevance.num_items), 0);
  for (const auto& ranked : rankings) {
    for (std::size_t r = 0; r < detail::depth(ranked, n); ++r) {
      const Index i = ranked.items[r];
      ++shown[static_cast<std::size_t>(i)];
      if (relevance.contains(ranked.user, i)) ++hit[static_cast<std::size_t>(i)];
    }
  }
  std::vector<std::optional<double>> out(shown.size());
  for (std::size_t i = 0; i < shown.size(); ++i) {
    if (shown[i] > 0) out[i] = static_cast<double>(hit[i]) / static_cast<double>(shown[i]);
  }
  return out;
}

enum class PopularityGroup { kTail = 0, kMid = 1, kHead = 2 };

inline const char* to_string(PopularityGroup g) {
  switch (g) {
    case PopularityGroup::kTail: return "tail";
    case PopularityGroup::kMid: return "mid";
    case PopularityGroup::kHead: return "head";
  }
  return "?";
}

struct PopularityGroups {
  int tail_max_count = 0;  // popularity of the last item assigned to tail
  int mid_max_count = 0;
  std::vector<PopularityGroup> membership;
  std::array<std::int64_t, 3> mass{};
  std::array<int, 3> sizes{};
};

// Items sorted by ascending popularity (ties by index) are accumulated;
// an item is tail while the running count including it stays within a third
// of the total, mid while within two thirds, head afterwards.
inline PopularityGroups popularity_groups(const ItemStats& stats) {
  const std::int64_t total = stats.total();
  if (total <= 0) throw DataError("popularity_groups: no interactions");
  std::vector<Index> order = iota_indices(static_cast<Index>(stats.counts.size()));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return stats.counts[static_cast<std::size_t>(a)] < stats.counts[static_cast<std::size_t>(b)];
  });
  PopularityGroups g;
  g.membership.assign(stats.counts.size(), PopularityGroup::kHead);
  std::int64_t running = 0;
  for (Index i : order) {
    const int c = stats.counts[static_cast<std::size_t>(i)];
    running += c;
    const int group = 3 * running <= total ? 0 : (3 * running <= 2 * total ? 1 : 2);
    g.membership[static_cast<std::size_t>(i)] = static_cast<PopularityGroup>(group);
    g.mass[static_cast<std::size_t>(group)] += c;
    ++g.sizes[static_cast<std::size_t>(group)];
    if (group == 0) g.tail_max_count = c;
    if (group == 1) g.mid_max_count = c;
  }
  return g;
}

// Mean item precision per group over items with a defined value.
inline std::array<std::optional<double>, 3> group_item_precision(
    const std::vector<std::optional<double>>& precision, const PopularityGroups& groups) {
  std::array<double, 3> sum{};
  std::array<int, 3> count{};
  for (std::size_t i = 0; i < precision.size(); ++i) {
    if (!precision[i]) continue;
    const auto g = static_cast<std::size_t>(groups.membership[i]);
    sum[g] += *precision[i];
    ++count[g];
  }
  std::array<std::optional<double>, 3> out;
  for (std::size_t g = 0; g < 3; ++g) {
    if (count[g] > 0) out[g] = sum[g] / count[g];
  }
  return out;
}

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const double k = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / k;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / k;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // Round-off alone must not count as variation.
  const double tiny = 1e-24 * k;
  if (sxx <= tiny * (mx * mx + 1e-300) || syy <= tiny * (my * my + 1e-300)) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// Pearson correlation between item popularity and the item's mean predicted
// score over the users who clicked it. nullopt when undefined.
inline std::optional<double> popularity_prediction_correlation(const RowMatrix& scores,
                                                               const Interactions& train) {
  const ItemStats stats = item_popularity(train);
  std::vector<double> sum(static_cast<std::size_t>(train.num_items), 0.0);
  for (Index u = 0; u < train.num_users; ++u) {
    for (Index i : train.row(u)) sum[static_cast<std::size_t>(i)] += scores(u, i);
  }
  std::vector<double> pop, mean_score;
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (stats.counts[i] == 0) continue;
    pop.push_back(stats.counts[i]);
    mean_score.push_back(sum[i] / stats.counts[i]);
  }
  if (pop.size() < 3) return std::nullopt;
  return pearson(pop, mean_score);
}

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  int df = 0;
};

// One-tailed paired t-test of H1: mean(a - b) > 0.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("paired_t_test needs >= 2 paired values");
  const double k = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= k;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  const double se = std::sqrt(ss / (k - 1.0) / k);
  if (se == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : (mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.p_value = mean > 0 ? 0.0 : (mean < 0 ? 1.0 : 0.5);
    return r;
  }
  r.t = mean / se;
  boost::math::students_t dist(r.df);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

// Mean NDCG@n on held-out positives, ranking every item outside `exclude`.
inline double heldout_ndcg(const RowMatrix& scores, const Interactions& exclude,
                           const Interactions& heldout, int n) {
  double sum = 0.0;
  int users = 0;
  std::vector<Index> cand;
  for (Index u = 0; u < heldout.num_users; ++u) {
    const auto& rel = heldout.row(u);
    if (rel.empty()) continue;
    cand.clear();
    for (Index i = 0; i < exclude.num_items; ++i) {
      if (!exclude.contains(u, i)) cand.push_back(i);
    }
    const RankedList ranked = rank_items(
        u, std::span<const double>(scores.row(u).data(), static_cast<std::size_t>(scores.cols())), cand, n);
    sum += ndcg_at(ranked, rel, n);
    ++users;
  }
  return users ? sum / users : 0.0;
}

}  // namespace biser
