#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "biser/common.hpp"
#include "biser/log.hpp"

namespace biser {

// Binary implicit-feedback matrix, one sorted item list per user. Only
// positives are stored.
struct Interactions {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::vector<Index>> rows;

  Interactions() = default;
  Interactions(Index users, Index items)
      : num_users(users), num_items(items), rows(static_cast<std::size_t>(users)) {}

  static Interactions from_pairs(Index users, Index items,
                                 std::vector<std::pair<Index, Index>> pairs) {
    Interactions out(users, items);
    for (const auto& [u, i] : pairs) {
      if (u < 0 || u >= users || i < 0 || i >= items) {
        throw DataError("interaction (" + std::to_string(u) + ", " + std::to_string(i) +
                        ") outside " + std::to_string(users) + "x" + std::to_string(items));
      }
      out.rows[static_cast<std::size_t>(u)].push_back(i);
    }
    for (auto& row : out.rows) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
    }
    return out;
  }

  std::size_t nnz() const {
    std::size_t total = 0;
    for (const auto& row : rows) total += row.size();
    return total;
  }

  const std::vector<Index>& row(Index u) const { return rows[static_cast<std::size_t>(u)]; }

  Index degree(Index u) const { return static_cast<Index>(row(u).size()); }

  bool contains(Index u, Index i) const {
    const auto& r = row(u);
    return std::binary_search(r.begin(), r.end(), i);
  }

  // Position of item i inside row u, or -1.
  Index position(Index u, Index i) const {
    const auto& r = row(u);
    auto it = std::lower_bound(r.begin(), r.end(), i);
    if (it == r.end() || *it != i) return -1;
    return static_cast<Index>(it - r.begin());
  }

  // Item-major view: row i lists the users who clicked item i.
  Interactions transposed() const {
    Interactions out(num_items, num_users);
    for (Index u = 0; u < num_users; ++u) {
      for (Index i : row(u)) out.rows[static_cast<std::size_t>(i)].push_back(u);
    }
    return out;
  }

  std::vector<std::pair<Index, Index>> pairs() const {
    std::vector<std::pair<Index, Index>> out;
    out.reserve(nnz());
    for (Index u = 0; u < num_users; ++u) {
      for (Index i : row(u)) out.emplace_back(u, i);
    }
    return out;
  }

  bool operator==(const Interactions&) const = default;
};

// Explicit ratings in the dense ascii layout; 0 means unrated.
using RatingMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RawRating {
  std::int64_t user;
  std::int64_t item;
  double rating;

  bool operator==(const RawRating&) const = default;
};

// Ratings with external ids compacted to dense indices.
struct RatingLog {
  struct Entry {
    Index user;
    Index item;
    double rating;
  };
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::int64_t> user_ids;  // dense index -> external id
  std::vector<std::int64_t> item_ids;
  std::vector<Entry> entries;
};

enum class Protocol { kMarTest, kMnarTest };

inline const char* to_string(Protocol p) { return p == Protocol::kMarTest ? "MAR_TEST" : "MNAR_TEST"; }

struct DatasetSplit {
  Interactions train;
  Interactions validation;
  Interactions test;
  Protocol protocol = Protocol::kMnarTest;
  std::vector<std::vector<Index>> test_candidates;  // sorted, per user
};

struct ItemStats {
  std::vector<int> counts;
  int max_count = 0;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (int c : counts) t += c;
    return t;
  }
};

struct FilterMaps {
  std::vector<Index> kept_users;  // new index -> old index
  std::vector<Index> kept_items;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view token, T& out) {
  token = trim(token);
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::vector<std::string_view> split_fields(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace detail

inline RatingMatrix load_dense_ascii(const std::filesystem::path& path, Index num_users,
                                     Index num_items) {
  std::ifstream in = detail::open_input(path);
  RatingMatrix out = RatingMatrix::Zero(num_users, num_items);
  std::string line;
  Index row = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    if (row >= num_users) {
      throw DataError(detail::location(path, line_no) + ": more than " +
                      std::to_string(num_users) + " rows");
    }
    std::istringstream tokens{std::string(view)};
    std::string token;
    Index col = 0;
    while (tokens >> token) {
      int value = 0;
      if (!detail::parse_number(token, value)) {
        throw DataError(detail::location(path, line_no) + ": non-integer token '" + token + "'");
      }
      if (col >= num_items) {
        throw DataError(detail::location(path, line_no) + ": more than " +
                        std::to_string(num_items) + " columns");
      }
      out(row, col++) = value;
    }
    if (col != num_items) {
      throw DataError(detail::location(path, line_no) + ": expected " + std::to_string(num_items) +
                      " columns, found " + std::to_string(col));
    }
    ++row;
  }
  if (row != num_users) {
    throw DataError(path.string() + ": expected " + std::to_string(num_users) + " rows, found " +
                    std::to_string(row));
  }
  return out;
}

// Parses user<sep>item<sep>rating[<sep>ignored...] lines. LF or CRLF.
inline std::vector<RawRating> load_triplets(const std::filesystem::path& path,
                                            std::string_view separator, bool skip_header = false) {
  if (separator.empty()) throw ConfigError("triplet separator must not be empty");
  std::ifstream in = detail::open_input(path);
  std::vector<RawRating> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_header && line_no == 1) continue;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    const auto fields = detail::split_fields(view, separator);
    if (fields.size() < 3) {
      throw DataError(detail::location(path, line_no) + ": expected user, item, rating");
    }
    RawRating r{};
    if (!detail::parse_number(fields[0], r.user) || !detail::parse_number(fields[1], r.item)) {
      throw DataError(detail::location(path, line_no) + ": non-numeric id");
    }
    if (!detail::parse_number(fields[2], r.rating) || !std::isfinite(r.rating)) {
      throw DataError(detail::location(path, line_no) + ": non-numeric rating");
    }
    out.push_back(r);
  }
  if (out.empty()) throw DataError(path.string() + ": no ratings");
  return out;
}

// Dense indices are assigned in ascending external-id order.
inline RatingLog compact_ids(const std::vector<RawRating>& raw) {
  RatingLog log;
  for (const auto& r : raw) {
    log.user_ids.push_back(r.user);
    log.item_ids.push_back(r.item);
  }
  for (auto* ids : {&log.user_ids, &log.item_ids}) {
    std::sort(ids->begin(), ids->end());
    ids->erase(std::unique(ids->begin(), ids->end()), ids->end());
  }
  log.num_users = static_cast<Index>(log.user_ids.size());
  log.num_items = static_cast<Index>(log.item_ids.size());
  auto lookup = [](const std::vector<std::int64_t>& ids, std::int64_t id) {
    return static_cast<Index>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };
  log.entries.reserve(raw.size());
  for (const auto& r : raw) {
    log.entries.push_back({lookup(log.user_ids, r.user), lookup(log.item_ids, r.item), r.rating});
  }
  return log;
}

inline Interactions binarize(const RatingMatrix& ratings, int threshold) {
  if (threshold > 5) log_warning("binarize threshold " + std::to_string(threshold) + " above the 1-5 scale");
  Interactions out(static_cast<Index>(ratings.rows()), static_cast<Index>(ratings.cols()));
  for (Index u = 0; u < out.num_users; ++u) {
    for (Index i = 0; i < out.num_items; ++i) {
      if (ratings(u, i) != 0 && ratings(u, i) >= threshold) out.rows[static_cast<std::size_t>(u)].push_back(i);
    }
  }
  return out;
}

inline Interactions binarize(const RatingLog& log, double threshold) {
  std::vector<std::pair<Index, Index>> pairs;
  for (const auto& e : log.entries) {
    if (e.rating >= threshold) pairs.emplace_back(e.user, e.item);
  }
  return Interactions::from_pairs(log.num_users, log.num_items, std::move(pairs));
}

// Rated (nonzero) cells of a dense rating matrix.
inline Interactions rated_cells(const RatingMatrix& ratings) {
  return binarize(ratings, std::numeric_limits<int>::min());
}

// One user pass then one item pass: drop users with degree <= min_user_deg,
// then items whose remaining degree <= min_item_deg, then re-compact.
inline Interactions filter_core(const Interactions& inter, int min_user_deg, int min_item_deg,
                                FilterMaps* maps = nullptr) {
  if (min_user_deg < 0 || min_item_deg < 0) throw ConfigError("filter degrees must be >= 0");
  FilterMaps local;
  for (Index u = 0; u < inter.num_users; ++u) {
    if (inter.degree(u) > min_user_deg) local.kept_users.push_back(u);
  }
  std::vector<int> item_deg(static_cast<std::size_t>(inter.num_items), 0);
  for (Index u : local.kept_users) {
    for (Index i : inter.row(u)) ++item_deg[static_cast<std::size_t>(i)];
  }
  std::vector<Index> new_item(static_cast<std::size_t>(inter.num_items), -1);
  for (Index i = 0; i < inter.num_items; ++i) {
    if (item_deg[static_cast<std::size_t>(i)] > min_item_deg) {
      new_item[static_cast<std::size_t>(i)] = static_cast<Index>(local.kept_items.size());
      local.kept_items.push_back(i);
    }
  }
  Interactions out(static_cast<Index>(local.kept_users.size()),
                   static_cast<Index>(local.kept_items.size()));
  for (std::size_t nu = 0; nu < local.kept_users.size(); ++nu) {
    for (Index i : inter.row(local.kept_users[nu])) {
      const Index ni = new_item[static_cast<std::size_t>(i)];
      if (ni >= 0) out.rows[nu].push_back(ni);
    }
  }
  if (out.num_users == 0 || out.num_items == 0 || out.nnz() == 0) {
    throw DataError("dataset fully filtered");
  }
  if (maps) *maps = std::move(local);
  return out;
}

namespace detail {

inline Index round_count(double x) { return static_cast<Index>(std::llround(x)); }

inline std::vector<std::vector<Index>> complement_candidates(const Interactions& a,
                                                             const Interactions& b) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(a.num_users));
  for (Index u = 0; u < a.num_users; ++u) {
    auto& cand = out[static_cast<std::size_t>(u)];
    for (Index i = 0; i < a.num_items; ++i) {
      if (!a.contains(u, i) && !b.contains(u, i)) cand.push_back(i);
    }
  }
  return out;
}

}  // namespace detail

// Per-user random holdout. Test count is round(deg * test_frac), at least 1
// when deg >= 2; validation is round(rest * val_frac_of_train).
inline DatasetSplit split_holdout(const Interactions& inter, double test_frac,
                                  double val_frac_of_train, std::uint64_t seed) {
  if (!(test_frac > 0 && test_frac < 1) || !(val_frac_of_train >= 0 && val_frac_of_train < 1)) {
    throw ConfigError("split fractions must lie in (0,1)");
  }
  DatasetSplit split;
  split.protocol = Protocol::kMnarTest;
  split.train = Interactions(inter.num_users, inter.num_items);
  split.validation = Interactions(inter.num_users, inter.num_items);
  split.test = Interactions(inter.num_users, inter.num_items);
  Rng rng(seed);
  Index untestable = 0;
  for (Index u = 0; u < inter.num_users; ++u) {
    std::vector<Index> items = inter.row(u);
    const auto deg = static_cast<Index>(items.size());
    const auto su = static_cast<std::size_t>(u);
    if (deg < 2) {
      split.train.rows[su] = items;
      if (deg > 0) ++untestable;
      continue;
    }
    rng.shuffle(items);
    const Index n_test = std::clamp(detail::round_count(deg * test_frac), Index{1}, deg - 1);
    const Index rest = deg - n_test;
    const Index n_val = std::min(detail::round_count(rest * val_frac_of_train), rest);
    auto begin = items.begin();
    split.test.rows[su].assign(begin, begin + n_test);
    split.validation.rows[su].assign(begin + n_test, begin + n_test + n_val);
    split.train.rows[su].assign(begin + n_test + n_val, items.end());
    for (auto* inter_part : {&split.train, &split.validation, &split.test}) {
      std::sort(inter_part->rows[su].begin(), inter_part->rows[su].end());
    }
  }
  if (untestable > 0) {
    log_warning(std::to_string(untestable) + " users with fewer than 2 positives kept in train only");
  }
  split.test_candidates = detail::complement_candidates(split.train, split.validation);
  return split;
}

// MNAR train / MAR test. test_rated holds every rated test cell (the fixed
// per-user candidate list); test_relevant the positives among them.
inline DatasetSplit make_mar_split(const Interactions& train, const Interactions& test_rated,
                                   const Interactions& test_relevant, double val_frac,
                                   std::uint64_t seed) {
  if (train.num_items != test_rated.num_items || train.num_items != test_relevant.num_items ||
      test_rated.num_users != test_relevant.num_users) {
    throw DataError("train and test files do not share an index space");
  }
  if (!(val_frac >= 0 && val_frac < 1)) throw ConfigError("val_frac must lie in [0,1)");
  DatasetSplit split;
  split.protocol = Protocol::kMarTest;
  const Index m = train.num_users;
  const Index n = train.num_items;
  split.train = Interactions(m, n);
  split.validation = Interactions(m, n);
  split.test = Interactions(m, n);
  split.test_candidates.assign(static_cast<std::size_t>(m), {});
  if (test_rated.num_users > m) {
    log_warning(std::to_string(test_rated.num_users - m) + " test-only users dropped");
  }
  Rng rng(seed);
  for (Index u = 0; u < m; ++u) {
    const auto su = static_cast<std::size_t>(u);
    std::vector<Index> items = train.row(u);
    rng.shuffle(items);
    const auto n_val = std::min(detail::round_count(static_cast<double>(items.size()) * val_frac),
                                static_cast<Index>(items.size()));
    split.validation.rows[su].assign(items.begin(), items.begin() + n_val);
    split.train.rows[su].assign(items.begin() + n_val, items.end());
    std::sort(split.validation.rows[su].begin(), split.validation.rows[su].end());
    std::sort(split.train.rows[su].begin(), split.train.rows[su].end());
    if (u < test_rated.num_users) {
      split.test_candidates[su] = test_rated.row(u);
      for (Index i : test_relevant.row(u)) {
        if (!test_rated.contains(u, i)) throw DataError("relevant test item not among rated items");
        split.test.rows[su].push_back(i);
      }
    }
  }
  return split;
}

inline DatasetSplit make_mar_split(const Interactions& train, const RatingMatrix& test_ratings,
                                   int threshold, double val_frac, std::uint64_t seed) {
  return make_mar_split(train, rated_cells(test_ratings), binarize(test_ratings, threshold),
                        val_frac, seed);
}

inline ItemStats item_popularity(const Interactions& inter) {
  ItemStats stats;
  stats.counts.assign(static_cast<std::size_t>(inter.num_items), 0);
  for (const auto& row : inter.rows) {
    for (Index i : row) ++stats.counts[static_cast<std::size_t>(i)];
  }
  stats.max_count = stats.counts.empty() ? 0 : *std::max_element(stats.counts.begin(), stats.counts.end());
  return stats;
}

inline double sparsity(const Interactions& inter) {
  return 1.0 - static_cast<double>(inter.nnz()) /
                   (static_cast<double>(inter.num_users) * static_cast<double>(inter.num_items));
}

// ---------------------------------------------------------------------------
// On-disk split: triplet files (user\titem\t1) plus a key=value manifest.

inline void write_interactions(const std::filesystem::path& path, const Interactions& inter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (Index u = 0; u < inter.num_users; ++u) {
    for (Index i : inter.row(u)) out << u << '\t' << i << "\t1\n";
  }
}

inline Interactions read_interactions(const std::filesystem::path& path, Index users, Index items) {
  std::vector<std::pair<Index, Index>> pairs;
  std::ifstream in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    const auto fields = detail::split_fields(view, "\t");
    Index u = 0, i = 0;
    if (fields.size() < 2 || !detail::parse_number(fields[0], u) ||
        !detail::parse_number(fields[1], i)) {
      throw DataError(detail::location(path, line_no) + ": expected user\\titem");
    }
    pairs.emplace_back(u, i);
  }
  return Interactions::from_pairs(users, items, std::move(pairs));
}

using KeyValues = std::map<std::string, std::string>;

inline void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = detail::trim(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      view = detail::trim(view.substr(0, hash));
    }
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(detail::location(path, line_no) + ": expected key=value");
    }
    kv[std::string(detail::trim(view.substr(0, eq)))] = std::string(detail::trim(view.substr(eq + 1)));
  }
  return kv;
}

inline void save_split(const std::filesystem::path& dir, const DatasetSplit& split,
                       KeyValues manifest) {
  std::filesystem::create_directories(dir);
  write_interactions(dir / "train.tsv", split.train);
  write_interactions(dir / "validation.tsv", split.validation);
  write_interactions(dir / "test.tsv", split.test);
  {
    std::ofstream out(dir / "candidates.tsv", std::ios::binary);
    for (std::size_t u = 0; u < split.test_candidates.size(); ++u) {
      for (Index i : split.test_candidates[u]) out << u << '\t' << i << '\n';
    }
  }
  manifest["num_users"] = std::to_string(split.train.num_users);
  manifest["num_items"] = std::to_string(split.train.num_items);
  manifest["protocol"] = to_string(split.protocol);
  manifest["train_interactions"] = std::to_string(split.train.nnz());
  manifest["validation_interactions"] = std::to_string(split.validation.nnz());
  manifest["test_interactions"] = std::to_string(split.test.nnz());
  write_key_values(dir / "split.manifest", manifest);
}

inline DatasetSplit load_split(const std::filesystem::path& dir) {
  const KeyValues kv = read_key_values(dir / "split.manifest");
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError((dir / "split.manifest").string() + ": missing " + key);
    return it->second;
  };
  const Index m = std::stoi(need("num_users"));
  const Index n = std::stoi(need("num_items"));
  DatasetSplit split;
  split.protocol = need("protocol") == "MAR_TEST" ? Protocol::kMarTest : Protocol::kMnarTest;
  split.train = read_interactions(dir / "train.tsv", m, n);
  split.validation = read_interactions(dir / "validation.tsv", m, n);
  split.test = read_interactions(dir / "test.tsv", m, n);
  split.test_candidates = read_interactions(dir / "candidates.tsv", m, n).rows;
  return split;
}

}  // namespace biser
