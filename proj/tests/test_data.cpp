#include <algorithm>
#include <cstdlib>
#include <set>

#include <gtest/gtest.h>

#include "biser/data.hpp"
#include "test_util.hpp"

namespace biser {
namespace {

using testing::scratch_dir;
using testing::write_file;

Interactions random_interactions(Index m, Index n, double density, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<Index, Index>> pairs;
  for (Index u = 0; u < m; ++u)
    for (Index i = 0; i < n; ++i)
      if (rng.bernoulli(density)) pairs.emplace_back(u, i);
  return Interactions::from_pairs(m, n, pairs);
}

TEST(Interactions, FromPairsSortsAndDeduplicates) {
  auto inter = Interactions::from_pairs(2, 4, {{0, 3}, {0, 1}, {0, 3}, {1, 2}});
  EXPECT_EQ(inter.row(0), (std::vector<Index>{1, 3}));
  EXPECT_EQ(inter.nnz(), 3u);
  EXPECT_TRUE(inter.contains(1, 2));
  EXPECT_FALSE(inter.contains(1, 3));
  EXPECT_EQ(inter.position(0, 3), 1);
  EXPECT_EQ(inter.position(0, 2), -1);
}

TEST(Interactions, RejectsOutOfRangePairs) {
  EXPECT_THROW(Interactions::from_pairs(2, 2, {{2, 0}}), DataError);
  EXPECT_THROW(Interactions::from_pairs(2, 2, {{0, -1}}), DataError);
}

TEST(Interactions, TransposeTwiceIsIdentity) {
  auto inter = random_interactions(7, 9, 0.3, 4);
  auto t = inter.transposed();
  EXPECT_EQ(t.num_users, 9);
  EXPECT_EQ(t.nnz(), inter.nnz());
  EXPECT_EQ(t.transposed(), inter);
}

TEST(LoadDenseAscii, ParsesMatrix) {
  auto path = write_file(scratch_dir() / "m.ascii", "0 4 1\n5 0 0\n");
  RatingMatrix r = load_dense_ascii(path, 2, 3);
  RatingMatrix expected(2, 3);
  expected << 0, 4, 1, 5, 0, 0;
  EXPECT_EQ(r, expected);
}

TEST(LoadDenseAscii, ShortLineReportsLineNumber) {
  auto path = write_file(scratch_dir() / "m.ascii", "0 4\n5 0 0\n");
  try {
    load_dense_ascii(path, 2, 3);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":1"), std::string::npos) << e.what();
  }
}

TEST(LoadDenseAscii, WrongRowCountFails) {
  auto path = write_file(scratch_dir() / "m.ascii", "0 4 1\n");
  EXPECT_THROW(load_dense_ascii(path, 2, 3), DataError);
}

TEST(LoadTriplets, TabSeparated) {
  auto path = write_file(scratch_dir() / "t.tsv", "1\t7\t5\n");
  auto rows = load_triplets(path, "\t");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], (RawRating{1, 7, 5.0}));
}

TEST(LoadTriplets, MultiCharSeparatorDropsTimestamp) {
  auto path = write_file(scratch_dir() / "t.dat", "3::12::4::964982703\r\n");
  auto rows = load_triplets(path, "::");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], (RawRating{3, 12, 4.0}));
}

TEST(LoadTriplets, NonNumericFails) {
  auto path = write_file(scratch_dir() / "t.csv", "a,b,c\n");
  EXPECT_THROW(load_triplets(path, ","), DataError);
}

TEST(LoadTriplets, SkipsHeader) {
  auto path = write_file(scratch_dir() / "t.tsv", "user\titem\trating\n2\t3\t4.5\n");
  auto rows = load_triplets(path, "\t", true);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].rating, 4.5);
}

TEST(CompactIds, AscendingExternalOrder) {
  auto log = compact_ids({{50, 7, 5}, {10, 9, 3}, {50, 9, 4}});
  EXPECT_EQ(log.num_users, 2);
  EXPECT_EQ(log.num_items, 2);
  EXPECT_EQ(log.user_ids, (std::vector<std::int64_t>{10, 50}));
  EXPECT_EQ(log.entries[0].user, 1);
  EXPECT_EQ(log.entries[0].item, 0);
}

TEST(Binarize, ThresholdRule) {
  RatingMatrix r(1, 2);
  r << 5, 3;
  auto inter = binarize(r, 4);
  EXPECT_EQ(inter.row(0), (std::vector<Index>{0}));
}

TEST(Binarize, AllBelowThresholdIsEmpty) {
  RatingMatrix r(2, 2);
  r << 1, 2, 3, 0;
  EXPECT_EQ(binarize(r, 4).nnz(), 0u);
}

TEST(Binarize, BinaryInputUnchangedAtThresholdOne) {
  RatingMatrix r(2, 3);
  r << 1, 0, 1, 0, 1, 0;
  auto inter = binarize(r, 1);
  EXPECT_EQ(inter.nnz(), 3u);
  EXPECT_EQ(inter, rated_cells(r));
}

TEST(FilterCore, RemovesUsersWithDegreeAtMostThreshold) {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < 10; ++i) pairs.emplace_back(0, i);
  for (Index i = 0; i < 11; ++i) pairs.emplace_back(1, i);
  auto inter = Interactions::from_pairs(2, 12, pairs);
  FilterMaps maps;
  auto out = filter_core(inter, 10, 0, &maps);
  EXPECT_EQ(out.num_users, 1);
  EXPECT_EQ(maps.kept_users, (std::vector<Index>{1}));
  EXPECT_EQ(out.num_items, 11);
  EXPECT_EQ(out.nnz(), 11u);
}

TEST(FilterCore, ZeroThresholdDropsOnlyEmptyEntities) {
  auto inter = Interactions::from_pairs(3, 4, {{0, 1}, {2, 3}});
  FilterMaps maps;
  auto out = filter_core(inter, 0, 0, &maps);
  EXPECT_EQ(maps.kept_users, (std::vector<Index>{0, 2}));
  EXPECT_EQ(maps.kept_items, (std::vector<Index>{1, 3}));
  EXPECT_EQ(out.row(1), (std::vector<Index>{1}));
}

TEST(FilterCore, FullyFilteredIsAnError) {
  auto inter = Interactions::from_pairs(2, 2, {{0, 0}});
  EXPECT_THROW(filter_core(inter, 5, 0), DataError);
}

TEST(SplitHoldout, TenPositivesRoundingRule) {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < 10; ++i) pairs.emplace_back(0, i);
  auto split = split_holdout(Interactions::from_pairs(1, 20, pairs), 0.2, 0.3, 3);
  EXPECT_EQ(split.test.degree(0), 2);
  EXPECT_GE(split.validation.degree(0), 2);
  EXPECT_LE(split.validation.degree(0), 3);
  EXPECT_EQ(split.train.degree(0) + split.validation.degree(0) + split.test.degree(0), 10);
}

TEST(SplitHoldout, PartitionAndDisjointness) {
  auto inter = random_interactions(40, 30, 0.25, 11);
  auto split = split_holdout(inter, 0.2, 0.3, 5);
  EXPECT_EQ(split.protocol, Protocol::kMnarTest);
  for (Index u = 0; u < inter.num_users; ++u) {
    std::multiset<Index> all;
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
      all.insert(part->row(u).begin(), part->row(u).end());
    }
    EXPECT_EQ(std::vector<Index>(all.begin(), all.end()), inter.row(u)) << "user " << u;
    for (Index i : split.test_candidates[static_cast<std::size_t>(u)]) {
      EXPECT_FALSE(split.train.contains(u, i));
      EXPECT_FALSE(split.validation.contains(u, i));
    }
    for (Index i : split.test.row(u)) {
      EXPECT_TRUE(std::binary_search(split.test_candidates[static_cast<std::size_t>(u)].begin(),
                                     split.test_candidates[static_cast<std::size_t>(u)].end(), i));
    }
  }
}

TEST(SplitHoldout, DeterministicForSeed) {
  auto inter = random_interactions(20, 25, 0.3, 2);
  auto a = split_holdout(inter, 0.2, 0.3, 99);
  auto b = split_holdout(inter, 0.2, 0.3, 99);
  auto c = split_holdout(inter, 0.2, 0.3, 100);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_NE(a.test, c.test);
}

TEST(SplitHoldout, SinglePositiveUserStaysInTrain) {
  auto inter = Interactions::from_pairs(2, 5, {{0, 1}, {1, 0}, {1, 2}, {1, 3}});
  auto split = split_holdout(inter, 0.2, 0.3, 1);
  EXPECT_EQ(split.train.row(0), (std::vector<Index>{1}));
  EXPECT_TRUE(split.test.row(0).empty());
  EXPECT_EQ(split.test.degree(1), 1);
}

TEST(MarSplit, CandidatesAreTheRatedTestItems) {
  RatingMatrix test(2, 20);
  test.setZero();
  for (Index i = 0; i < 16; ++i) test(0, i) = (i % 5) + 1;
  for (Index i = 4; i < 20; ++i) test(1, i) = 2;
  auto train = random_interactions(2, 20, 0.4, 8);
  auto split = make_mar_split(train, test, 4, 0.1, 3);
  EXPECT_EQ(split.protocol, Protocol::kMarTest);
  EXPECT_EQ(split.test_candidates[0].size(), 16u);
  EXPECT_EQ(split.test_candidates[1].size(), 16u);
  EXPECT_EQ(split.test.degree(0), 6);  // ratings 4 and 5
  EXPECT_EQ(split.test.degree(1), 0);
}

TEST(MarSplit, ZeroValidationFraction) {
  auto train = random_interactions(5, 10, 0.5, 8);
  auto split = make_mar_split(train, train, train, 0.0, 3);
  EXPECT_EQ(split.validation.nnz(), 0u);
  EXPECT_EQ(split.train, train);
}

TEST(ItemPopularity, Counts) {
  auto stats = item_popularity(Interactions::from_pairs(3, 2, {{0, 1}, {1, 1}, {2, 0}}));
  EXPECT_EQ(stats.counts, (std::vector<int>{1, 2}));
  EXPECT_EQ(stats.max_count, 2);
  EXPECT_EQ(stats.total(), 3);
  auto empty = item_popularity(Interactions(2, 3));
  EXPECT_EQ(empty.counts, (std::vector<int>{0, 0, 0}));
}

TEST(SplitIo, RoundTrip) {
  auto inter = random_interactions(15, 12, 0.3, 21);
  auto split = split_holdout(inter, 0.2, 0.3, 4);
  auto dir = scratch_dir();
  save_split(dir, split, {{"seed", "4"}});
  auto loaded = load_split(dir);
  EXPECT_EQ(loaded.train, split.train);
  EXPECT_EQ(loaded.validation, split.validation);
  EXPECT_EQ(loaded.test, split.test);
  EXPECT_EQ(loaded.protocol, split.protocol);
  EXPECT_EQ(loaded.test_candidates, split.test_candidates);
  EXPECT_EQ(read_key_values(dir / "split.manifest").at("seed"), "4");
}

TEST(KeyValues, CommentsAndErrors) {
  auto dir = scratch_dir();
  auto kv = read_key_values(write_file(dir / "a.kv", "# header\na = 1 \n\nb=x # trailing\n"));
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "x");
  EXPECT_THROW(read_key_values(write_file(dir / "b.kv", "novalue\n")), ConfigError);
}

// Needs the MovieLens-100K ratings (tab-separated user, item, rating, with a
// header line) in $BISER_ML100K.
TEST(MovieLens100K, PublishedStatistics) {
  const char* path = std::getenv("BISER_ML100K");
  if (!path || !*path) GTEST_SKIP() << "BISER_ML100K not set";
  const Interactions binary = binarize(compact_ids(load_triplets(path, "\t", true)), 4.0);
  // Users with fewer than 10 positives and items with fewer than 5 are dropped.
  const Interactions kept = filter_core(binary, 9, 4);
  EXPECT_EQ(kept.num_users, 897);
  EXPECT_EQ(kept.num_items, 1007);
  EXPECT_EQ(kept.nnz(), 54103u);
  EXPECT_NEAR(sparsity(kept), 0.940, 5e-4);
}

}  // namespace
}  // namespace biser
