#include <cmath>

#include <gtest/gtest.h>

#include "biser/propensity.hpp"
#include "test_util.hpp"

namespace biser {
namespace {

ItemStats stats_of(std::vector<int> counts) {
  ItemStats s;
  s.counts = std::move(counts);
  s.max_count = *std::max_element(s.counts.begin(), s.counts.end());
  return s;
}

TEST(PopularityPropensity, SquareRootOfRelativePopularity) {
  auto t = popularity_propensity(stats_of({4, 1}), 0.5, 0.0);
  EXPECT_DOUBLE_EQ(t.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 0.5);
  EXPECT_EQ(t.mode(), PropensityMode::kPerItem);
}

TEST(PopularityPropensity, EqualCountsGiveOne) {
  for (double eta : {0.1, 0.5, 2.0}) {
    auto t = popularity_propensity(stats_of({9, 9}), eta);
    EXPECT_DOUBLE_EQ(t.at(3, 0), 1.0);
    EXPECT_DOUBLE_EQ(t.at(3, 1), 1.0);
  }
}

TEST(PopularityPropensity, ClipApplies) {
  // (1/100)^0.5 = 0.1, below the 0.2 floor.
  auto t = popularity_propensity(stats_of({100, 1}), 0.5, 0.2);
  EXPECT_DOUBLE_EQ(t.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 0.2);
}

TEST(PopularityPropensity, RejectsBadArguments) {
  EXPECT_THROW(popularity_propensity(stats_of({1, 2}), 0.0), ConfigError);
  EXPECT_THROW(popularity_propensity(stats_of({1, 2}), 0.5, 1.5), ConfigError);
  EXPECT_THROW(popularity_propensity(stats_of({0, 0}), 0.5), DataError);
}

TEST(SelfPropensity, ClampsIntoRange) {
  auto pairs = Interactions::from_pairs(1, 3, {{0, 0}, {0, 1}, {0, 2}});
  auto t = self_propensity(pairs, {{0.03, 0.5, 0.999}}, 0.1);
  EXPECT_DOUBLE_EQ(t.at(0, 0), 0.1);
  EXPECT_DOUBLE_EQ(t.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(t.at(0, 2), 0.999);
  EXPECT_EQ(t.mode(), PropensityMode::kPerPair);
}

TEST(SelfPropensity, OnlyMaterializedPairs) {
  auto pairs = Interactions::from_pairs(2, 3, {{0, 1}});
  auto t = self_propensity(pairs, {{0.4}, {}}, 0.1);
  EXPECT_THROW(t.at(0, 0), std::out_of_range);
  EXPECT_THROW(t.at(1, 1), std::out_of_range);
}

TEST(SelfPropensity, Validation) {
  auto pairs = Interactions::from_pairs(1, 2, {{0, 1}});
  EXPECT_THROW(self_propensity(pairs, {{0.4}}, 0.0), ConfigError);
  EXPECT_THROW(self_propensity(pairs, {{1.4}}, 0.1), std::logic_error);
  EXPECT_THROW(self_propensity(pairs, {{0.4, 0.3}}, 0.1), std::invalid_argument);
  auto saturated = self_propensity(pairs, {{0.4}}, 1.0);
  EXPECT_DOUBLE_EQ(saturated.at(0, 1), 1.0);
}

TEST(EvalPropensity, Examples) {
  auto uniform = eval_propensity(stats_of({8, 8}), 2.0);
  EXPECT_DOUBLE_EQ(uniform.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(uniform.at(0, 1), 1.0);
  auto g1 = eval_propensity(stats_of({4, 1}), 1.0, 0.0);
  EXPECT_DOUBLE_EQ(g1.at(0, 1), 0.25);
  auto g2 = eval_propensity(stats_of({4, 1}), 2.0, 0.0);
  EXPECT_NEAR(g2.at(0, 1), std::pow(0.25, 1.5), 1e-15);
  EXPECT_NEAR(g2.at(0, 1), 0.125, 1e-15);
}

TEST(PropensityTable, ValuesStayInClipRange) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> counts(12);
    for (int& c : counts) c = static_cast<int>(rng.below(50));
    counts[0] = 50;
    const double clip = rng.uniform(0.01, 0.9);
    auto t = popularity_propensity(stats_of(counts), rng.uniform(0.1, 3.0), clip);
    for (double v : t.item_values()) {
      EXPECT_GE(v, clip);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(PropensityTable, GatherItemMajor) {
  auto pairs = Interactions::from_pairs(2, 3, {{0, 1}, {1, 1}, {1, 2}});
  auto t = self_propensity(pairs, {{0.3}, {0.6, 0.9}}, 0.1);
  auto by_item = t.gather(pairs.transposed(), true);
  EXPECT_TRUE(by_item[0].empty());
  EXPECT_EQ(by_item[1], (std::vector<double>{0.3, 0.6}));
  EXPECT_EQ(by_item[2], (std::vector<double>{0.9}));
}

TEST(PropensityTable, DumpWritesFullPrecision) {
  auto dir = testing::scratch_dir();
  auto t = popularity_propensity(stats_of({3, 1}), 0.5, 0.0);
  dump_item_propensities(dir / "p.tsv", t);
  EXPECT_EQ(testing::read_file(dir / "p.tsv"), "0\t1\n1\t0.57735026918962573\n");
}

}  // namespace
}  // namespace biser
