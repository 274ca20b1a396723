#include "knncross/rng.hpp"

#include <gtest/gtest.h>

#include <set>
#include <vector>

using namespace knncross;

TEST(Rng, SameSeedSameSequence) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, SplitStreamsDoNotCollide) {
  Rng root(7);
  Rng a = root.split(0);
  Rng b = root.split(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    seen.insert(a.next_u64());
    seen.insert(b.next_u64());
  }
  EXPECT_EQ(seen.size(), 20000u);
}

TEST(Rng, SplitIsStableRegardlessOfParentUse) {
  Rng r1(99);
  Rng c1 = r1.split(5);
  Rng r2(99);
  r2.next_u64();
  r2.next_u64();
  Rng c2 = r2.split(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c1.next_u64(), c2.next_u64());
}

TEST(Rng, BelowStaysInRange) {
  Rng r(5);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  Rng r(6);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng r(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto idx = r.sample_without_replacement(50, 20);
    std::set<std::size_t> s(idx.begin(), idx.end());
    EXPECT_EQ(s.size(), 20u);
    for (auto i : idx) EXPECT_LT(i, 50u);
  }
}

TEST(Rng, SampleWithoutReplacementCoversUniformly) {
  Rng r(9);
  std::vector<int> counts(10, 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t)
    for (auto i : r.sample_without_replacement(10, 3)) counts[i]++;
  // Each index is picked with probability 3/10.
  for (int c : counts) EXPECT_NEAR(double(c) / trials, 0.3, 0.02);
}

TEST(Rng, OversampleIsArgumentError) {
  Rng r(1);
  EXPECT_THROW(r.sample_without_replacement(3, 4), ArgumentError);
}
