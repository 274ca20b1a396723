#include "knncross/datastore.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "knncross/rng.hpp"

using namespace knncross;

namespace {

Datastore tiny_store() {
  Matrix v(3, 2);
  v.data = {1, 0, 0, 1, 2, 2};
  return Datastore::build(std::move(v), {0, 1, 2});
}

}  // namespace

TEST(Datastore, HandComputedTopTwo) {
  Datastore ds = tiny_store();
  std::vector<double> q = {1.0, 1.0};
  auto r = ds.query(q, 2);
  // Scores 1, 1, 4: row 2 wins, then the tie between rows 0 and 1 goes to 0.
  ASSERT_EQ(r.indices.size(), 2u);
  EXPECT_EQ(r.indices[0], 2u);
  EXPECT_EQ(r.indices[1], 0u);
  EXPECT_DOUBLE_EQ(r.scores[0], 4.0);
  EXPECT_DOUBLE_EQ(r.scores[1], 1.0);
}

TEST(Datastore, KZeroIsEmpty) {
  Datastore ds = tiny_store();
  std::vector<double> q = {1.0, 1.0};
  auto r = ds.query(q, 0);
  EXPECT_TRUE(r.indices.empty());
  EXPECT_TRUE(r.scores.empty());
}

TEST(Datastore, KClampsToSize) {
  Datastore ds = tiny_store();
  std::vector<double> q = {0.5, -0.25};
  auto r = ds.query(q, 10);
  EXPECT_EQ(r.indices.size(), 3u);
}

TEST(Datastore, ScoresNonIncreasingTiesAscending) {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    Rng r = rng.split(trial);
    std::size_t n = 1 + r.below(64), d = 1 + r.below(16);
    Matrix v = seeded_normal(r, n, d, 1.0);
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    Datastore ds = Datastore::build(std::move(v), std::move(pos));
    std::vector<double> q(d);
    for (auto& x : q) x = r.normal();
    auto res = ds.query(q, n);
    for (std::size_t i = 1; i < res.indices.size(); ++i) {
      EXPECT_GE(res.scores[i - 1], res.scores[i]);
      if (res.scores[i - 1] == res.scores[i])
        EXPECT_LT(res.indices[i - 1], res.indices[i]);
    }
  }
}

TEST(Datastore, AgreesWithBruteForceArgmax) {
  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    Rng r = rng.split(trial);
    std::size_t n = 2 + r.below(40), d = 1 + r.below(8);
    Matrix v = seeded_normal(r, n, d, 1.0);
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    std::vector<double> q(d);
    for (auto& x : q) x = r.normal();

    // Independent oracle: repeatedly take the best unused row.
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < d; ++j) acc += double(v.at(i, j)) * q[j];
      scores[i] = acc;
    }
    std::vector<bool> used(n, false);
    std::vector<std::size_t> expect;
    for (std::size_t pick = 0; pick < 5 && pick < n; ++pick) {
      std::size_t best = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (used[i]) continue;
        if (best == n || scores[i] > scores[best]) best = i;
      }
      used[best] = true;
      expect.push_back(best);
    }

    Datastore ds = Datastore::build(std::move(v), std::move(pos));
    auto res = ds.query(q, 5);
    ASSERT_EQ(res.indices.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i)
      EXPECT_EQ(res.indices[i], expect[i]);
  }
}

TEST(Datastore, QueryBeforeBuildIsStateError) {
  Datastore ds;
  std::vector<double> q = {1.0};
  EXPECT_THROW(ds.query(q, 1), StateError);
}

TEST(Datastore, EmptyPayloadIsArgumentError) {
  Matrix v(0, 4);
  EXPECT_THROW(Datastore::build(std::move(v), {}), ArgumentError);
}

TEST(Datastore, QueryDimensionMismatchIsShapeError) {
  Datastore ds = tiny_store();
  std::vector<double> q = {1.0, 2.0, 3.0};
  EXPECT_THROW(ds.query(q, 1), ShapeError);
}

TEST(Datastore, BuildIsIdempotent) {
  Matrix v(2, 2);
  v.data = {1, 2, 3, 4};
  auto a = Datastore::build(v, {0, 1});
  auto b = Datastore::build(v, {0, 1});
  EXPECT_EQ(a.vectors().data, b.vectors().data);
  EXPECT_EQ(a.positions(), b.positions());
}

TEST(Datastore, PayloadBytesCountsVectorsOnly) {
  Rng rng(5);
  Matrix v = seeded_normal(rng, 1000, 64, 1.0);
  std::vector<std::size_t> pos(1000);
  for (std::size_t i = 0; i < 1000; ++i) pos[i] = i;
  Datastore ds = Datastore::build(std::move(v), std::move(pos));
  EXPECT_EQ(ds.payload_bytes(), 256000u);
}

TEST(Datastore, DumpRoundTrips) {
  Rng rng(6);
  Matrix v = seeded_normal(rng, 17, 5, 1.0);
  std::vector<std::size_t> pos(17);
  for (std::size_t i = 0; i < 17; ++i) pos[i] = i;
  Datastore ds = Datastore::build(v, pos);

  auto path = std::filesystem::temp_directory_path() / "knncross_ds_test.ulds";
  ds.dump(path);
  Datastore back = Datastore::load_dump(path);
  std::filesystem::remove(path);

  EXPECT_EQ(back.size(), 17u);
  EXPECT_EQ(back.dim(), 5u);
  EXPECT_EQ(back.positions(), ds.positions());
  EXPECT_EQ(back.vectors().data, ds.vectors().data);
}

TEST(Datastore, LoadRejectsBadMagic) {
  auto path = std::filesystem::temp_directory_path() / "knncross_bad.ulds";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE-not-a-datastore";
  }
  EXPECT_THROW(Datastore::load_dump(path), DataError);
  std::filesystem::remove(path);
}

TEST(Datastore, LoadMissingFileIsIoError) {
  EXPECT_THROW(Datastore::load_dump("/nonexistent/nowhere.ulds"), IoError);
}

TEST(MemoryBytes, SingleScalar) { EXPECT_EQ(memory_bytes(1, 1, 4), 4u); }

TEST(MemoryBytes, PlainProduct) {
  // One million 1024-wide rows at two bytes per scalar.
  EXPECT_EQ(memory_bytes(1000000, 1024, 2), 2048000000ull);
}

TEST(MemoryBytes, ZeroIsArgumentError) {
  EXPECT_THROW(memory_bytes(0, 1, 1), ArgumentError);
}

TEST(MemoryBytes, OverflowIsRangeError) {
  EXPECT_THROW(memory_bytes(~0ull, 2, 2), RangeError);
}
