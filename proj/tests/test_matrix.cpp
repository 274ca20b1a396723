#include "knncross/matrix.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "knncross/rng.hpp"

using namespace knncross;

TEST(Matmul, HandComputed2x2) {
  Matrix a(2, 2);
  a.data = {1, 2, 3, 4};
  Matrix b(2, 2);
  b.data = {0, 1, 1, 0};
  Matrix c = matmul(a, b);
  EXPECT_FLOAT_EQ(c.at(0, 0), 2.0f);
  EXPECT_FLOAT_EQ(c.at(0, 1), 1.0f);
  EXPECT_FLOAT_EQ(c.at(1, 0), 4.0f);
  EXPECT_FLOAT_EQ(c.at(1, 1), 3.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Matrix a(2, 3), b(2, 2);
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
  }
}

TEST(Matmul, AssociativeWithinTolerance) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r = rng.split(trial);
    Matrix a = seeded_normal(r, 5, 7, 1.0);
    Matrix b = seeded_normal(r, 7, 6, 1.0);
    Matrix c = seeded_normal(r, 6, 4, 1.0);
    Matrix lhs = matmul(matmul(a, b), c);
    Matrix rhs = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      double denom = std::max(1.0, std::fabs(double(lhs.data[i])));
      EXPECT_NEAR(lhs.data[i], rhs.data[i], 1e-4 * denom);
    }
  }
}

TEST(Softmax, LargeEqualInputsDoNotOverflow) {
  std::vector<float> v = {1000.0f, 1000.0f};
  auto p = softmax(v);
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(Softmax, HandComputedLogOdds) {
  // exp(ln 2) : exp(0) = 2 : 1.
  std::vector<float> v = {float(std::log(2.0)), 0.0f};
  auto p = softmax(v);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-6);
}

TEST(Softmax, SumsToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Rng r = rng.split(trial);
    std::vector<float> v(1 + std::size_t(r.below(32)));
    for (auto& x : v) x = float(10.0 * r.normal());
    auto p = softmax(v);
    double sum = 0;
    for (float x : p) {
      EXPECT_GE(x, 0.0f);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

// Shift invariance is checked on a grid where v + c is exactly representable
// in float (v on multiples of 2^-9, c a power-of-two-scaled constant up to
// 1e4); otherwise the rounding of the shifted *input* would dominate.
TEST(Softmax, ShiftInvarianceUpTo1e4) {
  Rng rng(17);
  const double shifts[] = {1.0, -32.0, 1024.0, 8192.0, 10000.0, -10000.0};
  for (int trial = 0; trial < 30; ++trial) {
    Rng r = rng.split(trial);
    std::vector<float> v(4 + std::size_t(r.below(12)));
    for (auto& x : v)
      x = float(double(std::int64_t(r.below(10241)) - 5120) / 512.0);
    for (double c : shifts) {
      std::vector<float> shifted(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = float(v[i] + c);
      auto p0 = softmax(v);
      auto p1 = softmax(shifted);
      for (std::size_t i = 0; i < v.size(); ++i)
        EXPECT_NEAR(p0[i], p1[i], 1e-6);
    }
  }
}

TEST(Softmax, EmptyInputIsArgumentError) {
  std::vector<float> v;
  EXPECT_THROW(softmax(v), ArgumentError);
}

TEST(Softmax, NanInputIsNumericError) {
  std::vector<float> v = {1.0f, std::nanf("")};
  EXPECT_THROW(softmax(v), NumericError);
}

TEST(SeededNormal, SampleStddevWithinFivePercent) {
  Rng rng(42);
  Matrix m = seeded_normal(rng, 100, 1000, 0.02);
  double sum = 0, sumsq = 0;
  for (float x : m.data) {
    sum += x;
    sumsq += double(x) * double(x);
  }
  double n = double(m.size());
  double mean = sum / n;
  double sd = std::sqrt(sumsq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.001);
  EXPECT_NEAR(sd, 0.02, 0.001);
}
