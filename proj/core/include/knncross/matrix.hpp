#ifndef KNNCROSS_MATRIX_HPP
#define KNNCROSS_MATRIX_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "knncross/errors.hpp"

namespace knncross {

// Dense row-major matrix. Production code runs the float instantiation;
// the double one exists for gradient verification, where float rounding
// noise would swamp finite differences.
template <class Real>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, Real fill = Real(0))
      : rows(r), cols(c), data(r * c, fill) {}

  Real* row(std::size_t r) { return data.data() + r * cols; }
  const Real* row(std::size_t r) const { return data.data() + r * cols; }

  std::span<Real> row_span(std::size_t r) { return {row(r), cols}; }
  std::span<const Real> row_span(std::size_t r) const { return {row(r), cols}; }
  std::span<const Real> crow(std::size_t r) const { return {row(r), cols}; }

  Real& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  Real at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }

  void fill(Real v) { data.assign(data.size(), v); }

  template <class Other>
  Mat<Other> cast() const {
    Mat<Other> out(rows, cols);
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

using Matrix = Mat<float>;
using MatrixD = Mat<double>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

// C = A * B with a double accumulator per output entry.
template <class Real>
Mat<Real> matmul(const Mat<Real>& a, const Mat<Real>& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: " + shape_str(a.rows, a.cols) + " vs " +
                     shape_str(b.rows, b.cols));
  Mat<Real> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const Real* ai = a.row(i);
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k)
        acc += double(ai[k]) * double(b.at(k, j));
      c.at(i, j) = Real(acc);
    }
  }
  return c;
}

template <class Real>
double dot(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size())
    throw ShapeError("dot: " + shape_str(1, a.size()) + " vs " +
                     shape_str(1, b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += double(a[i]) * double(b[i]);
  return acc;
}

// Max-subtracted softmax; exponentials and the normalizer run in double so
// large shifts cancel instead of overflowing.
template <class Real>
std::vector<Real> softmax(std::span<const Real> v) {
  if (v.empty()) throw ArgumentError("softmax: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (Real x : v) {
    if (!std::isfinite(double(x)))
      throw NumericError("softmax: non-finite input");
    m = std::max(m, double(x));
  }
  std::vector<double> e(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(double(v[i]) - m);
    sum += e[i];
  }
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = Real(e[i] / sum);
  return out;
}

template <class Real>
std::vector<Real> softmax(std::span<Real> v) {
  return softmax(std::span<const Real>(v));
}

template <class Real>
std::vector<Real> softmax(const std::vector<Real>& v) {
  return softmax(std::span<const Real>(v));
}

}  // namespace knncross

#endif
