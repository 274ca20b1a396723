#ifndef KNNCROSS_DATASTORE_HPP
#define KNNCROSS_DATASTORE_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <vector>

#include "knncross/errors.hpp"
#include "knncross/matrix.hpp"

namespace knncross {

struct RetrievalResult {
  std::vector<std::size_t> indices;  // best first
  std::vector<double> scores;        // dot products, same order
};

// Exact top-k by dot product over the rows of a matrix. Scores accumulate in
// double so both association orders of the same bilinear form rank
// identically; ties break toward the lowest row index.
template <class Real>
RetrievalResult scan_topk(const Mat<Real>& rows, std::span<const double> q,
                          std::size_t k) {
  if (q.size() != rows.cols)
    throw ShapeError("scan_topk: query " + shape_str(1, q.size()) +
                     " vs rows " + shape_str(rows.rows, rows.cols));
  RetrievalResult out;
  if (k == 0 || rows.rows == 0) return out;
  std::vector<double> scores(rows.rows);
  for (std::size_t i = 0; i < rows.rows; ++i) {
    const Real* r = rows.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < rows.cols; ++j) acc += double(r[j]) * q[j];
    scores[i] = acc;
  }
  std::size_t kk = std::min(k, rows.rows);
  std::vector<std::size_t> order(rows.rows);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  out.indices.assign(order.begin(), order.begin() + kk);
  out.scores.resize(kk);
  for (std::size_t i = 0; i < kk; ++i) out.scores[i] = scores[out.indices[i]];
  return out;
}

// Flat store of encoder hidden states, one row per input token. Built once,
// then frozen; queries are exact full scans (no approximation at this scale).
class Datastore {
 public:
  Datastore() = default;

  static Datastore build(Matrix vectors, std::vector<std::size_t> positions);

  RetrievalResult query(std::span<const double> q, std::size_t k) const;

  bool frozen() const { return frozen_; }
  std::size_t size() const { return vectors_.rows; }
  std::size_t dim() const { return vectors_.cols; }
  const Matrix& vectors() const { return vectors_; }
  const std::vector<std::size_t>& positions() const { return positions_; }

  // Bytes held by the vector payload itself (bookkeeping excluded).
  std::size_t payload_bytes() const {
    return vectors_.data.size() * sizeof(float);
  }

  void dump(const std::filesystem::path& path) const;
  static Datastore load_dump(const std::filesystem::path& path);

 private:
  Matrix vectors_;
  std::vector<std::size_t> positions_;
  bool frozen_ = false;
};

// n rows of dimension d at the given scalar width; overflow of the 64-bit
// product is reported rather than wrapped.
std::uint64_t memory_bytes(std::uint64_t n, std::uint64_t d,
                           std::uint64_t bytes_per_scalar);

}  // namespace knncross

#endif
