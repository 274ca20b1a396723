#ifndef KNNCROSS_RNG_HPP
#define KNNCROSS_RNG_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "knncross/errors.hpp"
#include "knncross/matrix.hpp"

namespace knncross {

// Counter-based generator: output i is a hash of (key, i), so streams are
// reproducible bit-for-bit across platforms and splitting is cheap. Not for
// cryptography.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x5851F42D4C957F2DULL)) {}

  // Derives an independent stream; the parent is unaffected, and splits with
  // distinct tags do not collide in practice.
  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix(key_ + 0x9E3779B97F4A7C15ULL * (stream + 1));
    child.ctr_ = 0;
    child.has_spare_ = false;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + 0xD1B54A32D192ED03ULL * ++ctr_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("rng: below(0)");
    std::uint64_t bound = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t v = next_u64();
    while (v >= bound) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 1.0 - uniform();  // (0, 1]
    double r = std::sqrt(-2.0 * std::log(u));
    double t = 2.0 * 3.14159265358979323846 * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k) {
    if (k > n)
      throw ArgumentError("rng: cannot sample " + std::to_string(k) +
                          " of " + std::to_string(n) + " without replacement");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + std::size_t(below(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[std::size_t(below(i))]);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Matrix of N(0, stddev^2) draws, consumed row-major from the stream.
template <class Real = float>
Mat<Real> seeded_normal(Rng& rng, std::size_t rows, std::size_t cols,
                        double stddev) {
  if (stddev < 0) throw ArgumentError("seeded_normal: negative stddev");
  Mat<Real> m(rows, cols);
  for (auto& x : m.data) x = Real(stddev * rng.normal());
  return m;
}

}  // namespace knncross

#endif
