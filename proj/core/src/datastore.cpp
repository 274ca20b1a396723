#include "knncross/datastore.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace knncross {

static_assert(std::endian::native == std::endian::little,
              "datastore dump format assumes a little-endian host");

Datastore Datastore::build(Matrix vectors, std::vector<std::size_t> positions) {
  if (vectors.rows == 0) throw ArgumentError("datastore: empty payload");
  if (positions.size() != vectors.rows)
    throw ShapeError("datastore: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(vectors.rows) +
                     " rows");
  Datastore ds;
  ds.vectors_ = std::move(vectors);
  ds.positions_ = std::move(positions);
  ds.frozen_ = true;
  return ds;
}

RetrievalResult Datastore::query(std::span<const double> q,
                                 std::size_t k) const {
  if (!frozen_) throw StateError("datastore: query before build");
  return scan_topk(vectors_, q, k);
}

namespace {

constexpr char kMagic[4] = {'U', 'L', 'D', 'S'};

template <class T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
void read_pod(std::ifstream& is, T& v, const std::filesystem::path& path) {
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("datastore: truncated dump " + path.string());
}

}  // namespace

void Datastore::dump(const std::filesystem::path& path) const {
  if (!frozen_) throw StateError("datastore: dump before build");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("datastore: cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, std::uint64_t(vectors_.rows));
  write_pod(os, std::uint64_t(vectors_.cols));
  for (std::size_t p : positions_) write_pod(os, std::uint64_t(p));
  os.write(reinterpret_cast<const char*>(vectors_.data.data()),
           std::streamsize(vectors_.data.size() * sizeof(float)));
  if (!os) throw IoError("datastore: write failed for " + path.string());
}

Datastore Datastore::load_dump(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("datastore: cannot read " + path.string());
  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("datastore: bad magic in " + path.string());
  std::uint64_t n = 0, d = 0;
  read_pod(is, n, path);
  read_pod(is, d, path);
  if (n == 0 || d == 0)
    throw DataError("datastore: empty dump " + path.string());
  std::vector<std::size_t> positions(n);
  for (auto& p : positions) {
    std::uint64_t v = 0;
    read_pod(is, v, path);
    p = std::size_t(v);
  }
  Matrix vectors{std::size_t(n), std::size_t(d)};
  is.read(reinterpret_cast<char*>(vectors.data.data()),
          std::streamsize(vectors.data.size() * sizeof(float)));
  if (!is) throw DataError("datastore: truncated dump " + path.string());
  return build(std::move(vectors), std::move(positions));
}

std::uint64_t memory_bytes(std::uint64_t n, std::uint64_t d,
                           std::uint64_t bytes_per_scalar) {
  if (n < 1 || d < 1 || bytes_per_scalar < 1)
    throw ArgumentError("memory_bytes: all arguments must be >= 1");
  std::uint64_t nd = 0, total = 0;
  if (__builtin_mul_overflow(n, d, &nd) ||
      __builtin_mul_overflow(nd, bytes_per_scalar, &total))
    throw RangeError("memory_bytes: product overflows 64 bits");
  return total;
}

}  // namespace knncross
