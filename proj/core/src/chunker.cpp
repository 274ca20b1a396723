#include "knncross/chunker.hpp"

#include <string>

#include "knncross/errors.hpp"

namespace knncross {

std::vector<ChunkSpan> chunk_spans(std::size_t n, std::size_t w) {
  if (n < 1) throw ArgumentError("chunk_spans: empty input");
  if (w < 4 || w % 4 != 0)
    throw ConfigError("chunk_spans: window " + std::to_string(w) +
                      " must be >= 4 and divisible by 4");

  if (n <= w) return {{0, n, 0, n}};

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + w < n; s += w / 2) starts.push_back(s);
  if (starts.back() != n - w) starts.push_back(n - w);

  std::vector<ChunkSpan> spans(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    spans[i].start = starts[i];
    spans[i].end = starts[i] + w;
  }
  // Keep boundary between overlapping neighbours: midpoint of the overlap,
  // so each token stays with the window that centers it best.
  for (std::size_t i = 0; i < spans.size(); ++i) {
    spans[i].keep_start = i == 0 ? 0 : (spans[i - 1].start + spans[i].start + w) / 2;
    spans[i].keep_end =
        i + 1 == spans.size() ? n : (spans[i].start + spans[i + 1].start + w) / 2;
  }
  return spans;
}

}  // namespace knncross
