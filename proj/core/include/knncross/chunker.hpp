#ifndef KNNCROSS_CHUNKER_HPP
#define KNNCROSS_CHUNKER_HPP

#include <cstddef>
#include <vector>

namespace knncross {

// One encoder window over a long input. [start, end) is what gets encoded;
// [keep_start, keep_end) is the slice of that window whose hidden states
// survive into the combined encoding. Keeps of consecutive spans tile the
// input exactly.
struct ChunkSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t keep_start = 0;
  std::size_t keep_end = 0;
};

// Splits n tokens into windows of w with stride w/2; each interior window
// keeps only its middle half, so every token is owned by the window where it
// sits furthest from the edges. The final window is pinned to [n-w, n) so no
// token is left uncovered.
std::vector<ChunkSpan> chunk_spans(std::size_t n, std::size_t w);

}  // namespace knncross

#endif
