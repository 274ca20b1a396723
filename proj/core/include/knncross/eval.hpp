#ifndef KNNCROSS_EVAL_HPP
#define KNNCROSS_EVAL_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "knncross/corpus.hpp"
#include "knncross/model.hpp"
#include "knncross/provider.hpp"

namespace knncross {

// Fraction of gold entities occurring contiguously in the candidate. Empty
// gold counts as 1.0 so corpus averages stay total.
double entity_mention_recall(std::span<const int> candidate,
                             const std::vector<std::vector<int>>& gold);

// Single-token specialization of entity_mention_recall.
double needle_recall(std::span<const int> generated,
                     std::span<const int> gold_needles);

// Long filler input with m unique marker tokens at distinct random positions;
// the target reproduces the markers in order of appearance between BOS and
// EOS. Stands in for entity recall over inputs far beyond the window.
struct NeedleExample {
  std::vector<int> input;
  std::vector<int> target;
  std::vector<int> needles;  // gold, in order of appearance
};

struct NeedleTask {
  std::size_t n = 0;
  std::size_t window = 0;
  std::size_t m = 0;
  std::size_t vocab = 0;
  std::uint64_t seed = 0;
  std::vector<NeedleExample> examples;
};

NeedleTask generate_needle_task(std::size_t n, std::size_t window,
                                std::size_t m, std::size_t vocab,
                                std::uint64_t seed, std::size_t n_examples);

// Drops the gold sets, keeping (input, target) pairs for the trainer.
Corpus to_corpus(const NeedleTask& task);

struct ScalingRow {
  std::size_t input_length = 0;
  double encode_seconds = 0.0;  // chunked encoding plus index build
  double decode_seconds = 0.0;  // fixed output budget, EOS ignored
  double total_seconds = 0.0;
  double relative_to_baseline = 0.0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
};

// Median wall-clock per length over `repetitions` runs after one discarded
// warm-up. k = 0 means the model window.
ScalingReport bench_scaling(const ModelWeights& w,
                            const std::vector<std::size_t>& lengths,
                            std::size_t repetitions, std::size_t k = 0,
                            std::size_t decode_budget = 32);

struct RetrievalHistogram {
  std::vector<double> mass;        // sums to 1
  double median_position = 0.0;    // normalized to [0, 1)
  double fraction_retrieved = 0.0;  // store rows retrieved at least once
};

// Positions are normalized by the store row count n_rows.
RetrievalHistogram retrieval_histogram(const std::vector<RetrievalRecord>& log,
                                       std::size_t n_rows, std::size_t n_bins);

}  // namespace knncross

#endif
