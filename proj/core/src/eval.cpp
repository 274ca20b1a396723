#include "knncross/eval.hpp"

#include <algorithm>
#include <chrono>

#include "knncross/datastore.hpp"
#include "knncross/engine.hpp"
#include "knncross/errors.hpp"
#include "knncross/rng.hpp"

namespace knncross {

double entity_mention_recall(std::span<const int> candidate,
                             const std::vector<std::vector<int>>& gold) {
  if (gold.empty()) return 1.0;
  std::size_t hit = 0;
  for (const std::vector<int>& entity : gold) {
    auto it = std::search(candidate.begin(), candidate.end(), entity.begin(),
                          entity.end());
    if (it != candidate.end() || entity.empty()) ++hit;
  }
  return double(hit) / double(gold.size());
}

double needle_recall(std::span<const int> generated,
                     std::span<const int> gold_needles) {
  std::vector<std::vector<int>> gold;
  gold.reserve(gold_needles.size());
  for (int needle : gold_needles) gold.push_back({needle});
  return entity_mention_recall(generated, gold);
}

NeedleTask generate_needle_task(std::size_t n, std::size_t window,
                                std::size_t m, std::size_t vocab,
                                std::uint64_t seed, std::size_t n_examples) {
  if (n < window)
    throw ArgumentError("needle task: input length " + std::to_string(n) +
                        " below window " + std::to_string(window));
  if (m < 1) throw ArgumentError("needle task: needs at least one needle");
  if (m > n / 4)
    throw ArgumentError("needle task: " + std::to_string(m) +
                        " needles exceed n/4 = " + std::to_string(n / 4));
  if (vocab < 6)
    throw ArgumentError("needle task: vocabulary of " + std::to_string(vocab) +
                        " leaves no room for filler and markers");
  // Non-special ids split into a filler pool and a marker pool.
  const std::size_t fill = (vocab - 4) / 2;
  const std::size_t markers = vocab - 4 - fill;
  if (m > markers)
    throw ArgumentError("needle task: " + std::to_string(m) +
                        " needles exceed the " + std::to_string(markers) +
                        " marker ids");

  NeedleTask task;
  task.n = n;
  task.window = window;
  task.m = m;
  task.vocab = vocab;
  task.seed = seed;
  Rng rng(seed);
  for (std::size_t e = 0; e < n_examples; ++e) {
    NeedleExample ex;
    ex.input.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ex.input[i] = int(4 + rng.below(fill));
    std::vector<std::size_t> where = rng.sample_without_replacement(n, m);
    std::sort(where.begin(), where.end());
    std::vector<std::size_t> ids = rng.sample_without_replacement(markers, m);
    ex.target.push_back(kBos);
    for (std::size_t i = 0; i < m; ++i) {
      int needle = int(4 + fill + ids[i]);
      ex.input[where[i]] = needle;
      ex.needles.push_back(needle);
      ex.target.push_back(needle);
    }
    ex.target.push_back(kEos);
    task.examples.push_back(std::move(ex));
  }
  return task;
}

Corpus to_corpus(const NeedleTask& task) {
  Corpus out;
  out.reserve(task.examples.size());
  for (const NeedleExample& ex : task.examples)
    out.push_back({ex.input, ex.target});
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Smallest observable interval; medians below it are noise, not measurement.
double clock_tick() {
  auto a = Clock::now();
  auto b = a;
  while ((b = Clock::now()) == a) {
  }
  return std::chrono::duration<double>(b - a).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

ScalingReport bench_scaling(const ModelWeights& w,
                            const std::vector<std::size_t>& lengths,
                            std::size_t repetitions, std::size_t k,
                            std::size_t decode_budget) {
  if (lengths.empty()) throw ArgumentError("bench: no input lengths");
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1])
      throw ArgumentError("bench: input lengths must strictly increase");
  if (repetitions < 3)
    throw ArgumentError("bench: needs at least 3 repetitions, got " +
                        std::to_string(repetitions));
  const std::size_t kk = k ? k : w.config.window;
  const double tick = clock_tick();

  ScalingReport report;
  for (std::size_t n : lengths) {
    std::vector<int> tokens(n);
    for (std::size_t i = 0; i < n; ++i)
      tokens[i] = int(4 + i % (w.config.vocab_size - 4));

    std::vector<double> enc_times, dec_times;
    for (std::size_t r = 0; r < repetitions + 1; ++r) {
      auto t0 = Clock::now();
      EncodedSequence seq = encode_long(w, tokens);
      Datastore ds = Datastore::build(seq.hidden, seq.positions);
      double t_enc = seconds_since(t0);

      auto provider = CrossProvider::retrieval(ds, kk);
      auto t1 = Clock::now();
      greedy_generate(w, provider, decode_budget, /*stop_at_eos=*/false);
      double t_dec = seconds_since(t1);
      if (r == 0) continue;  // warm-up
      enc_times.push_back(t_enc);
      dec_times.push_back(t_dec);
    }
    ScalingRow row;
    row.input_length = n;
    row.encode_seconds = median(enc_times);
    row.decode_seconds = median(dec_times);
    row.total_seconds = row.encode_seconds + row.decode_seconds;
    if (row.encode_seconds <= tick || row.decode_seconds <= tick)
      throw BenchmarkError("bench: timer resolution " + std::to_string(tick) +
                           "s cannot resolve length " + std::to_string(n));
    report.rows.push_back(row);
  }
  const double base = report.rows.front().total_seconds;
  for (ScalingRow& row : report.rows)
    row.relative_to_baseline = row.total_seconds / base;
  return report;
}

RetrievalHistogram retrieval_histogram(const std::vector<RetrievalRecord>& log,
                                       std::size_t n_rows,
                                       std::size_t n_bins) {
  if (log.empty()) throw ArgumentError("histogram: empty retrieval log");
  if (n_rows < 1) throw ArgumentError("histogram: empty store");
  if (n_bins < 1) throw ArgumentError("histogram: needs at least one bin");

  RetrievalHistogram out;
  out.mass.assign(n_bins, 0.0);
  std::vector<double> positions;
  positions.reserve(log.size());
  std::vector<char> seen(n_rows, 0);
  for (const RetrievalRecord& rec : log) {
    if (rec.position >= n_rows)
      throw RangeError("histogram: position " + std::to_string(rec.position) +
                       " outside store of " + std::to_string(n_rows));
    const double p = double(rec.position) / double(n_rows);
    positions.push_back(p);
    out.mass[std::min(std::size_t(p * double(n_bins)), n_bins - 1)] +=
        1.0 / double(log.size());
    seen[rec.position] = 1;
  }
  std::sort(positions.begin(), positions.end());
  const std::size_t h = positions.size() / 2;
  out.median_position = positions.size() % 2
                            ? positions[h]
                            : 0.5 * (positions[h - 1] + positions[h]);
  out.fraction_retrieved =
      double(std::count(seen.begin(), seen.end(), char(1))) / double(n_rows);
  return out;
}

}  // namespace knncross
