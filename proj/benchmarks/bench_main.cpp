#include <benchmark/benchmark.h>

#include <vector>

#include "knncross/datastore.hpp"
#include "knncross/engine.hpp"
#include "knncross/matrix.hpp"
#include "knncross/model.hpp"
#include "knncross/provider.hpp"
#include "knncross/rng.hpp"

namespace {

using namespace knncross;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (float& v : m.data) v = float(rng.uniform() - 0.5);
  return m;
}

ModelConfig bench_config(std::size_t window) {
  ModelConfig cfg;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.d_ff = 256;
  cfg.vocab_size = 256;
  cfg.window = window;
  cfg.seed = 21;
  return cfg;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab,
                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> t(n);
  for (int& v : t) v = int(kUnk + 1 + rng.below(vocab - kUnk - 1));
  return t;
}

void BM_matmul(benchmark::State& state) {
  const std::size_t d = std::size_t(state.range(0));
  const Matrix a = random_matrix(d, d, 1);
  const Matrix b = random_matrix(d, d, 2);
  for (auto _ : state) {
    Matrix c = matmul(a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_datastore_query(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  const std::size_t d = 64;
  Matrix vecs = random_matrix(n, d, 3);
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  const Datastore ds = Datastore::build(std::move(vecs), std::move(pos));
  std::vector<double> q(d);
  Rng rng(4);
  for (double& v : q) v = rng.uniform() - 0.5;
  for (auto _ : state) {
    auto top = ds.query(q, 16);
    benchmark::DoNotOptimize(top.indices.data());
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n));
}
BENCHMARK(BM_datastore_query)->Arg(1 << 10)->Arg(1 << 13)->Arg(1 << 16);

void BM_encode_window(benchmark::State& state) {
  const ModelConfig cfg = bench_config(std::size_t(state.range(0)));
  const ModelWeights w = init_weights(cfg);
  const std::vector<int> tokens = random_tokens(cfg.window, cfg.vocab_size, 5);
  for (auto _ : state) {
    Matrix out = encode_window(w, tokens);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_encode_window)->Arg(32)->Arg(64);

// Generation cost against input length; retrieval should stay nearly flat
// while full attention grows with n.
void decode_scaling(benchmark::State& state, bool full_attention) {
  const ModelConfig cfg = bench_config(32);
  const ModelWeights w = init_weights(cfg);
  const std::size_t n = std::size_t(state.range(0)) * cfg.window;
  const std::vector<int> tokens = random_tokens(n, cfg.vocab_size, 6);
  const EncodedSequence enc = encode_long(w, tokens);
  const Datastore ds = Datastore::build(enc.hidden, enc.positions);
  for (auto _ : state) {
    CrossProvider provider = full_attention
                                 ? CrossProvider::full(enc.hidden)
                                 : CrossProvider::retrieval(ds, cfg.window);
    std::vector<int> out = greedy_generate(w, provider, 16, false);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_generate_retrieval(benchmark::State& state) {
  decode_scaling(state, false);
}
BENCHMARK(BM_generate_retrieval)->Arg(1)->Arg(4)->Arg(16);

void BM_generate_full(benchmark::State& state) { decode_scaling(state, true); }
BENCHMARK(BM_generate_full)->Arg(1)->Arg(4)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
