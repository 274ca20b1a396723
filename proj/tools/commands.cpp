#include "commands.hpp"

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "knncross/attention.hpp"
#include "knncross/chunker.hpp"
#include "knncross/corpus.hpp"
#include "knncross/datastore.hpp"
#include "knncross/engine.hpp"
#include "knncross/errors.hpp"
#include "knncross/eval.hpp"
#include "knncross/model.hpp"
#include "knncross/provider.hpp"
#include "knncross/rng.hpp"
#include "knncross/training.hpp"

namespace knncross::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

fs::path report_path(const RunConfig& cfg, const char* name) {
  return fs::path(cfg.paths.report_dir) / name;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Target body without the BOS/EOS frame; the gold needles for recall.
std::span<const int> gold_body(const std::vector<int>& target) {
  std::span<const int> s(target);
  if (!s.empty() && s.front() == kBos) s = s.subspan(1);
  if (!s.empty() && s.back() == kEos) s = s.subspan(0, s.size() - 1);
  return s;
}

struct SplitCorpus {
  Corpus train, val;
};

// Corpus file if configured, synthesized needle task otherwise. Files donate
// their last task.val_examples lines to validation.
SplitCorpus assemble_corpus(const RunConfig& cfg) {
  if (!cfg.paths.corpus.empty()) {
    Corpus all = load_corpus(cfg.paths.corpus);
    const std::size_t v = cfg.task.val_examples;
    if (all.size() <= v)
      throw DataError("corpus " + cfg.paths.corpus + ": " +
                      std::to_string(all.size()) +
                      " example(s) cannot spare " + std::to_string(v) +
                      " for validation");
    return {Corpus(all.begin(), all.end() - v),
            Corpus(all.end() - v, all.end())};
  }
  NeedleTask task = generate_needle_task(
      cfg.task.n, cfg.model.window, cfg.task.m, cfg.model.vocab_size,
      cfg.task.seed, cfg.task.train_examples + cfg.task.val_examples);
  Corpus all = to_corpus(task);
  auto cut = all.begin() + std::ptrdiff_t(cfg.task.train_examples);
  return {Corpus(all.begin(), cut), Corpus(cut, all.end())};
}

CrossProvider make_provider(const RunConfig& cfg, const ModelWeights& w,
                            const Matrix& encodings, const Datastore& ds,
                            std::size_t k) {
  switch (cfg.provider.mode) {
    case ProviderChoice::full:
      return CrossProvider::full(encodings);
    case ProviderChoice::retrieval:
      return CrossProvider::retrieval(ds, k);
    case ProviderChoice::memtrans:
      if (cfg.provider.memtrans_layer >= w.config.n_dec_layers)
        throw ConfigError("memtrans layer " +
                          std::to_string(cfg.provider.memtrans_layer) +
                          " outside " +
                          std::to_string(w.config.n_dec_layers) +
                          " decoder layers");
      return CrossProvider::memtrans(ds, k, cfg.provider.memtrans_layer,
                                     w.config.window);
  }
  throw ArgumentError("unknown provider choice");
}

}  // namespace

RunConfig effective_config(const Overrides& o) {
  RunConfig cfg =
      o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed_set) cfg.model.seed = o.seed;
  if (o.k_set) cfg.k = o.k;
  if (o.provider_set) cfg.provider = parse_provider(o.provider);
  if (o.report_dir_set) cfg.paths.report_dir = o.report_dir;
  return cfg;
}

int run_train(const RunConfig& cfg) {
  fs::create_directories(cfg.paths.report_dir);
  SplitCorpus data = assemble_corpus(cfg);

  TrainOptions opt;
  opt.model = cfg.model;
  opt.k = cfg.k;
  opt.seed = cfg.model.seed;

  std::ostringstream log;
  TrainState state = train(opt, cfg.regime, data.train, data.val, &log);

  const fs::path log_path = report_path(cfg, "training_log.csv");
  {
    std::ofstream out = open_out(log_path);
    out << "epoch,train_loss,val_score,regime\n" << log.str();
  }
  const fs::path ckpt = cfg.paths.checkpoint.empty()
                            ? report_path(cfg, "model.ulmf")
                            : fs::path(cfg.paths.checkpoint);
  save_checkpoint(state.weights, ckpt);

  std::cout << "trained " << state.epochs_run << " epoch(s), best validation "
            << fmt(state.best_val, 4) << "\n"
            << "checkpoint " << ckpt.string() << "\n"
            << "log " << log_path.string() << "\n";
  return 0;
}

int run_generate(const RunConfig& cfg) {
  const fs::path ckpt = cfg.paths.checkpoint.empty()
                            ? report_path(cfg, "model.ulmf")
                            : fs::path(cfg.paths.checkpoint);
  const ModelWeights w = load_checkpoint(ckpt);
  fs::create_directories(cfg.paths.report_dir);

  // The checkpoint fixes the model; the config's task block (or corpus file)
  // supplies the inputs. Synthetic runs generate over the validation split.
  RunConfig task_cfg = cfg;
  task_cfg.model = w.config;
  SplitCorpus data = assemble_corpus(task_cfg);
  const Corpus& examples = cfg.paths.corpus.empty() ? data.val : data.train;
  if (examples.empty()) throw ArgumentError("generate: no examples");

  const std::size_t k = cfg.k ? cfg.k : w.config.window;
  std::ofstream outputs = open_out(report_path(cfg, "generated.txt"));
  std::ofstream log = open_out(report_path(cfg, "retrieval_log.csv"));
  log << "example,step,layer,head,rank,position,score\n";

  const fs::path dump_path = report_path(cfg, "datastore.ulds");
  double recall_sum = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    EncodedSequence enc = encode_long(w, ex.input);
    Datastore ds;
    if (cfg.provider.mode != ProviderChoice::full) {
      ds = Datastore::build(enc.hidden, enc.positions);
      if (i == 0) ds.dump(dump_path);
    }
    CrossProvider provider = make_provider(cfg, w, enc.hidden, ds, k);
    std::vector<int> gen = greedy_generate(w, provider, w.config.window - 1);

    for (std::size_t t = 0; t < gen.size(); ++t)
      outputs << (t ? " " : "") << gen[t];
    outputs << "\n";
    for (const RetrievalRecord& r : provider.log())
      log << i << ',' << r.step << ',' << r.layer << ',' << r.head << ','
          << r.rank << ',' << r.position << ',' << fmt(r.score, 6) << "\n";
    recall_sum += needle_recall(gen, gold_body(ex.target));
  }

  std::cout << "generated " << examples.size() << " example(s), mean recall "
            << fmt(recall_sum / double(examples.size()), 4) << "\n"
            << "outputs " << report_path(cfg, "generated.txt").string() << "\n"
            << "retrieval log " << report_path(cfg, "retrieval_log.csv").string()
            << "\n";
  return 0;
}

int run_bench(const RunConfig& cfg) {
  fs::create_directories(cfg.paths.report_dir);
  const ModelWeights w = cfg.paths.checkpoint.empty()
                             ? init_weights(cfg.model)
                             : load_checkpoint(cfg.paths.checkpoint);
  const std::size_t W = w.config.window;
  const std::vector<std::size_t> lengths = {W, 2 * W, 4 * W, 8 * W, 16 * W};
  ScalingReport rep = bench_scaling(w, lengths, 5, cfg.k);

  std::ofstream csv = open_out(report_path(cfg, "scaling.csv"));
  csv << "input_length,encode_seconds,decode_seconds,total_seconds,"
         "relative_to_baseline\n";
  std::ostringstream txt;
  char line[160];
  std::snprintf(line, sizeof line, "%12s %15s %15s %14s %21s\n",
                "input_length", "encode_seconds", "decode_seconds",
                "total_seconds", "relative_to_baseline");
  txt << line;
  for (const ScalingRow& r : rep.rows) {
    csv << r.input_length << ',' << fmt(r.encode_seconds, 6) << ','
        << fmt(r.decode_seconds, 6) << ',' << fmt(r.total_seconds, 6) << ','
        << fmt(r.relative_to_baseline, 2) << "\n";
    std::snprintf(line, sizeof line, "%12zu %15.6f %15.6f %14.6f %21.2f\n",
                  r.input_length, r.encode_seconds, r.decode_seconds,
                  r.total_seconds, r.relative_to_baseline);
    txt << line;
  }
  open_out(report_path(cfg, "scaling.txt")) << txt.str();
  std::cout << txt.str();
  return 0;
}

int run_analyze(const RunConfig& cfg) {
  const fs::path log_path = report_path(cfg, "retrieval_log.csv");
  const fs::path store_path = report_path(cfg, "datastore.ulds");
  const Datastore ds = Datastore::load_dump(store_path);

  std::ifstream in(log_path);
  if (!in) throw IoError("cannot open retrieval log " + log_path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "example,step,layer,head,rank,position,score")
    throw DataError("retrieval log " + log_path.string() +
                    ": missing header line");
  std::vector<RetrievalRecord> log;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw DataError("retrieval log line " + std::to_string(lineno) +
                      ": expected 7 fields, got " +
                      std::to_string(fields.size()));
    RetrievalRecord r;
    try {
      r.step = std::stoul(fields[1]);
      r.layer = std::stoul(fields[2]);
      r.head = std::stoul(fields[3]);
      r.rank = std::stoul(fields[4]);
      r.position = std::stoul(fields[5]);
      r.score = std::stod(fields[6]);
    } catch (const std::exception&) {
      throw DataError("retrieval log line " + std::to_string(lineno) +
                      ": bad field");
    }
    log.push_back(r);
  }

  const std::size_t n_bins = 10;
  RetrievalHistogram h = retrieval_histogram(log, ds.size(), n_bins);

  std::ofstream csv = open_out(report_path(cfg, "histogram.csv"));
  csv << "bin_start,bin_end,mass\n";
  std::ostringstream txt;
  txt << "retrievals " << log.size() << "\n"
      << "store_rows " << ds.size() << "\n"
      << "median_position " << fmt(h.median_position, 4) << "\n"
      << "fraction_retrieved " << fmt(h.fraction_retrieved, 4) << "\n";
  char row[96];
  std::snprintf(row, sizeof row, "%9s %9s %10s\n", "bin_start", "bin_end",
                "mass");
  txt << row;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = double(b) / double(n_bins);
    const double hi = double(b + 1) / double(n_bins);
    csv << fmt(lo, 2) << ',' << fmt(hi, 2) << ',' << fmt(h.mass[b], 6) << "\n";
    std::snprintf(row, sizeof row, "%9.2f %9.2f %10.6f\n", lo, hi, h.mass[b]);
    txt << row;
  }
  open_out(report_path(cfg, "histogram.txt")) << txt.str();
  std::cout << txt.str();
  return 0;
}

namespace {

void check(bool cond, const char* name, const std::string& detail) {
  if (!cond) throw Error(ErrorCategory::selftest, std::string(name) +
                                                      ": " + detail);
  std::cout << "ok " << name << "\n";
}

ModelConfig selftest_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = 32;
  cfg.window = 8;
  cfg.seed = 11;
  return cfg;
}

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> t(n);
  for (int& v : t) v = int(kUnk + 1 + rng.below(vocab - kUnk - 1));
  return t;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int run_selftest(const RunConfig&) {
  const ModelConfig cfg = selftest_config();
  const ModelWeights w = init_weights(cfg);
  Rng rng(404);

  // Keep ranges of the span list tile [0, n) exactly.
  for (std::size_t W : {4u, 8u, 16u}) {
    for (std::size_t n = 1; n <= 5 * W; ++n) {
      std::vector<char> owned(n, 0);
      for (const ChunkSpan& s : chunk_spans(n, W))
        for (std::size_t t = s.keep_start; t < s.keep_end; ++t) {
          if (t >= n || owned[t])
            throw Error(ErrorCategory::selftest,
                        "chunk_partition: token " + std::to_string(t) +
                            " not owned exactly once at n=" +
                            std::to_string(n) + " W=" + std::to_string(W));
          owned[t] = 1;
        }
      for (std::size_t t = 0; t < n; ++t)
        if (!owned[t])
          throw Error(ErrorCategory::selftest,
                      "chunk_partition: token " + std::to_string(t) +
                          " uncovered at n=" + std::to_string(n) +
                          " W=" + std::to_string(W));
    }
  }
  check(true, "chunk_partition", "");

  // Each combined row equals the owning window's encoder output exactly.
  const std::vector<int> tokens = random_tokens(3 * cfg.window, cfg.vocab_size, rng);
  EncodedSequence enc = encode_long(w, tokens);
  {
    bool exact = true;
    for (const ChunkSpan& s : chunk_spans(tokens.size(), cfg.window)) {
      Matrix win = encode_window(
          w, std::span<const int>(tokens).subspan(s.start, s.end - s.start));
      for (std::size_t t = s.keep_start; t < s.keep_end && exact; ++t) {
        std::size_t row = 0;
        while (row < enc.positions.size() && enc.positions[row] != t) ++row;
        if (row == enc.positions.size()) {
          exact = false;
          break;
        }
        for (std::size_t c = 0; c < cfg.d_model; ++c)
          if (enc.hidden.row(row)[c] != win.row(t - s.start)[c]) exact = false;
      }
    }
    check(exact, "encode_ownership", "combined rows differ from window rows");
  }

  const Datastore ds = Datastore::build(enc.hidden, enc.positions);
  const std::size_t k = 4;

  // Shared-index retrieval equals per-head key scoring: same rows, same
  // scores, same generations.
  {
    CrossProvider shared = CrossProvider::retrieval(ds, k);
    CrossProvider naive = CrossProvider::naive_per_head(enc.hidden, k);
    std::vector<int> a = greedy_generate(w, shared, cfg.window - 1);
    std::vector<int> b = greedy_generate(w, naive, cfg.window - 1);
    check(a == b, "reformulation_generation", "generations diverge");
    const auto& la = shared.log();
    const auto& lb = naive.log();
    bool same = la.size() == lb.size();
    for (std::size_t i = 0; same && i < la.size(); ++i) {
      same = la[i].position == lb[i].position &&
             std::abs(la[i].score - lb[i].score) <= 1e-5;
    }
    check(same, "reformulation_log", "retrieved rows or scores diverge");
  }

  // k = n subsumes full attention.
  {
    CrossProvider all = CrossProvider::retrieval(ds, ds.size());
    CrossProvider full = CrossProvider::full(enc.hidden);
    std::vector<int> a = greedy_generate(w, all, cfg.window - 1);
    std::vector<int> b = greedy_generate(w, full, cfg.window - 1);
    check(a == b, "full_subsumption", "k=n generation differs from full");
  }

  // Attention mass coverage grows with k and saturates at 1.
  {
    std::vector<float> h_d(cfg.d_model);
    for (float& v : h_d) v = float(rng.uniform() - 0.5);
    const HeadProjection& hp = w.dec[0].cross[0];
    double prev = 0.0;
    bool monotone = true;
    double last = 0.0;
    for (std::size_t kk = 1; kk <= ds.size(); ++kk) {
      last = attention_mass_coverage(h_d, hp, ds, kk);
      if (last + 1e-12 < prev) monotone = false;
      prev = last;
    }
    check(monotone, "coverage_monotone", "coverage decreased with k");
    check(std::abs(last - 1.0) <= 1e-6, "coverage_saturation",
          "coverage at k=n is " + fmt(last, 8));
  }

  // Round trips through every file format.
  const fs::path tmp =
      fs::temp_directory_path() / "knncross_selftest";
  fs::create_directories(tmp);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{tmp};
  {
    save_checkpoint(w, tmp / "a.ulmf");
    ModelWeights back = load_checkpoint(tmp / "a.ulmf");
    save_checkpoint(back, tmp / "b.ulmf");
    check(file_bytes(tmp / "a.ulmf") == file_bytes(tmp / "b.ulmf"),
          "checkpoint_round_trip", "reserialized checkpoint differs");
  }
  {
    ds.dump(tmp / "a.ulds");
    Datastore back = Datastore::load_dump(tmp / "a.ulds");
    check(back.size() == ds.size() && back.dim() == ds.dim() &&
              back.positions() == ds.positions() &&
              back.vectors().data == ds.vectors().data,
          "datastore_round_trip", "reloaded datastore differs");
  }
  {
    Corpus c = to_corpus(generate_needle_task(24, 8, 2, 32, 5, 3));
    save_corpus(c, tmp / "c.tsv");
    Corpus back = load_corpus(tmp / "c.tsv");
    bool same = back.size() == c.size();
    for (std::size_t i = 0; same && i < c.size(); ++i)
      same = back[i].input == c[i].input && back[i].target == c[i].target;
    check(same, "corpus_round_trip", "reloaded corpus differs");
  }
  {
    RunConfig rc;
    rc.model = cfg;
    rc.regime.variant = RegimeVariant::retrieval;
    rc.k = 3;
    check(parse_run_config(serialize(rc)) == rc, "config_round_trip",
          "reparsed config differs");
  }

  std::cout << "selftest passed\n";
  return 0;
}

}  // namespace knncross::cli
