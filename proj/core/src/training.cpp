#include "knncross/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "knncross/datastore.hpp"
#include "knncross/engine.hpp"
#include "knncross/errors.hpp"
#include "knncross/eval.hpp"

namespace knncross {

const char* regime_name(RegimeVariant v) {
  switch (v) {
    case RegimeVariant::standard_truncated:
      return "standard_truncated";
    case RegimeVariant::train_chunked:
      return "train_chunked";
    case RegimeVariant::random_encoded:
      return "random_encoded";
    case RegimeVariant::retrieval:
      return "retrieval";
    case RegimeVariant::alternating:
      return "alternating";
  }
  throw ArgumentError("unknown training regime variant");
}

Adam::Adam(const ModelConfig& cfg, AdamConfig opt) : opt_(opt) {
  ModelWeights shell = weights_shell<float>(cfg);
  visit_params(shell, [&](const std::string&, Mat<float>& p) {
    m_.emplace_back(p.rows, p.cols);
    v_.emplace_back(p.rows, p.cols);
  });
}

void Adam::step(ModelWeights& w, const ModelWeights& grads) {
  std::vector<const Mat<float>*> g;
  visit_params(grads, [&](const std::string&, const Mat<float>& p) {
    g.push_back(&p);
  });
  ++t_;
  const double c1 = 1.0 / (1.0 - std::pow(opt_.beta1, double(t_)));
  const double c2 = 1.0 / (1.0 - std::pow(opt_.beta2, double(t_)));
  std::size_t pi = 0;
  visit_params(w, [&](const std::string& name, Mat<float>& p) {
    const Mat<float>& gp = *g[pi];
    if (gp.rows != p.rows || gp.cols != p.cols)
      throw ShapeError("adam: gradient for " + name + " is " +
                       shape_str(gp.rows, gp.cols) + ", parameter is " +
                       shape_str(p.rows, p.cols));
    Mat<float>& pm = m_[pi];
    Mat<float>& pv = v_[pi];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = double(gp.data[j]);
      const double mj = opt_.beta1 * double(pm.data[j]) +
                        (1.0 - opt_.beta1) * gj;
      const double vj = opt_.beta2 * double(pv.data[j]) +
                        (1.0 - opt_.beta2) * gj * gj;
      pm.data[j] = float(mj);
      pv.data[j] = float(vj);
      p.data[j] -= float(opt_.lr * (mj * c1) /
                         (std::sqrt(vj * c2) + opt_.eps));
    }
    ++pi;
  });
}

Corpus augment_chunked(const Corpus& corpus, std::size_t window) {
  if (window == 0) throw ArgumentError("augment_chunked: zero window");
  Corpus out;
  for (const Example& ex : corpus) {
    const std::size_t n = ex.input.size();
    if (n <= window) {
      out.push_back(ex);
      continue;
    }
    for (std::size_t start = 0; start < n; start += window) {
      Example chunk;
      const std::size_t end = std::min(n, start + window);
      chunk.input.assign(ex.input.begin() + std::ptrdiff_t(start),
                         ex.input.begin() + std::ptrdiff_t(end));
      chunk.target = ex.target;
      out.push_back(std::move(chunk));
    }
  }
  return out;
}

namespace {

std::span<const int> head_of(const std::vector<int>& v, std::size_t limit) {
  return std::span<const int>(v.data(), std::min(v.size(), limit));
}

// Target body between BOS and EOS; what generation is scored against.
std::span<const int> gold_view(const std::vector<int>& target) {
  std::span<const int> g(target);
  if (!g.empty() && g.front() == kBos) g = g.subspan(1);
  if (!g.empty() && g.back() == kEos) g = g.first(g.size() - 1);
  return g;
}

TrainStepResult finish_step(const ModelWeights& w, const Example& ex,
                            const EncodeLongCacheT<float>& enc,
                            CrossProvider& provider, bool keep_log) {
  StepGradsT<float> sg =
      teacher_forced_backward(w, std::span<const int>(ex.target), provider);
  TrainStepResult out;
  out.loss = sg.loss;
  out.grads = std::move(sg.weights);
  encode_long_backward(w, enc, sg.d_encodings, out.grads);
  if (keep_log) out.retrieval_log = provider.log();
  return out;
}

}  // namespace

TrainStepResult step_truncated(const ModelWeights& w, const Example& ex) {
  auto enc = encode_long_cached(w, head_of(ex.input, w.config.window));
  auto provider = CrossProvider::full(enc.seq.hidden);
  return finish_step(w, ex, enc, provider, false);
}

TrainStepResult step_random_encoded(const ModelWeights& w, const Example& ex,
                                    std::size_t k, std::size_t limit,
                                    Rng& rng) {
  auto enc = encode_long_cached(w, head_of(ex.input, limit));
  const std::size_t kk = std::min(k, enc.seq.hidden.rows);
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(w.config.n_dec_layers);
  for (std::size_t l = 0; l < w.config.n_dec_layers; ++l)
    rows.push_back(rng.sample_without_replacement(enc.seq.hidden.rows, kk));
  auto provider = CrossProvider::fixed_rows(enc.seq.hidden, std::move(rows));
  return finish_step(w, ex, enc, provider, false);
}

TrainStepResult step_retrieval(const ModelWeights& w, const Example& ex,
                               std::size_t k, std::size_t limit) {
  auto enc = encode_long_cached(w, head_of(ex.input, limit));
  Datastore ds = Datastore::build(enc.seq.hidden, enc.seq.positions);
  auto provider = CrossProvider::retrieval(ds, k);
  return finish_step(w, ex, enc, provider, true);
}

double validate_truncated(const ModelWeights& w, const Corpus& val) {
  if (val.empty()) throw ArgumentError("validate: empty corpus");
  double total = 0.0;
  for (const Example& ex : val) {
    EncodedSequence seq =
        encode_long(w, head_of(ex.input, w.config.window));
    auto provider = CrossProvider::full(seq.hidden);
    std::vector<int> gen =
        greedy_generate(w, provider, w.config.window - 1);
    total += needle_recall(gen, gold_view(ex.target));
  }
  return total / double(val.size());
}

double validate_retrieval(const ModelWeights& w, const Corpus& val,
                          std::size_t k) {
  if (val.empty()) throw ArgumentError("validate: empty corpus");
  const std::size_t kk = k ? k : w.config.window;
  double total = 0.0;
  for (const Example& ex : val) {
    EncodedSequence seq = encode_long(w, std::span<const int>(ex.input));
    Datastore ds = Datastore::build(seq.hidden, seq.positions);
    auto provider = CrossProvider::retrieval(ds, kk);
    std::vector<int> gen =
        greedy_generate(w, provider, w.config.window - 1);
    total += needle_recall(gen, gold_view(ex.target));
  }
  return total / double(val.size());
}

TrainStepResult regime_step(const ModelWeights& w, const Example& ex,
                            RegimeVariant variant, std::size_t k,
                            std::size_t limit, std::size_t batch_index,
                            Rng& sample_rng) {
  switch (variant) {
    case RegimeVariant::standard_truncated:
    case RegimeVariant::train_chunked:
      return step_truncated(w, ex);
    case RegimeVariant::random_encoded:
      return step_random_encoded(w, ex, k, limit, sample_rng);
    case RegimeVariant::retrieval:
      return step_retrieval(w, ex, k, limit);
    case RegimeVariant::alternating:
      return batch_index % 2 == 0
                 ? step_random_encoded(w, ex, k, limit, sample_rng)
                 : step_retrieval(w, ex, k, limit);
  }
  throw ArgumentError("unknown training regime variant");
}

namespace {

std::string fmt(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

TrainState train(const TrainOptions& opt, const TrainingRegime& regime,
                 const Corpus& train_corpus, const Corpus& val_corpus,
                 std::ostream* log) {
  if (train_corpus.empty()) throw ArgumentError("train: empty corpus");
  if (val_corpus.empty())
    throw ArgumentError("train: empty validation corpus");
  if (regime.max_epochs < 1)
    throw ArgumentError("train: max_epochs must be positive");
  const ModelConfig& cfg = opt.model;
  cfg.validate();
  const std::size_t k = opt.k ? opt.k : cfg.window;
  const std::size_t limit = regime.train_truncation_limit
                                ? regime.train_truncation_limit
                                : 16 * cfg.window;

  Corpus chunked;
  const Corpus& data = regime.variant == RegimeVariant::train_chunked
                           ? (chunked = augment_chunked(train_corpus,
                                                        cfg.window))
                           : train_corpus;

  ModelWeights w = init_weights(cfg);
  Adam adam(cfg, opt.adam);
  Rng data_rng = Rng(opt.seed).split(1);
  Rng sample_rng = Rng(opt.seed).split(2);

  ModelWeights best = w;
  double best_val = -1.0;
  std::size_t bad_epochs = 0, batches = 0, epochs_run = 0;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  for (std::size_t epoch = 0; epoch < regime.max_epochs; ++epoch) {
    data_rng.shuffle(order);
    double sum_loss = 0.0;
    for (std::size_t idx : order) {
      TrainStepResult step = regime_step(w, data[idx], regime.variant, k,
                                         limit, batches, sample_rng);
      adam.step(w, step.grads);
      sum_loss += step.loss;
      ++batches;
    }
    ++epochs_run;
    const double train_loss = sum_loss / double(data.size());
    const double val = regime.validation_mode == ValidationMode::truncated
                           ? validate_truncated(w, val_corpus)
                           : validate_retrieval(w, val_corpus, k);
    if (log != nullptr)
      *log << epoch << ',' << fmt(train_loss, 6) << ',' << fmt(val, 4)
           << ',' << regime_name(regime.variant) << '\n';
    if (val > best_val) {
      best_val = val;
      best = w;
      bad_epochs = 0;
    } else if (++bad_epochs > regime.patience) {
      break;
    }
  }

  TrainState state(std::move(best), std::move(adam));
  state.epochs_run = epochs_run;
  state.best_val = best_val;
  state.batches_seen = batches;
  return state;
}

}  // namespace knncross
