#ifndef KNNCROSS_TRAINING_HPP
#define KNNCROSS_TRAINING_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "knncross/corpus.hpp"
#include "knncross/model.hpp"
#include "knncross/provider.hpp"
#include "knncross/rng.hpp"

namespace knncross {

// How each batch-size-1 step sees the input.
enum class RegimeVariant {
  standard_truncated,  // first window only, full attention
  train_chunked,       // corpus split into window chunks, then as standard
  random_encoded,      // full encoding, per-layer random row sample
  retrieval,           // full encoding, per-head top-k as at inference
  alternating,         // even batches random_encoded, odd batches retrieval
};

enum class ValidationMode { truncated, retrieval };

const char* regime_name(RegimeVariant v);

struct TrainingRegime {
  RegimeVariant variant = RegimeVariant::standard_truncated;
  ValidationMode validation_mode = ValidationMode::truncated;
  std::size_t train_truncation_limit = 0;  // 0: 16 x window
  std::size_t max_epochs = 1;
  std::size_t patience = 0;  // non-improving epochs tolerated
  bool operator==(const TrainingRegime&) const = default;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments live in parameter visit order, so optimizer state survives resets
// of the weight object itself.
class Adam {
 public:
  explicit Adam(const ModelConfig& cfg, AdamConfig opt = {});
  void step(ModelWeights& w, const ModelWeights& grads);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig opt_;
  std::size_t t_ = 0;
  std::vector<Mat<float>> m_, v_;
};

// Splits every input into consecutive window-sized chunks, each paired with
// the full target; inputs at or under the window pass through unchanged.
Corpus augment_chunked(const Corpus& corpus, std::size_t window);

struct TrainStepResult {
  double loss = 0.0;
  ModelWeights grads;
  std::vector<RetrievalRecord> retrieval_log;  // empty unless retrieving
};

TrainStepResult step_truncated(const ModelWeights& w, const Example& ex);
TrainStepResult step_random_encoded(const ModelWeights& w, const Example& ex,
                                    std::size_t k, std::size_t limit,
                                    Rng& rng);
TrainStepResult step_retrieval(const ModelWeights& w, const Example& ex,
                               std::size_t k, std::size_t limit);

// One batch under the given variant; alternating resolves by batch parity,
// even indices taking the random_encoded side.
TrainStepResult regime_step(const ModelWeights& w, const Example& ex,
                            RegimeVariant variant, std::size_t k,
                            std::size_t limit, std::size_t batch_index,
                            Rng& sample_rng);

// Mean needle recall of greedy generations against each example's target
// body. Truncated mode encodes only the first window; retrieval mode encodes
// everything and generates through the datastore.
double validate_truncated(const ModelWeights& w, const Corpus& val);
double validate_retrieval(const ModelWeights& w, const Corpus& val,
                          std::size_t k = 0);

struct TrainOptions {
  ModelConfig model;
  std::size_t k = 0;  // retrieval and sampling width; 0: model window
  AdamConfig adam;
  std::uint64_t seed = 0;  // drives shuffling and row sampling
};

struct TrainState {
  TrainState(ModelWeights best, Adam opt)
      : weights(std::move(best)), optimizer(std::move(opt)) {}
  ModelWeights weights;  // best validation checkpoint
  Adam optimizer;
  std::size_t epochs_run = 0;
  double best_val = 0.0;
  std::size_t batches_seen = 0;
};

// Batch-size-1 epochs with early stopping on validation score. Example order
// reshuffles every epoch from a stream independent of the regime, so swapping
// regimes never changes data loading order for a given seed. Writes one
// `epoch,train_loss,val_score,regime` line per epoch when given a log.
TrainState train(const TrainOptions& opt, const TrainingRegime& regime,
                 const Corpus& train_corpus, const Corpus& val_corpus,
                 std::ostream* log = nullptr);

}  // namespace knncross

#endif
