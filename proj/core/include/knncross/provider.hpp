#ifndef KNNCROSS_PROVIDER_HPP
#define KNNCROSS_PROVIDER_HPP

#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "knncross/attention.hpp"
#include "knncross/datastore.hpp"
#include "knncross/errors.hpp"

namespace knncross {

enum class ProviderMode {
  full,                   // attend over every encoder row
  retrieval,              // per-head top-k through the shared store
  naive_per_head,         // per-head key index; equivalence baseline
  memtrans_single_layer,  // top-k at one layer, truncated window elsewhere
  fixed_rows,             // externally chosen rows per layer (training)
};

struct RetrievalRecord {
  std::size_t step = 0;  // decoder position
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t rank = 0;
  std::size_t position = 0;  // row index in the store
  double score = 0.0;
};

// Supplies, for each (decoder position, layer, head), the set of encoder rows
// cross-attention may see. Holds the per-session retrieval log. One instance
// per generation or training step; not thread-safe.
template <class Real>
class CrossProviderT {
 public:
  struct RowPlan {
    bool contiguous = false;        // true: rows are [0, count)
    std::size_t count = 0;
    std::vector<std::size_t> rows;  // used when !contiguous; best first
    std::size_t size() const { return contiguous ? count : rows.size(); }
    std::size_t row(std::size_t i) const { return contiguous ? i : rows[i]; }
  };

  static CrossProviderT full(const Mat<Real>& encodings) {
    CrossProviderT p(ProviderMode::full, encodings, 0);
    return p;
  }

  // Production retrieval: queries go through the frozen datastore.
  static CrossProviderT retrieval(const Datastore& ds, std::size_t k) {
    if (!ds.frozen()) throw StateError("provider: datastore not frozen");
    if (k < 1) throw ArgumentError("provider: retrieval needs k >= 1");
    CrossProviderT p(ProviderMode::retrieval, ds.vectors(), k);
    p.ds_ = &ds;
    return p;
  }

  // Same scoring over a bare matrix; lets the double instantiation run
  // without a float datastore.
  static CrossProviderT retrieval_scan(const Mat<Real>& encodings,
                                       std::size_t k) {
    if (k < 1) throw ArgumentError("provider: retrieval needs k >= 1");
    return CrossProviderT(ProviderMode::retrieval, encodings, k);
  }

  static CrossProviderT naive_per_head(const Mat<Real>& encodings,
                                       std::size_t k) {
    if (k < 1) throw ArgumentError("provider: retrieval needs k >= 1");
    return CrossProviderT(ProviderMode::naive_per_head, encodings, k);
  }

  // Retrieval at exactly one decoder layer; every other layer sees the plain
  // truncated window (the first min(n, window) rows).
  static CrossProviderT memtrans(const Datastore& ds, std::size_t k,
                                 std::size_t layer, std::size_t window) {
    if (!ds.frozen()) throw StateError("provider: datastore not frozen");
    if (k < 1) throw ArgumentError("provider: retrieval needs k >= 1");
    CrossProviderT p(ProviderMode::memtrans_single_layer, ds.vectors(), k);
    p.ds_ = &ds;
    p.special_layer_ = layer;
    p.window_ = window;
    return p;
  }

  // Row sets chosen by the caller, one set per decoder layer, shared across
  // heads and positions.
  static CrossProviderT fixed_rows(const Mat<Real>& encodings,
                                   std::vector<std::vector<std::size_t>> rows) {
    CrossProviderT p(ProviderMode::fixed_rows, encodings, 0);
    p.layer_rows_ = std::move(rows);
    return p;
  }

  RowPlan plan(std::size_t step, std::size_t layer, std::size_t head,
               const HeadProjT<Real>& hp, std::span<const Real> h_d) {
    RowPlan out;
    switch (mode_) {
      case ProviderMode::full:
        out.contiguous = true;
        out.count = enc_->rows;
        return out;
      case ProviderMode::fixed_rows:
        if (layer >= layer_rows_.size())
          throw ArgumentError("provider: no fixed rows for layer " +
                              std::to_string(layer));
        out.rows = layer_rows_[layer];
        return out;
      case ProviderMode::memtrans_single_layer:
        if (layer != special_layer_) {
          out.contiguous = true;
          out.count = std::min(enc_->rows, window_);
          return out;
        }
        [[fallthrough]];
      case ProviderMode::retrieval:
      case ProviderMode::naive_per_head:
        break;
    }
    if (pinned_) {
      auto it = pinned_plans_.find({step, layer, head});
      if (it == pinned_plans_.end())
        throw StateError("provider: no pinned rows for step " +
                         std::to_string(step));
      out.rows = it->second;
      return out;
    }
    RetrievalResult res = mode_ == ProviderMode::naive_per_head
                              ? naive_topk(layer, head, hp, h_d)
                              : shared_topk(hp, h_d);
    for (std::size_t r = 0; r < res.indices.size(); ++r)
      log_.push_back({step, layer, head, r, res.indices[r], res.scores[r]});
    if (record_)
      pinned_plans_[{step, layer, head}] = res.indices;
    out.rows = std::move(res.indices);
    return out;
  }

  const Mat<Real>& encodings() const { return *enc_; }
  std::size_t n() const { return enc_->rows; }
  ProviderMode mode() const { return mode_; }
  std::size_t k() const { return k_; }

  const std::vector<RetrievalRecord>& log() const { return log_; }
  void clear_log() { log_.clear(); }

  // Record upcoming plans so pin() can replay them with the row sets frozen;
  // used to hold retrieval fixed while perturbing weights.
  void record_plans() { record_ = true; }
  void pin() {
    if (!record_) throw StateError("provider: pin without record_plans");
    pinned_ = true;
  }
  bool pinned() const { return pinned_; }

 private:
  CrossProviderT(ProviderMode mode, const Mat<Real>& enc, std::size_t k)
      : mode_(mode), enc_(&enc), k_(k) {}

  RetrievalResult shared_topk(const HeadProjT<Real>& hp,
                              std::span<const Real> h_d) const {
    std::vector<double> q = project_query(h_d, hp);
    if (ds_ != nullptr) return ds_->query(q, k_);
    return scan_topk(*enc_, q, k_);
  }

  RetrievalResult naive_topk(std::size_t layer, std::size_t head,
                             const HeadProjT<Real>& hp,
                             std::span<const Real> h_d) {
    auto it = key_cache_.find({layer, head});
    if (it == key_cache_.end()) {
      Mat<double> keys(enc_->rows, hp.wk.cols);
      for (std::size_t i = 0; i < enc_->rows; ++i)
        for (std::size_t t = 0; t < hp.wk.cols; ++t) {
          double acc = 0.0;
          for (std::size_t j = 0; j < enc_->cols; ++j)
            acc += double(enc_->at(i, j)) * double(hp.wk.at(j, t));
          keys.at(i, t) = acc;
        }
      it = key_cache_.emplace(std::make_pair(layer, head), std::move(keys))
               .first;
    }
    return scan_topk(it->second, detail::query_head(h_d, hp), k_);
  }

  ProviderMode mode_;
  const Mat<Real>* enc_;
  const Datastore* ds_ = nullptr;
  std::size_t k_ = 0;
  std::size_t special_layer_ = 0;
  std::size_t window_ = 0;
  std::vector<std::vector<std::size_t>> layer_rows_;
  std::vector<RetrievalRecord> log_;
  std::map<std::pair<std::size_t, std::size_t>, Mat<double>> key_cache_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
           std::vector<std::size_t>>
      pinned_plans_;
  bool record_ = false;
  bool pinned_ = false;
};

using CrossProvider = CrossProviderT<float>;

}  // namespace knncross

#endif
