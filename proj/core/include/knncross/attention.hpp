#ifndef KNNCROSS_ATTENTION_HPP
#define KNNCROSS_ATTENTION_HPP

#include <cmath>
#include <span>
#include <vector>

#include "knncross/datastore.hpp"
#include "knncross/errors.hpp"
#include "knncross/matrix.hpp"

namespace knncross {

// Projection weights of one cross-attention head. Queries come from the
// decoder state, keys and values from stored encoder states.
template <class Real>
struct HeadProjT {
  Mat<Real> wq, wk, wv;  // d_model x d_head
  Mat<Real> bq, bk, bv;  // 1 x d_head
  Mat<Real> wo;          // d_head x d_model
};

using HeadProjection = HeadProjT<float>;

namespace detail {

// h_d * wq + bq, in double.
template <class Real>
std::vector<double> query_head(std::span<const Real> h_d,
                               const HeadProjT<Real>& hp) {
  if (h_d.size() != hp.wq.rows)
    throw ShapeError("query_head: state " + shape_str(1, h_d.size()) +
                     " vs wq " + shape_str(hp.wq.rows, hp.wq.cols));
  std::vector<double> q(hp.wq.cols);
  for (std::size_t j = 0; j < hp.wq.cols; ++j) {
    double acc = double(hp.bq.data[j]);
    for (std::size_t i = 0; i < h_d.size(); ++i)
      acc += double(h_d[i]) * double(hp.wq.at(i, j));
    q[j] = acc;
  }
  return q;
}

}  // namespace detail

// Folds the key projection into the query: (h_d wq + bq) wk^T. The result
// scores raw encoder states directly, so one shared store serves every head
// and layer. The key bias shifts every score by the same amount and is left
// out of retrieval scoring.
template <class Real>
std::vector<double> project_query(std::span<const Real> h_d,
                                  const HeadProjT<Real>& hp) {
  std::vector<double> q = detail::query_head(h_d, hp);
  std::vector<double> out(hp.wk.rows);
  for (std::size_t j = 0; j < hp.wk.rows; ++j) {
    double acc = 0.0;
    for (std::size_t t = 0; t < hp.wk.cols; ++t)
      acc += q[t] * double(hp.wk.at(j, t));
    out[j] = acc;
  }
  return out;
}

// Top-k encoder rows for one head, scored through the shared store.
template <class Real>
RetrievalResult retrieve_for_head(std::span<const Real> h_d,
                                  const HeadProjT<Real>& hp,
                                  const Datastore& ds, std::size_t k) {
  return ds.query(project_query(h_d, hp), k);
}

// Equivalence baseline: a per-head key index in the layout a per-head store
// would use. Keys are h_e wk (bias dropped, as in shared-store scoring);
// scores are the same dot products in the other association order.
template <class Real>
RetrievalResult naive_per_head_topk(std::span<const Real> h_d,
                                    const Mat<Real>& h_e,
                                    const HeadProjT<Real>& hp, std::size_t k) {
  if (h_e.cols != hp.wk.rows)
    throw ShapeError("naive_per_head_topk: rows " +
                     shape_str(h_e.rows, h_e.cols) + " vs wk " +
                     shape_str(hp.wk.rows, hp.wk.cols));
  std::vector<double> q = detail::query_head(h_d, hp);
  Mat<double> keys(h_e.rows, hp.wk.cols);
  for (std::size_t i = 0; i < h_e.rows; ++i) {
    const Real* row = h_e.row(i);
    for (std::size_t t = 0; t < hp.wk.cols; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h_e.cols; ++j)
        acc += double(row[j]) * double(hp.wk.at(j, t));
      keys.at(i, t) = acc;
    }
  }
  return scan_topk(keys, q, k);
}

template <class Real>
struct AttendResult {
  std::vector<Real> context;  // d_head
  std::vector<Real> probs;    // one per retrieved row
};

// Softmax attention of one head over an explicit set of encoder rows. Keys
// and values are materialized here (with their biases) from the raw rows.
template <class Real>
AttendResult<Real> attend_retrieved(std::span<const Real> h_d,
                                    const Mat<Real>& rows,
                                    const HeadProjT<Real>& hp) {
  if (rows.rows == 0) throw ArgumentError("attend_retrieved: no rows");
  if (rows.cols != hp.wk.rows)
    throw ShapeError("attend_retrieved: rows " +
                     shape_str(rows.rows, rows.cols) + " vs wk " +
                     shape_str(hp.wk.rows, hp.wk.cols));
  const std::size_t dh = hp.wq.cols;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> q = detail::query_head(h_d, hp);

  std::vector<Real> scores(rows.rows);
  for (std::size_t i = 0; i < rows.rows; ++i) {
    const Real* row = rows.row(i);
    double acc = 0.0;
    for (std::size_t t = 0; t < dh; ++t) {
      double key = double(hp.bk.data[t]);
      for (std::size_t j = 0; j < rows.cols; ++j)
        key += double(row[j]) * double(hp.wk.at(j, t));
      acc += q[t] * key;
    }
    scores[i] = Real(acc * scale);
  }

  AttendResult<Real> out;
  out.probs = softmax(std::span<const Real>(scores));
  out.context.assign(dh, Real(0));
  for (std::size_t t = 0; t < dh; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows.rows; ++i) {
      const Real* row = rows.row(i);
      double value = double(hp.bv.data[t]);
      for (std::size_t j = 0; j < rows.cols; ++j)
        value += double(row[j]) * double(hp.wv.at(j, t));
      acc += double(out.probs[i]) * value;
    }
    out.context[t] = Real(acc);
  }
  return out;
}

// Reference attention for one head over every encoder row, written as plain
// scalar loops with no shared plumbing; equivalence tests compare against
// this.
template <class Real>
std::vector<Real> full_attention_oracle(std::span<const Real> h_d,
                                        const Mat<Real>& h_e,
                                        const HeadProjT<Real>& hp) {
  if (h_e.rows == 0) throw ArgumentError("full_attention_oracle: no rows");
  const std::size_t dh = hp.wq.cols;
  const std::size_t d = h_e.cols;

  std::vector<double> q(dh), logits(h_e.rows);
  for (std::size_t t = 0; t < dh; ++t) {
    double acc = double(hp.bq.data[t]);
    for (std::size_t i = 0; i < h_d.size(); ++i)
      acc += double(h_d[i]) * double(hp.wq.at(i, t));
    q[t] = acc;
  }
  for (std::size_t i = 0; i < h_e.rows; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < dh; ++t) {
      double key = double(hp.bk.data[t]);
      for (std::size_t j = 0; j < d; ++j)
        key += double(h_e.at(i, j)) * double(hp.wk.at(j, t));
      s += q[t] * key;
    }
    logits[i] = s / std::sqrt(double(dh));
  }

  double m = logits[0];
  for (double s : logits) m = std::max(m, s);
  std::vector<double> p(h_e.rows);
  double z = 0.0;
  for (std::size_t i = 0; i < h_e.rows; ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& x : p) x /= z;

  std::vector<Real> ctx(dh);
  for (std::size_t t = 0; t < dh; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < h_e.rows; ++i) {
      double value = double(hp.bv.data[t]);
      for (std::size_t j = 0; j < d; ++j)
        value += double(h_e.at(i, j)) * double(hp.wv.at(j, t));
      acc += p[i] * value;
    }
    ctx[t] = Real(acc);
  }
  return ctx;
}

// Share of full attention mass covered by the k retrieved rows: softmax over
// the scaled retrieval scores of every row, summed at the retrieved indices.
inline double attention_mass_coverage(std::span<const float> h_d,
                                      const HeadProjection& hp,
                                      const Datastore& ds, std::size_t k) {
  if (k == 0) return 0.0;
  std::vector<double> q = project_query(h_d, hp);
  auto top = ds.query(q, k);
  const double scale = 1.0 / std::sqrt(double(hp.wq.cols));
  const Matrix& rows = ds.vectors();
  std::vector<double> logits(rows.rows);
  for (std::size_t i = 0; i < rows.rows; ++i) {
    const float* r = rows.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < rows.cols; ++j) acc += double(r[j]) * q[j];
    logits[i] = acc * scale;
  }
  double m = logits[0];
  for (double s : logits) m = std::max(m, s);
  double z = 0.0;
  for (double s : logits) z += std::exp(s - m);
  double covered = 0.0;
  for (std::size_t idx : top.indices) covered += std::exp(logits[idx] - m) / z;
  return covered;
}

}  // namespace knncross

#endif
