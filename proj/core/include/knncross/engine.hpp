#ifndef KNNCROSS_ENGINE_HPP
#define KNNCROSS_ENGINE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "knncross/chunker.hpp"
#include "knncross/model.hpp"
#include "knncross/provider.hpp"

namespace knncross {

// ---------------------------------------------------------------------------
// Activation caches

template <class Real>
struct LnCacheT {
  Mat<Real> out;
  std::vector<Real> mean, rstd;
};

// Per-head self-attention probabilities; row t holds one weight per visible
// key (t + 1 causally, the full length otherwise).
template <class Real>
using AttnProbsT = std::vector<std::vector<std::vector<Real>>>;

template <class Real>
struct CrossCellT {
  typename CrossProviderT<Real>::RowPlan plan;
  std::vector<Real> probs;
  std::vector<Real> ctx;  // d_head
};

template <class Real>
struct EncLayerCacheT {
  Mat<Real> x_in, x_mid;
  LnCacheT<Real> ln1, ln2;
  Mat<Real> q, k, v, ctx;
  AttnProbsT<Real> probs;
  Mat<Real> ffn_pre, ffn_act;
};

template <class Real>
struct DecLayerCacheT {
  Mat<Real> x_in, x_mid, x_mid2;
  LnCacheT<Real> ln1, ln2, ln3;
  Mat<Real> q, k, v, ctx;
  AttnProbsT<Real> probs;
  std::vector<std::vector<CrossCellT<Real>>> cells;  // [position][head]
  Mat<Real> ffn_pre, ffn_act;
};

template <class Real>
struct EncActsT {
  std::vector<int> tokens;
  std::vector<EncLayerCacheT<Real>> layers;
  Mat<Real> x_final;
  LnCacheT<Real> final_ln;  // final_ln.out is the encoder output
};

// ---------------------------------------------------------------------------
// Kernels

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <class Real>
void append_row(Mat<Real>& m, std::span<const Real> r) {
  m.data.insert(m.data.end(), r.begin(), r.end());
  ++m.rows;
}

template <class Real>
double gelu(Real x) {
  return 0.5 * double(x) * (1.0 + std::erf(double(x) / std::sqrt(2.0)));
}

template <class Real>
double gelu_grad(Real x) {
  const double z = double(x);
  const double phi =
      std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.141592653589793);
  return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))) + z * phi;
}

// out = x * w + b for one row; accumulates in double.
template <class Real>
void affine_row(std::span<const Real> x, const Mat<Real>& w, const Mat<Real>& b,
                Real* out) {
  for (std::size_t t = 0; t < w.cols; ++t) {
    double acc = double(b.data[t]);
    for (std::size_t j = 0; j < x.size(); ++j)
      acc += double(x[j]) * double(w.at(j, t));
    out[t] = Real(acc);
  }
}

template <class Real>
void ln_row(std::span<const Real> x, const LayerNormT<Real>& n, Real* out,
            Real& mean_out, Real& rstd_out) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (Real v : x) mean += double(v);
  mean /= double(d);
  double var = 0.0;
  for (Real v : x) {
    double c = double(v) - mean;
    var += c * c;
  }
  var /= double(d);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = Real((double(x[j]) - mean) * rstd * double(n.gamma.data[j]) +
                  double(n.beta.data[j]));
  mean_out = Real(mean);
  rstd_out = Real(rstd);
}

// C += A^T * B.
template <class Real>
void accum_tn(const Mat<Real>& a, const Mat<Real>& b, Mat<Real>& c) {
  for (std::size_t t = 0; t < a.rows; ++t)
    for (std::size_t i = 0; i < a.cols; ++i) {
      const Real av = a.at(t, i);
      for (std::size_t j = 0; j < b.cols; ++j)
        c.at(i, j) += av * b.at(t, j);
    }
}

// C += A * B^T.
template <class Real>
void accum_nt(const Mat<Real>& a, const Mat<Real>& b, Mat<Real>& c) {
  for (std::size_t t = 0; t < a.rows; ++t)
    for (std::size_t i = 0; i < b.rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j)
        acc += double(a.at(t, j)) * double(b.at(i, j));
      c.at(t, i) += Real(acc);
    }
}

// C(1 x m) += column sums of A.
template <class Real>
void accum_colsum(const Mat<Real>& a, Mat<Real>& c) {
  for (std::size_t t = 0; t < a.rows; ++t)
    for (std::size_t j = 0; j < a.cols; ++j) c.data[j] += a.at(t, j);
}

template <class Real>
void ln_backward(const Mat<Real>& x, const LnCacheT<Real>& cache,
                 const LayerNormT<Real>& n, const Mat<Real>& dy,
                 LayerNormT<Real>& dn, Mat<Real>& dx) {
  const std::size_t d = x.cols;
  for (std::size_t t = 0; t < x.rows; ++t) {
    const double mean = double(cache.mean[t]);
    const double rstd = double(cache.rstd[t]);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (double(x.at(t, j)) - mean) * rstd;
      const double dxhat = double(dy.at(t, j)) * double(n.gamma.data[j]);
      dn.gamma.data[j] += Real(double(dy.at(t, j)) * xhat);
      dn.beta.data[j] += dy.at(t, j);
      m1 += dxhat;
      m2 += dxhat * xhat;
    }
    m1 /= double(d);
    m2 /= double(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (double(x.at(t, j)) - mean) * rstd;
      const double dxhat = double(dy.at(t, j)) * double(n.gamma.data[j]);
      dx.at(t, j) += Real(rstd * (dxhat - m1 - xhat * m2));
    }
  }
}

// Shared self-attention backward. dctx arrives per row; dq/dk/dv leave per
// row; probs rows carry their own causal reach.
template <class Real>
void self_attn_backward(const Mat<Real>& q, const Mat<Real>& k,
                        const Mat<Real>& v, const AttnProbsT<Real>& probs,
                        const Mat<Real>& dctx, std::size_t dh, Mat<Real>& dq,
                        Mat<Real>& dk, Mat<Real>& dv) {
  const double scale = 1.0 / std::sqrt(double(dh));
  for (std::size_t h = 0; h < probs.size(); ++h) {
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < q.rows; ++t) {
      const std::vector<Real>& pr = probs[h][t];
      const std::size_t J = pr.size();
      std::vector<double> dp(J);
      double pdot = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        double acc = 0.0;
        for (std::size_t u = 0; u < dh; ++u)
          acc += double(dctx.at(t, off + u)) * double(v.at(j, off + u));
        dp[j] = acc;
        pdot += double(pr[j]) * acc;
        for (std::size_t u = 0; u < dh; ++u)
          dv.at(j, off + u) +=
              Real(double(pr[j]) * double(dctx.at(t, off + u)));
      }
      for (std::size_t j = 0; j < J; ++j) {
        const double ds = double(pr[j]) * (dp[j] - pdot) * scale;
        for (std::size_t u = 0; u < dh; ++u) {
          dq.at(t, off + u) += Real(ds * double(k.at(j, off + u)));
          dk.at(j, off + u) += Real(ds * double(q.at(t, off + u)));
        }
      }
    }
  }
}

template <class Real>
void self_attn_proj_backward(const SelfAttnT<Real>& aw, const Mat<Real>& a,
                             const Mat<Real>& ctx, const Mat<Real>& dout,
                             const Mat<Real>& dq, const Mat<Real>& dk,
                             const Mat<Real>& dv, SelfAttnT<Real>& daw,
                             Mat<Real>& da) {
  accum_tn(ctx, dout, daw.wo);
  accum_colsum(dout, daw.bo);
  accum_tn(a, dq, daw.wq);
  accum_colsum(dq, daw.bq);
  accum_tn(a, dk, daw.wk);
  accum_colsum(dk, daw.bk);
  accum_tn(a, dv, daw.wv);
  accum_colsum(dv, daw.bv);
  accum_nt(dq, aw.wq, da);
  accum_nt(dk, aw.wk, da);
  accum_nt(dv, aw.wv, da);
}

template <class Real>
void ffn_backward(const FfnT<Real>& fw, const Mat<Real>& f,
                  const Mat<Real>& pre, const Mat<Real>& act,
                  const Mat<Real>& dout, FfnT<Real>& dfw, Mat<Real>& df) {
  Mat<Real> dact{dout.rows, fw.w2.rows};
  accum_nt(dout, fw.w2, dact);
  accum_tn(act, dout, dfw.w2);
  accum_colsum(dout, dfw.b2);
  Mat<Real> dpre{dout.rows, fw.w2.rows};
  for (std::size_t t = 0; t < dpre.rows; ++t)
    for (std::size_t j = 0; j < dpre.cols; ++j)
      dpre.at(t, j) = Real(double(dact.at(t, j)) * gelu_grad(pre.at(t, j)));
  accum_tn(f, dpre, dfw.w1);
  accum_colsum(dpre, dfw.b1);
  accum_nt(dpre, fw.w1, df);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder

template <class Real>
EncActsT<Real> encode_window_cached(const WeightsT<Real>& w,
                                    std::span<const int> tokens) {
  const ModelConfig& c = w.config;
  if (tokens.empty()) throw ArgumentError("encode_window: empty input");
  if (tokens.size() > c.window)
    throw WindowError("encode_window: " + std::to_string(tokens.size()) +
                      " tokens exceed window " + std::to_string(c.window));
  const std::size_t T = tokens.size(), d = c.d_model, H = c.n_heads;
  const std::size_t dh = c.d_head();
  const double scale = 1.0 / std::sqrt(double(dh));

  EncActsT<Real> acts;
  acts.tokens.assign(tokens.begin(), tokens.end());
  Mat<Real> x{T, d};
  for (std::size_t t = 0; t < T; ++t) {
    if (tokens[t] < 0 || std::size_t(tokens[t]) >= c.vocab_size)
      throw VocabError("token id " + std::to_string(tokens[t]) +
                       " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    for (std::size_t j = 0; j < d; ++j)
      x.at(t, j) = w.tok_emb.at(std::size_t(tokens[t]), j) + w.pos_emb.at(t, j);
  }

  acts.layers.resize(c.n_enc_layers);
  for (std::size_t l = 0; l < c.n_enc_layers; ++l) {
    const EncLayerT<Real>& lw = w.enc[l];
    EncLayerCacheT<Real>& L = acts.layers[l];
    L.x_in = x;
    L.ln1.out = Mat<Real>{T, d};
    L.ln1.mean.resize(T);
    L.ln1.rstd.resize(T);
    for (std::size_t t = 0; t < T; ++t)
      detail::ln_row(L.x_in.crow(t), lw.ln1, L.ln1.out.row(t), L.ln1.mean[t],
                     L.ln1.rstd[t]);
    L.q = Mat<Real>{T, d};
    L.k = Mat<Real>{T, d};
    L.v = Mat<Real>{T, d};
    for (std::size_t t = 0; t < T; ++t) {
      detail::affine_row(L.ln1.out.crow(t), lw.attn.wq, lw.attn.bq, L.q.row(t));
      detail::affine_row(L.ln1.out.crow(t), lw.attn.wk, lw.attn.bk, L.k.row(t));
      detail::affine_row(L.ln1.out.crow(t), lw.attn.wv, lw.attn.bv, L.v.row(t));
    }
    L.probs.resize(H);
    L.ctx = Mat<Real>{T, d};
    for (std::size_t h = 0; h < H; ++h) {
      L.probs[h].resize(T);
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<Real> scores(T);
        for (std::size_t j = 0; j < T; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u < dh; ++u)
            acc += double(L.q.at(t, off + u)) * double(L.k.at(j, off + u));
          scores[j] = Real(acc * scale);
        }
        L.probs[h][t] = softmax(std::span<const Real>(scores));
        for (std::size_t u = 0; u < dh; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j < T; ++j)
            acc += double(L.probs[h][t][j]) * double(L.v.at(j, off + u));
          L.ctx.at(t, off + u) = Real(acc);
        }
      }
    }
    L.x_mid = Mat<Real>{T, d};
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<Real> o(d);
      detail::affine_row(L.ctx.crow(t), lw.attn.wo, lw.attn.bo, o.data());
      for (std::size_t j = 0; j < d; ++j)
        L.x_mid.at(t, j) = L.x_in.at(t, j) + o[j];
    }
    L.ln2.out = Mat<Real>{T, d};
    L.ln2.mean.resize(T);
    L.ln2.rstd.resize(T);
    for (std::size_t t = 0; t < T; ++t)
      detail::ln_row(L.x_mid.crow(t), lw.ln2, L.ln2.out.row(t), L.ln2.mean[t],
                     L.ln2.rstd[t]);
    L.ffn_pre = Mat<Real>{T, c.d_ff};
    L.ffn_act = Mat<Real>{T, c.d_ff};
    for (std::size_t t = 0; t < T; ++t) {
      detail::affine_row(L.ln2.out.crow(t), lw.ffn.w1, lw.ffn.b1,
                         L.ffn_pre.row(t));
      for (std::size_t j = 0; j < c.d_ff; ++j)
        L.ffn_act.at(t, j) = Real(detail::gelu(L.ffn_pre.at(t, j)));
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<Real> o(d);
      detail::affine_row(L.ffn_act.crow(t), lw.ffn.w2, lw.ffn.b2, o.data());
      for (std::size_t j = 0; j < d; ++j) x.at(t, j) = L.x_mid.at(t, j) + o[j];
    }
  }

  acts.x_final = x;
  acts.final_ln.out = Mat<Real>{T, d};
  acts.final_ln.mean.resize(T);
  acts.final_ln.rstd.resize(T);
  for (std::size_t t = 0; t < T; ++t)
    detail::ln_row(acts.x_final.crow(t), w.enc_ln, acts.final_ln.out.row(t),
                   acts.final_ln.mean[t], acts.final_ln.rstd[t]);
  return acts;
}

template <class Real>
Mat<Real> encode_window(const WeightsT<Real>& w, std::span<const int> tokens) {
  return encode_window_cached(w, tokens).final_ln.out;
}

template <class Real>
struct EncodedSequenceT {
  Mat<Real> hidden;                    // n x d_model, row i owns token i
  std::vector<std::size_t> positions;  // row index -> token position
  std::vector<ChunkSpan> spans;
};

template <class Real>
struct EncodeLongCacheT {
  EncodedSequenceT<Real> seq;
  std::vector<EncActsT<Real>> chunks;  // one per span
};

// Chunked encoding: overlapping windows, each contributing its owned slice,
// so the hidden matrix covers every token exactly once.
template <class Real>
EncodeLongCacheT<Real> encode_long_cached(const WeightsT<Real>& w,
                                          std::span<const int> tokens) {
  const std::size_t n = tokens.size();
  EncodeLongCacheT<Real> out;
  out.seq.spans = chunk_spans(n, w.config.window);
  out.seq.hidden = Mat<Real>{n, w.config.d_model};
  out.seq.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.seq.positions[i] = i;
  for (const ChunkSpan& sp : out.seq.spans) {
    EncActsT<Real> acts =
        encode_window_cached(w, tokens.subspan(sp.start, sp.end - sp.start));
    for (std::size_t pos = sp.keep_start; pos < sp.keep_end; ++pos) {
      const Real* src = acts.final_ln.out.row(pos - sp.start);
      std::copy(src, src + w.config.d_model, out.seq.hidden.row(pos));
    }
    out.chunks.push_back(std::move(acts));
  }
  return out;
}

template <class Real>
EncodedSequenceT<Real> encode_long(const WeightsT<Real>& w,
                                   std::span<const int> tokens) {
  return encode_long_cached(w, tokens).seq;
}

using EncodedSequence = EncodedSequenceT<float>;

// ---------------------------------------------------------------------------
// Decoder

// Incremental decoder over a cross-attention provider. Every forward path
// (generation, scoring, training) feeds tokens through here one at a time, so
// activations and retrieval logs cannot drift between them. Caches every
// intermediate; sequences are window-bounded, so the caches stay small.
template <class Real>
class DecoderStateT {
 public:
  DecoderStateT(const WeightsT<Real>& w, CrossProviderT<Real>& provider)
      : w_(&w), p_(&provider) {
    const ModelConfig& c = w.config;
    layers_.resize(c.n_dec_layers);
    for (auto& L : layers_) {
      L.x_in = L.x_mid = L.x_mid2 = Mat<Real>{0, c.d_model};
      L.ln1.out = L.ln2.out = L.ln3.out = Mat<Real>{0, c.d_model};
      L.q = L.k = L.v = L.ctx = Mat<Real>{0, c.d_model};
      L.probs.resize(c.n_heads);
      L.ffn_pre = L.ffn_act = Mat<Real>{0, c.d_ff};
    }
    x_final_ = Mat<Real>{0, c.d_model};
    final_ln_.out = Mat<Real>{0, c.d_model};
    logits_ = Mat<Real>{0, c.vocab_size};
  }

  std::size_t steps() const { return tokens_.size(); }
  const std::vector<int>& tokens() const { return tokens_; }
  const std::vector<DecLayerCacheT<Real>>& layers() const { return layers_; }
  const Mat<Real>& x_final() const { return x_final_; }
  const LnCacheT<Real>& final_ln() const { return final_ln_; }
  const Mat<Real>& logits() const { return logits_; }
  CrossProviderT<Real>& provider() { return *p_; }

  // Appends one token; returns the logits row predicting its successor.
  std::span<const Real> feed(int token) {
    const ModelConfig& c = w_->config;
    if (token < 0 || std::size_t(token) >= c.vocab_size)
      throw VocabError("token id " + std::to_string(token) +
                       " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    const std::size_t t = tokens_.size();
    if (t >= c.window)
      throw WindowError("decoder position " + std::to_string(t) +
                        " exceeds window " + std::to_string(c.window));
    tokens_.push_back(token);
    const std::size_t d = c.d_model, H = c.n_heads, dh = c.d_head();
    const double scale = 1.0 / std::sqrt(double(dh));

    std::vector<Real> x(d);
    for (std::size_t j = 0; j < d; ++j)
      x[j] = w_->tok_emb.at(std::size_t(token), j) + w_->pos_emb.at(t, j);

    for (std::size_t l = 0; l < c.n_dec_layers; ++l) {
      const DecLayerT<Real>& lw = w_->dec[l];
      DecLayerCacheT<Real>& L = layers_[l];
      detail::append_row(L.x_in, std::span<const Real>(x));

      // Causal self-attention against the cached key/value rows.
      std::vector<Real> a(d);
      Real mean, rstd;
      detail::ln_row(std::span<const Real>(x), lw.ln1, a.data(), mean, rstd);
      detail::append_row(L.ln1.out, std::span<const Real>(a));
      L.ln1.mean.push_back(mean);
      L.ln1.rstd.push_back(rstd);
      std::vector<Real> q(d), k(d), v(d);
      detail::affine_row(std::span<const Real>(a), lw.self_attn.wq,
                         lw.self_attn.bq, q.data());
      detail::affine_row(std::span<const Real>(a), lw.self_attn.wk,
                         lw.self_attn.bk, k.data());
      detail::affine_row(std::span<const Real>(a), lw.self_attn.wv,
                         lw.self_attn.bv, v.data());
      detail::append_row(L.q, std::span<const Real>(q));
      detail::append_row(L.k, std::span<const Real>(k));
      detail::append_row(L.v, std::span<const Real>(v));
      std::vector<Real> ctx(d, Real(0));
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        std::vector<Real> scores(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u < dh; ++u)
            acc += double(q[off + u]) * double(L.k.at(j, off + u));
          scores[j] = Real(acc * scale);
        }
        L.probs[h].push_back(softmax(std::span<const Real>(scores)));
        const std::vector<Real>& pr = L.probs[h].back();
        for (std::size_t u = 0; u < dh; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= t; ++j)
            acc += double(pr[j]) * double(L.v.at(j, off + u));
          ctx[off + u] = Real(acc);
        }
      }
      detail::append_row(L.ctx, std::span<const Real>(ctx));
      std::vector<Real> o(d);
      detail::affine_row(std::span<const Real>(ctx), lw.self_attn.wo,
                         lw.self_attn.bo, o.data());
      for (std::size_t j = 0; j < d; ++j) x[j] += o[j];
      detail::append_row(L.x_mid, std::span<const Real>(x));

      // Cross-attention over provider-chosen encoder rows.
      std::vector<Real> cvec(d);
      detail::ln_row(std::span<const Real>(x), lw.ln2, cvec.data(), mean,
                     rstd);
      detail::append_row(L.ln2.out, std::span<const Real>(cvec));
      L.ln2.mean.push_back(mean);
      L.ln2.rstd.push_back(rstd);
      std::vector<CrossCellT<Real>>& cells = L.cells.emplace_back();
      cells.resize(H);
      std::vector<Real> cross(d);
      for (std::size_t j = 0; j < d; ++j) cross[j] = lw.cross_bo.data[j];
      for (std::size_t h = 0; h < H; ++h) {
        try {
          CrossCellT<Real>& cell = cells[h];
          cell.plan =
              p_->plan(t, l, h, lw.cross[h], std::span<const Real>(cvec));
          const Mat<Real>& enc = p_->encodings();
          Mat<Real> rows{cell.plan.size(), enc.cols};
          for (std::size_t i = 0; i < rows.rows; ++i) {
            const std::size_t r = cell.plan.row(i);
            if (r >= enc.rows)
              throw RangeError("provider row " + std::to_string(r) +
                               " outside " + std::to_string(enc.rows) +
                               " encodings");
            std::copy(enc.row(r), enc.row(r) + enc.cols, rows.row(i));
          }
          AttendResult<Real> ar =
              attend_retrieved(std::span<const Real>(cvec), rows, lw.cross[h]);
          cell.probs = std::move(ar.probs);
          cell.ctx = std::move(ar.context);
          for (std::size_t j = 0; j < d; ++j) {
            double acc = double(cross[j]);
            for (std::size_t u = 0; u < dh; ++u)
              acc += double(cell.ctx[u]) * double(lw.cross[h].wo.at(u, j));
            cross[j] = Real(acc);
          }
        } catch (const Error& e) {
          throw Error(e.category(), "cross attention layer " +
                                        std::to_string(l) + " head " +
                                        std::to_string(h) + ": " + e.what());
        }
      }
      for (std::size_t j = 0; j < d; ++j) x[j] += cross[j];
      detail::append_row(L.x_mid2, std::span<const Real>(x));

      std::vector<Real> f(d);
      detail::ln_row(std::span<const Real>(x), lw.ln3, f.data(), mean, rstd);
      detail::append_row(L.ln3.out, std::span<const Real>(f));
      L.ln3.mean.push_back(mean);
      L.ln3.rstd.push_back(rstd);
      std::vector<Real> pre(c.d_ff), act(c.d_ff), ffo(d);
      detail::affine_row(std::span<const Real>(f), lw.ffn.w1, lw.ffn.b1,
                         pre.data());
      for (std::size_t j = 0; j < c.d_ff; ++j)
        act[j] = Real(detail::gelu(pre[j]));
      detail::append_row(L.ffn_pre, std::span<const Real>(pre));
      detail::append_row(L.ffn_act, std::span<const Real>(act));
      detail::affine_row(std::span<const Real>(act), lw.ffn.w2, lw.ffn.b2,
                         ffo.data());
      for (std::size_t j = 0; j < d; ++j) x[j] += ffo[j];
    }

    detail::append_row(x_final_, std::span<const Real>(x));
    std::vector<Real> y(d);
    Real mean, rstd;
    detail::ln_row(std::span<const Real>(x), w_->dec_ln, y.data(), mean, rstd);
    detail::append_row(final_ln_.out, std::span<const Real>(y));
    final_ln_.mean.push_back(mean);
    final_ln_.rstd.push_back(rstd);
    std::vector<Real> lg(c.vocab_size);
    for (std::size_t vcb = 0; vcb < c.vocab_size; ++vcb)
      lg[vcb] = Real(dot(std::span<const Real>(y), w_->tok_emb.crow(vcb)));
    detail::append_row(logits_, std::span<const Real>(lg));
    return logits_.crow(t);
  }

 private:
  const WeightsT<Real>* w_;
  CrossProviderT<Real>* p_;
  std::vector<int> tokens_;
  std::vector<DecLayerCacheT<Real>> layers_;
  Mat<Real> x_final_;
  LnCacheT<Real> final_ln_;
  Mat<Real> logits_;
};

using DecoderState = DecoderStateT<float>;

// One forward pass over a full prefix; returns the logits for the next token.
template <class Real>
std::vector<Real> decode_step(const WeightsT<Real>& w,
                              std::span<const int> prefix,
                              CrossProviderT<Real>& provider) {
  if (prefix.empty()) throw ArgumentError("decode_step: empty prefix");
  DecoderStateT<Real> st(w, provider);
  std::span<const Real> last;
  for (int tok : prefix) last = st.feed(tok);
  return std::vector<Real>(last.begin(), last.end());
}

// Greedy decoding from BOS. Ties pick the lowest token id; generation stops
// at EOS, at max_new_tokens, or when the decoder window fills. The returned
// sequence excludes BOS and EOS.
template <class Real>
std::vector<int> greedy_generate(const WeightsT<Real>& w,
                                 CrossProviderT<Real>& provider,
                                 std::size_t max_new_tokens,
                                 bool stop_at_eos = true) {
  DecoderStateT<Real> st(w, provider);
  std::vector<int> out;
  std::span<const Real> logits = st.feed(kBos);
  while (out.size() < max_new_tokens) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < logits.size(); ++v)
      if (logits[v] > logits[best]) best = v;
    if (stop_at_eos && int(best) == kEos) break;
    out.push_back(int(best));
    if (out.size() == max_new_tokens || out.size() + 1 >= w.config.window)
      break;
    logits = st.feed(int(best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradients

inline void validate_target(std::span<const int> target) {
  if (target.size() < 2)
    throw ArgumentError("target needs at least BOS and EOS");
  if (target.front() != kBos) throw ArgumentError("target must start with BOS");
  if (target.back() != kEos) throw ArgumentError("target must end with EOS");
}

// Mean cross-entropy of logits row t against target[t + 1]; fills dlogits
// with the matching gradient when given.
template <class Real>
double cross_entropy_rows(const Mat<Real>& logits, std::span<const int> target,
                          Mat<Real>* dlogits) {
  if (logits.rows + 1 != target.size())
    throw ShapeError("cross_entropy: " + std::to_string(logits.rows) +
                     " logit rows against " + std::to_string(target.size()) +
                     " target tokens");
  const std::size_t T = logits.rows;
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t y = std::size_t(target[t + 1]);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < logits.cols; ++v)
      m = std::max(m, double(logits.at(t, v)));
    double z = 0.0;
    for (std::size_t v = 0; v < logits.cols; ++v)
      z += std::exp(double(logits.at(t, v)) - m);
    total += m + std::log(z) - double(logits.at(t, y));
    if (dlogits != nullptr) {
      for (std::size_t v = 0; v < logits.cols; ++v) {
        double p = std::exp(double(logits.at(t, v)) - m) / z;
        if (v == y) p -= 1.0;
        dlogits->at(t, v) = Real(p / double(T));
      }
    }
  }
  return total / double(T);
}

// Teacher-forced score of a target sequence under the provider's view of the
// encodings. Forward only; the workhorse behind finite-difference checks.
template <class Real>
double teacher_forced_loss(const WeightsT<Real>& w, std::span<const int> target,
                           CrossProviderT<Real>& provider) {
  validate_target(target);
  DecoderStateT<Real> st(w, provider);
  for (std::size_t t = 0; t + 1 < target.size(); ++t) st.feed(target[t]);
  return cross_entropy_rows<Real>(st.logits(), target, nullptr);
}

template <class Real>
struct StepGradsT {
  double loss = 0.0;
  WeightsT<Real> weights;
  Mat<Real> d_encodings;  // n x d_model, nonzero only in attended rows
};

// Backward through one encoded window. d_hidden sits at the encoder output;
// parameter gradients accumulate into grads.
template <class Real>
void encoder_backward(const WeightsT<Real>& w, const EncActsT<Real>& acts,
                      const Mat<Real>& d_hidden, WeightsT<Real>& grads) {
  const ModelConfig& c = w.config;
  const std::size_t T = acts.x_final.rows, d = c.d_model;
  if (d_hidden.rows != T || d_hidden.cols != d)
    throw ShapeError("encoder_backward: d_hidden " +
                     shape_str(d_hidden.rows, d_hidden.cols) + " vs " +
                     shape_str(T, d));
  Mat<Real> dx{T, d};
  detail::ln_backward(acts.x_final, acts.final_ln, w.enc_ln, d_hidden,
                      grads.enc_ln, dx);
  for (std::size_t li = c.n_enc_layers; li-- > 0;) {
    const EncLayerT<Real>& lw = w.enc[li];
    const EncLayerCacheT<Real>& L = acts.layers[li];
    EncLayerT<Real>& lg = grads.enc[li];

    Mat<Real> df{T, d};
    detail::ffn_backward(lw.ffn, L.ln2.out, L.ffn_pre, L.ffn_act, dx, lg.ffn,
                         df);
    detail::ln_backward(L.x_mid, L.ln2, lw.ln2, df, lg.ln2, dx);

    Mat<Real> dctx{T, d};
    detail::accum_nt(dx, lw.attn.wo, dctx);
    Mat<Real> dq{T, d}, dk{T, d}, dv{T, d};
    detail::self_attn_backward(L.q, L.k, L.v, L.probs, dctx, c.d_head(), dq,
                               dk, dv);
    Mat<Real> da{T, d};
    detail::self_attn_proj_backward(lw.attn, L.ln1.out, L.ctx, dx, dq, dk, dv,
                                    lg.attn, da);
    detail::ln_backward(L.x_in, L.ln1, lw.ln1, da, lg.ln1, dx);
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      grads.tok_emb.at(std::size_t(acts.tokens[t]), j) += dx.at(t, j);
      grads.pos_emb.at(t, j) += dx.at(t, j);
    }
}

// Backward through a chunked encoding. Rows a window computed but did not
// own received no upstream gradient, mirroring the forward copy.
template <class Real>
void encode_long_backward(const WeightsT<Real>& w,
                          const EncodeLongCacheT<Real>& enc,
                          const Mat<Real>& d_hidden, WeightsT<Real>& grads) {
  const std::size_t d = w.config.d_model;
  if (d_hidden.rows != enc.seq.hidden.rows || d_hidden.cols != d)
    throw ShapeError("encode_long_backward: d_hidden " +
                     shape_str(d_hidden.rows, d_hidden.cols) + " vs " +
                     shape_str(enc.seq.hidden.rows, d));
  for (std::size_t ci = 0; ci < enc.chunks.size(); ++ci) {
    const ChunkSpan& sp = enc.seq.spans[ci];
    Mat<Real> dh{sp.end - sp.start, d};
    for (std::size_t pos = sp.keep_start; pos < sp.keep_end; ++pos) {
      const Real* src = d_hidden.row(pos);
      std::copy(src, src + d, dh.row(pos - sp.start));
    }
    encoder_backward(w, enc.chunks[ci], dh, grads);
  }
}

// Teacher-forced step: forward, loss, full decoder backward. Encoder-side
// gradients leave through d_encodings, restricted to the rows the provider
// exposed; run the provider pinned when the rows must match a prior forward.
template <class Real>
StepGradsT<Real> teacher_forced_backward(const WeightsT<Real>& w,
                                         std::span<const int> target,
                                         CrossProviderT<Real>& provider) {
  validate_target(target);
  const ModelConfig& c = w.config;
  const std::size_t d = c.d_model, H = c.n_heads, dh = c.d_head();
  const double scale = 1.0 / std::sqrt(double(dh));

  DecoderStateT<Real> st(w, provider);
  for (std::size_t t = 0; t + 1 < target.size(); ++t) st.feed(target[t]);
  const std::size_t T = st.steps();

  StepGradsT<Real> out;
  out.weights = zeros_like(w);
  out.d_encodings = Mat<Real>{provider.n(), d};
  Mat<Real> dlogits{T, c.vocab_size};
  out.loss = cross_entropy_rows(st.logits(), target, &dlogits);

  // Tied output projection: logits = dec_ln(x) * tok_emb^T.
  Mat<Real> dy = matmul(dlogits, w.tok_emb);
  detail::accum_tn(dlogits, st.final_ln().out, out.weights.tok_emb);
  Mat<Real> dx{T, d};
  detail::ln_backward(st.x_final(), st.final_ln(), w.dec_ln, dy,
                      out.weights.dec_ln, dx);

  const Mat<Real>& enc = provider.encodings();
  for (std::size_t li = c.n_dec_layers; li-- > 0;) {
    const DecLayerT<Real>& lw = w.dec[li];
    const DecLayerCacheT<Real>& L = st.layers()[li];
    DecLayerT<Real>& lg = out.weights.dec[li];

    Mat<Real> df{T, d};
    detail::ffn_backward(lw.ffn, L.ln3.out, L.ffn_pre, L.ffn_act, dx, lg.ffn,
                         df);
    detail::ln_backward(L.x_mid2, L.ln3, lw.ln3, df, lg.ln3, dx);

    // Cross-attention backward; keys and values are rebuilt from the raw
    // encoder rows exactly as the forward pass materialized them.
    Mat<Real> dc{T, d};
    detail::accum_colsum(dx, lg.cross_bo);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        const CrossCellT<Real>& cell = L.cells[t][h];
        const HeadProjT<Real>& hp = lw.cross[h];
        HeadProjT<Real>& hg = lg.cross[h];
        std::vector<double> dctxh(dh, 0.0);
        for (std::size_t u = 0; u < dh; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d; ++j)
            acc += double(dx.at(t, j)) * double(hp.wo.at(u, j));
          dctxh[u] = acc;
          for (std::size_t j = 0; j < d; ++j)
            hg.wo.at(u, j) += Real(double(cell.ctx[u]) * double(dx.at(t, j)));
        }
        const std::size_t J = cell.probs.size();
        std::vector<double> q = detail::query_head(L.ln2.out.crow(t), hp);
        std::vector<double> dp(J);
        double pdot = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
          const std::size_t r = cell.plan.row(j);
          double acc = 0.0;
          for (std::size_t u = 0; u < dh; ++u) {
            double val = double(hp.bv.data[u]);
            for (std::size_t m = 0; m < d; ++m)
              val += double(enc.at(r, m)) * double(hp.wv.at(m, u));
            acc += dctxh[u] * val;
            const double dval = double(cell.probs[j]) * dctxh[u];
            hg.bv.data[u] += Real(dval);
            for (std::size_t m = 0; m < d; ++m) {
              hg.wv.at(m, u) += Real(double(enc.at(r, m)) * dval);
              out.d_encodings.at(r, m) += Real(dval * double(hp.wv.at(m, u)));
            }
          }
          dp[j] = acc;
          pdot += double(cell.probs[j]) * acc;
        }
        std::vector<double> dq(dh, 0.0);
        for (std::size_t j = 0; j < J; ++j) {
          const double ds = double(cell.probs[j]) * (dp[j] - pdot) * scale;
          const std::size_t r = cell.plan.row(j);
          for (std::size_t u = 0; u < dh; ++u) {
            double ky = double(hp.bk.data[u]);
            for (std::size_t m = 0; m < d; ++m)
              ky += double(enc.at(r, m)) * double(hp.wk.at(m, u));
            dq[u] += ds * ky;
            const double dky = ds * q[u];
            hg.bk.data[u] += Real(dky);
            for (std::size_t m = 0; m < d; ++m) {
              hg.wk.at(m, u) += Real(double(enc.at(r, m)) * dky);
              out.d_encodings.at(r, m) += Real(dky * double(hp.wk.at(m, u)));
            }
          }
        }
        for (std::size_t u = 0; u < dh; ++u) {
          hg.bq.data[u] += Real(dq[u]);
          for (std::size_t m = 0; m < d; ++m) {
            hg.wq.at(m, u) += Real(double(L.ln2.out.at(t, m)) * dq[u]);
            dc.at(t, m) += Real(dq[u] * double(hp.wq.at(m, u)));
          }
        }
      }
    }
    detail::ln_backward(L.x_mid, L.ln2, lw.ln2, dc, lg.ln2, dx);

    Mat<Real> dctx{T, d};
    detail::accum_nt(dx, lw.self_attn.wo, dctx);
    Mat<Real> dq{T, d}, dk{T, d}, dv{T, d};
    detail::self_attn_backward(L.q, L.k, L.v, L.probs, dctx, dh, dq, dk, dv);
    Mat<Real> da{T, d};
    detail::self_attn_proj_backward(lw.self_attn, L.ln1.out, L.ctx, dx, dq, dk,
                                    dv, lg.self_attn, da);
    detail::ln_backward(L.x_in, L.ln1, lw.ln1, da, lg.ln1, dx);
  }

  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      out.weights.tok_emb.at(std::size_t(st.tokens()[t]), j) += dx.at(t, j);
      out.weights.pos_emb.at(t, j) += dx.at(t, j);
    }
  return out;
}

}  // namespace knncross

#endif
