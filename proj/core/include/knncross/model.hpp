#ifndef KNNCROSS_MODEL_HPP
#define KNNCROSS_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "knncross/attention.hpp"
#include "knncross/errors.hpp"
#include "knncross/matrix.hpp"
#include "knncross/rng.hpp"

namespace knncross {

// Reserved token ids, present in every vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 64;
  std::size_t window = 16;
  std::uint64_t seed = 0;

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <class Real>
struct LayerNormT {
  Mat<Real> gamma, beta;  // 1 x d_model
};

// Fused self-attention projections; heads live in column slices.
template <class Real>
struct SelfAttnT {
  Mat<Real> wq, wk, wv, wo;  // d_model x d_model
  Mat<Real> bq, bk, bv, bo;  // 1 x d_model
};

template <class Real>
struct FfnT {
  Mat<Real> w1;  // d_model x d_ff
  Mat<Real> b1;  // 1 x d_ff
  Mat<Real> w2;  // d_ff x d_model
  Mat<Real> b2;  // 1 x d_model
};

template <class Real>
struct EncLayerT {
  LayerNormT<Real> ln1;
  SelfAttnT<Real> attn;
  LayerNormT<Real> ln2;
  FfnT<Real> ffn;
};

template <class Real>
struct DecLayerT {
  LayerNormT<Real> ln1;
  SelfAttnT<Real> self_attn;
  LayerNormT<Real> ln2;
  std::vector<HeadProjT<Real>> cross;  // one per head
  Mat<Real> cross_bo;                  // 1 x d_model
  LayerNormT<Real> ln3;
  FfnT<Real> ffn;
};

// Pre-layer-norm encoder/decoder weights. The token embedding doubles as the
// output projection; the positional table restarts at zero in every encoded
// chunk.
template <class Real>
struct WeightsT {
  ModelConfig config;
  Mat<Real> tok_emb;  // vocab x d_model
  Mat<Real> pos_emb;  // window x d_model
  std::vector<EncLayerT<Real>> enc;
  LayerNormT<Real> enc_ln;
  std::vector<DecLayerT<Real>> dec;
  LayerNormT<Real> dec_ln;
};

using ModelWeights = WeightsT<float>;

// Visits every parameter matrix in a fixed order with a stable name; the
// checkpoint format and the optimizer both key off this order.
template <class W, class F>
void visit_params(W& w, F&& f) {
  f("tok_emb", w.tok_emb);
  f("pos_emb", w.pos_emb);
  auto ln = [&](const std::string& p, auto& n) {
    f(p + ".gamma", n.gamma);
    f(p + ".beta", n.beta);
  };
  auto attn = [&](const std::string& p, auto& a) {
    f(p + ".wq", a.wq);
    f(p + ".wk", a.wk);
    f(p + ".wv", a.wv);
    f(p + ".wo", a.wo);
    f(p + ".bq", a.bq);
    f(p + ".bk", a.bk);
    f(p + ".bv", a.bv);
    f(p + ".bo", a.bo);
  };
  auto ffn = [&](const std::string& p, auto& n) {
    f(p + ".w1", n.w1);
    f(p + ".b1", n.b1);
    f(p + ".w2", n.w2);
    f(p + ".b2", n.b2);
  };
  for (std::size_t l = 0; l < w.enc.size(); ++l) {
    std::string p = "enc." + std::to_string(l);
    ln(p + ".ln1", w.enc[l].ln1);
    attn(p + ".attn", w.enc[l].attn);
    ln(p + ".ln2", w.enc[l].ln2);
    ffn(p + ".ffn", w.enc[l].ffn);
  }
  ln("enc_ln", w.enc_ln);
  for (std::size_t l = 0; l < w.dec.size(); ++l) {
    std::string p = "dec." + std::to_string(l);
    ln(p + ".ln1", w.dec[l].ln1);
    attn(p + ".self", w.dec[l].self_attn);
    ln(p + ".ln2", w.dec[l].ln2);
    for (std::size_t h = 0; h < w.dec[l].cross.size(); ++h) {
      std::string q = p + ".cross." + std::to_string(h);
      auto& hp = w.dec[l].cross[h];
      f(q + ".wq", hp.wq);
      f(q + ".wk", hp.wk);
      f(q + ".wv", hp.wv);
      f(q + ".wo", hp.wo);
      f(q + ".bq", hp.bq);
      f(q + ".bk", hp.bk);
      f(q + ".bv", hp.bv);
    }
    f(p + ".cross_bo", w.dec[l].cross_bo);
    ln(p + ".ln3", w.dec[l].ln3);
    ffn(p + ".ffn", w.dec[l].ffn);
  }
  ln("dec_ln", w.dec_ln);
}

// All-zero weights with the shapes the config implies.
template <class Real>
WeightsT<Real> weights_shell(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, dh = cfg.d_head(), ff = cfg.d_ff;
  WeightsT<Real> w;
  w.config = cfg;
  w.tok_emb = Mat<Real>(cfg.vocab_size, d);
  w.pos_emb = Mat<Real>(cfg.window, d);
  auto make_ln = [&] {
    LayerNormT<Real> n;
    n.gamma = Mat<Real>(1, d);
    n.beta = Mat<Real>(1, d);
    return n;
  };
  auto make_attn = [&] {
    SelfAttnT<Real> a;
    a.wq = a.wk = a.wv = a.wo = Mat<Real>(d, d);
    a.bq = a.bk = a.bv = a.bo = Mat<Real>(1, d);
    return a;
  };
  auto make_ffn = [&] {
    FfnT<Real> n;
    n.w1 = Mat<Real>(d, ff);
    n.b1 = Mat<Real>(1, ff);
    n.w2 = Mat<Real>(ff, d);
    n.b2 = Mat<Real>(1, d);
    return n;
  };
  w.enc.resize(cfg.n_enc_layers);
  for (auto& L : w.enc) {
    L.ln1 = make_ln();
    L.attn = make_attn();
    L.ln2 = make_ln();
    L.ffn = make_ffn();
  }
  w.enc_ln = make_ln();
  w.dec.resize(cfg.n_dec_layers);
  for (auto& L : w.dec) {
    L.ln1 = make_ln();
    L.self_attn = make_attn();
    L.ln2 = make_ln();
    L.cross.resize(cfg.n_heads);
    for (auto& hp : L.cross) {
      hp.wq = hp.wk = hp.wv = Mat<Real>(d, dh);
      hp.bq = hp.bk = hp.bv = Mat<Real>(1, dh);
      hp.wo = Mat<Real>(dh, d);
    }
    L.cross_bo = Mat<Real>(1, d);
    L.ln3 = make_ln();
    L.ffn = make_ffn();
  }
  w.dec_ln = make_ln();
  return w;
}

template <class Real>
WeightsT<Real> zeros_like(const WeightsT<Real>& w) {
  return weights_shell<Real>(w.config);
}

// Seeded initialization: normals at 0.02 for projections and embeddings,
// identity layer norms, zero biases.
ModelWeights init_weights(const ModelConfig& cfg);

WeightsT<double> to_double(const ModelWeights& w);

// Versioned binary checkpoint: "ULMF" magic, version, config block, then
// named tensors until end of file.
void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace knncross

#endif
