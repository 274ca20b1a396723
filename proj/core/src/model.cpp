#include "knncross/model.hpp"

namespace knncross {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0)
    throw ConfigError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  if (window < 4 || window % 4 != 0)
    throw ConfigError("window must be a positive multiple of 4, got " +
                      std::to_string(window));
  if (vocab_size < 4)
    throw ConfigError("vocab_size must cover the reserved ids, got " +
                      std::to_string(vocab_size));
  if (n_enc_layers == 0 || n_dec_layers == 0)
    throw ConfigError("encoder and decoder need at least one layer");
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
}

ModelWeights init_weights(const ModelConfig& cfg) {
  ModelWeights w = weights_shell<float>(cfg);
  Rng rng = Rng(cfg.seed).split(0);
  constexpr float kStd = 0.02f;
  visit_params(w, [&](const std::string& name, Matrix& m) {
    std::string leaf = name.substr(name.find_last_of('.') + 1);
    if (leaf == "gamma") {
      m.fill(1.0f);
    } else if (leaf[0] == 'w' || leaf == "tok_emb" || leaf == "pos_emb") {
      for (auto& v : m.data) v = static_cast<float>(rng.normal()) * kStd;
    }
    // Betas and biases keep the shell's zeros.
  });
  return w;
}

WeightsT<double> to_double(const ModelWeights& w) {
  WeightsT<double> out = weights_shell<double>(w.config);
  std::vector<const Matrix*> src;
  visit_params(w, [&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  visit_params(out, [&](const std::string&, Mat<double>& m) {
    const Matrix& s = *src[i++];
    for (std::size_t j = 0; j < m.data.size(); ++j)
      m.data[j] = static_cast<double>(s.data[j]);
  });
  return out;
}

}  // namespace knncross
