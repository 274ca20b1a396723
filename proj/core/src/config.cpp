#include "knncross/config.hpp"

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "json.hpp"
#include "knncross/errors.hpp"

namespace knncross {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& prefix, const std::string& key) {
  throw ConfigError("unknown key '" + prefix + key + "'");
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& prefix) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* name : allowed) {
      if (item.key() == name) {
        known = true;
        break;
      }
    }
    if (!known) bad_key(prefix, item.key());
  }
}

const json& object_at(const json& obj, const char* key) {
  const json& v = obj.at(key);
  if (!v.is_object())
    throw ConfigError(std::string("'") + key + "' must be an object");
  return v;
}

// Integers are range-checked by hand; json's get<size_t> would wrap negatives.
void read_size(const json& obj, const char* key, std::size_t& out,
               const std::string& prefix) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError("'" + prefix + key +
                      "' must be a non-negative integer");
  out = static_cast<std::size_t>(v.get<std::int64_t>());
}

void read_seed(const json& obj, const char* key, std::uint64_t& out,
               const std::string& prefix) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError("'" + prefix + key +
                      "' must be a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read_string(const json& obj, const char* key, std::string& out,
                 const std::string& prefix) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_string())
    throw ConfigError("'" + prefix + key + "' must be a string");
  out = v.get<std::string>();
}

RegimeVariant variant_from(const std::string& text) {
  for (RegimeVariant v :
       {RegimeVariant::standard_truncated, RegimeVariant::train_chunked,
        RegimeVariant::random_encoded, RegimeVariant::retrieval,
        RegimeVariant::alternating}) {
    if (text == regime_name(v)) return v;
  }
  throw ConfigError("unknown regime variant '" + text + "'");
}

ValidationMode validation_from(const std::string& text) {
  for (ValidationMode m : {ValidationMode::truncated, ValidationMode::retrieval}) {
    if (text == validation_name(m)) return m;
  }
  throw ConfigError("unknown validation mode '" + text + "'");
}

}  // namespace

const char* validation_name(ValidationMode m) {
  switch (m) {
    case ValidationMode::truncated:
      return "truncated";
    case ValidationMode::retrieval:
      return "retrieval";
  }
  throw ArgumentError("unknown validation mode");
}

ProviderSpec parse_provider(const std::string& text) {
  ProviderSpec spec;
  if (text == "full") {
    spec.mode = ProviderChoice::full;
    return spec;
  }
  if (text == "retrieval") {
    spec.mode = ProviderChoice::retrieval;
    return spec;
  }
  const std::string tag = "memtrans:";
  if (text.rfind(tag, 0) == 0) {
    const std::string digits = text.substr(tag.size());
    std::size_t used = 0;
    unsigned long layer = 0;
    try {
      layer = std::stoul(digits, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (digits.empty() || used != digits.size())
      throw ConfigError("bad provider layer '" + digits + "'");
    spec.mode = ProviderChoice::memtrans;
    spec.memtrans_layer = layer;
    return spec;
  }
  throw ConfigError("unknown provider '" + text + "'");
}

std::string provider_string(const ProviderSpec& spec) {
  switch (spec.mode) {
    case ProviderChoice::full:
      return "full";
    case ProviderChoice::retrieval:
      return "retrieval";
    case ProviderChoice::memtrans:
      return "memtrans:" + std::to_string(spec.memtrans_layer);
  }
  throw ArgumentError("unknown provider choice");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (!root.is_object()) throw ConfigError("top level must be an object");
  check_keys(root, {"model", "regime", "task", "paths", "k", "provider"}, "");

  RunConfig cfg;
  if (root.contains("model")) {
    const json& m = object_at(root, "model");
    check_keys(m,
               {"d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff",
                "vocab_size", "window", "seed"},
               "model.");
    read_size(m, "d_model", cfg.model.d_model, "model.");
    read_size(m, "n_heads", cfg.model.n_heads, "model.");
    read_size(m, "n_enc_layers", cfg.model.n_enc_layers, "model.");
    read_size(m, "n_dec_layers", cfg.model.n_dec_layers, "model.");
    read_size(m, "d_ff", cfg.model.d_ff, "model.");
    read_size(m, "vocab_size", cfg.model.vocab_size, "model.");
    read_size(m, "window", cfg.model.window, "model.");
    read_seed(m, "seed", cfg.model.seed, "model.");
  }
  if (root.contains("regime")) {
    const json& r = object_at(root, "regime");
    check_keys(r,
               {"variant", "validation_mode", "train_truncation_limit",
                "max_epochs", "patience"},
               "regime.");
    std::string name;
    read_string(r, "variant", name, "regime.");
    if (!name.empty()) cfg.regime.variant = variant_from(name);
    name.clear();
    read_string(r, "validation_mode", name, "regime.");
    if (!name.empty()) cfg.regime.validation_mode = validation_from(name);
    read_size(r, "train_truncation_limit", cfg.regime.train_truncation_limit,
              "regime.");
    read_size(r, "max_epochs", cfg.regime.max_epochs, "regime.");
    read_size(r, "patience", cfg.regime.patience, "regime.");
  }
  if (root.contains("task")) {
    const json& t = object_at(root, "task");
    check_keys(t, {"kind", "n", "m", "train_examples", "val_examples", "seed"},
               "task.");
    read_string(t, "kind", cfg.task.kind, "task.");
    if (cfg.task.kind != "needle_copy")
      throw ConfigError("unknown task kind '" + cfg.task.kind + "'");
    read_size(t, "n", cfg.task.n, "task.");
    read_size(t, "m", cfg.task.m, "task.");
    read_size(t, "train_examples", cfg.task.train_examples, "task.");
    read_size(t, "val_examples", cfg.task.val_examples, "task.");
    read_seed(t, "seed", cfg.task.seed, "task.");
  }
  if (root.contains("paths")) {
    const json& p = object_at(root, "paths");
    check_keys(p, {"corpus", "checkpoint", "report_dir"}, "paths.");
    read_string(p, "corpus", cfg.paths.corpus, "paths.");
    read_string(p, "checkpoint", cfg.paths.checkpoint, "paths.");
    read_string(p, "report_dir", cfg.paths.report_dir, "paths.");
  }
  read_size(root, "k", cfg.k, "");
  if (root.contains("provider")) {
    std::string name;
    read_string(root, "provider", name, "");
    cfg.provider = parse_provider(name);
  }

  try {
    cfg.model.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize(const RunConfig& cfg) {
  json root;
  root["model"] = {{"d_model", cfg.model.d_model},
                   {"n_heads", cfg.model.n_heads},
                   {"n_enc_layers", cfg.model.n_enc_layers},
                   {"n_dec_layers", cfg.model.n_dec_layers},
                   {"d_ff", cfg.model.d_ff},
                   {"vocab_size", cfg.model.vocab_size},
                   {"window", cfg.model.window},
                   {"seed", cfg.model.seed}};
  root["regime"] = {{"variant", regime_name(cfg.regime.variant)},
                    {"validation_mode", validation_name(cfg.regime.validation_mode)},
                    {"train_truncation_limit", cfg.regime.train_truncation_limit},
                    {"max_epochs", cfg.regime.max_epochs},
                    {"patience", cfg.regime.patience}};
  root["task"] = {{"kind", cfg.task.kind},
                  {"n", cfg.task.n},
                  {"m", cfg.task.m},
                  {"train_examples", cfg.task.train_examples},
                  {"val_examples", cfg.task.val_examples},
                  {"seed", cfg.task.seed}};
  root["paths"] = {{"corpus", cfg.paths.corpus},
                   {"checkpoint", cfg.paths.checkpoint},
                   {"report_dir", cfg.paths.report_dir}};
  root["k"] = cfg.k;
  root["provider"] = provider_string(cfg.provider);
  return root.dump(2) + "\n";
}

}  // namespace knncross
