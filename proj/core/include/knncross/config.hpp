#ifndef KNNCROSS_CONFIG_HPP
#define KNNCROSS_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "knncross/model.hpp"
#include "knncross/training.hpp"

namespace knncross {

const char* validation_name(ValidationMode m);

// Which cross-attention view generation commands run under.
enum class ProviderChoice { full, retrieval, memtrans };

struct ProviderSpec {
  ProviderChoice mode = ProviderChoice::retrieval;
  std::size_t memtrans_layer = 0;
  bool operator==(const ProviderSpec&) const = default;
};

// "full", "retrieval", or "memtrans:LAYER".
ProviderSpec parse_provider(const std::string& text);
std::string provider_string(const ProviderSpec& spec);

// Synthetic corpus recipe; window and vocabulary follow the model block.
struct TaskConfig {
  std::string kind = "needle_copy";
  std::size_t n = 128;  // input length
  std::size_t m = 4;    // needles per example
  std::size_t train_examples = 64;
  std::size_t val_examples = 16;
  std::uint64_t seed = 100;
  bool operator==(const TaskConfig&) const = default;
};

struct PathsConfig {
  std::string corpus;  // empty: synthesize from the task block
  std::string checkpoint;
  std::string report_dir = ".";
  bool operator==(const PathsConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainingRegime regime;
  TaskConfig task;
  PathsConfig paths;
  std::size_t k = 0;  // 0: model window
  ProviderSpec provider;
  bool operator==(const RunConfig&) const = default;
};

inline std::size_t resolved_k(const RunConfig& cfg) {
  return cfg.k ? cfg.k : cfg.model.window;
}

// Strict JSON: unknown keys are rejected, absent keys keep their defaults,
// and the result revalidates the model block.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize(const RunConfig& cfg);

}  // namespace knncross

#endif
