#ifndef KNNCROSS_TOOLS_COMMANDS_HPP
#define KNNCROSS_TOOLS_COMMANDS_HPP

#include <cstdint>
#include <string>

#include "knncross/config.hpp"

namespace knncross::cli {

// Flag values layered over the loaded config. The *_set fields record which
// flags actually appeared, so absent flags never clobber config values.
struct Overrides {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t k = 0;
  bool k_set = false;
  std::string provider;
  bool provider_set = false;
  std::string report_dir;
  bool report_dir_set = false;
};

RunConfig effective_config(const Overrides& o);

int run_train(const RunConfig& cfg);
int run_generate(const RunConfig& cfg);
int run_bench(const RunConfig& cfg);
int run_analyze(const RunConfig& cfg);
int run_selftest(const RunConfig& cfg);

}  // namespace knncross::cli

#endif
