#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "knncross/errors.hpp"

namespace {

using knncross::RunConfig;
using knncross::cli::Overrides;

void add_common_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config_path, "JSON run configuration");
  sub->add_option("--seed", o.seed, "override model.seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  sub->add_option("--k", o.k, "override retrieval count (0: model window)")
      ->each([&o](const std::string&) { o.k_set = true; });
  sub->add_option("--provider", o.provider,
                  "cross-attention source: full, retrieval, or memtrans:LAYER")
      ->each([&o](const std::string&) { o.provider_set = true; });
  sub->add_option("--report-dir", o.report_dir, "directory for artifacts")
      ->each([&o](const std::string&) { o.report_dir_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  using namespace knncross;

  CLI::App app{"encoder-decoder engine with retrieval-augmented cross-attention"};
  app.require_subcommand(1);
  Overrides o;
  int (*chosen)(const RunConfig&) = nullptr;

  const struct {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&);
  } commands[] = {
      {"train", "train on a corpus file or the synthetic needle task",
       cli::run_train},
      {"generate", "greedy generation from a checkpoint, with retrieval log",
       cli::run_generate},
      {"bench", "wall-clock scaling over input lengths W..16W", cli::run_bench},
      {"analyze", "retrieval-position histogram from a log and datastore dump",
       cli::run_analyze},
      {"selftest", "fast invariant suite, exit 0 iff all checks pass",
       cli::run_selftest},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common_flags(sub, o);
    sub->callback([&chosen, fn = c.fn] { chosen = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << category_name(ErrorCategory::usage) << ": " << e.what()
              << "\n";
    return exit_code(ErrorCategory::usage);
  }

  try {
    return chosen(cli::effective_config(o));
  } catch (const Error& e) {
    std::cerr << category_name(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    // untyped escape is a library bug; numeric is the least wrong bucket
    std::cerr << category_name(ErrorCategory::numeric) << ": " << e.what()
              << "\n";
    return exit_code(ErrorCategory::numeric);
  }
}
