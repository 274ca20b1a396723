#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "knncross/config.hpp"
#include "knncross/errors.hpp"

using namespace knncross;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectYieldsDefaults) {
  RunConfig cfg = parse_run_config("{}");
  EXPECT_EQ(cfg.model.window, 16u);
  EXPECT_EQ(cfg.model.d_model, 32u);
  EXPECT_EQ(cfg.regime.variant, RegimeVariant::standard_truncated);
  EXPECT_EQ(cfg.regime.validation_mode, ValidationMode::truncated);
  EXPECT_EQ(cfg.task.kind, "needle_copy");
  EXPECT_EQ(cfg.k, 0u);
  EXPECT_EQ(resolved_k(cfg), cfg.model.window);
  EXPECT_EQ(cfg.provider.mode, ProviderChoice::retrieval);
}

TEST(Config, PartialBlocksKeepOtherDefaults) {
  RunConfig cfg = parse_run_config(
      R"({"model": {"window": 8, "d_model": 16, "d_ff": 32},
          "regime": {"variant": "retrieval", "max_epochs": 5},
          "k": 3})");
  EXPECT_EQ(cfg.model.window, 8u);
  EXPECT_EQ(cfg.model.n_heads, 4u);
  EXPECT_EQ(cfg.regime.variant, RegimeVariant::retrieval);
  EXPECT_EQ(cfg.regime.patience, 0u);
  EXPECT_EQ(cfg.regime.max_epochs, 5u);
  EXPECT_EQ(resolved_k(cfg), 3u);
}

TEST(Config, InvalidModelBlockRejected) {
  // window must satisfy the model's own divisibility rules
  EXPECT_THROW(parse_run_config(R"({"model": {"window": 10}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"d_model": 30}})"), ConfigError);
}

TEST(Config, UnknownKeysNamedWithDottedPath) {
  EXPECT_NE(message_of(R"({"models": {}})").find("unknown key 'models'"),
            std::string::npos);
  EXPECT_NE(
      message_of(R"({"model": {"width": 4}})").find("unknown key 'model.width'"),
      std::string::npos);
  EXPECT_NE(message_of(R"({"task": {"needle": 1}})")
                .find("unknown key 'task.needle'"),
            std::string::npos);
}

TEST(Config, MalformedJsonAndBadValuesRejected) {
  EXPECT_THROW(parse_run_config("{"), ConfigError);
  EXPECT_THROW(parse_run_config("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"window": -4}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"window": "16"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": 3})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"regime": {"variant": "bogus"}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(R"({"task": {"kind": "haystack"}})"),
               ConfigError);
}

TEST(Config, RegimeAndValidationNamesRoundTrip) {
  for (const char* name : {"standard_truncated", "train_chunked",
                           "random_encoded", "retrieval", "alternating"}) {
    RunConfig cfg = parse_run_config(
        std::string(R"({"regime": {"variant": ")") + name + R"("}})");
    EXPECT_STREQ(regime_name(cfg.regime.variant), name);
  }
  RunConfig cfg = parse_run_config(
      R"({"regime": {"validation_mode": "retrieval"}})");
  EXPECT_EQ(cfg.regime.validation_mode, ValidationMode::retrieval);
  EXPECT_STREQ(validation_name(ValidationMode::truncated), "truncated");
}

TEST(Config, ProviderStringsParseAndPrint) {
  EXPECT_EQ(parse_provider("full").mode, ProviderChoice::full);
  EXPECT_EQ(parse_provider("retrieval").mode, ProviderChoice::retrieval);
  ProviderSpec mem = parse_provider("memtrans:2");
  EXPECT_EQ(mem.mode, ProviderChoice::memtrans);
  EXPECT_EQ(mem.memtrans_layer, 2u);
  EXPECT_EQ(provider_string(mem), "memtrans:2");
  EXPECT_EQ(provider_string(ProviderSpec{}), "retrieval");
  EXPECT_THROW(parse_provider("memtrans:"), ConfigError);
  EXPECT_THROW(parse_provider("memtrans:two"), ConfigError);
  EXPECT_THROW(parse_provider("knn"), ConfigError);
}

TEST(Config, SerializeRoundTripsEveryField) {
  RunConfig cfg;
  cfg.model.window = 8;
  cfg.model.d_model = 16;
  cfg.model.d_ff = 48;
  cfg.model.seed = 17;
  cfg.regime.variant = RegimeVariant::alternating;
  cfg.regime.validation_mode = ValidationMode::retrieval;
  cfg.regime.train_truncation_limit = 96;
  cfg.regime.max_epochs = 7;
  cfg.regime.patience = 2;
  cfg.task.n = 40;
  cfg.task.m = 2;
  cfg.task.train_examples = 12;
  cfg.task.val_examples = 3;
  cfg.task.seed = 9;
  cfg.paths.corpus = "corpus.tsv";
  cfg.paths.checkpoint = "model.bin";
  cfg.paths.report_dir = "out";
  cfg.k = 5;
  cfg.provider = parse_provider("memtrans:1");

  RunConfig back = parse_run_config(serialize(cfg));
  EXPECT_EQ(back, cfg);
}

TEST(Config, LoadReadsFileAndMissingPathIsIoError) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(::testing::TempDir()) / "knncross_config";
  fs::create_directories(dir);
  fs::path file = dir / "run.json";
  {
    std::ofstream out(file);
    out << serialize(RunConfig{});
  }
  RunConfig cfg = load_run_config(file);
  EXPECT_EQ(cfg, RunConfig{});
  EXPECT_THROW(load_run_config(dir / "absent.json"), IoError);
}
