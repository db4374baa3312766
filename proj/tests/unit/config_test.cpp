#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hmmt/config.hpp"
#include "hmmt/errors.hpp"

#ifndef HMMT_SOURCE_DIR
#define HMMT_SOURCE_DIR "."
#endif

namespace hmmt {
namespace {

std::string smoke_text() {
  std::ifstream in(std::string(HMMT_SOURCE_DIR) + "/configs/smoke.json");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return at == std::string::npos ? s : s.replace(at, from.size(), to);
}

TEST(Config, ParsesSmokeConfig) {
  const auto cfg = parse_config(smoke_text(), "/base/configs");
  EXPECT_EQ(cfg.registry.size(), 4u);
  EXPECT_EQ(cfg.registry.index_of("caption"), cfg.registry.index_of("text"));
  EXPECT_EQ(cfg.model.latent_dim, 16u);
  EXPECT_EQ(cfg.model.fusion.cross_heads, 2u);
  EXPECT_EQ(cfg.tasks.size(), 3u);
  EXPECT_EQ(cfg.task("retrieval").loss, LossKind::kRetrieval);
  EXPECT_EQ(cfg.shared_time.count("av_xor"), 1u);
  EXPECT_DOUBLE_EQ(cfg.training.adam.lr, 0.003);
  EXPECT_EQ(cfg.training.epochs, 8u);
  EXPECT_EQ(cfg.data_dir, std::filesystem::path("/base/configs/../runs/smoke_data").lexically_normal());
  EXPECT_EQ(cfg.data_for("img_txt").fusion.rule, LabelRule::kSumThreshold);
  EXPECT_EQ(cfg.data_for("retrieval").retrieval.items_per_class, 20u);
  EXPECT_EQ(cfg.transfer.target, "retrieval");
  EXPECT_DOUBLE_EQ(cfg.fewshot.fraction, 0.2);
  ASSERT_TRUE(cfg.analysis.epsilon.has_value());
  EXPECT_EQ(cfg.hash, config_hash(smoke_text()));
  EXPECT_EQ(cfg.hash.size(), 16u);
}

TEST(Config, SeedOverride) {
  auto cfg = parse_config(smoke_text());
  cfg.override_seed(42);
  EXPECT_EQ(cfg.training.seed, 42u);
  EXPECT_EQ(cfg.model.seed, 42u);
  EXPECT_EQ(cfg.data_seed, 42u);
}

TEST(Config, UnknownKeysNameTheValidOnes) {
  try {
    parse_config(replace(smoke_text(), "\"epochs\": 8", "\"epochz\": 8"));
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epochz"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
}

TEST(Config, RejectsInvalidValues) {
  const auto text = smoke_text();
  EXPECT_THROW(parse_config("{ not json"), ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"variant\": \"full\"", "\"variant\": \"half\"")), ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"latent_dim\": 16", "\"latent_dim\": 0")), ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"modalities\": [\"audio\", \"video\"]", "\"modalities\": [\"audio\", \"smell\"]")),
               ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"lr\": 0.003", "\"lr\": \"fast\"")), ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"rule\": \"xor\"", "\"rule\": \"nand\"")), ConfigError);
  EXPECT_THROW(parse_config(replace(text, "\"fraction\": 0.2", "\"fraction\": 1.5")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, HashIsStable) {
  EXPECT_EQ(config_hash("abc"), config_hash("abc"));
  EXPECT_NE(config_hash("abc"), config_hash("abd"));
  EXPECT_EQ(config_hash(""), "cbf29ce484222325");
}

}  // namespace
}  // namespace hmmt
