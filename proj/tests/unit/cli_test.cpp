#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hmmt/schedule.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(HMMT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  return at == std::string::npos ? s : s.replace(at, from.size(), to);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("hmmt_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::string text = slurp(fs::path(HMMT_CONFIG_DIR) / "smoke.json");
    text = replace(text, "\"epochs\": 8", "\"epochs\": 2");
    text = replace(text, "\"../runs/smoke_data\"", "\"data\"");
    text = replace(text, "\"../runs/smoke\"", "\"out\"");
    config_ = write_config("config.json", text);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }
  std::string cfg() const { return "--config " + config_.string(); }

  fs::path dir_;
  fs::path config_;
};

TEST_F(Cli, GenDataIsDeterministic) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + (dir_ / "d1").string()).code, 0);
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + (dir_ / "d2").string()).code, 0);
  ASSERT_EQ(run("gen-data " + cfg() + " --seed 3 --out " + (dir_ / "d3").string()).code, 0);
  const auto a = slurp(dir_ / "d1/av_xor/train_input0.bin");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "d2/av_xor/train_input0.bin"));
  EXPECT_NE(a, slurp(dir_ / "d3/av_xor/train_input0.bin"));
  EXPECT_EQ(slurp(dir_ / "d1/run.json"), slurp(dir_ / "d2/run.json"));
  EXPECT_NE(slurp(dir_ / "d1/run.json").find("\"config_hash\""), std::string::npos);
}

TEST_F(Cli, TrainLogsScheduleAndIsReproducible) {
  const auto r1 = run("train " + cfg() + " --out " + (dir_ / "r1").string());
  ASSERT_EQ(r1.code, 0) << r1.out;
  ASSERT_EQ(run("train " + cfg() + " --out " + (dir_ / "r2").string()).code, 0);
  EXPECT_EQ(slurp(dir_ / "r1/metrics.csv"), slurp(dir_ / "r2/metrics.csv"));
  // 200 / 150 train rows and 96 retrieval pairs in batches of 32
  const hmmt::Schedule expected({{"av_xor", 7}, {"img_txt", 5}, {"retrieval", 3}});
  EXPECT_EQ(slurp(dir_ / "r1/schedule.csv"), expected.to_csv());
  for (const char* f : {"best.ckpt", "state.ckpt", "run.json", "config.json"}) EXPECT_TRUE(fs::exists(dir_ / "r1" / f)) << f;
  EXPECT_EQ(slurp(dir_ / "r1/config.json"), slurp(config_));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train").code, 2);
  EXPECT_EQ(run("frobnicate " + cfg()).code, 2);
  EXPECT_EQ(run("train --config " + (dir_ / "missing.json").string()).code, 2);
  const auto bad = write_config("bad.json", replace(slurp(config_), "\"epochs\": 2", "\"epochs\": 2, \"speed\": 1"));
  EXPECT_EQ(run("train --config " + bad.string() + " --out " + (dir_ / "x").string()).code, 2);

  fs::create_directories(dir_ / "busy");
  std::ofstream(dir_ / "busy/file") << "x";
  EXPECT_EQ(run("train " + cfg() + " --out " + (dir_ / "busy").string()).code, 2);

  EXPECT_EQ(run("ablate " + cfg() + " --variant nope --out " + (dir_ / "ab").string()).code, 2);
  EXPECT_EQ(run("fewshot " + cfg() + " --p 1.5 --out " + (dir_ / "fs").string()).code, 2);
  EXPECT_EQ(run("analyze " + cfg() + " --kind colors --out " + (dir_ / "an").string()).code, 2);

  const auto nan = write_config("nan.json", replace(slurp(config_), "\"lr\": 0.003", "\"lr\": 1e300"));
  const auto r = run("train --config " + nan.string() + " --out " + (dir_ / "nan").string());
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(Cli, ForceReusesDirectory) {
  ASSERT_EQ(run("train " + cfg() + " --out " + (dir_ / "f").string()).code, 0);
  EXPECT_EQ(run("train " + cfg() + " --out " + (dir_ / "f").string()).code, 2);
  EXPECT_EQ(run("train " + cfg() + " --force --out " + (dir_ / "f").string()).code, 0);
}

TEST_F(Cli, AblateReportsHeadWidth) {
  const auto r = run("ablate " + cfg() + " --variant no_multimodal --out " + (dir_ / "ab").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("variant no_multimodal task av_xor head width 32"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "ab/ablation.csv"));
}

TEST_F(Cli, ParamsReportsRatio) {
  const auto r = run("analyze " + cfg() + " --kind params --out " + (dir_ / "p").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("separate"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "p/params.csv"));
}

TEST_F(Cli, TransferFewshotAndAnalyses) {
  EXPECT_EQ(run("transfer " + cfg() + " --out " + (dir_ / "t").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "t/pretrain_metrics.csv"));
  EXPECT_EQ(run("fewshot " + cfg() + " --p 0.5 --out " + (dir_ / "f").string()).code, 0);
  EXPECT_EQ(run("analyze " + cfg() + " --kind involvement --out " + (dir_ / "i").string()).code, 2);
  ASSERT_EQ(run("train " + cfg() + " --out " + (dir_ / "r").string()).code, 0);
  const std::string ckpt = " --checkpoint " + (dir_ / "r/best.ckpt").string();
  EXPECT_EQ(run("analyze " + cfg() + ckpt + " --kind involvement --out " + (dir_ / "i").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "i/involvement_distribution.csv"));
  EXPECT_EQ(run("analyze " + cfg() + ckpt + " --kind attention --out " + (dir_ / "a").string()).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "a/attention_av_xor_audio.csv"));
  const auto inter = run("analyze " + cfg() + " --kind interference --out " + (dir_ / "x").string());
  EXPECT_EQ(inter.code, 0) << inter.out;
  EXPECT_TRUE(fs::exists(dir_ / "x/interference.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "x/interference_control.csv"));
}

TEST_F(Cli, Version) {
  const auto r = run("--version");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.1.0"), std::string::npos);
}

}  // namespace
