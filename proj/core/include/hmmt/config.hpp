#pragma once

// Experiment configuration: one JSON document with registry, model, tasks,
// training, data, run, transfer, fewshot and analysis sections. The key
// reference lives in docs/config.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "hmmt/analysis.hpp"
#include "hmmt/model.hpp"
#include "hmmt/synthbench.hpp"
#include "hmmt/training.hpp"

namespace hmmt {

inline constexpr const char* kVersion = "0.1.0";

struct DataSource {
  std::string task;
  std::string kind;  // "fusion", "retrieval" or "path"
  FusionTaskConfig fusion;
  RetrievalTaskConfig retrieval;
  std::filesystem::path path;
};

struct TransferSection {
  std::vector<std::string> sources;
  std::string target;
  std::size_t pretrain_epochs = 0;  // 0: training.epochs
  std::size_t finetune_epochs = 0;
  double finetune_lr = 0.0;  // 0: training.lr
};

struct FewShotSection {
  std::string target;
  double fraction = 1.0;
  double boost = 1.0;
  std::optional<std::uint64_t> subsample_seed;  // defaults to the run seed
};

struct AnalysisSection {
  std::size_t sample_cap = 64;
  std::optional<double> epsilon;  // unset: calibrate
  Granularity granularity = Granularity::kScalar;
  std::vector<TrainableSubset> regimes{TrainableSubset::kAll, TrainableSubset::kUnimodal,
                                       TrainableSubset::kMultimodal};
  std::size_t finetune_epochs = 10;
  double finetune_lr = 0.0;  // 0: training.lr
  std::uint64_t flip_seed = 0;
  std::string attention_split = "test";
  std::filesystem::path checkpoint;
};

struct ExperimentConfig {
  ModalityRegistry registry;
  ModelConfig model;
  std::string variant = "full";
  SharingConfig sharing;
  std::vector<TaskSpec> tasks;
  std::set<std::string> shared_time;  // tasks with time-aligned modalities
  TrainConfig training;
  std::filesystem::path data_dir = "data";
  std::uint64_t data_seed = 0;
  std::uint64_t world_seed = 0;
  std::vector<DataSource> data;
  std::filesystem::path out_dir = "runs/default";
  std::string mode = "train";
  TransferSection transfer;
  FewShotSection fewshot;
  AnalysisSection analysis;

  std::string source_text;
  std::string hash;  // FNV-1a of source_text, hex

  const TaskSpec& task(std::string_view name) const;
  const DataSource& data_for(std::string_view task) const;
  // --seed: replaces the training, model and data seeds.
  void override_seed(std::uint64_t seed);
};

// `base_dir` anchors relative paths (data dir, out dir, dataset paths).
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

std::string config_hash(std::string_view text);

}  // namespace hmmt
