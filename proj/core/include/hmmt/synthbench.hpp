#pragma once

// Synthetic multimodal task suites with controllable shared modalities,
// label rules and noise. Each modality draws a latent code per sample and
// emits prototype[code] + noise. Prototypes depend only on the world seed
// and the modality name, so tasks that list the same modality see the same
// signal.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hmmt/dataset.hpp"
#include "hmmt/tensor.hpp"

namespace hmmt {

enum class LabelRule {
  kXor,           // (sum of codes) mod classes
  kSumThreshold,  // 1 if the code sum exceeds half its range
  kMatch,         // 1 if the two rule codes agree (drawn balanced)
  kSumValue,      // regression: code sum scaled to [0, 1]
};

LabelRule parse_label_rule(const std::string& name);
std::string to_string(LabelRule rule);

struct SynthModality {
  std::string name;
  Shape sample_shape;  // per-sample raw shape, e.g. {t, d} or {H, W}
  std::size_t codes = 2;
};

struct FusionTaskConfig {
  std::string task;
  std::vector<SynthModality> modalities;
  LabelRule rule = LabelRule::kXor;
  std::vector<std::size_t> rule_inputs{0, 1};  // indices into `modalities`
  std::size_t classes = 2;
  double noise = 0.5;
  std::size_t train = 256;
  std::size_t valid = 64;
  std::size_t test = 64;
  std::uint64_t seed = 0;
  std::uint64_t world_seed = 0;

  void validate() const;
};

struct RetrievalTaskConfig {
  std::string task;
  SynthModality first;
  SynthModality second;
  std::size_t classes = 4;  // shared between both modalities
  std::size_t items_per_class = 10;
  double noise = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t world_seed = 0;

  void validate() const;
};

// [codes, sample_shape...] prototype table for a modality.
Tensor prototypes(std::uint64_t world_seed, const SynthModality& modality);

// Label of one sample from its per-modality codes.
int rule_label(const FusionTaskConfig& cfg, std::span<const int> codes);
double rule_value(const FusionTaskConfig& cfg, std::span<const int> codes);

// Accuracy of the best predictor that sees only modality `m`'s code, by
// enumerating the code distribution. Equal to chance for purely synergistic
// rules.
double best_unimodal_accuracy(const FusionTaskConfig& cfg, std::size_t m);

TaskDataset gen_fusion_task(const FusionTaskConfig& cfg);
// Items of the shared classes split 3/1/1 per class; within each split every
// first-modality item gets one positive and one negative partner. Label 1
// marks a matching pair.
TaskDataset gen_retrieval_task(const RetrievalTaskConfig& cfg);

// Train-split corruption: complement for binary labels, a uniformly drawn
// different label otherwise.
std::vector<int> flipped_labels(std::span<const int> labels, std::size_t classes, std::uint64_t seed);
TaskDataset flip_labels(const TaskDataset& data, std::size_t classes, std::uint64_t seed);

// Stratified nested subsample of train rows. For each class the rows are
// permuted once by `seed`; fraction p keeps the first round(p * n_c). Raises
// when a present class would end up empty.
std::vector<std::size_t> subsample_indices(std::span<const int> labels, double fraction, std::uint64_t seed);
TaskDataset subsample(const TaskDataset& data, double fraction, std::uint64_t seed);

struct DatasetManifest {
  std::string task;
  std::string kind;  // "fusion" or "retrieval"
  std::string rule;
  std::vector<SynthModality> modalities;
  std::size_t classes = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t world_seed = 0;
};

DatasetManifest manifest_for(const FusionTaskConfig& cfg);
DatasetManifest manifest_for(const RetrievalTaskConfig& cfg);

// <dir>/manifest.json plus one array file per split and field.
void save_dataset(const std::filesystem::path& dir, const TaskDataset& data, const DatasetManifest& manifest);
TaskDataset load_dataset(const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

}  // namespace hmmt
