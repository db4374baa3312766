#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmmt/dataset.hpp"
#include "hmmt/model.hpp"
#include "hmmt/schedule.hpp"

namespace hmmt {

struct PreparedBatch {
  std::vector<StandardizedBatch> inputs;  // task modality order
  std::vector<int> labels;
  Tensor targets;

  std::size_t size() const { return inputs.empty() ? 0 : inputs.front().batch_size(); }
};

// A split standardized once up front; batches are row gathers.
struct PreparedSplit {
  std::vector<StandardizedBatch> inputs;
  std::vector<int> labels;
  Tensor targets;
  std::size_t rows = 0;

  PreparedBatch batch(std::span<const std::size_t> rows) const;
  PreparedSplit subset(std::span<const std::size_t> rows) const;
};

struct PreparedTask {
  TaskSpec spec;
  PreparedSplit train;
  PreparedSplit valid;
  PreparedSplit test;

  const PreparedSplit& split(std::string_view name) const;
};

// `shared_time` applies one positional table to all modalities of the task.
PreparedTask prepare_task(const TaskSpec& spec, const TaskDataset& data, const ModalityRegistry& registry,
                          bool shared_time = false);

enum class TrainableSubset {
  kAll,
  kUnimodal,    // unimodal encoders and heads
  kMultimodal,  // crossmodal layers and heads
};

TrainableSubset parse_trainable_subset(const std::string& name);
std::string to_string(TrainableSubset subset);
bool is_trainable(Component component, TrainableSubset subset);

struct AdamConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

class Adam {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t steps = 0;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every trainable entry accepted by `select` that holds a gradient.
  void step(ParamStore& params, const std::function<bool(const std::string&)>& select);
  const AdamConfig& config() const { return config_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::map<std::string, Moments> moments_;
};

struct TaskBatch {
  const TaskSpec* spec = nullptr;
  const PreparedBatch* batch = nullptr;
};

Tensor task_loss(Model& model, const TaskSpec& spec, const PreparedBatch& batch);

struct StepResult {
  std::vector<std::pair<std::string, double>> losses;  // unweighted, per task
  double total = 0.0;                                  // weighted sum
};

// Clears gradients, then backpropagates sum_t w_t L_t. Tasks with zero
// weight are evaluated without recording a graph.
StepResult accumulate_gradients(Model& model, std::span<const TaskBatch> batches);
StepResult train_step(Model& model, Adam& adam, std::span<const TaskBatch> batches, TrainableSubset subset);

// Eval-mode outputs for a whole split, [rows, output_dim].
Tensor predict_split(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t batch_size = 256);
// Accuracy for classification, negated MSE for regression.
double evaluate(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t batch_size = 256);

struct TaskMetric {
  std::string task;
  std::string metric;  // "accuracy", "neg_mse" or "mse" (negated before use)
  double value = 0.0;
  double weight = 1.0;
};

double aggregate_validation(std::span<const TaskMetric> metrics);

struct TrainProgress {
  std::size_t epochs_done = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<std::vector<double>> best_values;  // per parameter store entry
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  TrainableSubset subset = TrainableSubset::kAll;
  // When set, model selection looks at this task's validation metric only.
  std::string selection_task;
  std::size_t eval_batch = 256;
  bool restore_best = true;
  std::filesystem::path metrics_csv;
  std::filesystem::path schedule_csv;
  std::filesystem::path best_checkpoint;
  // Written after every epoch; resuming from it continues bit-exactly.
  std::filesystem::path state_path;
  std::filesystem::path resume_from;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::map<std::string, double> train_loss;
  std::map<std::string, double> valid;
  double aggregate = 0.0;
  double best_so_far = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  std::map<std::string, double> best_valid;
  std::map<std::string, double> test;  // at the restored best state
};

TrainResult train_multitask(Model& model, std::span<const PreparedTask> tasks, const TrainConfig& config);

// Trains on `sources`, then continues on `target` alone from the resulting
// weights. An empty source list is plain single-task training.
TrainResult pretrain_finetune(Model& model, std::span<const PreparedTask> sources, const PreparedTask& target,
                              const TrainConfig& pretrain, const TrainConfig& finetune);

struct FewShotConfig {
  double fraction = 1.0;  // share of the target's train split kept
  double boost = 1.0;     // multiplier on the target's loss weight
  std::uint64_t subsample_seed = 0;
};

// Multitask training on the auxiliary tasks plus a subsampled target;
// model selection follows the target alone.
TrainResult fewshot_train(Model& model, std::span<const PreparedTask> auxiliary, const PreparedTask& target,
                          const FewShotConfig& fewshot, TrainConfig config);

}  // namespace hmmt
