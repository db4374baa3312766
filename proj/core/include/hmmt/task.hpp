#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hmmt {

enum class LossKind {
  kCrossEntropy,
  kMse,
  kRetrieval,  // binary match / no-match over a modality pair, trained with cross-entropy
};

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct TaskSpec {
  std::string name;
  std::vector<std::string> modalities;  // registry names or aliases, in input order
  LossKind loss = LossKind::kCrossEntropy;
  std::size_t output_dim = 2;  // class count, or regression target width
  double loss_weight = 1.0;
  double eval_weight = 1.0;
  std::size_t batch_size = 32;

  bool is_classification() const { return loss != LossKind::kMse; }
  // Name of the validation metric after orientation (larger is better).
  std::string metric_name() const { return is_classification() ? "accuracy" : "neg_mse"; }
  void validate() const;
};

}  // namespace hmmt
