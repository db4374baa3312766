#include "hmmt/task.hpp"

#include "hmmt/errors.hpp"

namespace hmmt {

LossKind parse_loss_kind(const std::string& name) {
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "mse") return LossKind::kMse;
  if (name == "retrieval") return LossKind::kRetrieval;
  throw ConfigError("unknown loss kind '" + name + "' (valid: cross_entropy, mse, retrieval)");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kMse: return "mse";
    case LossKind::kRetrieval: return "retrieval";
  }
  return "unknown";
}

void TaskSpec::validate() const {
  if (name.empty()) throw ConfigError("task name must be non-empty");
  if (modalities.empty()) throw ConfigError("task '" + name + "' lists no modalities");
  if (loss_weight < 0.0) throw ConfigError("task '" + name + "': loss weight must be >= 0");
  if (eval_weight < 0.0) throw ConfigError("task '" + name + "': eval weight must be >= 0");
  if (output_dim == 0) throw ConfigError("task '" + name + "': output dimension must be positive");
  if (batch_size == 0) throw ConfigError("task '" + name + "': batch size must be positive");
  if (loss == LossKind::kRetrieval && (modalities.size() != 2 || output_dim != 2)) {
    throw ConfigError("task '" + name + "': retrieval tasks pair exactly 2 modalities with 2 outputs");
  }
  if (is_classification() && output_dim < 2) throw ConfigError("task '" + name + "': classification needs >= 2 classes");
}

}  // namespace hmmt
