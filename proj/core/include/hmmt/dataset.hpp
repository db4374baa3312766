#pragma once

// In-memory task datasets: raw per-modality arrays split into
// train / valid / test.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmmt/tensor.hpp"

namespace hmmt {

struct Split {
  std::vector<Tensor> inputs;  // one [N, ...] array per task modality
  std::vector<int> labels;     // classification tasks
  Tensor targets;              // regression tasks, [N, out]
  std::vector<std::uint64_t> ids;
  // Latent generator codes per modality (class of the item for retrieval).
  std::vector<std::vector<int>> codes;
  // Source item ids per modality; differs from `ids` only for paired data.
  std::vector<std::vector<std::uint64_t>> item_ids;

  std::size_t size() const { return ids.size(); }
  Split subset(std::span<const std::size_t> rows) const;
};

struct TaskDataset {
  std::string task;
  std::vector<std::string> modalities;
  Split train;
  Split valid;
  Split test;

  // "train", "valid" or "test".
  const Split& split(std::string_view name) const;
  Split& split(std::string_view name);
};

}  // namespace hmmt
