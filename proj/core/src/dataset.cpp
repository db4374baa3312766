#include "hmmt/dataset.hpp"

#include "hmmt/errors.hpp"

namespace hmmt {

Split Split::subset(std::span<const std::size_t> rows) const {
  Split out;
  for (const auto& x : inputs) out.inputs.push_back(gather_rows(x, rows).detach());
  if (targets.defined()) out.targets = gather_rows(targets, rows).detach();
  out.codes.resize(codes.size());
  out.item_ids.resize(item_ids.size());
  for (auto r : rows) {
    if (r >= size()) throw DimensionError("split row " + std::to_string(r) + " out of range");
    if (!labels.empty()) out.labels.push_back(labels[r]);
    out.ids.push_back(ids[r]);
    for (std::size_t m = 0; m < codes.size(); ++m) out.codes[m].push_back(codes[m][r]);
    for (std::size_t m = 0; m < item_ids.size(); ++m) out.item_ids[m].push_back(item_ids[m][r]);
  }
  return out;
}

const Split& TaskDataset::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (valid: train, valid, test)");
}

Split& TaskDataset::split(std::string_view name) {
  return const_cast<Split&>(static_cast<const TaskDataset&>(*this).split(name));
}

}  // namespace hmmt
