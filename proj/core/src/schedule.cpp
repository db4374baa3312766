#include "hmmt/schedule.hpp"

#include <algorithm>
#include <sstream>

#include "hmmt/errors.hpp"

namespace hmmt {

Schedule::Schedule(std::vector<std::pair<std::string, std::size_t>> batch_counts) : tasks_(std::move(batch_counts)) {
  if (tasks_.empty()) throw ConfigError("schedule needs at least one task");
  for (const auto& [name, count] : tasks_) {
    if (count == 0) throw ConfigError("task '" + name + "' has no training batches");
    steps_ = std::max(steps_, count);
  }
}

std::vector<std::size_t> Schedule::active(std::size_t step) const {
  if (step >= steps_) {
    throw ContractError("step " + std::to_string(step) + " outside epoch of " + std::to_string(steps_) + " steps");
  }
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    if (step >= first_step(t)) out.push_back(t);
  }
  return out;
}

std::size_t Schedule::batch_at(std::size_t task, std::size_t step) const {
  if (task >= tasks_.size() || step >= steps_ || step < first_step(task)) {
    throw ContractError("task " + std::to_string(task) + " is not active at step " + std::to_string(step));
  }
  return step - first_step(task);
}

std::string Schedule::to_csv() const {
  std::ostringstream out;
  out << "step,task,batch\n";
  for (std::size_t s = 0; s < steps_; ++s) {
    for (auto t : active(s)) out << s << ',' << tasks_[t].first << ',' << batch_at(t, s) << '\n';
  }
  return out.str();
}

}  // namespace hmmt
