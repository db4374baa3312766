#pragma once

// Per-epoch step layout for multitask training. A task with B batches is
// active in the last B steps of an epoch of max(B) steps, so every task's
// final batch lands on the final step.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace hmmt {

class Schedule {
 public:
  Schedule() = default;
  explicit Schedule(std::vector<std::pair<std::string, std::size_t>> batch_counts);

  std::size_t steps_per_epoch() const { return steps_; }
  std::size_t num_tasks() const { return tasks_.size(); }
  const std::string& task_name(std::size_t task) const { return tasks_[task].first; }
  std::size_t batches(std::size_t task) const { return tasks_[task].second; }
  std::size_t first_step(std::size_t task) const { return steps_ - tasks_[task].second; }

  // Task indices active at `step`, in registration order.
  std::vector<std::size_t> active(std::size_t step) const;
  // Batch index of `task` at `step`; the task must be active.
  std::size_t batch_at(std::size_t task, std::size_t step) const;

  // One "step,task,batch" line per active (step, task) pair.
  std::string to_csv() const;

 private:
  std::vector<std::pair<std::string, std::size_t>> tasks_;
  std::size_t steps_ = 0;
};

}  // namespace hmmt
