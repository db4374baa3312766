#pragma once

// Parameter involvement, task counts, label-flip interference, attention
// averaging and parameter reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmmt/model.hpp"
#include "hmmt/training.hpp"

namespace hmmt {

// I(theta) = mean over samples of |d p(y|x) / d theta| for every scalar of
// `params`. `correct_prob(i)` builds the graph of p(y_i | x_i) as a
// one-element tensor.
std::vector<double> involvement(std::span<const Tensor> params, std::size_t samples,
                                const std::function<Tensor(std::size_t)>& correct_prob);

// Same for a model task over the first `cap` rows of `split` (eval mode).
// Result is laid out as the concatenation of `entries` (indices into the
// model's parameter store).
std::vector<double> involvement(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t cap,
                                std::span<const std::size_t> entries);

enum class Granularity { kScalar, kTensor };

struct InvolvementTable {
  std::vector<std::string> tasks;
  std::vector<std::string> rows;  // "name" or "name[i]"
  std::vector<Component> components;
  std::vector<std::vector<double>> values;  // [row][task]
};

InvolvementTable involvement_table(Model& model, std::span<const PreparedTask> tasks, std::size_t cap,
                                   Granularity granularity = Granularity::kScalar,
                                   std::vector<Component> components = {Component::kUnimodal,
                                                                        Component::kCrossmodal});

// sum over tasks of 1{I_T > eps * max_T I_T}; an all-zero row counts 0.
int task_count(std::span<const double> row, double epsilon = 0.2);
std::vector<int> task_count(const InvolvementTable& table, double epsilon = 0.2);

struct CountDistribution {
  std::string component;
  std::size_t rows = 0;
  std::vector<double> fraction;  // index n = share of rows with count n; 0 is "inactive"
};

std::vector<CountDistribution> count_distribution(const InvolvementTable& table, std::span<const int> counts);
void write_distribution_csv(const std::filesystem::path& path, std::span<const CountDistribution> dists);

// Mean over rows of (active tasks / task count).
double active_fraction(const InvolvementTable& table, double epsilon);

struct Calibration {
  double epsilon = 0.2;
  double active_fraction = 0.0;
  bool within_tolerance = false;
};

// Scans eps = 0.05, 0.10, ..., 0.95 for the first mean active fraction within
// 0.5 +- 0.05; otherwise reports the grid point closest to 0.5.
Calibration calibrate_epsilon(const InvolvementTable& table);

struct InterferenceRun {
  std::map<std::string, double> clean;
  std::map<std::string, double> flipped;
  std::map<std::string, double> delta;  // flipped - clean, test metrics
};

// Trains two copies of `start` with identical config, one on `clean` and one
// on `flipped`, and compares their test metrics.
InterferenceRun interference_run(const Model& start, std::span<const PreparedTask> clean,
                                 std::span<const PreparedTask> flipped, const TrainConfig& config);

// Copy of `task` whose train labels are flipped.
PreparedTask flip_task(const PreparedTask& task, std::uint64_t seed);

struct InterferenceReport {
  std::vector<std::string> tasks;
  // regime -> [flipped task][evaluated task]
  std::map<std::string, std::vector<std::vector<double>>> deltas;
};

InterferenceReport interference_experiment(const Model& start, std::span<const PreparedTask> tasks,
                                           std::span<const TrainableSubset> regimes, const TrainConfig& config,
                                           std::uint64_t flip_seed);
void write_interference_csv(const std::filesystem::path& path, const InterferenceReport& report);

struct AttentionAverage {
  std::string modality;
  std::size_t samples = 0;
  Tensor mean;  // [d_LN, t_m]
};

// First-layer encoder cross-attention averaged over rows and heads, one
// matrix per task modality.
std::vector<AttentionAverage> attention_average(Model& model, const TaskSpec& spec, const PreparedSplit& split,
                                                std::size_t batch_size = 64);
// Rows of comma-separated values, one line per matrix row.
void write_grid(const std::filesystem::path& path, const Tensor& matrix);

std::string parameter_report_csv(const ParameterReport& report);

}  // namespace hmmt
