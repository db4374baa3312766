#include "hmmt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "hmmt/errors.hpp"
#include "hmmt/random.hpp"
#include "hmmt/synthbench.hpp"

namespace hmmt {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

TrainConfig without_outputs(TrainConfig config) {
  config.metrics_csv.clear();
  config.schedule_csv.clear();
  config.best_checkpoint.clear();
  config.state_path.clear();
  config.resume_from.clear();
  return config;
}

std::map<std::string, double> train_copy(const Model& start, std::span<const PreparedTask> tasks,
                                         const TrainConfig& config) {
  Model m = start.clone();
  return train_multitask(m, tasks, config).test;
}

void check_paired(std::span<const PreparedTask> clean, std::span<const PreparedTask> flipped) {
  if (clean.size() != flipped.size()) throw ConfigError("clean and flipped runs train different task lists");
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& a = clean[i].spec;
    const auto& b = flipped[i].spec;
    if (a.name != b.name || a.modalities != b.modalities || a.loss != b.loss || a.output_dim != b.output_dim ||
        a.loss_weight != b.loss_weight || a.eval_weight != b.eval_weight || a.batch_size != b.batch_size ||
        clean[i].train.rows != flipped[i].train.rows || clean[i].test.rows != flipped[i].test.rows) {
      throw ConfigError("clean and flipped runs disagree on task '" + a.name + "'");
    }
  }
}

}  // namespace

std::vector<double> involvement(std::span<const Tensor> params, std::size_t samples,
                                const std::function<Tensor(std::size_t)>& correct_prob) {
  if (samples == 0) throw ConfigError("involvement needs at least one sample");
  std::vector<Tensor> handles(params.begin(), params.end());
  std::size_t total = 0;
  for (const auto& p : handles) total += p.numel();
  std::vector<double> acc(total, 0.0);
  for (std::size_t i = 0; i < samples; ++i) {
    for (auto& p : handles) p.zero_grad();
    const Tensor prob = correct_prob(i);
    if (prob.numel() != 1) throw DimensionError("correct-class probability must be a single value");
    prob.backward();
    std::size_t offset = 0;
    for (const auto& p : handles) {
      if (p.has_grad()) {
        auto g = p.grad();
        for (std::size_t k = 0; k < g.size(); ++k) acc[offset + k] += std::abs(g[k]);
      }
      offset += p.numel();
    }
  }
  for (auto& v : acc) v /= static_cast<double>(samples);
  for (auto& p : handles) p.zero_grad();
  return acc;
}

std::vector<double> involvement(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t cap,
                                std::span<const std::size_t> entries) {
  if (!spec.is_classification()) {
    throw ConfigError("involvement is defined through class probabilities; task '" + spec.name +
                      "' is a regression task");
  }
  const bool was_training = model.training();
  model.set_training(false);
  std::vector<Tensor> params;
  for (auto e : entries) params.push_back(model.params().entries().at(e).tensor);
  const std::size_t n = std::min(cap, split.rows);
  std::vector<double> out;
  try {
    out = involvement(params, n, [&](std::size_t i) {
      const std::size_t row[] = {i};
      const PreparedBatch b = split.batch(row);
      const Tensor probs = softmax(model.forward_task(spec.name, b.inputs), -1);
      const auto y = static_cast<std::size_t>(b.labels[0]);
      return slice(probs, 1, y, y + 1);
    });
  } catch (...) {
    model.set_training(was_training);
    throw;
  }
  model.set_training(was_training);
  return out;
}

InvolvementTable involvement_table(Model& model, std::span<const PreparedTask> tasks, std::size_t cap,
                                   Granularity granularity, std::vector<Component> components) {
  if (tasks.empty()) throw ConfigError("involvement table needs at least one task");
  std::vector<std::size_t> entries;
  const auto& all = model.params().entries();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto c = model.component_of(all[i].name);
    if (all[i].trainable && std::find(components.begin(), components.end(), c) != components.end()) {
      entries.push_back(i);
    }
  }
  if (entries.empty()) throw ConfigError("no parameters in the requested components");

  std::vector<std::vector<double>> per_task;
  InvolvementTable table;
  for (const auto& t : tasks) {
    table.tasks.push_back(t.spec.name);
    per_task.push_back(involvement(model, t.spec, t.valid, cap, entries));
  }
  std::size_t offset = 0;
  for (auto e : entries) {
    const auto& entry = all[e];
    const auto c = model.component_of(entry.name);
    const std::size_t n = entry.tensor.numel();
    if (granularity == Granularity::kTensor) {
      std::vector<double> row;
      for (const auto& v : per_task) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += v[offset + k];
        row.push_back(s / static_cast<double>(n));
      }
      table.rows.push_back(entry.name);
      table.components.push_back(c);
      table.values.push_back(std::move(row));
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> row;
        for (const auto& v : per_task) row.push_back(v[offset + k]);
        table.rows.push_back(entry.name + "[" + std::to_string(k) + "]");
        table.components.push_back(c);
        table.values.push_back(std::move(row));
      }
    }
    offset += n;
  }
  return table;
}

int task_count(std::span<const double> row, double epsilon) {
  if (row.empty()) throw ConfigError("task_count needs at least one task column");
  const double top = *std::max_element(row.begin(), row.end());
  const double threshold = epsilon * top;
  int n = 0;
  for (double v : row) {
    if (v < 0.0) throw ContractError("involvement values must be non-negative");
    n += v > threshold ? 1 : 0;
  }
  return n;
}

std::vector<int> task_count(const InvolvementTable& table, double epsilon) {
  std::vector<int> out;
  out.reserve(table.values.size());
  for (const auto& row : table.values) out.push_back(task_count(row, epsilon));
  return out;
}

std::vector<CountDistribution> count_distribution(const InvolvementTable& table, std::span<const int> counts) {
  if (counts.size() != table.values.size()) throw DimensionError("one count per table row is required");
  std::vector<CountDistribution> out;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    const std::string name = to_string(table.components[r]);
    auto [it, inserted] = index.emplace(name, out.size());
    if (inserted) out.push_back({name, 0, std::vector<double>(table.tasks.size() + 1, 0.0)});
    auto& d = out[it->second];
    ++d.rows;
    d.fraction.at(static_cast<std::size_t>(counts[r])) += 1.0;
  }
  for (auto& d : out) {
    for (auto& f : d.fraction) f /= static_cast<double>(d.rows);
  }
  return out;
}

void write_distribution_csv(const std::filesystem::path& path, std::span<const CountDistribution> dists) {
  auto out = open_output(path);
  out << "component,count,fraction,rows\n";
  for (const auto& d : dists) {
    for (std::size_t n = 0; n < d.fraction.size(); ++n) {
      out << d.component << ',' << (n == 0 ? std::string("inactive") : std::to_string(n)) << ','
          << format_double(d.fraction[n]) << ',' << d.rows << '\n';
    }
  }
}

double active_fraction(const InvolvementTable& table, double epsilon) {
  if (table.values.empty() || table.tasks.empty()) throw ConfigError("empty involvement table");
  double sum = 0.0;
  for (const auto& row : table.values) {
    sum += static_cast<double>(task_count(row, epsilon)) / static_cast<double>(table.tasks.size());
  }
  return sum / static_cast<double>(table.values.size());
}

Calibration calibrate_epsilon(const InvolvementTable& table) {
  Calibration nearest;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 19; ++k) {
    const double eps = 0.05 * k;
    const double f = active_fraction(table, eps);
    const double gap = std::abs(f - 0.5);
    if (gap <= 0.05 + 1e-12) return {eps, f, true};
    if (gap < best_gap) {
      best_gap = gap;
      nearest = {eps, f, false};
    }
  }
  return nearest;
}

PreparedTask flip_task(const PreparedTask& task, std::uint64_t seed) {
  if (!task.spec.is_classification()) throw ConfigError("cannot flip labels of regression task '" + task.spec.name + "'");
  PreparedTask out = task;
  out.train.labels = flipped_labels(task.train.labels, task.spec.output_dim, mix_seed({seed, hash_string(task.spec.name)}));
  return out;
}

InterferenceRun interference_run(const Model& start, std::span<const PreparedTask> clean,
                                 std::span<const PreparedTask> flipped, const TrainConfig& config) {
  check_paired(clean, flipped);
  const TrainConfig cfg = without_outputs(config);
  InterferenceRun run;
  run.clean = train_copy(start, clean, cfg);
  run.flipped = train_copy(start, flipped, cfg);
  for (const auto& [task, v] : run.clean) run.delta[task] = run.flipped.at(task) - v;
  return run;
}

InterferenceReport interference_experiment(const Model& start, std::span<const PreparedTask> tasks,
                                           std::span<const TrainableSubset> regimes, const TrainConfig& config,
                                           std::uint64_t flip_seed) {
  InterferenceReport report;
  for (const auto& t : tasks) report.tasks.push_back(t.spec.name);
  for (auto regime : regimes) {
    TrainConfig cfg = without_outputs(config);
    cfg.subset = regime;
    const auto clean = train_copy(start, tasks, cfg);
    auto& matrix = report.deltas[to_string(regime)];
    for (std::size_t f = 0; f < tasks.size(); ++f) {
      std::vector<PreparedTask> modified(tasks.begin(), tasks.end());
      modified[f] = flip_task(tasks[f], flip_seed);
      const auto flipped = train_copy(start, modified, cfg);
      std::vector<double> row;
      for (const auto& t : tasks) row.push_back(flipped.at(t.spec.name) - clean.at(t.spec.name));
      matrix.push_back(std::move(row));
    }
  }
  return report;
}

void write_interference_csv(const std::filesystem::path& path, const InterferenceReport& report) {
  auto out = open_output(path);
  out << "regime,flipped_task,evaluated_task,delta\n";
  for (const auto& [regime, matrix] : report.deltas) {
    for (std::size_t f = 0; f < matrix.size(); ++f) {
      for (std::size_t e = 0; e < matrix[f].size(); ++e) {
        out << regime << ',' << report.tasks[f] << ',' << report.tasks[e] << ',' << format_double(matrix[f][e])
            << '\n';
      }
    }
  }
}

std::vector<AttentionAverage> attention_average(Model& model, const TaskSpec& spec, const PreparedSplit& split,
                                                std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("attention batch size must be positive");
  if (!model.sharing().use_unimodal_encoder) throw ConfigError("this variant has no unimodal encoder to inspect");
  NoGradGuard guard;
  std::vector<AttentionAverage> out;
  for (std::size_t m = 0; m < split.inputs.size(); ++m) {
    const auto& input = split.inputs[m];
    const std::size_t latents = model.config().num_latents;
    const std::size_t len = input.sequence_length();
    std::vector<double> acc(latents * len, 0.0);
    std::size_t heads = 0;
    for (std::size_t begin = 0; begin < split.rows; begin += batch_size) {
      std::vector<std::size_t> rows(std::min(batch_size, split.rows - begin));
      std::iota(rows.begin(), rows.end(), begin);
      Tensor probs;
      model.encode_unimodal(select_rows(input, rows), spec.name, &probs);
      heads = probs.shape()[1];
      auto d = probs.data();
      const std::size_t block = latents * len;
      for (std::size_t b = 0; b < rows.size() * heads; ++b) {
        for (std::size_t k = 0; k < block; ++k) acc[k] += d[b * block + k];
      }
    }
    for (auto& v : acc) v /= static_cast<double>(split.rows * heads);
    out.push_back({model.registry().spec(input.modality_index).name, split.rows,
                   Tensor::from({latents, len}, std::move(acc))});
  }
  return out;
}

void write_grid(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("grid output needs a matrix, got " + shape_to_string(matrix.shape()));
  auto out = open_output(path);
  const std::size_t cols = matrix.shape()[1];
  auto d = matrix.data();
  for (std::size_t r = 0; r < matrix.shape()[0]; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << format_double(d[r * cols + c]);
    out << '\n';
  }
}

std::string parameter_report_csv(const ParameterReport& report) {
  std::ostringstream out;
  out << "component,parameters\n";
  out << "unimodal," << report.unimodal << '\n';
  out << "crossmodal," << report.crossmodal << '\n';
  out << "embeddings," << report.embeddings << '\n';
  for (const auto& [task, n] : report.per_head) out << "head:" << task << ',' << n << '\n';
  out << "total," << report.total() << '\n';
  return out.str();
}

}  // namespace hmmt
