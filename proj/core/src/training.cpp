#include "hmmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "hmmt/checkpoint.hpp"
#include "hmmt/errors.hpp"
#include "hmmt/random.hpp"
#include "hmmt/synthbench.hpp"

namespace hmmt {

namespace {

class TrainingModeScope {
 public:
  TrainingModeScope(Model& model, bool training) : model_(model), previous_(model.training()) {
    model.set_training(training);
  }
  ~TrainingModeScope() { model_.set_training(previous_); }
  TrainingModeScope(const TrainingModeScope&) = delete;
  TrainingModeScope& operator=(const TrainingModeScope&) = delete;

 private:
  Model& model_;
  bool previous_;
};

PreparedSplit prepare_split(const TaskSpec& spec, const Split& split, const ModalityRegistry& registry,
                            bool shared_time, std::string_view split_name) {
  const std::string where = "task '" + spec.name + "' " + std::string(split_name) + " split";
  if (split.inputs.size() != spec.modalities.size()) {
    throw ConfigError(where + " has " + std::to_string(split.inputs.size()) + " modalities, expected " +
                      std::to_string(spec.modalities.size()));
  }
  PreparedSplit out;
  out.rows = split.size();
  if (out.rows == 0) throw ConfigError(where + " is empty");
  for (std::size_t m = 0; m < split.inputs.size(); ++m) {
    if (split.inputs[m].shape()[0] != out.rows) throw DimensionError(where + ": modality row counts disagree");
    out.inputs.push_back(standardize(split.inputs[m], registry, spec.modalities[m], spec.name));
  }
  if (shared_time && out.inputs.size() > 1) out.inputs = shared_time_encoding(std::move(out.inputs));
  if (spec.is_classification()) {
    if (split.labels.size() != out.rows) throw ConfigError(where + " lacks one class label per row");
    for (int y : split.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= spec.output_dim) {
        throw ConfigError(where + ": label " + std::to_string(y) + " outside [0, " + std::to_string(spec.output_dim) +
                          ")");
      }
    }
    out.labels = split.labels;
  } else {
    if (!split.targets.defined() || split.targets.shape() != Shape{out.rows, spec.output_dim}) {
      throw ConfigError(where + " needs regression targets of shape [" + std::to_string(out.rows) + ", " +
                        std::to_string(spec.output_dim) + "]");
    }
    out.targets = split.targets.detach();
  }
  return out;
}

void check_finite(const std::string& what, double value) {
  if (!std::isfinite(value)) throw NumericError(what + " is not finite");
}

void write_csv_row(std::ofstream& out, std::size_t epoch, const std::string& task, const std::string& split,
                   const std::string& metric, double value, std::uint64_t seed) {
  if (!out.is_open()) return;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << epoch << ',' << task << ',' << split << ',' << metric << ',' << buf << ',' << seed << '\n';
}

std::vector<std::vector<double>> snapshot(const Model& model) {
  std::vector<std::vector<double>> values;
  for (const auto& e : model.params().entries()) values.push_back(e.tensor.to_vector());
  return values;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  auto& entries = model.params().entries();
  if (values.size() != entries.size()) throw ContractError("snapshot does not match the model");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto dst = entries[i].tensor.mutable_data();
    if (dst.size() != values[i].size()) throw ContractError("snapshot does not match '" + entries[i].name + "'");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace

PreparedBatch PreparedSplit::batch(std::span<const std::size_t> r) const {
  PreparedBatch b;
  for (const auto& x : inputs) b.inputs.push_back(select_rows(x, r));
  if (!labels.empty()) {
    for (auto i : r) b.labels.push_back(labels.at(i));
  }
  if (targets.defined()) b.targets = gather_rows(targets, r).detach();
  return b;
}

PreparedSplit PreparedSplit::subset(std::span<const std::size_t> r) const {
  PreparedBatch b = batch(r);
  PreparedSplit s;
  s.inputs = std::move(b.inputs);
  s.labels = std::move(b.labels);
  s.targets = b.targets;
  s.rows = r.size();
  return s;
}

const PreparedSplit& PreparedTask::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + std::string(name) + "' (valid: train, valid, test)");
}

PreparedTask prepare_task(const TaskSpec& spec, const TaskDataset& data, const ModalityRegistry& registry,
                          bool shared_time) {
  spec.validate();
  PreparedTask t;
  t.spec = spec;
  t.train = prepare_split(spec, data.train, registry, shared_time, "train");
  t.valid = prepare_split(spec, data.valid, registry, shared_time, "valid");
  t.test = prepare_split(spec, data.test, registry, shared_time, "test");
  return t;
}

TrainableSubset parse_trainable_subset(const std::string& name) {
  if (name == "all") return TrainableSubset::kAll;
  if (name == "unimodal") return TrainableSubset::kUnimodal;
  if (name == "multimodal") return TrainableSubset::kMultimodal;
  throw ConfigError("unknown trainable subset '" + name + "' (valid: all, unimodal, multimodal)");
}

std::string to_string(TrainableSubset subset) {
  switch (subset) {
    case TrainableSubset::kAll: return "all";
    case TrainableSubset::kUnimodal: return "unimodal";
    case TrainableSubset::kMultimodal: return "multimodal";
  }
  return "unknown";
}

bool is_trainable(Component component, TrainableSubset subset) {
  switch (subset) {
    case TrainableSubset::kAll: return true;
    case TrainableSubset::kUnimodal: return component == Component::kUnimodal || component == Component::kHead;
    case TrainableSubset::kMultimodal: return component == Component::kCrossmodal || component == Component::kHead;
  }
  return false;
}

void Adam::step(ParamStore& params, const std::function<bool(const std::string&)>& select) {
  const auto& c = config_;
  for (auto& e : params.entries()) {
    if (!e.trainable || !e.tensor.has_grad() || !select(e.name)) continue;
    auto& mom = moments_[e.name];
    auto p = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    ++mom.steps;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(mom.steps));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(mom.steps));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + c.weight_decay * p[i];
      mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
      mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
      p[i] -= c.lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + c.eps);
    }
  }
}

Tensor task_loss(Model& model, const TaskSpec& spec, const PreparedBatch& batch) {
  const Tensor out = model.forward_task(spec.name, batch.inputs);
  if (spec.is_classification()) return cross_entropy(out, batch.labels);
  return mse(out, batch.targets);
}

StepResult accumulate_gradients(Model& model, std::span<const TaskBatch> batches) {
  model.params().zero_grad();
  StepResult result;
  std::optional<Tensor> total;
  for (const auto& tb : batches) {
    const TaskSpec& spec = *tb.spec;
    Tensor loss;
    if (spec.loss_weight == 0.0) {
      NoGradGuard guard;
      loss = task_loss(model, spec, *tb.batch);
    } else {
      loss = task_loss(model, spec, *tb.batch);
      const Tensor weighted = spec.loss_weight == 1.0 ? loss : scale(loss, spec.loss_weight);
      total = total ? add(*total, weighted) : weighted;
    }
    result.losses.emplace_back(spec.name, loss.item());
  }
  if (total) {
    result.total = total->item();
    total->backward();
  }
  return result;
}

StepResult train_step(Model& model, Adam& adam, std::span<const TaskBatch> batches, TrainableSubset subset) {
  TrainingModeScope mode(model, true);
  StepResult r = accumulate_gradients(model, batches);
  for (const auto& [task, loss] : r.losses) check_finite("loss of task '" + task + "'", loss);
  adam.step(model.params(), [&](const std::string& name) { return is_trainable(model.component_of(name), subset); });
  return r;
}

Tensor predict_split(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  TrainingModeScope mode(model, false);
  NoGradGuard guard;
  std::vector<Tensor> parts;
  for (std::size_t begin = 0; begin < split.rows; begin += batch_size) {
    std::vector<std::size_t> rows(std::min(batch_size, split.rows - begin));
    std::iota(rows.begin(), rows.end(), begin);
    parts.push_back(model.forward_task(spec.name, split.batch(rows).inputs));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

double evaluate(Model& model, const TaskSpec& spec, const PreparedSplit& split, std::size_t batch_size) {
  const Tensor out = predict_split(model, spec, split, batch_size);
  if (!spec.is_classification()) {
    NoGradGuard guard;
    return -mse(out, split.targets).item();
  }
  const std::size_t classes = out.shape()[1];
  auto d = out.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.rows; ++i) {
    const auto row = d.subspan(i * classes, classes);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == split.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(split.rows);
}

double aggregate_validation(std::span<const TaskMetric> metrics) {
  if (metrics.empty()) throw ConfigError("no validation metrics to aggregate");
  double num = 0.0;
  double den = 0.0;
  for (const auto& m : metrics) {
    double v;
    if (m.metric == "accuracy" || m.metric == "neg_mse") {
      v = m.value;
    } else if (m.metric == "mse") {
      v = -m.value;
    } else {
      throw ConfigError("metric '" + m.metric + "' of task '" + m.task +
                        "' has no known orientation (valid: accuracy, neg_mse, mse)");
    }
    if (m.weight < 0.0) throw ConfigError("task '" + m.task + "' has a negative evaluation weight");
    num += m.weight * v;
    den += m.weight;
  }
  if (den == 0.0) throw ConfigError("evaluation weights sum to zero");
  return num / den;
}

TrainResult train_multitask(Model& model, std::span<const PreparedTask> tasks, const TrainConfig& config) {
  if (tasks.empty()) throw ConfigError("train_multitask needs at least one task");
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (const auto& t : tasks) {
    model.task(t.spec.name);
    counts.emplace_back(t.spec.name, (t.train.rows + t.spec.batch_size - 1) / t.spec.batch_size);
  }
  if (!config.selection_task.empty()) {
    const bool found = std::any_of(tasks.begin(), tasks.end(),
                                   [&](const PreparedTask& t) { return t.spec.name == config.selection_task; });
    if (!found) throw ConfigError("selection task '" + config.selection_task + "' is not being trained");
  }
  const Schedule schedule(std::move(counts));
  if (!config.schedule_csv.empty()) {
    std::ofstream out(config.schedule_csv);
    out << schedule.to_csv();
  }

  Adam adam(config.adam);
  TrainProgress progress;
  if (!config.resume_from.empty()) load_train_state(config.resume_from, model, adam, progress);

  std::ofstream csv;
  if (!config.metrics_csv.empty()) {
    const bool append = !config.resume_from.empty() && std::filesystem::exists(config.metrics_csv);
    csv.open(config.metrics_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw ConfigError("cannot write metrics file " + config.metrics_csv.string());
    if (!append) csv << "epoch,task,split,metric_name,value,seed\n";
  }

  TrainResult result;
  for (std::size_t epoch = progress.epochs_done; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> orders;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      Rng rng(mix_seed({config.seed, epoch, t}));
      orders.push_back(permutation(tasks[t].train.rows, rng));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<double> loss_sum(tasks.size(), 0.0);
    for (std::size_t step = 0; step < schedule.steps_per_epoch(); ++step) {
      const auto active = schedule.active(step);
      std::vector<PreparedBatch> batches;
      batches.reserve(active.size());
      std::vector<TaskBatch> refs;
      for (auto t : active) {
        const std::size_t bs = tasks[t].spec.batch_size;
        const std::size_t b = schedule.batch_at(t, step);
        const auto begin = orders[t].begin() + static_cast<std::ptrdiff_t>(b * bs);
        const auto end = orders[t].begin() + static_cast<std::ptrdiff_t>(std::min((b + 1) * bs, tasks[t].train.rows));
        const std::vector<std::size_t> rows(begin, end);
        batches.push_back(tasks[t].train.batch(rows));
      }
      for (std::size_t i = 0; i < active.size(); ++i) refs.push_back({&tasks[active[i]].spec, &batches[i]});
      StepResult r;
      try {
        r = train_step(model, adam, refs, config.subset);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      for (std::size_t i = 0; i < active.size(); ++i) loss_sum[active[i]] += r.losses[i].second;
    }

    std::vector<TaskMetric> metrics;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& spec = tasks[t].spec;
      const double train_loss = loss_sum[t] / static_cast<double>(schedule.batches(t));
      const double valid = evaluate(model, spec, tasks[t].valid, config.eval_batch);
      rec.train_loss[spec.name] = train_loss;
      rec.valid[spec.name] = valid;
      write_csv_row(csv, epoch, spec.name, "train", "loss", train_loss, config.seed);
      write_csv_row(csv, epoch, spec.name, "valid", spec.metric_name(), valid, config.seed);
      if (config.selection_task.empty() || config.selection_task == spec.name) {
        metrics.push_back({spec.name, spec.metric_name(), valid,
                           config.selection_task.empty() ? spec.eval_weight : 1.0});
      }
    }
    rec.aggregate = aggregate_validation(metrics);
    check_finite("validation aggregate at epoch " + std::to_string(epoch), rec.aggregate);
    if (rec.aggregate > progress.best_score) {
      progress.best_score = rec.aggregate;
      progress.best_epoch = epoch;
      progress.best_values = snapshot(model);
      if (!config.best_checkpoint.empty()) save_model(config.best_checkpoint, model);
    }
    rec.best_so_far = progress.best_score;
    write_csv_row(csv, epoch, "aggregate", "valid", "weighted_score", rec.aggregate, config.seed);
    write_csv_row(csv, epoch, "aggregate", "valid", "best_score", rec.best_so_far, config.seed);
    csv.flush();
    result.history.push_back(std::move(rec));
    progress.epochs_done = epoch + 1;
    if (!config.state_path.empty()) save_train_state(config.state_path, model, adam, progress);
  }

  if (config.restore_best && !progress.best_values.empty()) restore(model, progress.best_values);
  result.best_epoch = progress.best_epoch;
  result.best_score = progress.best_score;
  for (const auto& t : tasks) {
    result.best_valid[t.spec.name] = evaluate(model, t.spec, t.valid, config.eval_batch);
    result.test[t.spec.name] = evaluate(model, t.spec, t.test, config.eval_batch);
    write_csv_row(csv, result.best_epoch, t.spec.name, "test", t.spec.metric_name(), result.test[t.spec.name],
                  config.seed);
  }
  return result;
}

TrainResult pretrain_finetune(Model& model, std::span<const PreparedTask> sources, const PreparedTask& target,
                              const TrainConfig& pretrain, const TrainConfig& finetune) {
  if (!sources.empty()) train_multitask(model, sources, pretrain);
  return train_multitask(model, std::span<const PreparedTask>(&target, 1), finetune);
}

TrainResult fewshot_train(Model& model, std::span<const PreparedTask> auxiliary, const PreparedTask& target,
                          const FewShotConfig& fewshot, TrainConfig config) {
  if (!(fewshot.boost >= 0.0)) throw ConfigError("few-shot boost must be >= 0");
  if (!target.spec.is_classification()) throw ConfigError("few-shot subsampling needs a classification target");
  std::vector<PreparedTask> tasks(auxiliary.begin(), auxiliary.end());
  PreparedTask t = target;
  const auto rows = subsample_indices(target.train.labels, fewshot.fraction, fewshot.subsample_seed);
  t.train = target.train.subset(rows);
  t.spec.loss_weight *= fewshot.boost;
  tasks.push_back(std::move(t));
  config.selection_task = target.spec.name;
  return train_multitask(model, tasks, config);
}

}  // namespace hmmt
