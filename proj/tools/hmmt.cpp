// hmmt: command-line driver for data generation, training, transfer,
// few-shot, ablation and analysis runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hmmt/analysis.hpp"
#include "hmmt/checkpoint.hpp"
#include "hmmt/config.hpp"
#include "hmmt/errors.hpp"
#include "hmmt/synthbench.hpp"
#include "hmmt/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hmmt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  std::string command;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON)")->required();
  sub->add_option("--seed", c.seed, "overrides every seed in the config");
  sub->add_option("--out", c.out, "output directory (default: run.out_dir)");
  sub->add_flag("--force", c.force, "write into a non-empty output directory");
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

Context open_context(const Common& c, const std::string& command, bool default_to_data_dir = false) {
  Context ctx;
  ctx.command = command;
  ctx.cfg = load_config(c.config);
  if (c.seed) ctx.cfg.override_seed(*c.seed);
  if (!c.out.empty()) {
    ctx.out = c.out;
  } else {
    ctx.out = default_to_data_dir ? ctx.cfg.data_dir : ctx.cfg.out_dir;
  }
  prepare_dir(ctx.out, c.force);
  return ctx;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw ConfigError("cannot write " + path.string());
}

void write_manifest(const Context& ctx, json extra = json::object()) {
  json j{{"command", ctx.command},
         {"config_hash", ctx.cfg.hash},
         {"seed", ctx.cfg.training.seed},
         {"data_seed", ctx.cfg.data_seed},
         {"version", kVersion},
         {"variant", ctx.cfg.variant}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_text(ctx.out / "run.json", j.dump(2) + "\n");
  write_text(ctx.out / "config.json", ctx.cfg.source_text);
}

TaskDataset task_data(const ExperimentConfig& cfg, const std::string& task) {
  const DataSource& d = cfg.data_for(task);
  if (d.kind == "path") return load_dataset(d.path);
  const fs::path stored = cfg.data_dir / task;
  if (fs::exists(stored / "manifest.json")) return load_dataset(stored);
  return d.kind == "fusion" ? gen_fusion_task(d.fusion) : gen_retrieval_task(d.retrieval);
}

PreparedTask prepared(const ExperimentConfig& cfg, const TaskSpec& spec) {
  return prepare_task(spec, task_data(cfg, spec.name), cfg.registry, cfg.shared_time.contains(spec.name));
}

std::vector<PreparedTask> prepared_all(const ExperimentConfig& cfg, const std::vector<std::string>& names) {
  std::vector<PreparedTask> out;
  for (const auto& n : names) out.push_back(prepared(cfg, cfg.task(n)));
  return out;
}

std::vector<std::string> task_names(const ExperimentConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& t : cfg.tasks) names.push_back(t.name);
  return names;
}

std::vector<TaskSpec> specs_for(const ExperimentConfig& cfg, const std::vector<std::string>& names) {
  std::vector<TaskSpec> out;
  for (const auto& n : names) out.push_back(cfg.task(n));
  return out;
}

TrainConfig train_config(const Context& ctx, const std::string& prefix = "") {
  TrainConfig t = ctx.cfg.training;
  t.metrics_csv = ctx.out / (prefix + "metrics.csv");
  t.schedule_csv = ctx.out / (prefix + "schedule.csv");
  t.best_checkpoint = ctx.out / (prefix + "best.ckpt");
  t.state_path = ctx.out / (prefix + "state.ckpt");
  return t;
}

json result_json(const TrainResult& r) {
  return {{"best_epoch", r.best_epoch}, {"best_score", r.best_score}, {"valid", r.best_valid}, {"test", r.test}};
}

json params_json(const Model& m) {
  const auto p = m.parameter_count();
  return {{"unimodal", p.unimodal}, {"crossmodal", p.crossmodal}, {"embeddings", p.embeddings},
          {"heads", p.per_head},    {"total", p.total()}};
}

void print_result(const TrainResult& r) {
  for (const auto& [task, v] : r.test) std::printf("%s test %.4f (valid %.4f)\n", task.c_str(), v, r.best_valid.at(task));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_gen_data(const Common& c) {
  Context ctx = open_context(c, "gen-data", true);
  json sets = json::object();
  for (const auto& d : ctx.cfg.data) {
    if (d.kind == "path") continue;
    const fs::path dir = ctx.out / d.task;
    if (d.kind == "fusion") {
      save_dataset(dir, gen_fusion_task(d.fusion), manifest_for(d.fusion));
    } else {
      save_dataset(dir, gen_retrieval_task(d.retrieval), manifest_for(d.retrieval));
    }
    const auto data = load_dataset(dir);
    sets[d.task] = {{"train", data.train.size()}, {"valid", data.valid.size()}, {"test", data.test.size()}};
    std::printf("wrote %s (%zu/%zu/%zu)\n", dir.string().c_str(), data.train.size(), data.valid.size(),
                data.test.size());
  }
  write_manifest(ctx, {{"datasets", sets}});
  return kExitOk;
}

int cmd_train(const Common& c) {
  Context ctx = open_context(c, "train");
  const auto names = task_names(ctx.cfg);
  const auto tasks = prepared_all(ctx.cfg, names);
  Model model(ctx.cfg.registry, ctx.cfg.model, ctx.cfg.sharing, specs_for(ctx.cfg, names));
  const TrainResult r = train_multitask(model, tasks, train_config(ctx));
  print_result(r);
  write_manifest(ctx, {{"result", result_json(r)}, {"parameters", params_json(model)}});
  return kExitOk;
}

int cmd_transfer(const Common& c, const std::string& sources_flag, const std::string& target_flag) {
  Context ctx = open_context(c, "transfer");
  const auto sources = sources_flag.empty() ? ctx.cfg.transfer.sources : split_list(sources_flag);
  const auto target = target_flag.empty() ? ctx.cfg.transfer.target : target_flag;
  if (target.empty()) throw ConfigError("transfer needs a target (--target or transfer.target)");
  for (const auto& s : sources) {
    if (s == target) throw ConfigError("transfer target '" + target + "' is also listed as a source");
  }
  auto names = sources;
  names.push_back(target);
  Model model(ctx.cfg.registry, ctx.cfg.model, ctx.cfg.sharing, specs_for(ctx.cfg, names));
  const auto src = prepared_all(ctx.cfg, sources);
  const auto tgt = prepared(ctx.cfg, ctx.cfg.task(target));
  TrainConfig pre = train_config(ctx, "pretrain_");
  if (ctx.cfg.transfer.pretrain_epochs) pre.epochs = ctx.cfg.transfer.pretrain_epochs;
  TrainConfig fine = train_config(ctx);
  if (ctx.cfg.transfer.finetune_epochs) fine.epochs = ctx.cfg.transfer.finetune_epochs;
  if (ctx.cfg.transfer.finetune_lr > 0.0) fine.adam.lr = ctx.cfg.transfer.finetune_lr;
  const TrainResult r = pretrain_finetune(model, src, tgt, pre, fine);
  print_result(r);
  write_manifest(ctx, {{"sources", sources}, {"target", target}, {"result", result_json(r)}});
  return kExitOk;
}

int cmd_fewshot(const Common& c, std::optional<double> p, std::optional<double> boost) {
  Context ctx = open_context(c, "fewshot");
  const std::string target = ctx.cfg.fewshot.target;
  if (target.empty()) throw ConfigError("fewshot.target is required");
  FewShotConfig fc;
  fc.fraction = p.value_or(ctx.cfg.fewshot.fraction);
  fc.boost = boost.value_or(ctx.cfg.fewshot.boost);
  fc.subsample_seed = ctx.cfg.fewshot.subsample_seed.value_or(ctx.cfg.training.seed);
  std::vector<std::string> aux;
  for (const auto& n : task_names(ctx.cfg)) {
    if (n != target) aux.push_back(n);
  }
  auto names = aux;
  names.push_back(target);
  Model model(ctx.cfg.registry, ctx.cfg.model, ctx.cfg.sharing, specs_for(ctx.cfg, names));
  const TrainResult r =
      fewshot_train(model, prepared_all(ctx.cfg, aux), prepared(ctx.cfg, ctx.cfg.task(target)), fc, train_config(ctx));
  print_result(r);
  write_manifest(ctx, {{"target", target}, {"fraction", fc.fraction}, {"boost", fc.boost}, {"result", result_json(r)}});
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& variant_flag) {
  Context ctx = open_context(c, "ablate");
  std::vector<std::string> variants;
  if (variant_flag == "all") {
    variants = SharingConfig::variant_names();
  } else {
    variants.push_back(variant_flag.empty() ? ctx.cfg.variant : variant_flag);
  }
  for (const auto& v : variants) SharingConfig::variant(v);
  const auto names = task_names(ctx.cfg);
  const auto tasks = prepared_all(ctx.cfg, names);
  std::ostringstream csv;
  csv << "variant,task,metric_name,value,head_width,parameters\n";
  json results = json::object();
  for (const auto& v : variants) {
    Model model(ctx.cfg.registry, ctx.cfg.model, SharingConfig::variant(v), specs_for(ctx.cfg, names));
    for (const auto& n : names) std::printf("variant %s task %s head width %zu\n", v.c_str(), n.c_str(), model.head_input_width(n));
    const TrainResult r = train_multitask(model, tasks, train_config(ctx, v + "_"));
    const auto total = model.parameter_count().total();
    for (const auto& t : tasks) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", r.test.at(t.spec.name));
      csv << v << ',' << t.spec.name << ',' << t.spec.metric_name() << ',' << buf << ','
          << model.head_input_width(t.spec.name) << ',' << total << '\n';
      std::printf("variant %s task %s test %s %.4f\n", v.c_str(), t.spec.name.c_str(), t.spec.metric_name().c_str(),
                  r.test.at(t.spec.name));
    }
    results[v] = {{"result", result_json(r)}, {"parameters", params_json(model)}};
  }
  write_text(ctx.out / "ablation.csv", csv.str());
  write_manifest(ctx, {{"variants", results}});
  return kExitOk;
}

Model analysis_model(const Context& ctx, const std::string& checkpoint_flag) {
  fs::path ckpt = checkpoint_flag.empty() ? ctx.cfg.analysis.checkpoint : fs::path(checkpoint_flag);
  if (ckpt.empty()) throw ConfigError("this analysis needs a checkpoint (--checkpoint or analysis.checkpoint)");
  if (!fs::exists(ckpt)) throw ConfigError("checkpoint " + ckpt.string() + " does not exist");
  return load_model(ckpt);
}

std::vector<PreparedTask> classification_tasks(const Context& ctx, const Model& model) {
  std::vector<PreparedTask> out;
  for (const auto& spec : model.tasks()) {
    if (spec.is_classification()) out.push_back(prepared(ctx.cfg, spec));
  }
  if (out.empty()) throw ConfigError("no classification tasks to analyze");
  return out;
}

int analyze_involvement(const Context& ctx, const std::string& checkpoint) {
  Model model = analysis_model(ctx, checkpoint);
  const auto tasks = classification_tasks(ctx, model);
  const auto& a = ctx.cfg.analysis;
  const InvolvementTable table = involvement_table(model, tasks, a.sample_cap, a.granularity);
  const Calibration cal = calibrate_epsilon(table);
  const double eps = a.epsilon.value_or(cal.epsilon);
  const auto counts = task_count(table, eps);
  const auto dists = count_distribution(table, counts);
  write_distribution_csv(ctx.out / "involvement_distribution.csv", dists);
  std::ostringstream rows;
  rows << "parameter,component";
  for (const auto& t : table.tasks) rows << ",I_" << t;
  rows << ",count\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    rows << table.rows[r] << ',' << to_string(table.components[r]);
    for (double v : table.values[r]) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      rows << ',' << buf;
    }
    rows << ',' << counts[r] << '\n';
  }
  write_text(ctx.out / "involvement.csv", rows.str());
  for (const auto& d : dists) {
    std::printf("%s:", d.component.c_str());
    for (std::size_t n = 0; n < d.fraction.size(); ++n) std::printf(" n=%zu %.3f", n, d.fraction[n]);
    std::printf("\n");
  }
  write_manifest(ctx, {{"kind", "involvement"},
                       {"epsilon", eps},
                       {"calibrated_epsilon", cal.epsilon},
                       {"calibrated_active_fraction", cal.active_fraction},
                       {"calibration_within_tolerance", cal.within_tolerance}});
  return kExitOk;
}

int analyze_interference(const Context& ctx) {
  const auto names = task_names(ctx.cfg);
  std::vector<PreparedTask> tasks;
  for (const auto& n : names) {
    if (ctx.cfg.task(n).is_classification()) tasks.push_back(prepared(ctx.cfg, ctx.cfg.task(n)));
  }
  if (tasks.size() < 2) throw ConfigError("interference needs at least 2 classification tasks");
  std::vector<TaskSpec> specs;
  for (const auto& t : tasks) specs.push_back(t.spec);
  const auto& a = ctx.cfg.analysis;
  TrainConfig ft = ctx.cfg.training;
  ft.epochs = a.finetune_epochs;
  if (a.finetune_lr > 0.0) ft.adam.lr = a.finetune_lr;
  ft.restore_best = false;
  json summary = json::object();
  for (const std::string& variant : {ctx.cfg.variant, std::string("separate")}) {
    Model base(ctx.cfg.registry, ctx.cfg.model, SharingConfig::variant(variant), specs);
    const TrainResult r = train_multitask(base, tasks, train_config(ctx, variant + "_baseline_"));
    const bool control = variant == "separate";
    const std::vector<TrainableSubset> all_only{TrainableSubset::kAll};
    const InterferenceReport report =
        interference_experiment(base, tasks, control ? all_only : a.regimes, ft, a.flip_seed);
    write_interference_csv(ctx.out / (control ? "interference_control.csv" : "interference.csv"), report);
    summary[control ? "control" : "shared"] = {{"baseline", result_json(r)}, {"deltas", report.deltas}};
    for (const auto& [regime, m] : report.deltas) {
      for (std::size_t f = 0; f < m.size(); ++f) {
        std::printf("%s regime %s flip %s:", variant.c_str(), regime.c_str(), report.tasks[f].c_str());
        for (std::size_t e = 0; e < m[f].size(); ++e) std::printf(" %s %+.4f", report.tasks[e].c_str(), m[f][e]);
        std::printf("\n");
      }
    }
    if (ctx.cfg.variant == "separate") break;
  }
  write_manifest(ctx, {{"kind", "interference"}, {"report", summary}});
  return kExitOk;
}

int analyze_attention(const Context& ctx, const std::string& checkpoint) {
  Model model = analysis_model(ctx, checkpoint);
  json files = json::array();
  for (const auto& spec : model.tasks()) {
    const PreparedTask t = prepared(ctx.cfg, spec);
    for (const auto& avg : attention_average(model, spec, t.split(ctx.cfg.analysis.attention_split))) {
      const std::string name = "attention_" + spec.name + "_" + avg.modality + ".csv";
      write_grid(ctx.out / name, avg.mean);
      files.push_back(name);
      std::printf("wrote %s [%zu x %zu] over %zu samples\n", name.c_str(), avg.mean.shape()[0], avg.mean.shape()[1],
                  avg.samples);
    }
  }
  write_manifest(ctx, {{"kind", "attention"}, {"files", files}});
  return kExitOk;
}

int analyze_params(const Context& ctx) {
  const auto names = task_names(ctx.cfg);
  const auto specs = specs_for(ctx.cfg, names);
  std::ostringstream csv;
  csv << "model,component,parameters\n";
  auto emit = [&](const std::string& label, const ParameterReport& p) {
    csv << label << ",unimodal," << p.unimodal << '\n' << label << ",crossmodal," << p.crossmodal << '\n';
    csv << label << ",embeddings," << p.embeddings << '\n' << label << ",heads," << p.heads << '\n';
    csv << label << ",total," << p.total() << '\n';
  };
  const Model shared(ctx.cfg.registry, ctx.cfg.model, ctx.cfg.sharing, specs);
  const Model separate(ctx.cfg.registry, ctx.cfg.model, SharingConfig::variant("separate"), specs);
  emit(ctx.cfg.variant, shared.parameter_count());
  emit("separate", separate.parameter_count());
  std::size_t singles = 0;
  for (const auto& s : specs) {
    const Model single(ctx.cfg.registry, ctx.cfg.model, ctx.cfg.sharing, {s});
    emit("single:" + s.name, single.parameter_count());
    singles += single.parameter_count().total();
  }
  write_text(ctx.out / "params.csv", csv.str());
  const double total = static_cast<double>(shared.parameter_count().total());
  std::printf("multitask %zu, separate %zu (x%.3f), sum of single-task %zu (x%.3f)\n",
              shared.parameter_count().total(), separate.parameter_count().total(),
              static_cast<double>(separate.parameter_count().total()) / total, singles,
              static_cast<double>(singles) / total);
  write_manifest(ctx, {{"kind", "params"},
                       {"multitask", shared.parameter_count().total()},
                       {"separate", separate.parameter_count().total()},
                       {"single_task_sum", singles}});
  return kExitOk;
}

int cmd_analyze(const Common& c, const std::string& kind, const std::string& checkpoint) {
  static const std::vector<std::string> kinds{"involvement", "interference", "attention", "params"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
    throw ConfigError("unknown analysis kind '" + kind + "' (valid: involvement, interference, attention, params)");
  }
  Context ctx = open_context(c, "analyze");
  if (kind == "involvement") return analyze_involvement(ctx, checkpoint);
  if (kind == "interference") return analyze_interference(ctx);
  if (kind == "attention") return analyze_attention(ctx, checkpoint);
  return analyze_params(ctx);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hmmt: multimodal multitask transformer experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common gen, train, transfer, fewshot, ablate, analyze;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic datasets");
  add_common(gen_cmd, gen);
  auto* train_cmd = app.add_subcommand("train", "multitask training");
  add_common(train_cmd, train);
  auto* transfer_cmd = app.add_subcommand("transfer", "pretrain on sources, fine-tune on a target");
  add_common(transfer_cmd, transfer);
  std::string sources, target;
  transfer_cmd->add_option("--sources", sources, "comma-separated source tasks");
  transfer_cmd->add_option("--target", target, "target task");
  auto* fewshot_cmd = app.add_subcommand("fewshot", "multitask training with a subsampled target");
  add_common(fewshot_cmd, fewshot);
  std::optional<double> p, boost;
  fewshot_cmd->add_option("--p", p, "fraction of target train data")->check(CLI::Range(1e-9, 1.0));
  fewshot_cmd->add_option("--boost", boost, "target loss-weight multiplier")->check(CLI::PositiveNumber);
  auto* ablate_cmd = app.add_subcommand("ablate", "train an ablation variant");
  add_common(ablate_cmd, ablate);
  std::string variant;
  ablate_cmd->add_option("--variant", variant, "variant name or 'all'");
  auto* analyze_cmd = app.add_subcommand("analyze", "involvement, interference, attention or parameter reports");
  add_common(analyze_cmd, analyze);
  std::string kind, checkpoint;
  analyze_cmd->add_option("--kind", kind, "involvement | interference | attention | params")->required();
  analyze_cmd->add_option("--checkpoint", checkpoint, "model checkpoint to analyze");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(train);
    if (*transfer_cmd) return cmd_transfer(transfer, sources, target);
    if (*fewshot_cmd) return cmd_fewshot(fewshot, p, boost);
    if (*ablate_cmd) return cmd_ablate(ablate, variant);
    if (*analyze_cmd) return cmd_analyze(analyze, kind, checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
