#include "hmmt/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmmt/errors.hpp"
#include "hmmt/random.hpp"
#include "json_io.hpp"

namespace hmmt {

namespace {

using detail::check_keys;
using detail::get_or;
using detail::get_required;
using detail::json;

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

SynthModality synth_modality(const json& j, const std::string& where) {
  check_keys(j, {"name", "shape", "codes"}, where);
  SynthModality m;
  m.name = get_required<std::string>(j, "name", where);
  m.sample_shape = get_required<Shape>(j, "shape", where);
  m.codes = get_or<std::size_t>(j, "codes", 2, where);
  return m;
}

DataSource data_source(const json& j, const std::string& where, const std::filesystem::path& base,
                       std::uint64_t seed, std::uint64_t world_seed) {
  DataSource d;
  d.task = get_required<std::string>(j, "task", where);
  d.kind = get_required<std::string>(j, "kind", where);
  if (d.kind == "fusion") {
    check_keys(j, {"task", "kind", "modalities", "rule", "rule_inputs", "classes", "noise", "train", "valid", "test"},
               where);
    auto& f = d.fusion;
    f.task = d.task;
    const json& mods = j.contains("modalities") ? j["modalities"] : json();
    if (!mods.is_array() || mods.empty()) throw ConfigError(where + ".modalities must be a non-empty array");
    for (std::size_t i = 0; i < mods.size(); ++i) {
      f.modalities.push_back(synth_modality(mods[i], where + ".modalities[" + std::to_string(i) + "]"));
    }
    try {
      f.rule = parse_label_rule(get_or<std::string>(j, "rule", "xor", where));
    } catch (const Error& e) {
      throw ConfigError(where + ".rule: " + e.what());
    }
    f.rule_inputs = get_or(j, "rule_inputs", f.rule_inputs, where);
    f.classes = get_or(j, "classes", f.classes, where);
    f.noise = get_or(j, "noise", f.noise, where);
    f.train = get_or(j, "train", f.train, where);
    f.valid = get_or(j, "valid", f.valid, where);
    f.test = get_or(j, "test", f.test, where);
    f.seed = seed;
    f.world_seed = world_seed;
    try {
      f.validate();
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
  } else if (d.kind == "retrieval") {
    check_keys(j, {"task", "kind", "first", "second", "classes", "items_per_class", "noise"}, where);
    auto& r = d.retrieval;
    r.task = d.task;
    if (!j.contains("first") || !j.contains("second")) throw ConfigError(where + " needs 'first' and 'second'");
    r.first = synth_modality(j["first"], where + ".first");
    r.second = synth_modality(j["second"], where + ".second");
    r.classes = get_or(j, "classes", r.classes, where);
    r.items_per_class = get_or(j, "items_per_class", r.items_per_class, where);
    r.noise = get_or(j, "noise", r.noise, where);
    r.seed = seed;
    r.world_seed = world_seed;
    try {
      r.validate();
    } catch (const Error& e) {
      throw ConfigError(where + ": " + e.what());
    }
  } else if (d.kind == "path") {
    check_keys(j, {"task", "kind", "path"}, where);
    d.path = resolve(base, get_required<std::string>(j, "path", where));
  } else {
    throw ConfigError(where + ".kind: unknown data kind '" + d.kind + "' (valid: fusion, retrieval, path)");
  }
  return d;
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& where) {
  return get_or<std::vector<std::string>>(j, key, {}, where);
}

}  // namespace

std::string config_hash(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(text)));
  return buf;
}

const TaskSpec& ExperimentConfig::task(std::string_view name) const {
  for (const auto& t : tasks) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

const DataSource& ExperimentConfig::data_for(std::string_view name) const {
  for (const auto& d : data) {
    if (d.task == name) return d;
  }
  throw ConfigError("data section has no entry for task '" + std::string(name) + "'");
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
  training.seed = seed;
  model.seed = seed;
  data_seed = seed;
  for (auto& d : data) {
    d.fusion.seed = seed;
    d.retrieval.seed = seed;
  }
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"registry", "model", "tasks", "training", "data", "run", "transfer", "fewshot", "analysis"},
             "config");
  ExperimentConfig c;
  c.source_text = std::string(text);
  c.hash = config_hash(text);

  if (!root.contains("registry")) throw ConfigError("config.registry is required");
  c.registry = detail::registry_from_json(root["registry"], "registry");

  const json training = root.value("training", json::object());
  check_keys(training, {"lr", "weight_decay", "beta1", "beta2", "eps", "epochs", "seed", "trainable", "eval_batch"},
             "training");
  auto& t = c.training;
  t.adam.lr = get_or(training, "lr", t.adam.lr, "training");
  t.adam.weight_decay = get_or(training, "weight_decay", t.adam.weight_decay, "training");
  t.adam.beta1 = get_or(training, "beta1", t.adam.beta1, "training");
  t.adam.beta2 = get_or(training, "beta2", t.adam.beta2, "training");
  t.adam.eps = get_or(training, "eps", t.adam.eps, "training");
  t.epochs = get_or(training, "epochs", t.epochs, "training");
  t.seed = get_or<std::uint64_t>(training, "seed", 0, "training");
  t.eval_batch = get_or(training, "eval_batch", t.eval_batch, "training");
  try {
    t.subset = parse_trainable_subset(get_or<std::string>(training, "trainable", "all", "training"));
  } catch (const Error& e) {
    throw ConfigError(std::string("training.trainable: ") + e.what());
  }
  if (!(t.adam.lr > 0.0)) throw ConfigError("training.lr must be positive");
  if (t.adam.weight_decay < 0.0) throw ConfigError("training.weight_decay must be >= 0");
  if (t.epochs == 0) throw ConfigError("training.epochs must be positive");

  json model = root.value("model", json::object());
  c.variant = get_or<std::string>(model, "variant", "full", "model");
  try {
    c.sharing = SharingConfig::variant(c.variant);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model.variant: ") + e.what());
  }
  const bool model_seed_given = model.contains("seed");
  c.model = detail::model_config_from_json(model, "model");
  if (!model_seed_given) c.model.seed = t.seed;

  if (!root.contains("tasks") || !root["tasks"].is_array() || root["tasks"].empty()) {
    throw ConfigError("config.tasks must be a non-empty array");
  }
  for (std::size_t i = 0; i < root["tasks"].size(); ++i) {
    const std::string where = "tasks[" + std::to_string(i) + "]";
    const json& tj = root["tasks"][i];
    TaskSpec spec = detail::task_from_json(tj, where);
    for (const auto& m : spec.modalities) {
      if (!c.registry.contains(m)) throw ConfigError(where + ": modality '" + m + "' is not in the registry");
    }
    for (const auto& prev : c.tasks) {
      if (prev.name == spec.name) throw ConfigError(where + ": duplicate task name '" + spec.name + "'");
    }
    if (get_or(tj, "shared_time", false, where)) c.shared_time.insert(spec.name);
    c.tasks.push_back(std::move(spec));
  }

  const json data = root.value("data", json::object());
  check_keys(data, {"dir", "seed", "world_seed", "tasks"}, "data");
  c.data_dir = resolve(base, get_or<std::string>(data, "dir", "data", "data"));
  c.data_seed = get_or<std::uint64_t>(data, "seed", t.seed, "data");
  c.world_seed = get_or<std::uint64_t>(data, "world_seed", 0, "data");
  if (data.contains("tasks")) {
    if (!data["tasks"].is_array()) throw ConfigError("data.tasks must be an array");
    for (std::size_t i = 0; i < data["tasks"].size(); ++i) {
      const std::string where = "data.tasks[" + std::to_string(i) + "]";
      DataSource d = data_source(data["tasks"][i], where, base, c.data_seed, c.world_seed);
      c.task(d.task);
      for (const auto& prev : c.data) {
        if (prev.task == d.task) throw ConfigError(where + ": second data entry for task '" + d.task + "'");
      }
      c.data.push_back(std::move(d));
    }
  }

  const json run = root.value("run", json::object());
  check_keys(run, {"out_dir", "mode"}, "run");
  c.out_dir = resolve(base, get_or<std::string>(run, "out_dir", "runs/default", "run"));
  c.mode = get_or<std::string>(run, "mode", "train", "run");

  const json transfer = root.value("transfer", json::object());
  check_keys(transfer, {"sources", "target", "pretrain_epochs", "finetune_epochs", "finetune_lr"}, "transfer");
  c.transfer.sources = string_list(transfer, "sources", "transfer");
  c.transfer.target = get_or<std::string>(transfer, "target", "", "transfer");
  c.transfer.pretrain_epochs = get_or<std::size_t>(transfer, "pretrain_epochs", 0, "transfer");
  c.transfer.finetune_epochs = get_or<std::size_t>(transfer, "finetune_epochs", 0, "transfer");
  c.transfer.finetune_lr = get_or(transfer, "finetune_lr", 0.0, "transfer");

  const json fewshot = root.value("fewshot", json::object());
  check_keys(fewshot, {"target", "fraction", "boost", "subsample_seed"}, "fewshot");
  c.fewshot.target = get_or<std::string>(fewshot, "target", "", "fewshot");
  c.fewshot.fraction = get_or(fewshot, "fraction", 1.0, "fewshot");
  c.fewshot.boost = get_or(fewshot, "boost", 1.0, "fewshot");
  if (!(c.fewshot.fraction > 0.0 && c.fewshot.fraction <= 1.0)) throw ConfigError("fewshot.fraction must be in (0, 1]");
  if (!(c.fewshot.boost > 0.0)) throw ConfigError("fewshot.boost must be positive");
  if (fewshot.contains("subsample_seed")) {
    c.fewshot.subsample_seed = get_required<std::uint64_t>(fewshot, "subsample_seed", "fewshot");
  }

  const json analysis = root.value("analysis", json::object());
  check_keys(analysis,
             {"sample_cap", "epsilon", "granularity", "regimes", "finetune_epochs", "finetune_lr", "flip_seed",
              "attention_split", "checkpoint"},
             "analysis");
  auto& a = c.analysis;
  a.sample_cap = get_or(analysis, "sample_cap", a.sample_cap, "analysis");
  if (analysis.contains("epsilon")) a.epsilon = get_required<double>(analysis, "epsilon", "analysis");
  const auto gran = get_or<std::string>(analysis, "granularity", "scalar", "analysis");
  if (gran == "scalar") {
    a.granularity = Granularity::kScalar;
  } else if (gran == "tensor") {
    a.granularity = Granularity::kTensor;
  } else {
    throw ConfigError("analysis.granularity: unknown value '" + gran + "' (valid: scalar, tensor)");
  }
  if (analysis.contains("regimes")) {
    a.regimes.clear();
    for (const auto& r : string_list(analysis, "regimes", "analysis")) {
      try {
        a.regimes.push_back(parse_trainable_subset(r));
      } catch (const Error& e) {
        throw ConfigError(std::string("analysis.regimes: ") + e.what());
      }
    }
  }
  a.finetune_epochs = get_or(analysis, "finetune_epochs", a.finetune_epochs, "analysis");
  a.finetune_lr = get_or(analysis, "finetune_lr", a.finetune_lr, "analysis");
  a.flip_seed = get_or<std::uint64_t>(analysis, "flip_seed", 0, "analysis");
  a.attention_split = get_or<std::string>(analysis, "attention_split", "test", "analysis");
  if (a.attention_split != "train" && a.attention_split != "valid" && a.attention_split != "test") {
    throw ConfigError("analysis.attention_split must be train, valid or test");
  }
  if (analysis.contains("checkpoint")) a.checkpoint = resolve(base, get_required<std::string>(analysis, "checkpoint", "analysis"));
  if (a.epsilon && !(*a.epsilon > 0.0 && *a.epsilon < 1.0)) throw ConfigError("analysis.epsilon must be in (0, 1)");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

}  // namespace hmmt
