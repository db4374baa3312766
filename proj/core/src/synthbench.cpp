#include "hmmt/synthbench.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "hmmt/binary_io.hpp"
#include "hmmt/errors.hpp"
#include "hmmt/random.hpp"

namespace hmmt {

namespace {

constexpr std::array<const char*, 3> kSplits{"train", "valid", "test"};

void validate_modality(const SynthModality& m) {
  if (m.name.empty()) throw ConfigError("synthetic modality needs a name");
  if (m.sample_shape.empty() || shape_numel(m.sample_shape) == 0) {
    throw ConfigError("modality '" + m.name + "' needs a non-empty sample shape");
  }
  if (m.codes < 1) throw ConfigError("modality '" + m.name + "' needs at least one code");
}

std::size_t code_range(const FusionTaskConfig& cfg) {
  std::size_t r = 0;
  for (auto i : cfg.rule_inputs) r += cfg.modalities[i].codes - 1;
  return r;
}

// Appends prototype[code] + noise to `out`.
void emit(const Tensor& protos, int code, double noise, Rng& rng, std::vector<double>& out) {
  const std::size_t width = protos.numel() / protos.shape()[0];
  auto p = protos.data().subspan(static_cast<std::size_t>(code) * width, width);
  for (double v : p) out.push_back(v + noise * rng.normal());
}

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

LabelRule parse_label_rule(const std::string& name) {
  if (name == "xor") return LabelRule::kXor;
  if (name == "sum_threshold") return LabelRule::kSumThreshold;
  if (name == "match") return LabelRule::kMatch;
  if (name == "sum_value") return LabelRule::kSumValue;
  throw ConfigError("unknown label rule '" + name + "' (valid: xor, sum_threshold, match, sum_value)");
}

std::string to_string(LabelRule rule) {
  switch (rule) {
    case LabelRule::kXor: return "xor";
    case LabelRule::kSumThreshold: return "sum_threshold";
    case LabelRule::kMatch: return "match";
    case LabelRule::kSumValue: return "sum_value";
  }
  return "unknown";
}

void FusionTaskConfig::validate() const {
  if (task.empty()) throw ConfigError("synthetic task needs a name");
  if (modalities.empty()) throw ConfigError("task '" + task + "' lists no modalities");
  for (const auto& m : modalities) validate_modality(m);
  if (rule_inputs.empty()) throw ConfigError("task '" + task + "' has no rule inputs");
  for (auto i : rule_inputs) {
    if (i >= modalities.size()) throw ConfigError("task '" + task + "': rule input " + std::to_string(i) + " out of range");
  }
  if (rule != LabelRule::kSumValue && classes < 2) throw ConfigError("task '" + task + "' needs >= 2 classes");
  if ((rule == LabelRule::kSumThreshold || rule == LabelRule::kMatch) && classes != 2) {
    throw ConfigError("task '" + task + "': rule " + to_string(rule) + " is binary");
  }
  if (rule == LabelRule::kMatch) {
    if (rule_inputs.size() != 2) throw ConfigError("task '" + task + "': match compares exactly 2 modalities");
    if (modalities[rule_inputs[0]].codes != modalities[rule_inputs[1]].codes || modalities[rule_inputs[0]].codes < 2) {
      throw ConfigError("task '" + task + "': matched modalities need the same code count (>= 2)");
    }
  }
  if (rule == LabelRule::kSumValue && code_range(*this) == 0) {
    throw ConfigError("task '" + task + "': regression target has zero range");
  }
  if (!(noise >= 0.0)) throw ConfigError("task '" + task + "': noise must be >= 0");
  if (train == 0 || valid == 0 || test == 0) throw ConfigError("task '" + task + "': every split needs samples");
}

void RetrievalTaskConfig::validate() const {
  if (task.empty()) throw ConfigError("synthetic task needs a name");
  validate_modality(first);
  validate_modality(second);
  if (classes < 2) throw ConfigError("task '" + task + "': retrieval needs >= 2 shared classes");
  if (first.codes < classes || second.codes < classes) {
    throw ConfigError("task '" + task + "': modalities must provide a code per shared class");
  }
  if (items_per_class < 5) {
    throw ConfigError("task '" + task + "': items_per_class must be >= 5 so every split holds every class");
  }
  if (!(noise >= 0.0)) throw ConfigError("task '" + task + "': noise must be >= 0");
}

Tensor prototypes(std::uint64_t world_seed, const SynthModality& modality) {
  validate_modality(modality);
  Rng rng(mix_seed({world_seed, hash_string(modality.name)}));
  Shape shape = batch_shape(modality.codes, modality.sample_shape);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal();
  return Tensor::from(std::move(shape), std::move(values));
}

int rule_label(const FusionTaskConfig& cfg, std::span<const int> codes) {
  int sum = 0;
  for (auto i : cfg.rule_inputs) sum += codes[i];
  switch (cfg.rule) {
    case LabelRule::kXor: return sum % static_cast<int>(cfg.classes);
    case LabelRule::kSumThreshold: return 2 * static_cast<std::size_t>(sum) > code_range(cfg) ? 1 : 0;
    case LabelRule::kMatch: return codes[cfg.rule_inputs[0]] == codes[cfg.rule_inputs[1]] ? 1 : 0;
    case LabelRule::kSumValue: break;
  }
  throw ConfigError("rule " + to_string(cfg.rule) + " has no class label");
}

double rule_value(const FusionTaskConfig& cfg, std::span<const int> codes) {
  int sum = 0;
  for (auto i : cfg.rule_inputs) sum += codes[i];
  return static_cast<double>(sum) / static_cast<double>(code_range(cfg));
}

double best_unimodal_accuracy(const FusionTaskConfig& cfg, std::size_t m) {
  cfg.validate();
  if (cfg.rule == LabelRule::kSumValue) throw ConfigError("best_unimodal_accuracy needs a classification rule");
  if (m >= cfg.modalities.size()) throw ConfigError("modality index out of range");
  // joint[c_m][label] probability mass
  std::vector<std::vector<double>> joint(cfg.modalities[m].codes, std::vector<double>(cfg.classes, 0.0));
  std::vector<int> codes(cfg.modalities.size(), 0);
  const std::size_t a = cfg.rule_inputs[0];
  const std::size_t b = cfg.rule_inputs.size() > 1 ? cfg.rule_inputs[1] : a;
  std::function<void(std::size_t, double)> walk = [&](std::size_t i, double p) {
    if (i == codes.size()) {
      joint[codes[m]][rule_label(cfg, codes)] += p;
      return;
    }
    const auto k = cfg.modalities[i].codes;
    for (std::size_t c = 0; c < k; ++c) {
      codes[i] = static_cast<int>(c);
      double q = 1.0 / static_cast<double>(k);
      if (cfg.rule == LabelRule::kMatch && i == b && b != a) {
        q = codes[b] == codes[a] ? 0.5 : 0.5 / static_cast<double>(k - 1);
      }
      walk(i + 1, p * q);
    }
  };
  if (cfg.rule == LabelRule::kMatch && b < a) throw ConfigError("match rule inputs must be in increasing order");
  walk(0, 1.0);
  double acc = 0.0;
  for (const auto& row : joint) acc += *std::max_element(row.begin(), row.end());
  return acc;
}

TaskDataset gen_fusion_task(const FusionTaskConfig& cfg) {
  cfg.validate();
  TaskDataset data;
  data.task = cfg.task;
  std::vector<Tensor> protos;
  for (const auto& m : cfg.modalities) {
    data.modalities.push_back(m.name);
    protos.push_back(prototypes(cfg.world_seed, m));
  }
  Rng rng(mix_seed({cfg.seed, hash_string(cfg.task)}));
  std::uint64_t next_id = 0;
  const std::array<std::size_t, 3> sizes{cfg.train, cfg.valid, cfg.test};
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    Split& split = data.split(kSplits[s]);
    const std::size_t n = sizes[s];
    const std::size_t k = cfg.modalities.size();
    std::vector<std::vector<double>> raw(k);
    split.codes.assign(k, {});
    std::vector<double> targets;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<int> codes(k);
      for (std::size_t m = 0; m < k; ++m) codes[m] = static_cast<int>(rng.index(cfg.modalities[m].codes));
      if (cfg.rule == LabelRule::kMatch) {
        const auto a = cfg.rule_inputs[0];
        const auto b = cfg.rule_inputs[1];
        const auto kc = cfg.modalities[b].codes;
        if (rng.uniform() < 0.5) {
          codes[b] = codes[a];
        } else {
          codes[b] = static_cast<int>((static_cast<std::size_t>(codes[a]) + 1 + rng.index(kc - 1)) % kc);
        }
      }
      for (std::size_t m = 0; m < k; ++m) {
        emit(protos[m], codes[m], cfg.noise, rng, raw[m]);
        split.codes[m].push_back(codes[m]);
      }
      if (cfg.rule == LabelRule::kSumValue) {
        targets.push_back(rule_value(cfg, codes));
      } else {
        split.labels.push_back(rule_label(cfg, codes));
      }
      split.ids.push_back(next_id++);
    }
    for (std::size_t m = 0; m < k; ++m) {
      split.inputs.push_back(Tensor::from(batch_shape(n, cfg.modalities[m].sample_shape), std::move(raw[m])));
    }
    if (cfg.rule == LabelRule::kSumValue) split.targets = Tensor::from({n, 1}, std::move(targets));
    split.item_ids.assign(k, split.ids);
  }
  return data;
}

TaskDataset gen_retrieval_task(const RetrievalTaskConfig& cfg) {
  cfg.validate();
  TaskDataset data;
  data.task = cfg.task;
  data.modalities = {cfg.first.name, cfg.second.name};
  const std::array<const SynthModality*, 2> mods{&cfg.first, &cfg.second};
  Rng rng(mix_seed({cfg.seed, hash_string(cfg.task)}));

  // items[m][class] -> raw rows and ids
  struct Item {
    std::vector<double> raw;
    std::uint64_t id;
  };
  std::array<std::vector<std::vector<Item>>, 2> items;
  std::uint64_t next_item = 0;
  for (std::size_t m = 0; m < 2; ++m) {
    const Tensor protos = prototypes(cfg.world_seed, *mods[m]);
    items[m].resize(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (std::size_t i = 0; i < cfg.items_per_class; ++i) {
        Item it{{}, next_item++};
        emit(protos, static_cast<int>(c), cfg.noise, rng, it.raw);
        items[m][c].push_back(std::move(it));
      }
    }
  }
  // Per class and modality: 3/1/1 split of a permutation.
  const std::size_t n = cfg.items_per_class;
  const std::size_t n_train = 3 * n / 5;
  const std::size_t n_valid = n / 5;
  const std::array<std::size_t, 4> bounds{0, n_train, n_train + n_valid, n};
  // split_items[s][m][c] -> item indices
  std::array<std::array<std::vector<std::vector<std::size_t>>, 2>, 3> split_items;
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t s = 0; s < 3; ++s) split_items[s][m].resize(cfg.classes);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const auto perm = permutation(n, rng);
      for (std::size_t s = 0; s < 3; ++s) {
        split_items[s][m][c].assign(perm.begin() + static_cast<std::ptrdiff_t>(bounds[s]),
                                    perm.begin() + static_cast<std::ptrdiff_t>(bounds[s + 1]));
      }
    }
  }
  std::uint64_t next_pair = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    Split& split = data.split(kSplits[s]);
    std::array<std::vector<double>, 2> raw;
    split.codes.assign(2, {});
    split.item_ids.assign(2, {});
    auto push = [&](std::size_t ca, std::size_t ia, std::size_t cb, std::size_t ib, int label) {
      const Item& a = items[0][ca][ia];
      const Item& b = items[1][cb][ib];
      raw[0].insert(raw[0].end(), a.raw.begin(), a.raw.end());
      raw[1].insert(raw[1].end(), b.raw.begin(), b.raw.end());
      split.codes[0].push_back(static_cast<int>(ca));
      split.codes[1].push_back(static_cast<int>(cb));
      split.item_ids[0].push_back(a.id);
      split.item_ids[1].push_back(b.id);
      split.labels.push_back(label);
      split.ids.push_back(next_pair++);
    };
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      for (auto ia : split_items[s][0][c]) {
        const auto& same = split_items[s][1][c];
        push(c, ia, c, same[rng.index(same.size())], 1);
        const std::size_t other = (c + 1 + rng.index(cfg.classes - 1)) % cfg.classes;
        const auto& diff = split_items[s][1][other];
        push(c, ia, other, diff[rng.index(diff.size())], 0);
      }
    }
    const std::size_t pairs = split.ids.size();
    split.inputs.push_back(Tensor::from(batch_shape(pairs, cfg.first.sample_shape), std::move(raw[0])));
    split.inputs.push_back(Tensor::from(batch_shape(pairs, cfg.second.sample_shape), std::move(raw[1])));
  }
  return data;
}

std::vector<int> flipped_labels(std::span<const int> labels, std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("label flipping needs >= 2 classes");
  Rng rng(mix_seed({seed, 0x666c6970}));
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    if (classes == 2) {
      out.push_back(1 - y);
    } else {
      out.push_back(static_cast<int>((static_cast<std::size_t>(y) + 1 + rng.index(classes - 1)) % classes));
    }
  }
  return out;
}

TaskDataset flip_labels(const TaskDataset& data, std::size_t classes, std::uint64_t seed) {
  if (data.train.labels.empty()) throw ConfigError("flip_labels: task '" + data.task + "' has no class labels");
  TaskDataset out = data;
  out.train.labels = flipped_labels(data.train.labels, classes, mix_seed({seed, hash_string(data.task)}));
  return out;
}

std::vector<std::size_t> subsample_indices(std::span<const int> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample fraction must be in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& [label, rows] : by_class) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(label))}));
    const auto perm = permutation(rows.size(), rng);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    if (take == 0) {
      throw ConfigError("subsample fraction " + std::to_string(fraction) + " leaves class " + std::to_string(label) +
                        " with no samples");
    }
    for (std::size_t i = 0; i < take; ++i) keep.push_back(rows[perm[i]]);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

TaskDataset subsample(const TaskDataset& data, double fraction, std::uint64_t seed) {
  if (data.train.labels.empty()) throw ConfigError("subsample: task '" + data.task + "' has no class labels");
  TaskDataset out = data;
  const auto rows = subsample_indices(data.train.labels, fraction, seed);
  out.train = data.train.subset(rows);
  return out;
}

DatasetManifest manifest_for(const FusionTaskConfig& cfg) {
  return {cfg.task, "fusion", to_string(cfg.rule), cfg.modalities, cfg.classes, cfg.noise, cfg.seed, cfg.world_seed};
}

DatasetManifest manifest_for(const RetrievalTaskConfig& cfg) {
  return {cfg.task, "retrieval", "match", {cfg.first, cfg.second}, cfg.classes, cfg.noise, cfg.seed, cfg.world_seed};
}

namespace {

Tensor as_tensor(const std::vector<int>& v) {
  return Tensor::from({v.size()}, std::vector<double>(v.begin(), v.end()));
}

Tensor as_tensor(const std::vector<std::uint64_t>& v) {
  std::vector<double> d;
  d.reserve(v.size());
  for (auto x : v) d.push_back(static_cast<double>(x));
  return Tensor::from({v.size()}, std::move(d));
}

std::vector<int> to_ints(const Tensor& t) {
  std::vector<int> out;
  for (double v : t.data()) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<std::uint64_t> to_ids(const Tensor& t) {
  std::vector<std::uint64_t> out;
  for (double v : t.data()) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const TaskDataset& data, const DatasetManifest& manifest) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["task"] = manifest.task;
  j["kind"] = manifest.kind;
  j["rule"] = manifest.rule;
  j["classes"] = manifest.classes;
  j["noise"] = manifest.noise;
  j["seed"] = manifest.seed;
  j["world_seed"] = manifest.world_seed;
  j["modalities"] = nlohmann::json::array();
  for (const auto& m : manifest.modalities) {
    j["modalities"].push_back({{"name", m.name}, {"shape", m.sample_shape}, {"codes", m.codes}});
  }
  j["has_targets"] = data.train.targets.defined();
  for (const char* s : kSplits) {
    const Split& split = data.split(s);
    j["sizes"][s] = split.size();
    const std::string p = std::string(s) + "_";
    for (std::size_t m = 0; m < split.inputs.size(); ++m) {
      io::write_array(dir / (p + "input" + std::to_string(m) + ".bin"), split.inputs[m]);
    }
    for (std::size_t m = 0; m < split.codes.size(); ++m) {
      io::write_array(dir / (p + "codes" + std::to_string(m) + ".bin"), as_tensor(split.codes[m]));
    }
    for (std::size_t m = 0; m < split.item_ids.size(); ++m) {
      io::write_array(dir / (p + "items" + std::to_string(m) + ".bin"), as_tensor(split.item_ids[m]));
    }
    if (split.targets.defined()) {
      io::write_array(dir / (p + "targets.bin"), split.targets);
    } else {
      io::write_array(dir / (p + "labels.bin"), as_tensor(split.labels));
    }
    io::write_array(dir / (p + "ids.bin"), as_tensor(split.ids));
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.task = j.at("task").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    m.rule = j.at("rule").get<std::string>();
    m.classes = j.at("classes").get<std::size_t>();
    m.noise = j.at("noise").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.world_seed = j.at("world_seed").get<std::uint64_t>();
    for (const auto& e : j.at("modalities")) {
      m.modalities.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("codes").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

TaskDataset load_dataset(const std::filesystem::path& dir) {
  const DatasetManifest manifest = load_manifest(dir);
  TaskDataset data;
  data.task = manifest.task;
  for (const auto& m : manifest.modalities) data.modalities.push_back(m.name);
  const std::size_t k = manifest.modalities.size();
  for (const char* s : kSplits) {
    Split& split = data.split(s);
    const std::string p = std::string(s) + "_";
    split.ids = to_ids(io::read_array(dir / (p + "ids.bin")));
    for (std::size_t m = 0; m < k; ++m) {
      split.inputs.push_back(io::read_array(dir / (p + "input" + std::to_string(m) + ".bin")));
      split.codes.push_back(to_ints(io::read_array(dir / (p + "codes" + std::to_string(m) + ".bin"))));
      split.item_ids.push_back(to_ids(io::read_array(dir / (p + "items" + std::to_string(m) + ".bin"))));
      if (split.inputs.back().shape()[0] != split.size()) {
        throw FormatError(dir.string() + ": " + s + " input " + std::to_string(m) + " row count disagrees with ids");
      }
    }
    if (std::filesystem::exists(dir / (p + "targets.bin"))) {
      split.targets = io::read_array(dir / (p + "targets.bin"));
    } else {
      split.labels = to_ints(io::read_array(dir / (p + "labels.bin")));
    }
  }
  return data;
}

}  // namespace hmmt
