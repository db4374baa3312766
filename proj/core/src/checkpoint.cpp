#include "hmmt/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <new>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hmmt/binary_io.hpp"
#include "hmmt/errors.hpp"
#include "json_io.hpp"

namespace hmmt {

namespace {

constexpr char kMagic[4] = {'H', 'M', 'M', 'T'};
constexpr std::uint32_t kKindModel = 0;
constexpr std::uint32_t kKindTrainState = 1;
constexpr std::size_t kMaxHeader = 1 << 24;
constexpr std::uint64_t kMaxExtent = 1 << 20;

struct Contents {
  std::uint32_t kind = 0;
  ModalityRegistry registry;
  detail::json header;
  std::vector<std::pair<std::string, Tensor>> records;
};

void write_registry(io::Writer& w, const ModalityRegistry& r) {
  w.u64(r.size());
  for (const auto& s : r.specs()) {
    w.str(s.name);
    w.u64(s.channels);
    w.u64(s.extra_axes);
    w.u64(s.freq_bands);
    w.f64(s.max_freq);
    w.u64(s.patch_size.value_or(0));
  }
  w.u64(r.aliases().size());
  for (const auto& [alias, index] : r.aliases()) {
    w.str(alias);
    w.u64(index);
  }
}

ModalityRegistry read_registry(io::Reader& r) {
  ModalityRegistry reg;
  const std::uint64_t n = r.u64();
  if (n == 0 || n > 4096) throw FormatError("implausible modality count " + std::to_string(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    ModalitySpec s;
    s.name = r.str(4096);
    s.channels = r.u64();
    s.extra_axes = r.u64();
    s.freq_bands = r.u64();
    s.max_freq = r.f64();
    if (const auto p = r.u64(); p != 0) s.patch_size = p;
    if (s.channels > kMaxExtent || s.extra_axes > 64 || s.freq_bands > 4096 || s.patch_size.value_or(0) > kMaxExtent ||
        !std::isfinite(s.max_freq)) {
      throw FormatError("implausible settings for modality '" + s.name + "'");
    }
    reg.add(std::move(s));
  }
  const std::uint64_t aliases = r.u64();
  if (aliases > 4096) throw FormatError("implausible alias count " + std::to_string(aliases));
  for (std::uint64_t i = 0; i < aliases; ++i) {
    std::string alias = r.str(4096);
    const std::uint64_t index = r.u64();
    if (index >= reg.size()) throw FormatError("alias '" + alias + "' points past the registry");
    reg.add_alias(alias, reg.spec(index).name);
  }
  return reg;
}

detail::json model_header(const Model& model) {
  detail::json tasks = detail::json::array();
  for (const auto& t : model.tasks()) tasks.push_back(detail::to_json(t));
  return {{"model", detail::to_json(model.config())}, {"sharing", detail::to_json(model.sharing())}, {"tasks", tasks}};
}

void write_file(const std::filesystem::path& path, std::uint32_t kind, const ModalityRegistry& registry,
                const detail::json& header, const std::vector<std::pair<std::string, const Tensor*>>& records) {
  // Write to a sibling file and rename so readers never see a partial file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    io::Writer w(out);
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(kind);
    write_registry(w, registry);
    w.str(header.dump());
    w.u64(records.size());
    for (const auto& [name, t] : records) {
      w.str(name);
      w.tensor_body(*t);
    }
    out.flush();
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Contents read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  io::Reader r(in, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a model checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Contents c;
  c.kind = r.u32();
  if (c.kind != kKindModel && c.kind != kKindTrainState) throw FormatError(path.string() + ": unknown record kind");
  try {
    c.registry = read_registry(r);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(path.string() + ": corrupt registry: " + e.what());
  }
  const std::string header = r.str(kMaxHeader);
  try {
    c.header = detail::json::parse(header);
  } catch (const detail::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  const std::uint64_t count = r.u64();
  if (count > (1u << 24)) throw FormatError(path.string() + ": implausible record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(4096);
    Tensor t = r.tensor_body();
    c.records.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last record");
  return c;
}

Model build_model(const Contents& c, const std::filesystem::path& path) {
  try {
    const auto& h = c.header;
    ModelConfig cfg = detail::model_config_from_json(h.at("model"), "checkpoint.model");
    SharingConfig sharing = detail::sharing_from_json(h.at("sharing"), "checkpoint.sharing");
    std::vector<TaskSpec> tasks;
    for (const auto& t : h.at("tasks")) tasks.push_back(detail::task_from_json(t, "checkpoint.tasks"));
    return Model(c.registry, cfg, sharing, std::move(tasks));
  } catch (const detail::json::exception& e) {
    throw FormatError(path.string() + ": incomplete header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid header: " + e.what());
  } catch (const std::length_error&) {
    throw FormatError(path.string() + ": header describes an impossibly large model");
  } catch (const std::bad_alloc&) {
    throw FormatError(path.string() + ": header describes an impossibly large model");
  }
}

// Copies the weight records onto the model; every parameter must be present
// with a matching shape. Staged so a failure leaves the model untouched.
void assign_weights(const std::map<std::string, const Tensor*>& records, Model& model,
                    const std::filesystem::path& path) {
  auto& entries = model.params().entries();
  std::vector<const Tensor*> staged;
  for (const auto& e : entries) {
    auto it = records.find(e.name);
    if (it == records.end()) throw FormatError(path.string() + ": missing parameter '" + e.name + "'");
    if (it->second->shape() != e.tensor.shape()) {
      throw FormatError(path.string() + ": parameter '" + e.name + "' has shape " +
                        shape_to_string(it->second->shape()) + ", model expects " + shape_to_string(e.tensor.shape()));
    }
    staged.push_back(it->second);
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto src = staged[i]->data();
    auto dst = entries[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::map<std::string, const Tensor*> index_records(const Contents& c, std::string_view prefix) {
  std::map<std::string, const Tensor*> out;
  for (const auto& [name, t] : c.records) {
    if (name.starts_with(prefix)) out.emplace(name.substr(prefix.size()), &t);
  }
  return out;
}

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model) {
  std::vector<std::pair<std::string, const Tensor*>> records;
  for (const auto& e : model.params().entries()) records.emplace_back("param/" + e.name, &e.tensor);
  write_file(path, kKindModel, model.registry(), model_header(model), records);
}

Model load_model(const std::filesystem::path& path) {
  const Contents c = read_file(path);
  Model m = build_model(c, path);
  const auto params = index_records(c, "param/");
  if (params.size() != m.params().size()) throw FormatError(path.string() + ": parameter count mismatch");
  assign_weights(params, m, path);
  return m;
}

void load_weights(const std::filesystem::path& path, Model& model) {
  const Contents c = read_file(path);
  if (!(c.registry == model.registry())) throw FormatError(path.string() + ": modality registry differs from model");
  assign_weights(index_records(c, "param/"), model, path);
}

void save_train_state(const std::filesystem::path& path, const Model& model, const Adam& adam,
                      const TrainProgress& progress) {
  const auto& entries = model.params().entries();
  if (!progress.best_values.empty()) {
    if (progress.best_values.size() != entries.size()) {
      throw ContractError("best snapshot holds " + std::to_string(progress.best_values.size()) + " tensors, model has " +
                          std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (progress.best_values[i].size() != entries[i].tensor.numel()) {
        throw ContractError("best snapshot of '" + entries[i].name + "' has the wrong size");
      }
    }
  }
  std::vector<Tensor> owned;
  owned.reserve(3 * adam.moments().size() + progress.best_values.size());
  std::vector<std::pair<std::string, const Tensor*>> records;
  for (const auto& e : model.params().entries()) records.emplace_back("param/" + e.name, &e.tensor);
  detail::json steps = detail::json::object();
  for (const auto& [name, mom] : adam.moments()) {
    const Shape s{mom.m.size()};
    owned.push_back(Tensor::from(s, mom.m));
    records.emplace_back("adam.m/" + name, &owned.back());
    owned.push_back(Tensor::from(s, mom.v));
    records.emplace_back("adam.v/" + name, &owned.back());
    steps[name] = mom.steps;
  }
  for (std::size_t i = 0; i < progress.best_values.size(); ++i) {
    owned.push_back(Tensor::from(entries.at(i).tensor.shape(), progress.best_values[i]));
    records.emplace_back("best/" + entries[i].name, &owned.back());
  }
  detail::json header = model_header(model);
  const auto& a = adam.config();
  header["adam"] = {{"lr", a.lr},
                    {"beta1", a.beta1},
                    {"beta2", a.beta2},
                    {"eps", a.eps},
                    {"weight_decay", a.weight_decay},
                    {"steps", steps}};
  header["progress"] = {{"epochs_done", progress.epochs_done},
                        {"best_score_bits", std::bit_cast<std::uint64_t>(progress.best_score)},
                        {"best_epoch", progress.best_epoch},
                        {"has_best", !progress.best_values.empty()}};
  write_file(path, kKindTrainState, model.registry(), header, records);
}

void load_train_state(const std::filesystem::path& path, Model& model, Adam& adam, TrainProgress& progress) {
  const Contents c = read_file(path);
  if (c.kind != kKindTrainState) throw FormatError(path.string() + " holds model weights, not a training state");
  if (!(c.registry == model.registry())) throw FormatError(path.string() + ": modality registry differs from model");
  TrainProgress p;
  std::map<std::string, Adam::Moments> moments;
  std::vector<std::vector<double>> best;
  try {
    const auto& pr = c.header.at("progress");
    p.epochs_done = pr.at("epochs_done").get<std::size_t>();
    p.best_score = std::bit_cast<double>(pr.at("best_score_bits").get<std::uint64_t>());
    p.best_epoch = pr.at("best_epoch").get<std::size_t>();
    const bool has_best = pr.at("has_best").get<bool>();
    const auto m_rec = index_records(c, "adam.m/");
    const auto v_rec = index_records(c, "adam.v/");
    for (const auto& [name, steps] : c.header.at("adam").at("steps").items()) {
      auto m = m_rec.find(name);
      auto v = v_rec.find(name);
      if (m == m_rec.end() || v == v_rec.end()) throw FormatError(path.string() + ": missing moments for " + name);
      const auto& param = model.params().get(name);
      if (m->second->numel() != param.numel() || v->second->numel() != param.numel()) {
        throw FormatError(path.string() + ": moment size mismatch for '" + name + "'");
      }
      moments[name] = {m->second->to_vector(), v->second->to_vector(), steps.get<std::uint64_t>()};
    }
    if (has_best) {
      const auto best_rec = index_records(c, "best/");
      for (const auto& e : model.params().entries()) {
        auto it = best_rec.find(e.name);
        if (it == best_rec.end() || it->second->shape() != e.tensor.shape()) {
          throw FormatError(path.string() + ": best snapshot lacks '" + e.name + "'");
        }
        best.push_back(it->second->to_vector());
      }
    }
  } catch (const detail::json::exception& e) {
    throw FormatError(path.string() + ": incomplete training header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  assign_weights(index_records(c, "param/"), model, path);
  p.best_values = std::move(best);
  adam.moments() = std::move(moments);
  progress = std::move(p);
}

}  // namespace hmmt
