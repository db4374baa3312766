#include "json_io.hpp"

#include <algorithm>

#include "hmmt/errors.hpp"

namespace hmmt::detail {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) {
      std::string valid;
      for (const char* a : allowed) valid += (valid.empty() ? "" : ", ") + std::string(a);
      throw ConfigError(where + ": unknown field '" + key + "' (valid: " + valid + ")");
    }
  }
}

json to_json(const ModalitySpec& s) {
  json j{{"name", s.name},
         {"channels", s.channels},
         {"extra_axes", s.extra_axes},
         {"freq_bands", s.freq_bands},
         {"max_freq", s.max_freq}};
  if (s.patch_size) j["patch_size"] = *s.patch_size;
  return j;
}

ModalitySpec modality_from_json(const json& j, const std::string& where) {
  check_keys(j, {"name", "channels", "extra_axes", "freq_bands", "max_freq", "patch_size"}, where);
  ModalitySpec s;
  s.name = get_required<std::string>(j, "name", where);
  s.channels = get_required<std::size_t>(j, "channels", where);
  s.extra_axes = get_or<std::size_t>(j, "extra_axes", 1, where);
  s.freq_bands = get_required<std::size_t>(j, "freq_bands", where);
  s.max_freq = get_required<double>(j, "max_freq", where);
  if (j.contains("patch_size")) s.patch_size = get_required<std::size_t>(j, "patch_size", where);
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return s;
}

json to_json(const ModalityRegistry& r) {
  json mods = json::array();
  for (const auto& s : r.specs()) mods.push_back(to_json(s));
  json aliases = json::object();
  for (const auto& [alias, index] : r.aliases()) aliases[alias] = r.spec(index).name;
  return {{"modalities", mods}, {"aliases", aliases}};
}

ModalityRegistry registry_from_json(const json& j, const std::string& where) {
  check_keys(j, {"modalities", "aliases"}, where);
  if (!j.contains("modalities") || !j["modalities"].is_array() || j["modalities"].empty()) {
    throw ConfigError(where + ".modalities must be a non-empty array");
  }
  ModalityRegistry r;
  for (std::size_t i = 0; i < j["modalities"].size(); ++i) {
    r.add(modality_from_json(j["modalities"][i], where + ".modalities[" + std::to_string(i) + "]"));
  }
  if (j.contains("aliases")) {
    if (!j["aliases"].is_object()) throw ConfigError(where + ".aliases must map alias -> modality");
    for (const auto& [alias, target] : j["aliases"].items()) {
      if (!target.is_string()) throw ConfigError(where + ".aliases." + alias + " must be a modality name");
      try {
        r.add_alias(alias, target.get<std::string>());
      } catch (const Error& e) {
        throw ConfigError(where + ".aliases." + alias + ": " + e.what());
      }
    }
  }
  return r;
}

json to_json(const BlockConfig& b) {
  return {{"depth", b.depth},
          {"cross_heads", b.cross_heads},
          {"cross_head_dim", b.cross_head_dim},
          {"latent_heads", b.latent_heads},
          {"latent_head_dim", b.latent_head_dim},
          {"latent_blocks", b.latent_blocks}};
}

BlockConfig block_from_json(const json& j, BlockConfig b, const std::string& where) {
  check_keys(j, {"depth", "cross_heads", "cross_head_dim", "latent_heads", "latent_head_dim", "latent_blocks"}, where);
  b.depth = get_or(j, "depth", b.depth, where);
  b.cross_heads = get_or(j, "cross_heads", b.cross_heads, where);
  b.cross_head_dim = get_or(j, "cross_head_dim", b.cross_head_dim, where);
  b.latent_heads = get_or(j, "latent_heads", b.latent_heads, where);
  b.latent_head_dim = get_or(j, "latent_head_dim", b.latent_head_dim, where);
  b.latent_blocks = get_or(j, "latent_blocks", b.latent_blocks, where);
  return b;
}

json to_json(const ModelConfig& c) {
  return {{"num_latents", c.num_latents},
          {"latent_dim", c.latent_dim},
          {"encoder", to_json(c.encoder)},
          {"fusion", to_json(c.fusion)},
          {"ff_mult", c.ff_mult},
          {"nonlinearity", to_string(c.nonlinearity)},
          {"latent_init_std", c.latent_init_std},
          {"bn_momentum", c.bn_momentum},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"num_latents", "latent_dim", "encoder", "fusion", "ff_mult", "nonlinearity", "latent_init_std",
              "bn_momentum", "seed", "variant"},
             where);
  ModelConfig c;
  c.num_latents = get_or(j, "num_latents", c.num_latents, where);
  c.latent_dim = get_or(j, "latent_dim", c.latent_dim, where);
  if (j.contains("encoder")) c.encoder = block_from_json(j["encoder"], c.encoder, where + ".encoder");
  if (j.contains("fusion")) c.fusion = block_from_json(j["fusion"], c.fusion, where + ".fusion");
  c.ff_mult = get_or(j, "ff_mult", c.ff_mult, where);
  if (j.contains("nonlinearity")) {
    try {
      c.nonlinearity = parse_nonlinearity(get_required<std::string>(j, "nonlinearity", where));
    } catch (const Error& e) {
      throw ConfigError(where + ".nonlinearity: " + e.what());
    }
  }
  c.latent_init_std = get_or(j, "latent_init_std", c.latent_init_std, where);
  c.bn_momentum = get_or(j, "bn_momentum", c.bn_momentum, where);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, where);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

json to_json(const SharingConfig& s) {
  return {{"use_modality_embeddings", s.use_modality_embeddings},
          {"use_unimodal_encoder", s.use_unimodal_encoder},
          {"use_multimodal_layer", s.use_multimodal_layer},
          {"share_unimodal_across_tasks", s.share_unimodal_across_tasks},
          {"share_multimodal_across_tasks", s.share_multimodal_across_tasks}};
}

SharingConfig sharing_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"use_modality_embeddings", "use_unimodal_encoder", "use_multimodal_layer", "share_unimodal_across_tasks",
              "share_multimodal_across_tasks"},
             where);
  SharingConfig s;
  s.use_modality_embeddings = get_or(j, "use_modality_embeddings", s.use_modality_embeddings, where);
  s.use_unimodal_encoder = get_or(j, "use_unimodal_encoder", s.use_unimodal_encoder, where);
  s.use_multimodal_layer = get_or(j, "use_multimodal_layer", s.use_multimodal_layer, where);
  s.share_unimodal_across_tasks = get_or(j, "share_unimodal_across_tasks", s.share_unimodal_across_tasks, where);
  s.share_multimodal_across_tasks = get_or(j, "share_multimodal_across_tasks", s.share_multimodal_across_tasks, where);
  return s;
}

json to_json(const TaskSpec& t) {
  return {{"name", t.name},
          {"modalities", t.modalities},
          {"loss", to_string(t.loss)},
          {"output_dim", t.output_dim},
          {"loss_weight", t.loss_weight},
          {"eval_weight", t.eval_weight},
          {"batch_size", t.batch_size}};
}

TaskSpec task_from_json(const json& j, const std::string& where) {
  check_keys(j, {"name", "modalities", "loss", "output_dim", "loss_weight", "eval_weight", "batch_size", "shared_time"},
             where);
  TaskSpec t;
  t.name = get_required<std::string>(j, "name", where);
  t.modalities = get_required<std::vector<std::string>>(j, "modalities", where);
  try {
    t.loss = parse_loss_kind(get_or<std::string>(j, "loss", "cross_entropy", where));
  } catch (const Error& e) {
    throw ConfigError(where + ".loss: " + e.what());
  }
  t.output_dim = get_required<std::size_t>(j, "output_dim", where);
  t.loss_weight = get_or(j, "loss_weight", t.loss_weight, where);
  t.eval_weight = get_or(j, "eval_weight", t.eval_weight, where);
  t.batch_size = get_or(j, "batch_size", t.batch_size, where);
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

}  // namespace hmmt::detail
