#include "hmmt/model.hpp"

#include <algorithm>
#include <cmath>

#include "hmmt/errors.hpp"

namespace hmmt {

namespace {

void validate_block(const BlockConfig& b, const char* which) {
  if (b.depth == 0 || b.cross_heads == 0 || b.cross_head_dim == 0 || b.latent_heads == 0 ||
      b.latent_head_dim == 0 || b.latent_blocks == 0) {
    throw ConfigError(std::string(which) + " block sizes must all be positive");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (num_latents == 0 || latent_dim == 0) throw ConfigError("num_latents and latent_dim must be positive");
  validate_block(encoder, "encoder");
  validate_block(fusion, "fusion");
  if (!(ff_mult > 0.0)) throw ConfigError("ff_mult must be positive");
  if (!(latent_init_std > 0.0)) throw ConfigError("latent_init_std must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must be in (0, 1]");
}

const std::vector<std::string>& SharingConfig::variant_names() {
  static const std::vector<std::string> names{"full",     "no_embeddings",     "no_unimodal",        "no_multimodal",
                                              "separate", "separate_unimodal", "separate_multimodal"};
  return names;
}

SharingConfig SharingConfig::variant(std::string_view name) {
  SharingConfig s;
  if (name == "full") return s;
  if (name == "no_embeddings") {
    s.use_modality_embeddings = false;
  } else if (name == "no_unimodal") {
    s.use_unimodal_encoder = false;
  } else if (name == "no_multimodal") {
    s.use_multimodal_layer = false;
  } else if (name == "separate") {
    s.share_unimodal_across_tasks = false;
    s.share_multimodal_across_tasks = false;
  } else if (name == "separate_unimodal") {
    s.share_unimodal_across_tasks = false;
  } else if (name == "separate_multimodal") {
    s.share_multimodal_across_tasks = false;
  } else {
    std::string valid;
    for (const auto& n : variant_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + std::string(name) + "' (valid: " + valid + ")");
  }
  return s;
}

std::string SharingConfig::name() const {
  for (const auto& n : variant_names()) {
    if (variant(n) == *this) return n;
  }
  return "custom";
}

std::string to_string(Component c) {
  switch (c) {
    case Component::kUnimodal: return "unimodal";
    case Component::kCrossmodal: return "crossmodal";
    case Component::kEmbedding: return "embedding";
    case Component::kHead: return "head";
  }
  return "unknown";
}

Model::Model(ModalityRegistry registry, ModelConfig config, SharingConfig sharing, std::vector<TaskSpec> tasks)
    : registry_(std::move(registry)), config_(config), sharing_(sharing), tasks_(std::move(tasks)) {
  config_.validate();
  if (registry_.size() == 0) throw ConfigError("model needs at least one registered modality");
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    tasks_[i].validate();
    for (const auto& m : tasks_[i].modalities) registry_.index_of(m);
    for (std::size_t j = 0; j < i; ++j) {
      if (tasks_[j].name == tasks_[i].name) throw ConfigError("duplicate task '" + tasks_[i].name + "'");
    }
  }
  build();
}

std::vector<Model::CrossLayer> Model::build_layers(const std::string& prefix, const BlockConfig& block,
                                                   std::size_t context_dim, bool cross_every_layer,
                                                   Rng& rng) {
  const std::size_t d = config_.latent_dim;
  const auto hidden = static_cast<std::size_t>(std::max(1.0, std::round(config_.ff_mult * static_cast<double>(d))));
  std::vector<CrossLayer> layers(block.depth);
  for (std::size_t l = 0; l < block.depth; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    auto& layer = layers[l];
    layer.has_cross = cross_every_layer || l == 0;
    if (layer.has_cross) {
      layer.query_norm = make_layer_norm(params_, lp + ".cross_query_norm", d);
      layer.context_norm = make_layer_norm(params_, lp + ".cross_context_norm", context_dim);
      layer.cross = make_attention(params_, lp + ".cross", d, context_dim, block.cross_heads, block.cross_head_dim, rng);
    }
    for (std::size_t b = 0; b < block.latent_blocks; ++b) {
      const std::string bp = lp + ".block" + std::to_string(b);
      LatentBlock lb;
      lb.attn_norm = make_layer_norm(params_, bp + ".attn_norm", d);
      lb.self_attention = make_attention(params_, bp + ".self", d, d, block.latent_heads, block.latent_head_dim, rng);
      lb.ff_norm = make_layer_norm(params_, bp + ".ff_norm", d);
      lb.ff = make_feed_forward(params_, bp + ".ff", d, hidden, rng);
      layer.blocks.push_back(std::move(lb));
    }
  }
  return layers;
}

void Model::build() {
  Rng rng(config_.seed);
  const std::size_t d_all = registry_.total_width();
  const std::size_t d = config_.latent_dim;

  std::vector<std::string> encoder_keys;
  if (sharing_.use_unimodal_encoder) {
    if (sharing_.share_unimodal_across_tasks) {
      encoder_keys.push_back("unimodal");
    } else {
      for (const auto& t : tasks_) encoder_keys.push_back("unimodal@" + t.name);
    }
  }
  for (const auto& key : encoder_keys) {
    EncoderParams enc;
    enc.latents = params_.add(key + ".latents", init_normal({config_.num_latents, d}, config_.latent_init_std, rng));
    enc.layers = build_layers(key, config_.encoder, d_all, true, rng);
    encoders_.emplace(key, std::move(enc));
  }

  std::vector<std::string> cross_keys;
  if (sharing_.use_multimodal_layer) {
    if (sharing_.share_multimodal_across_tasks) {
      cross_keys.push_back("crossmodal");
    } else {
      for (const auto& t : tasks_) cross_keys.push_back("crossmodal@" + t.name);
    }
  }
  for (const auto& key : cross_keys) {
    CrossmodalParams cm;
    if (!sharing_.use_unimodal_encoder) {
      cm.input_proj_w = params_.add(key + ".input_proj.w", init_projection(d_all, d, rng));
      cm.input_proj_b = params_.add(key + ".input_proj.b", Tensor::zeros({d}));
    }
    cm.layers = build_layers(key, config_.fusion, d, false, rng);
    crossmodals_.emplace(key, std::move(cm));
  }

  for (const auto& t : tasks_) {
    const std::string hp = "head." + t.name;
    const std::size_t in = head_input_width(t.name);
    Head h;
    h.bn_gain = params_.add(hp + ".bn_gain", Tensor::full({in}, 1.0));
    h.bn_bias = params_.add(hp + ".bn_bias", Tensor::zeros({in}));
    h.running_mean = params_.add(hp + ".bn_running_mean", Tensor::zeros({in}), false);
    h.running_var = params_.add(hp + ".bn_running_var", Tensor::full({in}, 1.0), false);
    h.weight = params_.add(hp + ".linear_w", init_projection(in, t.output_dim, rng));
    h.bias = params_.add(hp + ".linear_b", Tensor::zeros({t.output_dim}));
    heads_.emplace(t.name, std::move(h));
  }
}

Model Model::clone() const {
  Model m(registry_, config_, sharing_, tasks_);
  m.copy_state_from(*this);
  m.training_ = training_;
  return m;
}

void Model::copy_state_from(const Model& other) {
  const auto& src = other.params_.entries();
  auto& dst = params_.entries();
  if (src.size() != dst.size()) throw ConfigError("copy_state_from: parameter layouts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw ConfigError("copy_state_from: parameter '" + dst[i].name + "' does not match '" + src[i].name + "'");
    }
    auto from = src[i].tensor.data();
    auto to = dst[i].tensor.mutable_data();
    std::copy(from.begin(), from.end(), to.begin());
  }
}

const TaskSpec& Model::task(std::string_view name) const {
  for (const auto& t : tasks_) {
    if (t.name == name) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::vector<std::size_t> Model::task_modalities(std::string_view name) const {
  std::vector<std::size_t> idx;
  for (const auto& m : task(name).modalities) idx.push_back(registry_.index_of(m));
  return idx;
}

std::size_t Model::head_input_width(std::string_view name) const {
  const std::size_t k = task(name).modalities.size();
  if (sharing_.use_multimodal_layer && k >= 2) return k * (k - 1) * config_.latent_dim;
  return k * config_.latent_dim;
}

Component Model::component_of(std::string_view name) const {
  if (name.starts_with("unimodal")) return Component::kUnimodal;
  if (name.starts_with("crossmodal")) return Component::kCrossmodal;
  if (name.starts_with("head.")) return Component::kHead;
  if (name.starts_with("embedding")) return Component::kEmbedding;
  throw ConfigError("parameter '" + std::string(name) + "' belongs to no component");
}

std::string Model::encoder_key(std::string_view task) const {
  if (!sharing_.use_unimodal_encoder) throw ConfigError("this variant has no unimodal encoder");
  if (sharing_.share_unimodal_across_tasks) return "unimodal";
  if (task.empty()) throw ConfigError("separate unimodal encoders need a task name");
  this->task(task);
  return "unimodal@" + std::string(task);
}

std::string Model::crossmodal_key(std::string_view task) const {
  if (!sharing_.use_multimodal_layer) throw ConfigError("this variant has no multimodal layer");
  if (sharing_.share_multimodal_across_tasks) return "crossmodal";
  if (task.empty()) throw ConfigError("separate multimodal layers need a task name");
  this->task(task);
  return "crossmodal@" + std::string(task);
}

Tensor Model::run_latent_blocks(Tensor state, const std::vector<LatentBlock>& blocks) const {
  for (const auto& b : blocks) {
    const Tensor normed = apply(b.attn_norm, state);
    state = add(state, attention(normed, normed, b.self_attention));
    state = add(state, feed_forward(b.ff, apply(b.ff_norm, state), config_.nonlinearity));
  }
  return state;
}

Tensor Model::encode_unimodal(const StandardizedBatch& batch, std::string_view task, Tensor* cross_attention) const {
  const std::size_t d_all = registry_.total_width();
  if (batch.data.rank() != 3 || batch.data.shape()[2] != d_all) {
    throw ConfigError("batch of shape " + shape_to_string(batch.data.shape()) +
                      " is incompatible with this model's registry (d_all = " + std::to_string(d_all) + ")");
  }
  const auto& enc = encoders_.find(encoder_key(task))->second;
  Tensor state = expand_leading(enc.latents, batch.batch_size());
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    const Tensor context = apply(layer.context_norm, batch.data);
    state = add(state, attention(apply(layer.query_norm, state), context, layer.cross,
                                 l == 0 ? cross_attention : nullptr));
    state = run_latent_blocks(std::move(state), layer.blocks);
  }
  return state;
}

Tensor Model::last_row(const Tensor& seq) {
  const std::size_t len = seq.shape()[1];
  return reshape(slice(seq, 1, len - 1, len), {seq.shape()[0], seq.shape()[2]});
}

Tensor Model::crossmodal_direct(const Tensor& z_query, const Tensor& z_context, std::string_view task) const {
  const std::size_t d = config_.latent_dim;
  if (z_query.rank() != 3 || z_context.rank() != 3 || z_query.shape()[2] != d || z_context.shape()[2] != d ||
      z_query.shape()[0] != z_context.shape()[0]) {
    throw DimensionError("crossmodal_direct: query " + shape_to_string(z_query.shape()) + " and context " +
                         shape_to_string(z_context.shape()) + " must be [n, L, " + std::to_string(d) + "]");
  }
  const auto& cm = crossmodals_.find(crossmodal_key(task))->second;
  Tensor state = z_query;
  for (const auto& layer : cm.layers) {
    if (layer.has_cross) {
      state = add(state, attention(apply(layer.query_norm, state), apply(layer.context_norm, z_context), layer.cross));
    }
    state = run_latent_blocks(std::move(state), layer.blocks);
  }
  return last_row(state);
}

Tensor Model::fuse(const std::vector<Tensor>& latents, std::string_view task) const {
  if (latents.size() < 2) {
    throw ConfigError("fuse needs at least 2 modalities, got " + std::to_string(latents.size()));
  }
  std::vector<Tensor> parts;
  parts.reserve(latents.size() * (latents.size() - 1));
  for (std::size_t i = 0; i < latents.size(); ++i) {
    for (std::size_t j = 0; j < latents.size(); ++j) {
      if (i != j) parts.push_back(crossmodal_direct(latents[i], latents[j], task));
    }
  }
  return concat(parts, 1);
}

Tensor Model::predict(std::string_view task, const Tensor& z_mm) {
  auto it = heads_.find(task);
  if (it == heads_.end()) throw ConfigError("unknown task '" + std::string(task) + "'");
  const std::size_t width = head_input_width(task);
  if (z_mm.rank() != 2 || z_mm.shape()[1] != width) {
    throw DimensionError("head '" + std::string(task) + "' expects [n, " + std::to_string(width) + "], got " +
                         shape_to_string(z_mm.shape()));
  }
  auto& h = it->second;
  BatchNormState bn{h.running_mean, h.running_var, config_.bn_momentum, 1e-5};
  return linear(batch_norm(z_mm, h.bn_gain, h.bn_bias, bn, training_), h.weight, h.bias);
}

Tensor Model::represent(const StandardizedBatch& batch, std::string_view task) const {
  if (sharing_.use_unimodal_encoder) return encode_unimodal(batch, task);
  const auto& cm = crossmodals_.find(crossmodal_key(task))->second;
  if (batch.data.shape()[2] != registry_.total_width()) {
    throw ConfigError("batch width does not match this model's registry");
  }
  return linear(batch.data, cm.input_proj_w, cm.input_proj_b);
}

Tensor Model::forward_task(std::string_view task, std::span<const StandardizedBatch> batches) {
  const auto mods = task_modalities(task);
  if (batches.size() != mods.size()) {
    throw ConfigError("task '" + std::string(task) + "' expects " + std::to_string(mods.size()) + " modalities, got " +
                      std::to_string(batches.size()));
  }
  std::vector<Tensor> reps;
  reps.reserve(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    if (batches[i].modality_index != mods[i]) {
      throw ConfigError("task '" + std::string(task) + "': input " + std::to_string(i) + " carries modality '" +
                        registry_.spec(batches[i].modality_index).name + "', expected '" +
                        registry_.spec(mods[i]).name + "'");
    }
    if (sharing_.use_modality_embeddings) {
      reps.push_back(represent(batches[i], task));
    } else {
      reps.push_back(represent(without_modality_identity(batches[i]), task));
    }
  }
  Tensor z;
  if (sharing_.use_multimodal_layer && reps.size() >= 2) {
    z = fuse(reps, task);
  } else {
    std::vector<Tensor> rows;
    for (const auto& r : reps) rows.push_back(last_row(r));
    z = rows.size() == 1 ? rows.front() : concat(rows, 1);
  }
  return predict(task, z);
}

ParameterReport Model::parameter_count() const {
  ParameterReport r;
  for (const auto& e : params_.entries()) {
    if (!e.trainable) continue;
    const std::size_t n = e.tensor.numel();
    switch (component_of(e.name)) {
      case Component::kUnimodal: r.unimodal += n; break;
      case Component::kCrossmodal: r.crossmodal += n; break;
      case Component::kEmbedding: r.embeddings += n; break;
      case Component::kHead: {
        r.heads += n;
        const auto rest = e.name.substr(5);
        r.per_head[rest.substr(0, rest.rfind('.'))] += n;
        break;
      }
    }
  }
  return r;
}

}  // namespace hmmt
