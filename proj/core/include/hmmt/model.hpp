#pragma once

// The shared-parameter multimodal multitask transformer.
//
//   standardized input --(shared Perceiver encoder)--> z_m  [n, d_LN, d_LS]
//   every ordered modality pair (i, j) --(shared crossmodal block)--> [n, d_LS]
//   concatenation --(per-task batch-norm + linear head)--> logits
//
// SharingConfig switches between the full model and its ablations.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmmt/modality.hpp"
#include "hmmt/nn.hpp"
#include "hmmt/task.hpp"
#include "hmmt/tensor.hpp"

namespace hmmt {

struct BlockConfig {
  std::size_t depth = 1;
  std::size_t cross_heads = 1;
  std::size_t cross_head_dim = 64;
  std::size_t latent_heads = 6;
  std::size_t latent_head_dim = 64;
  std::size_t latent_blocks = 1;  // self-attention + feed-forward blocks per layer

  bool operator==(const BlockConfig&) const = default;
};

struct ModelConfig {
  std::size_t num_latents = 20;  // d_LN
  std::size_t latent_dim = 64;   // d_LS
  BlockConfig encoder{1, 1, 64, 6, 64, 1};
  BlockConfig fusion{1, 4, 64, 6, 64, 1};
  double ff_mult = 1.0;  // feed-forward hidden width as a multiple of d_LS
  Nonlinearity nonlinearity = Nonlinearity::kGelu;
  double latent_init_std = 0.02;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct SharingConfig {
  bool use_modality_embeddings = true;
  bool use_unimodal_encoder = true;
  bool use_multimodal_layer = true;
  bool share_unimodal_across_tasks = true;
  bool share_multimodal_across_tasks = true;

  // Named ablation rows: full, no_embeddings, no_unimodal, no_multimodal,
  // separate, separate_unimodal, separate_multimodal.
  static SharingConfig variant(std::string_view name);
  static const std::vector<std::string>& variant_names();
  std::string name() const;
  bool operator==(const SharingConfig&) const = default;
};

enum class Component { kUnimodal, kCrossmodal, kEmbedding, kHead };
std::string to_string(Component c);

struct ParameterReport {
  std::size_t unimodal = 0;
  std::size_t crossmodal = 0;
  std::size_t embeddings = 0;
  std::size_t heads = 0;
  std::map<std::string, std::size_t> per_head;

  std::size_t total() const { return unimodal + crossmodal + embeddings + heads; }
};

class Model {
 public:
  Model(ModalityRegistry registry, ModelConfig config, SharingConfig sharing, std::vector<TaskSpec> tasks);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Deep copy with independent parameter storage.
  Model clone() const;
  // Overwrites every parameter and buffer value with `other`'s (same layout required).
  void copy_state_from(const Model& other);

  const ModalityRegistry& registry() const { return registry_; }
  const ModelConfig& config() const { return config_; }
  const SharingConfig& sharing() const { return sharing_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const TaskSpec& task(std::string_view name) const;
  std::vector<std::size_t> task_modalities(std::string_view name) const;
  std::size_t head_input_width(std::string_view task) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Component component_of(std::string_view param_name) const;

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // Shared Perceiver encoder. `task` only matters for separate-unimodal
  // variants. `cross_attention` receives first-layer weights [n, h, d_LN, t_m].
  Tensor encode_unimodal(const StandardizedBatch& batch, std::string_view task = {},
                         Tensor* cross_attention = nullptr) const;
  // Cross-attends z_query to z_context and returns the final latent row [n, d_LS].
  Tensor crossmodal_direct(const Tensor& z_query, const Tensor& z_context, std::string_view task = {}) const;
  // One crossmodal output per ordered pair (i, j), i != j, lexicographic.
  Tensor fuse(const std::vector<Tensor>& latents, std::string_view task = {}) const;
  // Batch-norm + linear head of `task`.
  Tensor predict(std::string_view task, const Tensor& z_mm);
  // Full pipeline; batches are in the task's modality order.
  Tensor forward_task(std::string_view task, std::span<const StandardizedBatch> batches);

  ParameterReport parameter_count() const;

 private:
  struct LatentBlock {
    LayerNormParams attn_norm;
    AttentionParams self_attention;
    LayerNormParams ff_norm;
    FeedForwardParams ff;
  };
  struct CrossLayer {
    bool has_cross = false;
    LayerNormParams query_norm;
    LayerNormParams context_norm;
    AttentionParams cross;
    std::vector<LatentBlock> blocks;
  };
  struct Head {
    Tensor bn_gain, bn_bias, running_mean, running_var;
    Tensor weight, bias;
  };

  void build();
  std::vector<CrossLayer> build_layers(const std::string& prefix, const BlockConfig& block, std::size_t context_dim,
                                       bool cross_every_layer, Rng& rng);
  Tensor run_latent_blocks(Tensor state, const std::vector<LatentBlock>& blocks) const;
  std::string encoder_key(std::string_view task) const;
  std::string crossmodal_key(std::string_view task) const;
  // Per-modality representations consumed by the fusion stage.
  Tensor represent(const StandardizedBatch& batch, std::string_view task) const;
  static Tensor last_row(const Tensor& seq);

  ModalityRegistry registry_;
  ModelConfig config_;
  SharingConfig sharing_;
  std::vector<TaskSpec> tasks_;
  ParamStore params_;
  bool training_ = true;

  struct EncoderParams {
    Tensor latents;
    std::vector<CrossLayer> layers;
  };
  struct CrossmodalParams {
    Tensor input_proj_w, input_proj_b;  // only when the unimodal encoder is removed
    std::vector<CrossLayer> layers;
  };
  std::map<std::string, EncoderParams, std::less<>> encoders_;
  std::map<std::string, CrossmodalParams, std::less<>> crossmodals_;
  std::map<std::string, Head, std::less<>> heads_;
};

}  // namespace hmmt
