#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hmmt/analysis.hpp"
#include "hmmt/model.hpp"
#include "hmmt/synthbench.hpp"
#include "hmmt/training.hpp"

namespace hmmt::testing {

// Nine-modality registry of the four-dataset large setting; the text
// modality is shared between the two sentiment datasets.
inline ModalityRegistry large_registry() {
  ModalityRegistry r;
  r.add({"mimic_static", 1, 1, 6, 1.0, std::nullopt});
  r.add({"mimic_timeseries", 1, 2, 6, 1.0, std::nullopt});
  r.add({"avmnist_image", 16, 2, 6, 1.0, 4});
  r.add({"avmnist_audio", 256, 2, 6, 1.0, 16});
  r.add({"mosei_image", 35, 1, 3, 1.0, std::nullopt});
  r.add({"mosei_audio", 74, 1, 3, 1.0, std::nullopt});
  r.add({"mosei_text", 300, 1, 3, 1.0, std::nullopt});
  r.add({"urfunny_image", 371, 1, 3, 1.0, std::nullopt});
  r.add({"urfunny_audio", 81, 1, 3, 1.0, std::nullopt});
  r.add_alias("urfunny_text", "mosei_text");
  return r;
}

inline std::vector<TaskSpec> large_tasks() {
  auto spec = [](std::string name, std::vector<std::string> mods, std::size_t classes) {
    TaskSpec s;
    s.name = std::move(name);
    s.modalities = std::move(mods);
    s.output_dim = classes;
    return s;
  };
  return {spec("urfunny", {"urfunny_image", "urfunny_audio", "urfunny_text"}, 2),
          spec("mosei", {"mosei_image", "mosei_audio", "mosei_text"}, 2),
          spec("mimic", {"mimic_static", "mimic_timeseries"}, 2),
          spec("avmnist", {"avmnist_image", "avmnist_audio"}, 10)};
}

inline ModelConfig tiny_model(std::uint64_t seed = 0) {
  ModelConfig mc;
  mc.num_latents = 4;
  mc.latent_dim = 16;
  mc.encoder = {1, 1, 8, 2, 8, 1};
  mc.fusion = {1, 2, 8, 2, 8, 1};
  mc.seed = seed;
  return mc;
}

// Two four-channel sequence modalities "a" and "b" (plus "c" when asked).
inline ModalityRegistry tiny_registry(std::size_t modalities = 2) {
  ModalityRegistry r;
  const char* names[] = {"a", "b", "c"};
  for (std::size_t i = 0; i < modalities; ++i) r.add({names[i], 4, 1, 2, 8.0, std::nullopt});
  return r;
}

inline SynthModality tiny_modality(const std::string& name, std::size_t codes = 4) {
  return {name, {8, 4}, codes};
}

inline FusionTaskConfig tiny_fusion(const std::string& task, std::vector<std::string> mods, LabelRule rule,
                                    std::size_t classes, std::uint64_t seed, std::uint64_t world_seed) {
  FusionTaskConfig f;
  f.task = task;
  for (const auto& m : mods) f.modalities.push_back(tiny_modality(m));
  f.rule = rule;
  f.classes = classes;
  f.seed = seed;
  f.world_seed = world_seed;
  return f;
}

inline TaskSpec spec_for(const FusionTaskConfig& f, std::size_t batch = 32) {
  TaskSpec s;
  s.name = f.task;
  for (const auto& m : f.modalities) s.modalities.push_back(m.name);
  if (f.rule == LabelRule::kSumValue) {
    s.loss = LossKind::kMse;
    s.output_dim = 1;
  } else {
    s.output_dim = f.classes;
  }
  s.batch_size = batch;
  return s;
}

// Central differences on `count` randomly chosen trainable scalars of the
// model against the autodiff gradient of the task's cross-entropy loss.
inline GradcheckResult model_gradcheck(Model& model, const std::string& task,
                                       std::span<const StandardizedBatch> inputs, std::span<const int> labels,
                                       std::size_t count, std::uint64_t seed, double h = 1e-5) {
  model.set_training(true);
  auto loss = [&] { return cross_entropy(model.forward_task(task, inputs), labels); };
  model.params().zero_grad();
  loss().backward();
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    if (model.params().entries()[i].trainable) trainable.push_back(i);
  }
  Rng rng(seed);
  GradcheckResult r;
  NoGradGuard guard;
  for (std::size_t c = 0; c < count; ++c) {
    auto& e = model.params().entries()[trainable[rng.index(trainable.size())]];
    const std::size_t k = rng.index(e.tensor.numel());
    const double analytic = e.tensor.has_grad() ? e.tensor.grad()[k] : 0.0;
    auto d = e.tensor.mutable_data();
    const double orig = d[k];
    d[k] = orig + h;
    const double up = loss().item();
    d[k] = orig - h;
    const double down = loss().item();
    d[k] = orig;
    const double err = rel_error(analytic, (up - down) / (2 * h));
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = e.name + "[" + std::to_string(k) + "]";
    }
  }
  return r;
}

struct BlockToy {
  std::vector<std::string> names;    // parameter tensors in table order
  std::vector<bool> shared;          // per scalar row
  std::vector<std::vector<double>> values;  // [row][task]
};

// Two-task toy: a shared upstream layer U0 feeds a block-diagonal layer whose
// first half serves task 0 only and second half task 1 only, each with its
// own head. x -> h = tanh(U0 x) -> s = tanh(U h) -> task t reads s[2t:2t+2].
inline BlockToy block_diagonal_toy(std::uint64_t seed = 3, std::size_t samples = 8) {
  Rng rng(seed);
  std::vector<Tensor> params{random_tensor({2, 3}, rng, 0.8),    // U0 shared
                             random_tensor({2, 2}, rng, 0.8),    // U rows for task 0
                             random_tensor({2, 2}, rng, 0.8),    // U rows for task 1
                             random_tensor({2, 2}, rng, 0.8),    // head 0
                             random_tensor({2, 2}, rng, 0.8)};   // head 1
  const Tensor xs = random_tensor({samples, 3}, rng, 1.0, false);
  std::vector<int> labels(samples);
  for (auto& l : labels) l = static_cast<int>(rng.index(2));
  BlockToy toy;
  toy.names = {"U0", "U_task0", "U_task1", "head0", "head1"};
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].numel(); ++k) toy.shared.push_back(p == 0);
  }
  toy.values.assign(toy.shared.size(), std::vector<double>(2, 0.0));
  for (std::size_t task = 0; task < 2; ++task) {
    const auto inv = involvement(params, samples, [&](std::size_t i) {
      const Tensor x = reshape(slice(xs, 0, i, i + 1), {3, 1});
      const Tensor h = tanh(matmul(params[0], x));
      const Tensor s = tanh(matmul(params[1 + task], h));
      const Tensor p = softmax(reshape(matmul(params[3 + task], s), {2}), 0);
      return slice(p, 0, static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(labels[i]) + 1);
    });
    for (std::size_t r = 0; r < inv.size(); ++r) toy.values[r][task] = inv[r];
  }
  return toy;
}

}  // namespace hmmt::testing
