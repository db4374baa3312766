#include <benchmark/benchmark.h>

#include <optional>

#include "hmmt/model.hpp"
#include "hmmt/training.hpp"

namespace {

using namespace hmmt;

Tensor noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(shape, std::move(v));
}

void BM_Attention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  ParamStore store;
  Rng rng(1);
  const auto p = make_attention(store, "a", 64, 64, 4, 16, rng);
  const Tensor q = noise({8, 20, 64}, 2);
  const Tensor ctx = noise({8, len, 64}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention(q, ctx, p));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(64)->Arg(256);

void BM_AttentionBackward(benchmark::State& state) {
  ParamStore store;
  Rng rng(1);
  const auto p = make_attention(store, "a", 64, 64, 4, 16, rng);
  const Tensor q = noise({8, 20, 64}, 2);
  const Tensor ctx = noise({8, 64, 64}, 3);
  for (auto _ : state) {
    store.zero_grad();
    sum(attention(q, ctx, p)).backward();
  }
}
BENCHMARK(BM_AttentionBackward);

struct Setup {
  ModalityRegistry registry;
  std::vector<StandardizedBatch> inputs;
  TaskSpec spec;

  explicit Setup(std::size_t n) {
    registry.add({"a", 16, 2, 6, 1.0, 4});
    registry.add({"b", 35, 1, 3, 1.0, std::nullopt});
    spec.name = "t";
    spec.modalities = {"a", "b"};
    spec.output_dim = 10;
    inputs.push_back(standardize(noise({n, 28, 28}, 4), registry, "a", "t"));
    inputs.push_back(standardize(noise({n, 50, 35}, 5), registry, "b", "t"));
  }
};

void BM_Encoder(benchmark::State& state) {
  const Setup s(static_cast<std::size_t>(state.range(0)));
  const Model model(s.registry, ModelConfig{}, {}, {s.spec});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_unimodal(s.inputs[0]));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encoder)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const Setup s(static_cast<std::size_t>(state.range(0)));
  Model model(s.registry, ModelConfig{}, {}, {s.spec});
  std::vector<int> labels(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) {
    model.params().zero_grad();
    cross_entropy(model.forward_task("t", s.inputs), labels).backward();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
