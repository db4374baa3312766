#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hmmt/errors.hpp"
#include "hmmt/model.hpp"

namespace hmmt {
namespace {

using testing::tiny_model;
using testing::tiny_registry;

TaskSpec task(std::string name, std::vector<std::string> mods, std::size_t classes = 2) {
  TaskSpec s;
  s.name = std::move(name);
  s.modalities = std::move(mods);
  s.output_dim = classes;
  return s;
}

std::vector<StandardizedBatch> inputs(const ModalityRegistry& r, const std::vector<std::string>& mods,
                                      std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StandardizedBatch> out;
  for (const auto& m : mods) out.push_back(standardize(testing::random_tensor({n, 8, 4}, rng, 1.0, false), r, m, "t"));
  return out;
}

TEST(Attention, SingleLatentTwoTokens) {
  ParamStore store;
  Rng rng(1);
  AttentionParams p = make_attention(store, "a", 1, 1, 1, 1, rng);
  p.wq.mutable_data()[0] = 0.5;
  p.wk.mutable_data()[0] = 2.0;
  p.wv.mutable_data()[0] = -1.0;
  p.wo.mutable_data()[0] = 3.0;
  p.bo.mutable_data()[0] = 0.25;
  const Tensor q = Tensor::from({1, 1, 1}, {1.0});
  const Tensor ctx = Tensor::from({1, 2, 1}, {1.0, -2.0});
  Tensor probs;
  const double out = attention(q, ctx, p, &probs).item();
  const double s0 = 0.5 * 2.0, s1 = 0.5 * -4.0;
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double v = w0 * -1.0 + (1 - w0) * 2.0;
  EXPECT_NEAR(out, 3.0 * v + 0.25, 1e-14);
  EXPECT_NEAR(probs.to_vector()[0], w0, 1e-15);
}

TEST(Model, EncoderOutputShape) {
  const auto r = tiny_registry();
  Model m(r, tiny_model(), {}, {task("t", {"a", "b"})});
  const auto in = inputs(r, {"a"}, 3, 1);
  EXPECT_EQ(m.encode_unimodal(in[0]).shape(), (Shape{3, 4, 16}));
}

TEST(Model, FuseWidths) {
  const auto r = tiny_registry(3);
  ModelConfig mc = tiny_model();
  mc.latent_dim = 64;
  mc.encoder.depth = 1;
  Model m(r, mc, {}, {task("two", {"a", "b"}, 2), task("three", {"a", "b", "c"}, 2)});
  EXPECT_EQ(m.head_input_width("two"), 128u);
  EXPECT_EQ(m.head_input_width("three"), 384u);
  const auto in = inputs(r, {"a", "b", "c"}, 2, 2);
  std::vector<Tensor> z;
  for (const auto& b : in) z.push_back(m.encode_unimodal(b));
  EXPECT_EQ(m.fuse({z[0], z[1]}).shape(), (Shape{2, 128}));
  EXPECT_EQ(m.fuse(z).shape(), (Shape{2, 384}));
  EXPECT_THROW(m.fuse({z[0]}), ConfigError);
}

TEST(Model, CrossmodalReadsLastLatentRow) {
  const auto r = tiny_registry();
  Model m(r, tiny_model(), {}, {task("t", {"a", "b"})});
  const auto in = inputs(r, {"a", "b"}, 2, 3);
  const Tensor za = m.encode_unimodal(in[0]);
  const Tensor zb = m.encode_unimodal(in[1]);
  EXPECT_EQ(m.crossmodal_direct(za, zb).shape(), (Shape{2, 16}));
  EXPECT_THROW(m.crossmodal_direct(za, reshape(zb, {2, 2, 32})), DimensionError);
}

TEST(Model, VariantsForwardAndHeadWidths) {
  const auto r = tiny_registry(3);
  const auto in = inputs(r, {"a", "b", "c"}, 3, 4);
  for (const auto& name : SharingConfig::variant_names()) {
    Model m(r, tiny_model(), SharingConfig::variant(name), {task("t", {"a", "b", "c"}, 3), task("u", {"a"}, 2)});
    EXPECT_EQ(m.sharing().name(), name);
    EXPECT_EQ(m.forward_task("t", in).shape(), (Shape{3, 3})) << name;
    EXPECT_EQ(m.forward_task("u", std::span(in).first(1)).shape(), (Shape{3, 2})) << name;
    EXPECT_EQ(m.head_input_width("t"), name == "no_multimodal" ? 48u : 96u);
    EXPECT_EQ(m.head_input_width("u"), 16u);
  }
  EXPECT_THROW(SharingConfig::variant("bogus"), ConfigError);
}

TEST(Model, SeparateCountsEncoderPerTask) {
  const auto r = tiny_registry();
  const std::vector<TaskSpec> tasks{task("t", {"a", "b"}), task("u", {"a", "b"}), task("v", {"b", "a"}),
                                    task("w", {"a", "b"})};
  const auto shared = Model(r, tiny_model(), {}, tasks).parameter_count();
  const auto separate = Model(r, tiny_model(), SharingConfig::variant("separate"), tasks).parameter_count();
  EXPECT_EQ(separate.unimodal, 4 * shared.unimodal);
  EXPECT_EQ(separate.crossmodal, 4 * shared.crossmodal);
  EXPECT_EQ(separate.heads, shared.heads);
}

TEST(Model, RejectsMismatchedInputs) {
  const auto r = tiny_registry();
  Model m(r, tiny_model(), {}, {task("t", {"a", "b"})});
  const auto in = inputs(r, {"b", "a"}, 2, 5);
  EXPECT_THROW(m.forward_task("t", in), ConfigError);
  EXPECT_THROW(m.forward_task("t", std::span(in).first(1)), ConfigError);
  EXPECT_THROW(m.forward_task("nope", in), ConfigError);
  EXPECT_THROW(Model(r, tiny_model(), {}, {task("t", {"a"}), task("t", {"b"})}), ConfigError);
}

TEST(Model, SeedDeterminesInitAndCloneIsIndependent) {
  const auto r = tiny_registry();
  Model a(r, tiny_model(7), {}, {task("t", {"a", "b"})});
  Model b(r, tiny_model(7), {}, {task("t", {"a", "b"})});
  Model c(r, tiny_model(8), {}, {task("t", {"a", "b"})});
  EXPECT_EQ(a.params().entries()[0].tensor.to_vector(), b.params().entries()[0].tensor.to_vector());
  EXPECT_NE(a.params().entries()[0].tensor.to_vector(), c.params().entries()[0].tensor.to_vector());
  Model d = a.clone();
  d.params().entries()[0].tensor.mutable_data()[0] += 1.0;
  EXPECT_NE(a.params().entries()[0].tensor.to_vector(), d.params().entries()[0].tensor.to_vector());
}

TEST(Model, EndToEndGradient) {
  const auto r = tiny_registry();
  Model m(r, tiny_model(3), {}, {task("t", {"a", "b"}, 3)});
  const auto in = inputs(r, {"a", "b"}, 4, 6);
  const int labels[] = {0, 2, 1, 2};
  const auto res = testing::model_gradcheck(m, "t", in, labels, 20, 11);
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst;
}

TEST(Model, ComponentsCoverEveryParameter) {
  const auto r = tiny_registry();
  Model m(r, tiny_model(), SharingConfig::variant("separate"), {task("t", {"a", "b"})});
  std::size_t total = 0;
  for (const auto& e : m.params().entries()) {
    EXPECT_NO_THROW(m.component_of(e.name));
    if (e.trainable) total += e.tensor.numel();
  }
  EXPECT_EQ(total, m.parameter_count().total());
  EXPECT_EQ(total, m.params().trainable_scalars());
}

}  // namespace
}  // namespace hmmt
