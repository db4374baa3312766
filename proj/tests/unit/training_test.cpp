#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "hmmt/errors.hpp"
#include "hmmt/training.hpp"

namespace hmmt {
namespace {

using testing::spec_for;
using testing::tiny_fusion;
using testing::tiny_model;
using testing::tiny_registry;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Suite {
  ModalityRegistry registry = tiny_registry();
  std::vector<TaskSpec> specs;
  std::vector<PreparedTask> tasks;

  explicit Suite(std::uint64_t seed = 0, std::size_t train = 128) {
    auto x = tiny_fusion("xor", {"a", "b"}, LabelRule::kXor, 2, seed, 1);
    auto s = tiny_fusion("sum", {"a", "b"}, LabelRule::kSumThreshold, 2, seed, 1);
    for (auto* f : {&x, &s}) {
      f->train = train;
      f->valid = 48;
      f->test = 48;
      specs.push_back(spec_for(*f, 32));
      tasks.push_back(prepare_task(specs.back(), gen_fusion_task(*f), registry));
    }
    specs[1].batch_size = 64;
    tasks[1].spec.batch_size = 64;
  }
  Model model(std::uint64_t seed = 0) const { return Model(registry, tiny_model(seed), {}, specs); }
};

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor& p = store.add("w", Tensor::from({2}, {1.0, -1.0}, true));
  p.mutable_grad()[0] = 0.3;
  p.mutable_grad()[1] = -2.0;
  Adam adam({0.1, 0.9, 0.999, 1e-8, 0.0});
  adam.step(store, [](const std::string&) { return true; });
  EXPECT_NEAR(p.data()[0], 0.9, 1e-7);
  EXPECT_NEAR(p.data()[1], -0.9, 1e-7);
  EXPECT_EQ(adam.moments().at("w").steps, 1u);
}

TEST(Adam, WeightDecayEntersGradient) {
  ParamStore store;
  Tensor& p = store.add("w", Tensor::from({1}, {2.0}, true));
  p.mutable_grad()[0] = 0.0;
  Adam adam({0.01, 0.9, 0.999, 1e-8, 0.5});
  adam.step(store, [](const std::string&) { return true; });
  EXPECT_NEAR(p.data()[0], 2.0 - 0.01, 1e-9);
}

TEST(Adam, SkipsUnselectedBuffersAndGradless) {
  ParamStore store;
  store.add("a", Tensor::from({1}, {1.0}, true));
  store.add("b", Tensor::from({1}, {1.0}, true));
  store.add("buf", Tensor::from({1}, {1.0}), false);
  store.add("c", Tensor::from({1}, {1.0}, true));
  Tensor& a = store.get("a");
  Tensor& b = store.get("b");
  Tensor& buf = store.get("buf");
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = 1.0;
  buf.mutable_grad()[0] = 1.0;
  Adam adam;
  adam.step(store, [](const std::string& n) { return n != "b"; });
  EXPECT_NE(a.data()[0], 1.0);
  EXPECT_EQ(b.data()[0], 1.0);
  EXPECT_EQ(buf.data()[0], 1.0);
  EXPECT_EQ(adam.moments().count("c"), 0u);
}

TEST(Training, TrainableSubsets) {
  EXPECT_TRUE(is_trainable(Component::kHead, TrainableSubset::kUnimodal));
  EXPECT_TRUE(is_trainable(Component::kUnimodal, TrainableSubset::kUnimodal));
  EXPECT_FALSE(is_trainable(Component::kCrossmodal, TrainableSubset::kUnimodal));
  EXPECT_TRUE(is_trainable(Component::kCrossmodal, TrainableSubset::kMultimodal));
  EXPECT_FALSE(is_trainable(Component::kUnimodal, TrainableSubset::kMultimodal));
  EXPECT_EQ(parse_trainable_subset("multimodal"), TrainableSubset::kMultimodal);
  EXPECT_THROW(parse_trainable_subset("encoder"), ConfigError);
}

TEST(Training, AggregateValidation) {
  const TaskMetric m[] = {{"a", "accuracy", 0.8, 1.0}, {"b", "mse", 0.5, 3.0}, {"c", "neg_mse", -0.25, 0.0}};
  EXPECT_DOUBLE_EQ(aggregate_validation(m), (0.8 - 1.5) / 4.0);
  const TaskMetric bad[] = {{"a", "f1", 0.8, 1.0}};
  EXPECT_THROW(aggregate_validation(bad), ConfigError);
  const TaskMetric zero[] = {{"a", "accuracy", 0.8, 0.0}};
  EXPECT_THROW(aggregate_validation(zero), ConfigError);
}

TEST(Training, WeightedLossSumsTaskGradients) {
  Suite s;
  std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
  const auto b0 = s.tasks[0].train.batch(rows);
  const auto b1 = s.tasks[1].train.batch(rows);
  auto grads_for = [&](double w0, double w1) {
    Model m = s.model(1);
    TaskSpec t0 = s.specs[0], t1 = s.specs[1];
    t0.loss_weight = w0;
    t1.loss_weight = w1;
    const TaskBatch tb[] = {{&t0, &b0}, {&t1, &b1}};
    const auto r = accumulate_gradients(m, tb);
    std::vector<double> g;
    for (const auto& e : m.params().entries()) {
      if (e.trainable && e.tensor.has_grad()) g.insert(g.end(), e.tensor.grad().begin(), e.tensor.grad().end());
      else if (e.trainable) g.insert(g.end(), e.tensor.numel(), 0.0);
    }
    return std::pair{r, g};
  };
  const auto [ra, ga] = grads_for(1.0, 0.0);
  const auto [rb, gb] = grads_for(0.0, 1.0);
  const auto [rc, gc] = grads_for(2.0, 0.5);
  EXPECT_NEAR(rc.total, 2.0 * ra.losses[0].second + 0.5 * rb.losses[1].second, 1e-12);
  ASSERT_EQ(ga.size(), gc.size());
  for (std::size_t i = 0; i < ga.size(); ++i) ASSERT_NEAR(gc[i], 2.0 * ga[i] + 0.5 * gb[i], 1e-10);
}

TEST(Training, LearnsAndIsDeterministic) {
  Suite s;
  TrainConfig tc;
  tc.epochs = 6;
  tc.adam.lr = 3e-3;
  Model a = s.model();
  Model b = s.model();
  const auto ra = train_multitask(a, s.tasks, tc);
  const auto rb = train_multitask(b, s.tasks, tc);
  EXPECT_EQ(ra.best_score, rb.best_score);
  EXPECT_EQ(ra.test, rb.test);
  EXPECT_EQ(ra.history.size(), 6u);
  EXPECT_GT(ra.best_valid.at("sum"), 0.7);
  EXPECT_LT(ra.history.back().train_loss.at("sum"), ra.history.front().train_loss.at("sum"));
  // restored best checkpoint reproduces the best validation score
  EXPECT_DOUBLE_EQ(evaluate(a, s.specs[1], s.tasks[1].valid), ra.best_valid.at("sum"));
}

TEST(Training, FrozenSubsetLeavesOtherComponents) {
  Suite s;
  Model m = s.model();
  const Model before = m.clone();
  TrainConfig tc;
  tc.epochs = 1;
  tc.subset = TrainableSubset::kMultimodal;
  train_multitask(m, s.tasks, tc);
  const auto& now = m.params().entries();
  const auto& old = before.params().entries();
  bool cross_moved = false;
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (m.component_of(now[i].name) == Component::kUnimodal) {
      ASSERT_EQ(now[i].tensor.to_vector(), old[i].tensor.to_vector()) << now[i].name;
    }
    if (m.component_of(now[i].name) == Component::kCrossmodal &&
        now[i].tensor.to_vector() != old[i].tensor.to_vector()) {
      cross_moved = true;
    }
  }
  EXPECT_TRUE(cross_moved);
}

TEST(Training, ScheduleAndMetricsLogs) {
  Suite s;
  const auto dir = std::filesystem::temp_directory_path() / "hmmt_training_logs";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;
  tc.metrics_csv = dir / "metrics.csv";
  tc.schedule_csv = dir / "schedule.csv";
  Model m = s.model();
  const auto r = train_multitask(m, s.tasks, tc);
  EXPECT_EQ(slurp(tc.schedule_csv), Schedule({{"xor", 4}, {"sum", 2}}).to_csv());
  const std::string csv = slurp(tc.metrics_csv);
  EXPECT_EQ(csv.rfind("epoch,task,split,metric_name,value,seed\n", 0), 0u);
  EXPECT_NE(csv.find("1,sum,valid,accuracy,"), std::string::npos);
  EXPECT_NE(csv.find(std::to_string(r.best_epoch) + ",xor,test,accuracy,"), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(Training, ResumeMatchesUninterruptedRun) {
  Suite s;
  const auto dir = std::filesystem::temp_directory_path() / "hmmt_training_resume";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig full;
  full.epochs = 4;
  full.adam.lr = 3e-3;
  Model a = s.model();
  const auto ra = train_multitask(a, s.tasks, full);

  TrainConfig first = full;
  first.epochs = 2;
  first.restore_best = false;
  first.state_path = dir / "state.ckpt";
  Model b = s.model();
  train_multitask(b, s.tasks, first);
  TrainConfig rest = full;
  rest.resume_from = dir / "state.ckpt";
  Model c = s.model(99);
  const auto rc = train_multitask(c, s.tasks, rest);
  EXPECT_EQ(ra.best_score, rc.best_score);
  EXPECT_EQ(ra.best_epoch, rc.best_epoch);
  EXPECT_EQ(ra.test, rc.test);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    ASSERT_EQ(a.params().entries()[i].tensor.to_vector(), c.params().entries()[i].tensor.to_vector());
  }
  std::filesystem::remove_all(dir);
}

TEST(Training, FewShotAtFullFractionMatchesTargetSelection) {
  Suite s;
  TrainConfig tc;
  tc.epochs = 2;
  Model a = s.model();
  const auto ra = fewshot_train(a, std::span(s.tasks).first(1), s.tasks[1], {1.0, 1.0, 0}, tc);
  TrainConfig sel = tc;
  sel.selection_task = "sum";
  Model b = s.model();
  const auto rb = train_multitask(b, s.tasks, sel);
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
  EXPECT_EQ(ra.test, rb.test);
}

TEST(Training, PretrainFinetune) {
  Suite s;
  TrainConfig tc;
  tc.epochs = 1;
  Model m = s.model();
  const auto r = pretrain_finetune(m, std::span(s.tasks).first(1), s.tasks[1], tc, tc);
  EXPECT_EQ(r.test.size(), 1u);
  EXPECT_EQ(r.test.count("sum"), 1u);
}

TEST(Training, PrepareRejectsBadLabels) {
  Suite s;
  auto data = gen_fusion_task(tiny_fusion("xor", {"a", "b"}, LabelRule::kXor, 2, 0, 1));
  data.train.labels[0] = 7;
  EXPECT_THROW(prepare_task(s.specs[0], data, s.registry), Error);
}

TEST(Training, NonFiniteLossRaises) {
  Suite s;
  Model m = s.model();
  m.params().entries()[0].tensor.mutable_data()[0] = std::nan("");
  TrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train_multitask(m, s.tasks, tc), NumericError);
}

}  // namespace
}  // namespace hmmt
