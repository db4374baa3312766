#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "hmmt/analysis.hpp"
#include "hmmt/errors.hpp"

namespace hmmt {
namespace {

using testing::spec_for;
using testing::tiny_fusion;
using testing::tiny_model;
using testing::tiny_registry;

TEST(Involvement, LinearSoftmaxOracle) {
  const std::vector<double> w{0.2, -0.5, 0.7, 0.1, 0.3, -0.4};  // [3 classes, 2]
  const double xs[3][2] = {{1.0, 2.0}, {-0.5, 0.3}, {0.0, -1.5}};
  const int ys[3] = {0, 2, 1};
  const Tensor W = Tensor::from({3, 2}, w, true);
  const std::vector<Tensor> params{W};
  const auto inv = involvement(params, 3, [&](std::size_t i) {
    const Tensor x = Tensor::from({2, 1}, {xs[i][0], xs[i][1]});
    const Tensor p = softmax(reshape(matmul(W, x), {3}), 0);
    return slice(p, 0, static_cast<std::size_t>(ys[i]), static_cast<std::size_t>(ys[i]) + 1);
  });
  ASSERT_EQ(inv.size(), 6u);
  std::vector<double> expected(6, 0.0);
  for (int i = 0; i < 3; ++i) {
    double z[3], p[3], total = 0;
    for (int k = 0; k < 3; ++k) total += (z[k] = std::exp(w[2 * k] * xs[i][0] + w[2 * k + 1] * xs[i][1]));
    for (int k = 0; k < 3; ++k) p[k] = z[k] / total;
    for (int k = 0; k < 3; ++k) {
      for (int j = 0; j < 2; ++j) {
        expected[2 * k + j] += std::abs(p[ys[i]] * ((k == ys[i]) - p[k]) * xs[i][j]) / 3.0;
      }
    }
  }
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(inv[r], expected[r], 1e-15);
}

TEST(Involvement, BlockDiagonalCounts) {
  const auto toy = testing::block_diagonal_toy();
  for (std::size_t r = 0; r < toy.values.size(); ++r) {
    EXPECT_EQ(task_count(toy.values[r], 0.2), toy.shared[r] ? 2 : 1) << r;
  }
}

TEST(Involvement, TaskCountMatchesBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> row(1 + rng.index(6));
    for (auto& v : row) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    double mx = 0;
    for (double v : row) mx = std::max(mx, v);
    int expected = 0;
    for (double v : row) expected += v > 0.2 * mx ? 1 : 0;
    ASSERT_EQ(task_count(row, 0.2), expected);
  }
  EXPECT_EQ(task_count(std::vector<double>{0.0, 0.0}, 0.2), 0);
  EXPECT_EQ(task_count(std::vector<double>{1.0, 0.2}, 0.2), 1);
}

InvolvementTable table_from(const std::vector<std::vector<double>>& values) {
  InvolvementTable t;
  t.tasks = {"a", "b", "c"};
  for (std::size_t r = 0; r < values.size(); ++r) {
    t.rows.push_back("p[" + std::to_string(r) + "]");
    t.components.push_back(r % 2 ? Component::kCrossmodal : Component::kUnimodal);
  }
  t.values = values;
  return t;
}

TEST(Involvement, DistributionAndCsv) {
  const auto t = table_from({{1, 1, 1}, {0, 0, 0}, {1, 0, 0}, {1, 0.5, 0}});
  const auto counts = task_count(t, 0.2);
  EXPECT_EQ(counts, (std::vector<int>{3, 0, 1, 2}));
  const auto dists = count_distribution(t, counts);
  ASSERT_EQ(dists.size(), 2u);
  EXPECT_EQ(dists[0].component, "unimodal");
  EXPECT_EQ(dists[0].fraction, (std::vector<double>{0.0, 0.5, 0.0, 0.5}));
  const auto path = std::filesystem::temp_directory_path() / "hmmt_dist.csv";
  write_distribution_csv(path, dists);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_NE(ss.str().find("crossmodal,inactive,0.5,2"), std::string::npos) << ss.str();
  std::filesystem::remove(path);
}

TEST(Involvement, CalibrationMatchesGridScan) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> v(50, std::vector<double>(3));
    for (auto& row : v) {
      for (auto& x : row) x = std::pow(rng.uniform(), 1 + trial % 4);
    }
    const auto t = table_from(v);
    const auto cal = calibrate_epsilon(t);
    double nearest = 0, gap = 1e9;
    bool found = false;
    for (int k = 1; k <= 19 && !found; ++k) {
      const double eps = 0.05 * k;
      double frac = 0;
      for (const auto& row : v) frac += task_count(row, eps) / 3.0;
      frac /= 50.0;
      if (std::abs(frac - 0.5) <= 0.05 + 1e-12) {
        EXPECT_NEAR(cal.epsilon, eps, 1e-12);
        EXPECT_TRUE(cal.within_tolerance);
        found = true;
      } else if (std::abs(frac - 0.5) < gap) {
        gap = std::abs(frac - 0.5);
        nearest = eps;
      }
    }
    if (!found) {
      EXPECT_NEAR(cal.epsilon, nearest, 1e-12);
      EXPECT_FALSE(cal.within_tolerance);
    }
  }
}

struct Pair {
  ModalityRegistry registry = tiny_registry();
  std::vector<TaskSpec> specs;
  std::vector<PreparedTask> tasks;
  Pair() {
    for (auto* name : {"p", "q"}) {
      auto f = tiny_fusion(name, {"a", "b"}, LabelRule::kXor, 2, 1, 2);
      f.train = 64;
      f.valid = 32;
      f.test = 32;
      specs.push_back(spec_for(f));
      tasks.push_back(prepare_task(specs.back(), gen_fusion_task(f), registry));
    }
  }
};

TEST(Involvement, ModelTableShapeAndComponents) {
  Pair p;
  Model m(p.registry, tiny_model(), {}, p.specs);
  const auto table = involvement_table(m, p.tasks, 8);
  std::size_t scalars = 0;
  for (const auto& e : m.params().entries()) {
    const auto c = m.component_of(e.name);
    if (e.trainable && (c == Component::kUnimodal || c == Component::kCrossmodal)) scalars += e.tensor.numel();
  }
  EXPECT_EQ(table.rows.size(), scalars);
  EXPECT_EQ(table.tasks, (std::vector<std::string>{"p", "q"}));
  const auto coarse = involvement_table(m, p.tasks, 8, Granularity::kTensor);
  EXPECT_LT(coarse.rows.size(), table.rows.size());
  EXPECT_TRUE(m.training());
}

TEST(Involvement, SeparateModelIsolatesTasks) {
  Pair p;
  Model m(p.registry, tiny_model(), SharingConfig::variant("separate"), p.specs);
  const auto table = involvement_table(m, p.tasks, 4);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    ASSERT_LE(task_count(table.values[r], 0.2), 1) << table.rows[r];
  }
}

TEST(Involvement, RegressionIsRejected) {
  const auto registry = tiny_registry();
  auto f = tiny_fusion("r", {"a", "b"}, LabelRule::kSumValue, 2, 0, 0);
  const auto spec = spec_for(f);
  const auto task = prepare_task(spec, gen_fusion_task(f), registry);
  Model m(registry, tiny_model(), {}, {spec});
  EXPECT_THROW(involvement_table(m, std::span(&task, 1), 4), ConfigError);
}

TEST(Interference, SeparateControlIsExactlyZero) {
  Pair p;
  Model m(p.registry, tiny_model(), SharingConfig::variant("separate"), p.specs);
  TrainConfig tc;
  tc.epochs = 2;
  tc.restore_best = false;
  const TrainableSubset regimes[] = {TrainableSubset::kAll};
  const auto report = interference_experiment(m, p.tasks, regimes, tc, 4);
  const auto& d = report.deltas.at("all");
  EXPECT_EQ(d[0][1], 0.0);
  EXPECT_EQ(d[1][0], 0.0);
  const auto path = std::filesystem::temp_directory_path() / "hmmt_interference.csv";
  write_interference_csv(path, report);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "regime,flipped_task,evaluated_task,delta");
  std::filesystem::remove(path);
}

TEST(Interference, FlipTaskTouchesTrainOnly) {
  Pair p;
  const auto f = flip_task(p.tasks[0], 3);
  EXPECT_EQ(f.valid.labels, p.tasks[0].valid.labels);
  for (std::size_t i = 0; i < f.train.labels.size(); ++i) ASSERT_NE(f.train.labels[i], p.tasks[0].train.labels[i]);
}

TEST(Attention, AverageRowsAreDistributions) {
  Pair p;
  Model m(p.registry, tiny_model(), {}, p.specs);
  const auto avg = attention_average(m, p.specs[0], p.tasks[0].test, 16);
  ASSERT_EQ(avg.size(), 2u);
  EXPECT_EQ(avg[0].modality, "a");
  EXPECT_EQ(avg[0].samples, 32u);
  ASSERT_EQ(avg[0].mean.shape(), (Shape{4, 8}));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 8; ++c) total += avg[1].mean.at({r, c});
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Report, ParameterCsv) {
  ParameterReport r;
  r.unimodal = 10;
  r.crossmodal = 5;
  r.heads = 3;
  r.per_head["t"] = 3;
  EXPECT_EQ(parameter_report_csv(r), "component,parameters\nunimodal,10\ncrossmodal,5\nembeddings,0\nhead:t,3\ntotal,18\n");
}

}  // namespace
}  // namespace hmmt
