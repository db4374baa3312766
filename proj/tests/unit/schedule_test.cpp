#include <gtest/gtest.h>

#include <set>

#include "hmmt/errors.hpp"
#include "hmmt/random.hpp"
#include "hmmt/schedule.hpp"

namespace hmmt {
namespace {

TEST(Schedule, ThreeTaskExample) {
  const Schedule s({{"A", 300}, {"B", 200}, {"C", 100}});
  ASSERT_EQ(s.steps_per_epoch(), 300u);
  for (std::size_t step = 0; step < 300; ++step) {
    std::vector<std::size_t> expected{0};
    if (step >= 100) expected.push_back(1);
    if (step >= 200) expected.push_back(2);
    ASSERT_EQ(s.active(step), expected) << step;
  }
  EXPECT_EQ(s.batch_at(1, 100), 0u);
  EXPECT_EQ(s.batch_at(2, 299), 99u);
  EXPECT_THROW(s.batch_at(2, 199), ContractError);
}

TEST(Schedule, LastStepsInvariantOnRandomMaps) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<std::string, std::size_t>> counts;
    const std::size_t k = 1 + rng.index(6);
    std::size_t longest = 0;
    for (std::size_t t = 0; t < k; ++t) {
      counts.emplace_back("t" + std::to_string(t), 1 + rng.index(50));
      longest = std::max(longest, counts.back().second);
    }
    const Schedule s(counts);
    ASSERT_EQ(s.steps_per_epoch(), longest);
    std::vector<std::size_t> seen(k, 0);
    for (std::size_t step = 0; step < longest; ++step) {
      const auto act = s.active(step);
      const std::set<std::size_t> on(act.begin(), act.end());
      for (std::size_t t = 0; t < k; ++t) {
        const bool expect = step >= longest - counts[t].second;
        ASSERT_EQ(on.count(t) == 1, expect);
        if (expect) ASSERT_EQ(s.batch_at(t, step), seen[t]++);
      }
    }
    for (std::size_t t = 0; t < k; ++t) ASSERT_EQ(seen[t], counts[t].second);
  }
}

TEST(Schedule, CsvLog) {
  const Schedule s({{"A", 2}, {"B", 1}});
  EXPECT_EQ(s.to_csv(), "step,task,batch\n0,A,0\n1,A,1\n1,B,0\n");
}

TEST(Schedule, RejectsEmptyAndZero) {
  EXPECT_THROW(Schedule(std::vector<std::pair<std::string, std::size_t>>{}), ConfigError);
  EXPECT_THROW(Schedule({{"A", 0}}), ConfigError);
}

}  // namespace
}  // namespace hmmt
