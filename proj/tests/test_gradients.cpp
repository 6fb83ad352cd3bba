#include <gtest/gtest.h>

#include "support/gradient_suite.hpp"

namespace dualdis::testing {
namespace {

constexpr int kInstances = 20;

class LayerGradient : public ::testing::TestWithParam<std::size_t> {};
class LossGradient : public ::testing::TestWithParam<std::size_t> {};

void run_case(const GradCase& c) {
  for (int i = 0; i < kInstances; ++i) {
    const GradCheckResult r = c.run(1000 + i);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " instance " << i << " worst " << r.worst;
  }
}

TEST_P(LayerGradient, MatchesCentralDifferences) { run_case(layer_cases().at(GetParam())); }
TEST_P(LossGradient, MatchesCentralDifferences) { run_case(loss_cases().at(GetParam())); }

std::string case_name(const std::vector<GradCase>& cases, std::size_t i) {
  std::string n = cases.at(i).name;
  for (auto& ch : n)
    if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
  return n;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerGradient, ::testing::Range<std::size_t>(0, layer_cases().size()),
                         [](const auto& info) { return case_name(layer_cases(), info.param); });
INSTANTIATE_TEST_SUITE_P(AllTerms, LossGradient, ::testing::Range<std::size_t>(0, loss_cases().size()),
                         [](const auto& info) { return case_name(loss_cases(), info.param); });

TEST(GradCheck, RelativeErrorFloorsSmallMagnitudes) {
  EXPECT_DOUBLE_EQ(gradient_rel_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_rel_error(0.0, 1e-5), 1e-2);
}

}  // namespace
}  // namespace dualdis::testing
