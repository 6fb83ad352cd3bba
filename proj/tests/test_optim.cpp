#include <gtest/gtest.h>

#include "dualdis/optim.hpp"

namespace dualdis {
namespace {

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Parameter<double> p("p", Tensor<double>({3}, std::vector<double>{1, 1, 1}));
  Adam<double> opt({&p}, AdamConfig{0.01, 0.9, 0.999, 1e-8});
  p.grad()[0] = 5;
  p.grad()[1] = -0.001;
  p.grad()[2] = 0;
  opt.step();
  EXPECT_NEAR(p.value()[0], 1 - 0.01, 1e-8);
  EXPECT_NEAR(p.value()[1], 1 + 0.01, 1e-6);
  EXPECT_DOUBLE_EQ(p.value()[2], 1.0);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, MatchesReferenceRecurrence) {
  Parameter<double> p("p", Tensor<double>({1}, 0.5));
  const AdamConfig c{0.05, 0.8, 0.99, 1e-8};
  Adam<double> opt({&p}, c);
  double w = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2 * w - 0.3;  // d/dw (w^2 - 0.3 w)
    opt.zero_grad();
    p.grad()[0] = 2 * p.value()[0] - 0.3;
    opt.step();
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    w -= c.lr * (m / (1 - std::pow(c.beta1, t))) / (std::sqrt(v / (1 - std::pow(c.beta2, t))) + c.eps);
    EXPECT_NEAR(p.value()[0], w, 1e-12);
  }
}

TEST(Adam, ConvergesOnQuadratic) {
  Parameter<double> p("p", Tensor<double>({2}, std::vector<double>{3, -4}));
  Adam<double> opt({&p}, AdamConfig{0.1});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    for (int k = 0; k < 2; ++k) p.grad()[k] = 2 * (p.value()[k] - 1);
    opt.step();
  }
  EXPECT_NEAR(p.value()[0], 1.0, 1e-3);
  EXPECT_NEAR(p.value()[1], 1.0, 1e-3);
}

TEST(Adam, SkipsFrozenAndRejectsDuplicates) {
  Parameter<double> p("p", Tensor<double>({1}, 1.0), false);
  Adam<double> opt({&p});
  p.grad()[0] = 1;
  opt.step();
  EXPECT_EQ(p.value()[0], 1.0);
  EXPECT_THROW(Adam<double>({&p, &p}), Error);
}

TEST(Adam, NonFiniteGradientStopsBeforeUpdating) {
  Parameter<double> a("a", Tensor<double>({1}, 1.0)), b("b", Tensor<double>({1}, 1.0));
  Adam<double> opt({&a, &b});
  a.grad()[0] = 1;
  b.grad()[0] = std::nan("");
  EXPECT_THROW(opt.step(), GradientError);
  EXPECT_EQ(a.value()[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0);
}

}  // namespace
}  // namespace dualdis
