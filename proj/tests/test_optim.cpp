#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "advx/errors.hpp"
#include "advx/optim.hpp"

using namespace advx;
using namespace advx::train;
using ad::RealArray;

namespace {

struct Fixture {
  RealArray w = RealArray::matrix({{1.0, -2.0}, {0.5, 0.0}});
  RealArray b = RealArray::vector({0.25, 0.75});
  ParamGroup group() { return {{{"layer.weights", &w}, {"layer.bias", &b}}, false}; }
};

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Fixture f;
  auto g = f.group();
  AdamState s = make_adam_state(g);
  std::vector<RealArray> grads = {RealArray::matrix({{0.3, -7.0}, {1e-2, 2.0}}), RealArray::vector({5.0, -1.0})};
  adam_step(g, grads, s);
  // Bias correction makes the first update lr * g / (|g| + eps).
  EXPECT_NEAR(f.w(0, 0), 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(f.w(0, 1), -2.0 + 1e-3, 1e-10);
  EXPECT_NEAR(f.w(1, 0), 0.5 - 1e-3, 1e-8);
  EXPECT_NEAR(f.b[1], 0.75 + 1e-3, 1e-10);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  RealArray w = RealArray::vector({0.0});
  ParamGroup g{{{"w", &w}}, false};
  AdamHyper h{0.1, 0.9, 0.999, 1e-8};
  AdamState s = make_adam_state(g, h);
  std::vector<RealArray> g1 = {RealArray::vector({1.0})};
  std::vector<RealArray> g2 = {RealArray::vector({3.0})};
  adam_step(g, g1, s);
  adam_step(g, g2, s);
  const double m = 0.9 * 0.1 + 0.1 * 3.0;
  const double v = 0.999 * 0.001 + 0.001 * 9.0;
  const double expected = -0.1 / (1 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(w[0], expected, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Fixture f;
  const RealArray before = f.w;
  auto g = f.group();
  AdamState s = make_adam_state(g);
  std::vector<RealArray> grads = {RealArray(2, 2), RealArray(std::vector<std::size_t>{2}, {0.0, 0.0})};
  adam_step(g, grads, s);
  EXPECT_TRUE(ad::bit_equal(before, f.w));
}

TEST(Adam, FrozenGroupRejected) {
  Fixture f;
  auto g = f.group();
  g.frozen = true;
  AdamState s = make_adam_state(g);
  std::vector<RealArray> grads = {RealArray(2, 2, 1.0), RealArray::vector({1.0, 1.0})};
  EXPECT_THROW(adam_step(g, grads, s), ContractError);
  EXPECT_EQ(f.w(0, 0), 1.0);
}

TEST(Adam, NonFiniteGradientNamesParameterAndBatch) {
  Fixture f;
  const RealArray before = f.w;
  auto g = f.group();
  AdamState s = make_adam_state(g);
  std::vector<RealArray> grads = {RealArray(2, 2, 1.0),
                                  RealArray::vector({std::numeric_limits<double>::quiet_NaN(), 0.0})};
  try {
    adam_step(g, grads, s, 17);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("layer.bias"), std::string::npos) << what;
    EXPECT_NE(what.find("17"), std::string::npos) << what;
  }
  EXPECT_TRUE(ad::bit_equal(before, f.w));  // nothing applied
  EXPECT_EQ(s.step, 0u);
}

TEST(Adam, ShapeMismatch) {
  Fixture f;
  auto g = f.group();
  AdamState s = make_adam_state(g);
  std::vector<RealArray> wrong = {RealArray(3, 2), RealArray::vector({0.0, 0.0})};
  EXPECT_THROW(adam_step(g, wrong, s), DimensionError);
  std::vector<RealArray> short_list = {RealArray(2, 2)};
  EXPECT_THROW(adam_step(g, short_list, s), DimensionError);
}

TEST(Adam, MinimizesQuadratic) {
  RealArray w = RealArray::vector({3.0, -4.0});
  ParamGroup g{{{"w", &w}}, false};
  AdamState s = make_adam_state(g, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) {
    std::vector<RealArray> grad = {RealArray::vector({2 * w[0], 2 * w[1]})};
    adam_step(g, grad, s);
  }
  EXPECT_NEAR(w[0], 0.0, 1e-3);
  EXPECT_NEAR(w[1], 0.0, 1e-3);
}

TEST(Clip, ScalesToMaxNorm) {
  std::vector<RealArray> grads = {RealArray::vector({3.0}), RealArray::vector({4.0})};
  EXPECT_DOUBLE_EQ(clip_by_global_norm(grads, 1.0), 5.0);
  EXPECT_NEAR(grads[0][0], 0.6, 1e-15);
  EXPECT_NEAR(grads[1][0], 0.8, 1e-15);
}

TEST(Clip, SmallNormUntouched) {
  std::vector<RealArray> grads = {RealArray::vector({0.3}), RealArray::vector({0.4})};
  EXPECT_DOUBLE_EQ(clip_by_global_norm(grads, 1.0), 0.5);
  EXPECT_EQ(grads[0][0], 0.3);
}
