#include <gtest/gtest.h>

#include "satrack/gradcheck_suite.hpp"

using namespace satrack;

TEST(GradCheck, QuadraticFormIsExact) {
  Tensor x = Tensor::from({3}, {0.3, -1.2, 2.0}, true);
  const Tensor A = Tensor::from({3, 3}, {2, 0.5, 0, 0.5, 1, -0.3, 0, -0.3, 3});
  auto f = [&] { return sum(mul(reshape(matmul(reshape(x, {1, 3}), A), {3}), x)); };
  EXPECT_LT(finite_diff_check(f, {{"x", x}}).max_rel_error(), 1e-9);
}

TEST(GradCheck, SoftmaxCrossEntropyLayer) {
  Rng r(2);
  std::vector<double> wv(12), xv(8);
  for (auto& v : wv) v = r.normal();
  for (auto& v : xv) v = r.normal();
  Tensor w = Tensor::from({3, 4}, wv, true);
  const Tensor x = Tensor::from({2, 4}, xv);
  const Tensor onehot = Tensor::from({2, 3}, {1, 0, 0, 0, 0, 1});
  auto f = [&] { return scale(sum(onehot * log(softmax(linear(x, w, Tensor()), 1))), -1.0); };
  EXPECT_LT(finite_diff_check(f, {{"w", w}}).max_rel_error(), 1e-6);
}

TEST(GradCheck, RejectsStepOutsideRange) {
  Tensor x = Tensor::from({1}, {1.0}, true);
  EXPECT_THROW(finite_diff_check([&] { return sum(x); }, {{"x", x}}, {1e-2, 0, 0}), ConfigError);
}

TEST(GradCheck, DetectsNonDeterminism) {
  Tensor x = Tensor::from({1}, {1.0}, true);
  int calls = 0;
  auto f = [&] { return sum(x * static_cast<double>(++calls)); };
  EXPECT_THROW(finite_diff_check(f, {{"x", x}}), NumericError);
}

TEST(GradCheck, EveryOperatorBelowOneInAMillion) {
  const auto results = op_gradcheck_suite();
  EXPECT_GE(results.size(), 40u);
  for (const auto& r : results) EXPECT_LT(r.report.max_rel_error(), 1e-6) << r.op;
}

TEST(GradCheck, SuiteIsStableAcrossSeeds) {
  for (std::uint64_t seed : {1u, 99u})
    for (const auto& r : op_gradcheck_suite(seed)) EXPECT_LT(r.report.max_rel_error(), 1e-6) << r.op << " seed " << seed;
}
