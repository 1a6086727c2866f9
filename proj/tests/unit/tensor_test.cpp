#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "lcm/errors.hpp"
#include "lcm/gradcheck.hpp"
#include "lcm/tensor.hpp"
#include "test_support.hpp"

namespace lcm {
namespace {

using testing::random_tensor;

TEST(Tensor, ShapeAndStorageInvariants) {
  const Tensor t(Shape{2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<Scalar>{1, 2, 3}), DimensionError);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor::vector({1.0, std::numeric_limits<Scalar>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor::vector({std::numeric_limits<Scalar>::infinity()}), NumericError);
}

TEST(Tensor, CloneIsDeep) {
  Tensor a = Tensor::vector({1, 2});
  Tensor b = a.clone();
  b.data_mut()[0] = 5;
  EXPECT_EQ(a.at(0), 1);
  EXPECT_FALSE(a.same_storage(b));
}

TEST(Ops, MatmulIdentityAndPick) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_TRUE(testing::bit_equal(matmul(eye, m), m));
  const Tensor pick = matmul(Tensor::matrix({{1, 0}}), Tensor::matrix({{0}, {5}}));
  EXPECT_EQ(pick.shape(), (Shape{1, 1}));
  EXPECT_EQ(pick.at(0), 0);
}

TEST(Ops, MatmulRejectsInnerMismatch) {
  EXPECT_THROW(matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3})), DimensionError);
}

TEST(Ops, ElementwiseValues) {
  const Tensor s = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  EXPECT_EQ(s.at(0), 4);
  EXPECT_EQ(s.at(1), 6);
  EXPECT_EQ(silu(Tensor::vector({0})).at(0), 0);
  EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
  // Scalar operands broadcast.
  EXPECT_EQ(mul(Tensor::vector({1, 2}), Tensor::scalar(3)).at(1), 6);
}

TEST(Ops, LinearMatchesMatmulPlusBias) {
  Rng rng(1);
  const Tensor x = random_tensor({5, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor y = linear(x, w, b);
  const Tensor ref = matmul(x, transpose(w));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(y.at(i, j), ref.at(i, j) + b.at(j), 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::vector({1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(x.grad(), (std::vector<Scalar>{1, 1, 1}));
}

TEST(Backward, SquareGivesTwoX) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<Scalar>{2, 4}));
}

TEST(Backward, TapeIsSingleUseAndNeedsScalarLoss) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = square(x);
  EXPECT_THROW(tape.backward(y), TapeError);
  Tape second;
  TapeScope inner(second);
  const Tensor loss = sum(square(x));
  second.backward(loss);
  EXPECT_THROW(second.backward(loss), TapeError);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    (void)sum(square(x));
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, StopGradientIsExactlyZero) {
  Tensor x = Tensor::vector({0.3, -1.2, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor y = add(square(stop_gradient(x)), silu(stop_gradient(x)));
    tape.backward(sum(y));
  }
  for (const Scalar g : x.grad()) EXPECT_EQ(g, 0);
}

TEST(Backward, DeterministicReplay) {
  Rng rng(7);
  Tensor w = random_tensor({6, 5}, rng);
  const Tensor x = random_tensor({4, 5}, rng);
  w.set_requires_grad(true);
  auto run = [&] {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(square(silu(linear(x, w)))));
    return w.grad();
  };
  EXPECT_EQ(run(), run());
}

// Every primitive against central differences at randomized shapes up to 8×8.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  Rng rng(100 + GetParam());
  const std::size_t m = 1 + rng.uniform_index(8), k = 1 + rng.uniform_index(8), n = 1 + rng.uniform_index(8);
  Tensor a = random_tensor({m, k}, rng);
  Tensor b = random_tensor({k, n}, rng);
  Tensor c = random_tensor({m, k}, rng);
  Tensor bias = random_tensor({n}, rng);
  Tensor pos = random_tensor({m, k}, rng);
  for (auto& v : pos.data_mut()) v = std::fabs(v) + Scalar(0.5);
  Tensor table = random_tensor({5, k}, rng);
  std::vector<std::size_t> ids(m);
  for (auto& i : ids) i = rng.uniform_index(5);
  for (Tensor* t : {&a, &b, &c, &bias, &pos, &table}) t->set_requires_grad(true);
  const Tensor weights = random_tensor({m, n}, rng);

  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"matmul", [&] { return sum(mul(matmul(a, b), weights)); }},
      {"transpose", [&] { return sum(mul(transpose(matmul(a, b)), transpose(weights))); }},
      {"linear", [&] { return sum(mul(linear(a, transpose(b), bias), weights)); }},
      {"add", [&] { return sum(square(add(a, c))); }},
      {"sub", [&] { return sum(square(sub(a, c))); }},
      {"mul", [&] { return sum(mul(mul(a, c), a)); }},
      {"scale", [&] { return sum(square(scale(a, Scalar(-1.7)))); }},
      {"silu", [&] { return sum(mul(silu(a), c)); }},
      {"square", [&] { return sum(mul(square(a), c)); }},
      {"sqrt", [&] { return sum(mul(sqrt(pos), c)); }},
      {"add_scalar", [&] { return sum(square(add_scalar(a, Scalar(0.3)))); }},
      {"mean", [&] { return mean(square(a)); }},
      {"sum_rows", [&] { return sum(square(sum_rows(a))); }},
      {"concat_cols", [&] { return sum(square(concat_cols({a, c, pos}))); }},
      {"gather_rows", [&] { return sum(mul(gather_rows(table, ids), c)); }},
      {"scalar_broadcast", [&] { return sum(square(mul(a, sum(c)))); }},
  };
  for (const auto& [name, fn] : cases) {
    const GradCheckReport r = grad_check(fn, {a, b, c, bias, pos, table});
    EXPECT_LT(r.max_rel_error, 1e-6) << name << " param " << r.worst_param;
  }
}

INSTANTIATE_TEST_SUITE_P(Randomized, PrimitiveGrad, ::testing::Range(0, 6));

TEST(GradCheck, SquareAtThree) {
  Tensor x = Tensor::scalar(3);
  x.set_requires_grad(true);
  const GradCheckReport r = grad_check([&] { return square(x); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  Tensor x = Tensor::vector({1, 2});
  x.set_requires_grad(true);
  const GradCheckReport r = grad_check([&] { return sum(scale(x, 0.0)); }, {x});
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.analytic, 0.0);
}

TEST(GradCheck, SiluAtOne) {
  Tensor x = Tensor::vector({1.0});
  x.set_requires_grad(true);
  EXPECT_LT(grad_check([&] { return sum(silu(x)); }, {x}).max_rel_error, 1e-6);
}

TEST(GradCheck, RejectsStepOutsideRange) {
  Tensor x = Tensor::scalar(1);
  x.set_requires_grad(true);
  EXPECT_THROW(grad_check([&] { return square(x); }, {x}, 1e-2), InvalidArgument);
}

TEST(GradCheck, ReportsNonFiniteProbe) {
  Tensor x = Tensor::vector({0.0});
  x.set_requires_grad(true);
  // sqrt of a value that the −h probe pushes negative.
  EXPECT_THROW(grad_check([&] { return sum(sqrt(x)); }, {x}), NumericError);
}

}  // namespace
}  // namespace lcm
