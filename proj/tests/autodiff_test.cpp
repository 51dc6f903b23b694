#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cge/autodiff.hpp"
#include "cge/gradcheck.hpp"
#include "support.hpp"

using namespace cge;
namespace t = cge::testing;

TEST(Autodiff, SigmoidAtZero) {
  ad::Tape tape;
  EXPECT_DOUBLE_EQ(ad::sigmoid(tape.constant(Tensor::scalar(0.0))).value().item(), 0.5);
}

TEST(Autodiff, SoftmaxOfEqualLogitsIsUniform) {
  ad::Tape tape;
  const Tensor& s = ad::softmax(tape.constant(Tensor(1, 7, 3.0))).value();
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 7.0);
}

TEST(Autodiff, IdentityKernelKeepsMiddleRows) {
  std::mt19937_64 rng(3);
  Tensor seq = t::random_tensor(5, 4, rng);
  ad::Tape tape;
  const Tensor& out =
      ad::conv1d(tape.constant(seq), tape.constant(Tensor::column({0, 1, 0}))).value();
  ASSERT_EQ(out.rows(), 3u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out(r, c), seq(r + 1, c));
}

TEST(Autodiff, ConvPadsShortSequences) {
  ad::Tape tape;
  Tensor seq(1, 2, std::vector<double>{2.0, -1.0});
  const Tensor& out =
      ad::conv1d(tape.constant(seq), tape.constant(Tensor::column({1, 1, 1}))).value();
  ASSERT_EQ(out.rows(), 1u);
  EXPECT_EQ(out(0, 0), 2.0);
  EXPECT_EQ(out(0, 1), -1.0);
}

TEST(Autodiff, IdentityLossHasUnitGradient) {
  ParamStore store;
  const ParamId p = store.add("p", Family::Alpha, Tensor::scalar(2.0));
  ad::Tape tape(store);
  tape.backward(tape.param(p));
  EXPECT_EQ(store.grad(p).item(), 1.0);
}

TEST(Autodiff, SigmoidDerivativeAtZero) {
  ParamStore store;
  const ParamId p = store.add("p", Family::Alpha, Tensor::scalar(0.0));
  ad::Tape tape(store);
  tape.backward(ad::sigmoid(tape.param(p)));
  EXPECT_DOUBLE_EQ(store.grad(p).item(), 0.25);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  ParamStore store;
  const ParamId p = store.add("p", Family::Alpha, Tensor(2, 1));
  ad::Tape tape(store);
  EXPECT_THROW(tape.backward(tape.param(p)), ShapeError);
}

TEST(Autodiff, ShapeMismatchThrows) {
  ad::Tape tape;
  EXPECT_THROW(ad::add(tape.constant(Tensor(2, 2)), tape.constant(Tensor(2, 3))), ShapeError);
  EXPECT_THROW(ad::matmul(tape.constant(Tensor(2, 2)), tape.constant(Tensor(3, 2))), ShapeError);
}

TEST(Autodiff, ReusedParameterAccumulates) {
  ParamStore store;
  const ParamId p = store.add("p", Family::Alpha, Tensor::scalar(3.0));
  ad::Tape tape(store);
  ad::Var x = tape.param(p);
  tape.backward(ad::mul(x, x));
  EXPECT_DOUBLE_EQ(store.grad(p).item(), 6.0);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  ParamStore store;
  store.add("p", Family::Alpha, Tensor::scalar(1.0));
  auto f = [](ad::Tape& tape) { return tape.constant(Tensor::scalar(4.0)); };
  const auto rep = finite_diff_check(f, store);
  EXPECT_EQ(rep.entries[0].max_abs_analytic, 0.0);
  EXPECT_EQ(rep.entries[0].max_abs_numeric, 0.0);
  EXPECT_TRUE(rep.passed());
}

TEST(GradCheck, SquareAtThree) {
  ParamStore store;
  store.add("p", Family::Alpha, Tensor::scalar(3.0));
  auto f = [](ad::Tape& tape) {
    ad::Var p = tape.param("p");
    return ad::mul(p, p);
  };
  const auto rep = finite_diff_check(f, store);
  EXPECT_NEAR(rep.entries[0].max_abs_analytic, 6.0, 1e-10);
  EXPECT_NEAR(rep.entries[0].max_abs_numeric, 6.0, 1e-9);
}

// Every primitive, composed into one scalar, against central differences.
TEST(GradCheck, PrimitivesMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamStore store;
    std::mt19937_64 rng(seed);
    store.add("a", Family::Alpha, t::random_tensor(3, 4, rng, 0.5));
    store.add("b", Family::Alpha, t::random_tensor(4, 2, rng, 0.5));
    store.add("bias", Family::Alpha, t::random_tensor(1, 2, rng, 0.5));
    store.add("k", Family::WeightModel, t::random_tensor(3, 1, rng, 0.5));
    store.add("c", Family::Alpha, t::random_tensor(3, 4, rng, 0.5));
    auto f = [](ad::Tape& tape) {
      ad::Var a = tape.param("a"), b = tape.param("b"), c = tape.param("c");
      ad::Var ab = ad::add_bias(ad::matmul(a, b), tape.param("bias"));
      ad::Var conv = ad::conv1d(ad::transpose(a), tape.param("k"));
      ad::Var mixed = ad::concat({ad::sigmoid(ab), ad::tanh(ad::slice_cols(c, 1, 2))});
      const std::size_t idx[] = {2, 0, 1};
      ad::Var picked = ad::pick(ad::log_softmax(mixed), idx);
      ad::Var dots = ad::rowwise_dot(a, ad::exp(ad::scale(c, 0.3)));
      ad::Var nt = ad::matmul_nt(a, c);
      ad::Var s = ad::add(ad::sum(picked), ad::sum(ad::mul(dots, ad::log_sigmoid(dots))));
      s = ad::add(s, ad::sum(ad::mean_over_axis(ad::softmax(nt), 1)));
      s = ad::add(s, ad::sum(ad::mean_over_axis(ad::reshape(conv, 1, conv.value().size()), 0)));
      const std::size_t rows[] = {1, 1, 2};
      s = ad::add(s, ad::sum(ad::log(ad::add(ad::sigmoid(ad::gather_rows(c, rows)),
                                             tape.constant(Tensor(3, 4, 0.1))))));
      return ad::add(s, ad::sum(ad::clamp(ab, -0.2, 0.2)));
    };
    const auto rep = finite_diff_check(f, store);
    EXPECT_TRUE(rep.passed()) << "seed " << seed << " max rel " << rep.max_rel_error;
  }
}

TEST(GradCheck, LstmCellMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ParamStore store;
    std::mt19937_64 rng(seed);
    const std::size_t d = 3, h = 2;
    store.add("x", Family::Alpha, t::random_tensor(4, d, rng));
    store.add("W", Family::WeightModel, t::random_tensor(d, 4 * h, rng, 0.5));
    store.add("U", Family::WeightModel, t::random_tensor(h, 4 * h, rng, 0.5));
    store.add("b", Family::WeightModel, t::random_tensor(1, 4 * h, rng, 0.5));
    auto f = [](ad::Tape& tape) {
      ad::Var x = tape.param("x");
      ad::LstmState s{tape.constant(Tensor(4, 2)), tape.constant(Tensor(4, 2))};
      for (int step = 0; step < 3; ++step) {
        s = ad::lstm_cell(x, s, tape.param("W"), tape.param("U"), tape.param("b"));
      }
      return ad::sum(ad::mul(s.h, s.c));
    };
    EXPECT_TRUE(finite_diff_check(f, store).passed());
  }
}
