#include <gtest/gtest.h>

#include <cstring>

#include "taca/tensor_math.hpp"

using namespace taca;

namespace {

MatrixD naive_matmul(const MatrixD& a, const MatrixD& b) {
  MatrixD out = MatrixD::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

}  // namespace

TEST(Matmul, IdentityIsExact) {
  Rng rng(1);
  const MatrixD m = randn(3, 3, rng);
  const MatrixD eye = MatrixD::Identity(3, 3);
  EXPECT_EQ(matmul(eye, m), m);
  EXPECT_EQ(matmul(m, eye), m);
}

TEST(Matmul, ScalarProduct) {
  MatrixD a(1, 1), b(1, 1);
  a << 2;
  b << 3;
  EXPECT_EQ(matmul(a, b)(0, 0), 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(42);
  const MatrixD a = randn(4, 5, rng);
  const MatrixD b = randn(5, 2, rng);
  EXPECT_LE((matmul(a, b) - naive_matmul(a, b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Matmul, RejectsMismatch) {
  EXPECT_THROW(matmul(MatrixD(2, 3), MatrixD(2, 3)), ShapeError);
}

TEST(SoftmaxRows, SymmetricRow) {
  MatrixD m(1, 2);
  m << 0, 0;
  const MatrixD p = softmax_rows(m);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
}

TEST(SoftmaxRows, LargeLogitsDoNotOverflow) {
  MatrixD m(1, 3);
  m << 1000, 1000, 1000;
  const MatrixD p = softmax_rows(m);
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(p(0, j), 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, KnownValues) {
  MatrixD m(1, 3);
  m << 1, 2, 3;
  const MatrixD p = softmax_rows(m);
  // High-precision exp/sum evaluation.
  EXPECT_NEAR(p(0, 0), 0.0900305731703805, 1e-5);
  EXPECT_NEAR(p(0, 1), 0.2447284710547977, 1e-5);
  EXPECT_NEAR(p(0, 2), 0.6652409557748219, 1e-5);
}

TEST(SoftmaxRows, NanIsRejected) {
  MatrixD m(1, 2);
  m << 0, std::nan("");
  EXPECT_THROW(softmax_rows(m), NumericError);
}

TEST(SoftmaxRows, RowStochasticAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const MatrixD m = 5.0 * randn(6, 9, rng);
    const MatrixD p = softmax_rows(m);
    EXPECT_TRUE((p.array() >= 0.0).all() && (p.array() <= 1.0).all());
    EXPECT_LE((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
    const VectorD shift = 100.0 * randn(6, 1, rng);
    const MatrixD shifted = m.colwise() + shift;
    EXPECT_LE((softmax_rows(shifted) - p).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Randn, SameSeedSameBytes) {
  Rng a(42), b(42);
  const MatrixD x = randn(7, 5, a);
  const MatrixD y = randn(7, 5, b);
  EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
}

TEST(Randn, SmallShapeIsFinite) {
  Rng rng(3);
  const MatrixD x = randn(2, 2, rng);
  EXPECT_EQ(x.size(), 4);
  EXPECT_TRUE(all_finite(x));
}

TEST(Randn, MomentsOfAMillionDraws) {
  Rng rng(42);
  const MatrixD x = randn(1000, 1000, rng);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Randn, RejectsEmptyShape) {
  Rng rng(1);
  EXPECT_THROW(randn(0, 3, rng), DomainError);
}

TEST(Rng, UniformIndexStaysInRange) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(FiniteDiff, LinearFunction) {
  Rng rng(2);
  const MatrixD x = randn(3, 4, rng);
  const MatrixD g = finite_diff_grad([](const MatrixD& m) { return m.sum(); }, x, 1e-5);
  EXPECT_LE((g.array() - 1.0).abs().maxCoeff(), 1e-8);
}

TEST(FiniteDiff, Quadratic) {
  Rng rng(3);
  const MatrixD x = randn(4, 2, rng);
  const MatrixD g =
      finite_diff_grad([](const MatrixD& m) { return 0.5 * m.squaredNorm(); }, x, 1e-5);
  EXPECT_LE((g - x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FiniteDiff, NonFiniteValueThrows) {
  const MatrixD x = MatrixD::Ones(1, 1);
  EXPECT_THROW(finite_diff_grad([](const MatrixD&) { return std::nan(""); }, x, 1e-5), NumericError);
  EXPECT_THROW(finite_diff_grad([](const MatrixD& m) { return m.sum(); }, x, 0.0), DomainError);
}
