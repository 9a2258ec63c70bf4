#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cmath>

#include "lowrank/core.hpp"
#include "lowrank/testing/invariants.hpp"
#include "lowrank/testing/oracles.hpp"

using namespace lowrank;
using lowrank::testing::random_factored;

namespace {

Matrix diag3(double a, double b, double c) {
  Matrix z = Matrix::Zero(3, 3);
  z(0, 0) = a;
  z(1, 1) = b;
  z(2, 2) = c;
  return z;
}

void expect_valid(const FactoredMatrix& x, const RankPolicy& policy = {}) {
  EXPECT_LE(x.orthonormality_residual(), 1e-10);
  for (Index i = 1; i < x.rank(); ++i) EXPECT_LE(x.sigma()(i), x.sigma()(i - 1));
  if (x.rank() > 0) {
    const double thr = policy.threshold(x.sigma()(0));
    EXPECT_GT(x.sigma().minCoeff(), thr);
  }
}

}  // namespace

TEST(FactoredMatrix, ZeroAssemblesToZeroMatrix) {
  const FactoredMatrix x = FactoredMatrix::zero(3, 4);
  EXPECT_EQ(x.rank(), 0);
  EXPECT_TRUE(x.is_zero());
  const Matrix d = assemble(x);
  EXPECT_EQ(d.rows(), 3);
  EXPECT_EQ(d.cols(), 4);
  EXPECT_EQ(d.norm(), 0.0);
}

TEST(FactoredMatrix, RankOneOuterProduct) {
  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1.0;
  const FactoredMatrix x(e1, Vector::Constant(1, 2.0), e1);
  Matrix expected(2, 2);
  expected << 2, 0, 0, 0;
  EXPECT_EQ(assemble(x), expected);
}

TEST(FactoredMatrix, AssembleMatchesLoopProduct) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const FactoredMatrix x = random_factored(rng, 7, 5, 3);
    const Matrix oracle = lowrank::testing::loop_product(x.U(), x.sigma(), x.V());
    EXPECT_LE((assemble(x) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FactoredMatrix, RoundTripKeepsSpectrum) {
  Rng rng(2);
  const FactoredMatrix x = random_factored(rng, 9, 6, 4);
  const FactoredMatrix y = truncated_svd(assemble(x), 6);
  ASSERT_EQ(y.rank(), 4);
  EXPECT_LE((y.sigma() - x.sigma()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FactoredMatrix, RejectsInvalidFactors) {
  Matrix u = Matrix::Identity(3, 2);
  Vector s(2);
  s << 1.0, 2.0;
  EXPECT_THROW(FactoredMatrix(u, s, u), PreconditionError);
  s << 1.0, 0.0;
  EXPECT_THROW(FactoredMatrix(u, s, u), PreconditionError);
  EXPECT_THROW(FactoredMatrix(u, Vector::Ones(1), u), PreconditionError);
}

TEST(FactoredMatrix, LeadingDropsTrailingTriples) {
  const FactoredMatrix x = truncated_svd(diag3(3, 2, 1), 3);
  EXPECT_EQ(x.leading(2).rank(), 2);
  EXPECT_DOUBLE_EQ(x.leading(2).singular_value(2), 2.0);
  EXPECT_TRUE(x.leading(0).is_zero());
  EXPECT_DOUBLE_EQ(x.singular_value(4), 0.0);
}

TEST(RankPolicy, ThresholdAndValidation) {
  RankPolicy p;
  Vector v(4);
  v << 1.0, 1e-6, 1e-13, 0.0;
  EXPECT_EQ(p.numerical_rank(v), 2);
  p.abs_tol = 1e-3;
  EXPECT_EQ(p.numerical_rank(v), 1);
  p.abs_tol = -1.0;
  EXPECT_THROW(p.validate(), PreconditionError);
}

TEST(TruncatedSvd, DiagonalKeepsTopTwo) {
  const FactoredMatrix x = truncated_svd(diag3(3, 2, 1), 2);
  ASSERT_EQ(x.rank(), 2);
  EXPECT_NEAR(x.sigma()(0), 3.0, 1e-14);
  EXPECT_NEAR(x.sigma()(1), 2.0, 1e-14);
  EXPECT_NEAR((diag3(3, 2, 1) - assemble(x)).norm(), 1.0, 1e-12);
}

TEST(TruncatedSvd, ZeroInputGivesZeroMatrix) {
  for (Index k = 0; k <= 3; ++k) EXPECT_TRUE(truncated_svd(Matrix::Zero(3, 4), k).is_zero());
}

TEST(TruncatedSvd, FullRankBudgetReconstructs) {
  Rng rng(3);
  const RankPolicy exact{0.0, 0.0};
  for (int t = 0; t < 10; ++t) {
    const Matrix z = gaussian_matrix(rng, 6 + t, 4 + t % 3);
    const FactoredMatrix x = truncated_svd(z, std::min(z.rows(), z.cols()), exact);
    EXPECT_LE((z - assemble(x)).norm(), 1e-10 * z.norm());
  }
}

TEST(TruncatedSvd, BudgetOutOfRangeThrows) {
  EXPECT_THROW(truncated_svd(Matrix::Ones(2, 3), 3), PreconditionError);
  EXPECT_THROW(truncated_svd(Matrix::Ones(2, 3), -1), PreconditionError);
}

TEST(TruncatedSvd, EckartYoungErrorMatchesFullSvdTail) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Index m = lowrank::testing::pick(rng, 2, 20);
    const Index n = lowrank::testing::pick(rng, 2, 20);
    const Index k = lowrank::testing::pick(rng, 0, std::min(m, n));
    const Matrix z = gaussian_matrix(rng, m, n);
    Eigen::JacobiSVD<Matrix> full(z);
    const double tail = full.singularValues().tail(std::min(m, n) - k).norm();
    const FactoredMatrix x = truncated_svd(z, k);
    expect_valid(x);
    EXPECT_NEAR((z - assemble(x)).norm(), tail, 1e-8 * std::max(1.0, tail));
  }
}

TEST(PivotedQr, DuplicateColumnsHaveRankOne) {
  Matrix z(3, 2);
  z << 1, 1, 2, 2, 3, 3;
  EXPECT_EQ(pivoted_qr(z).rank, 1);
}

TEST(PivotedQr, IdentityHasUnitDiagonal) {
  const PivotedQR qr = pivoted_qr(Matrix::Identity(3, 3));
  EXPECT_EQ(qr.rank, 3);
  EXPECT_LE((qr.R.diagonal().cwiseAbs() - Vector::Ones(3)).norm(), 1e-15);
  EXPECT_LE((qr.Q.cwiseAbs().colwise().sum() - Eigen::RowVectorXd::Ones(3)).norm(), 1e-15);
}

TEST(PivotedQr, RandomFullRankReconstructs) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Matrix z = gaussian_matrix(rng, 6, 3);
    const PivotedQR qr = pivoted_qr(z);
    ASSERT_EQ(qr.rank, 3);
    EXPECT_LE((z - qr.Q * qr.R * qr.permutation.transpose()).norm(), 1e-10 * z.norm());
    EXPECT_LE((z - qr.Q * qr.r_unpivoted()).norm(), 1e-10 * z.norm());
    EXPECT_LE((qr.Q.transpose() * qr.Q - Matrix::Identity(3, 3)).norm(), 1e-12);
    for (Index i = 1; i < 3; ++i) EXPECT_LE(std::abs(qr.R(i, i)), std::abs(qr.R(i - 1, i - 1)));
  }
}

TEST(PivotedQr, ZeroHasEmptyFactors) {
  const PivotedQR qr = pivoted_qr(Matrix::Zero(4, 2));
  EXPECT_EQ(qr.rank, 0);
  EXPECT_EQ(qr.Q.cols(), 0);
  EXPECT_EQ(qr.R.rows(), 0);
}

TEST(PivotedQr, RankMatchesSvdRankOnDeficientMatrices) {
  Rng rng(6);
  const RankPolicy policy;
  for (int t = 0; t < 30; ++t) {
    const Index m = lowrank::testing::pick(rng, 3, 12);
    const Index n = lowrank::testing::pick(rng, 3, 12);
    const Index k = lowrank::testing::pick(rng, 1, std::min(m, n) - 1);
    const Matrix z = gaussian_matrix(rng, m, k) * gaussian_matrix(rng, k, n);
    Eigen::JacobiSVD<Matrix> svd(z);
    EXPECT_EQ(pivoted_qr(z, policy).rank, policy.numerical_rank(svd.singularValues()));
  }
}

TEST(SmallScale, BoundaryIsTwiceTheRank) {
  EXPECT_TRUE(is_small_scale(6, 100, 3));
  EXPECT_FALSE(is_small_scale(7, 100, 3));
  EXPECT_TRUE(is_small_scale(100, 2, 1));
}

namespace {

// u1 v1^T + 0.5 u2 v2^T with orthonormal u's and v's.
Matrix two_level(Rng& rng, Index m, Index n) {
  const Matrix u = lowrank::detail::random_stiefel(rng, m, 2);
  const Matrix v = lowrank::detail::random_stiefel(rng, n, 2);
  return u.col(0) * v.col(0).transpose() + 0.5 * u.col(1) * v.col(1).transpose();
}

}  // namespace

class LargeSvdBackends : public ::testing::TestWithParam<LargeSvdBackend> {};

TEST_P(LargeSvdBackends, KnownSpectrumRankTwo) {
  Rng rng(7);
  const Matrix z = two_level(rng, 40, 50);
  LargeSvdOptions opts;
  opts.backend = GetParam();
  const FactoredMatrix x = large_truncated_svd(z, 2, {}, opts);
  ASSERT_EQ(x.rank(), 2);
  EXPECT_NEAR(x.sigma()(0), 1.0, 1e-8);
  EXPECT_NEAR(x.sigma()(1), 0.5, 1e-8);
}

TEST_P(LargeSvdBackends, RankOneBudgetLeavesHalf) {
  Rng rng(8);
  const Matrix z = two_level(rng, 40, 50);
  LargeSvdOptions opts;
  opts.backend = GetParam();
  const FactoredMatrix x = large_truncated_svd(z, 1, {}, opts);
  ASSERT_EQ(x.rank(), 1);
  EXPECT_NEAR(x.sigma()(0), 1.0, 1e-8);
  EXPECT_NEAR((z - assemble(x)).norm(), 0.5, 1e-8);
}

TEST_P(LargeSvdBackends, ZeroOperator) {
  LargeSvdOptions opts;
  opts.backend = GetParam();
  EXPECT_TRUE(large_truncated_svd(Matrix::Zero(30, 40), 3, {}, opts).is_zero());
}

TEST_P(LargeSvdBackends, MatchesDenseSpectrumOnRandomMatrices) {
  Rng rng(9);
  LargeSvdOptions opts;
  opts.backend = GetParam();
  for (int t = 0; t < 5; ++t) {
    // Decaying spectrum so that subspace iteration converges quickly.
    const Index m = 60, n = 45;
    const Matrix u = lowrank::detail::random_stiefel(rng, m, n);
    const Matrix v = lowrank::detail::random_stiefel(rng, n, n);
    Vector s(n);
    for (Index i = 0; i < n; ++i) s(i) = std::pow(0.7, static_cast<double>(i));
    const Matrix z = u * s.asDiagonal() * v.transpose();
    const FactoredMatrix x = large_truncated_svd(z, 4, {}, opts);
    ASSERT_EQ(x.rank(), 4);
    EXPECT_LE((x.sigma() - s.head(4)).cwiseAbs().maxCoeff(), 1e-8 * s(0));
    EXPECT_LE(x.orthonormality_residual(), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Backends, LargeSvdBackends,
                         ::testing::Values(LargeSvdBackend::dense, LargeSvdBackend::block_power));

TEST(LargeSvd, SparsePlusLowRankOperator) {
  Rng rng(10);
  Eigen::SparseMatrix<double> s(30, 20);
  s.insert(0, 0) = 3.0;
  s.insert(5, 7) = -2.0;
  const Matrix l = gaussian_matrix(rng, 30, 2);
  const Matrix r = gaussian_matrix(rng, 20, 2);
  const SparsePlusLowRank op(s, l, r);
  const Matrix dense = op.dense();
  LargeSvdOptions opts;
  opts.backend = LargeSvdBackend::block_power;
  const FactoredMatrix a = large_truncated_svd(op, 3, {}, opts);
  const FactoredMatrix b = truncated_svd(dense, 3);
  EXPECT_LE((a.sigma() - b.sigma()).cwiseAbs().maxCoeff(), 1e-8 * b.sigma()(0));
}

TEST(LargeSvd, NonConvergenceCarriesBestIterate) {
  Rng rng(11);
  const Matrix z = gaussian_matrix(rng, 50, 50);
  LargeSvdOptions opts;
  opts.backend = LargeSvdBackend::block_power;
  opts.max_iterations = 1;
  opts.oversample = 0;
  opts.tolerance = 1e-15;
  try {
    large_truncated_svd(z, 3, {}, opts);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.best().rank(), 3);
    EXPECT_GT(e.residual(), 1e-15);
  }
}
