#include <gtest/gtest.h>

#include <cmath>

#include "lowrank/cones.hpp"
#include "lowrank/maps.hpp"
#include "lowrank/problems.hpp"
#include "lowrank/testing/invariants.hpp"
#include "lowrank/testing/oracles.hpp"

using namespace lowrank;
using lowrank::testing::central_difference;

namespace {

// Worst relative FD mismatch over `points` random (X, H).
double fd_worst(const Objective& obj, Rng& rng, int points) {
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const Matrix x = gaussian_matrix(rng, obj.rows(), obj.cols());
    Matrix h = gaussian_matrix(rng, obj.rows(), obj.cols());
    h /= h.norm();
    const double fd = central_difference(obj, x, h, 1e-6 * (1.0 + x.norm()));
    const double ip = obj.gradient(x).cwiseProduct(h).sum();
    worst = std::max(worst, std::abs(fd - ip) / std::max({std::abs(ip), std::abs(fd), 1e-8}));
  }
  return worst;
}

// Largest sampled ||grad f(X) - grad f(Y)|| / ||X - Y|| over pairs in a ball.
double sampled_lipschitz(const Objective& obj, Rng& rng, const Matrix& center, double radius,
                         int pairs) {
  double worst = 0.0;
  auto in_ball = [&] {
    Matrix d = gaussian_matrix(rng, obj.rows(), obj.cols());
    return Matrix(center + d * (radius * rng.uniform() / d.norm()));
  };
  for (int k = 0; k < pairs; ++k) {
    const Matrix x = in_ball();
    const Matrix y = in_ball();
    worst = std::max(worst, (obj.gradient(x) - obj.gradient(y)).norm() / (x - y).norm());
  }
  return worst;
}

}  // namespace

TEST(LeastSquares, ValuesAtTargetAndZero) {
  Rng rng(1);
  const Matrix t = gaussian_matrix(rng, 5, 4);
  const Objective obj = make_least_squares(t);
  EXPECT_EQ(obj.value(t), 0.0);
  EXPECT_EQ(obj.gradient(t).norm(), 0.0);
  EXPECT_DOUBLE_EQ(obj.value(Matrix::Zero(5, 4)), 0.5 * t.squaredNorm());
  EXPECT_EQ(obj.lipschitz_on_ball(t, 3.0), 1.0);
  EXPECT_LE(fd_worst(obj, rng, 10), 1e-5);
}

TEST(LeastSquares, ShapeMismatchThrows) {
  const Objective obj = make_least_squares(Matrix::Ones(3, 2));
  EXPECT_THROW(obj.value(Matrix::Ones(2, 3)), PreconditionError);
  EXPECT_THROW(obj.gradient(Matrix::Ones(3, 3)), PreconditionError);
}

TEST(Completion, EmptyMaskIsIdenticallyZero) {
  Rng rng(2);
  const Objective obj = make_completion(gaussian_matrix(rng, 4, 5), Matrix::Zero(4, 5));
  const Matrix x = gaussian_matrix(rng, 4, 5);
  EXPECT_EQ(obj.value(x), 0.0);
  EXPECT_EQ(obj.gradient(x).norm(), 0.0);
}

TEST(Completion, FullMaskEqualsLeastSquares) {
  Rng rng(3);
  const Matrix m = gaussian_matrix(rng, 4, 5);
  const Objective a = make_completion(m, Matrix::Ones(4, 5));
  const Objective b = make_least_squares(m);
  const Matrix x = gaussian_matrix(rng, 4, 5);
  EXPECT_DOUBLE_EQ(a.value(x), b.value(x));
  EXPECT_EQ(a.gradient(x), b.gradient(x));
}

TEST(Completion, GradientCheckAndLipschitz) {
  Rng rng(4);
  Matrix mask(6, 7);
  for (Index j = 0; j < 7; ++j)
    for (Index i = 0; i < 6; ++i) mask(i, j) = rng.bernoulli(0.4) ? 1.0 : 0.0;
  const Objective obj = make_completion(gaussian_matrix(rng, 6, 7), mask);
  EXPECT_LE(fd_worst(obj, rng, 10), 1e-5);
  const Matrix c = gaussian_matrix(rng, 6, 7);
  EXPECT_LE(sampled_lipschitz(obj, rng, c, 2.0, 10000), obj.lipschitz_on_ball(c, 2.0) + 1e-12);
}

TEST(Completion, RejectsNonBinaryMask) {
  EXPECT_THROW(make_completion(Matrix::Ones(2, 2), Matrix::Constant(2, 2, 0.5)), PreconditionError);
}

TEST(Sensing, PlantedPointIsAMinimizer) {
  Rng rng(5);
  const Matrix planted = gaussian_matrix(rng, 4, 3);
  std::vector<Matrix> ops;
  Vector b(15);
  for (Index i = 0; i < 15; ++i) {
    ops.push_back(gaussian_matrix(rng, 4, 3));
    b(i) = ops.back().cwiseProduct(planted).sum();
  }
  const Objective obj = make_sensing(ops, b);
  EXPECT_LE(obj.value(planted), 1e-25);
  EXPECT_LE(fd_worst(obj, rng, 10), 1e-5);
  const Matrix c = gaussian_matrix(rng, 4, 3);
  EXPECT_LE(sampled_lipschitz(obj, rng, c, 1.0, 10000),
            obj.lipschitz_on_ball(c, 1.0) * (1.0 + 1e-12));
}

TEST(Sensing, SingleOperatorParabola) {
  // A_1 = e1 e1^T, b = 2: f(X) = 1/2 (X_11 - 2)^2, grad = (X_11 - 2) e1 e1^T.
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  Vector b(1);
  b << 2.0;
  const Objective obj = make_sensing({a}, b);
  Matrix x(2, 2);
  x << 5, 7, -1, 3;
  EXPECT_DOUBLE_EQ(obj.value(x), 4.5);
  Matrix g = Matrix::Zero(2, 2);
  g(0, 0) = 3.0;
  EXPECT_LE((obj.gradient(x) - g).norm(), 1e-15);
  EXPECT_DOUBLE_EQ(obj.lipschitz_on_ball(x, 1.0), 1.0);
}

TEST(Apocalypse, UnsupportedRankNamesSupportedRanks) {
  try {
    make_apocalypse(0);
    FAIL() << "expected PreconditionError";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("r >= 1"), std::string::npos);
  }
}

TEST(Apocalypse, InitialPointIsNotStationary) {
  for (Index r = 1; r <= 4; ++r) {
    auto [obj, x0] = make_apocalypse(r);
    EXPECT_EQ(x0.rank(), r);
    EXPECT_GT(stationarity_measure(x0, obj.gradient(x0.dense()), r), 1e-3);
  }
}

TEST(Apocalypse, GradientAndLipschitz) {
  Rng rng(6);
  for (Index r = 1; r <= 3; ++r) {
    auto [obj, x0] = make_apocalypse(r);
    EXPECT_LE(fd_worst(obj, rng, 10), 1e-5);
    const Matrix c = x0.dense();
    EXPECT_LE(sampled_lipschitz(obj, rng, c, 0.5, 10000), obj.lipschitz_on_ball(c, 0.5) + 1e-12);
  }
}

TEST(Apocalypse, RestrictedAndTangentDirectionsCoincideAlongRfd) {
  // Along the RFD trajectory B = C = 0, so both cones give the same direction.
  auto [obj, x] = make_apocalypse(2);
  for (int k = 0; k < 50; ++k) {
    const Matrix g = -obj.gradient(x.dense());
    const Matrix a = project_tangent(g, x, 2).value.dense();
    const Matrix b = project_restricted(g, x, 2).value.dense();
    EXPECT_LE((a - b).norm(), 1e-14);
    x = rfd_step(x, obj, 2, {}).next;
  }
}

TEST(Apocalypse, LimitPointIsNotStationary) {
  // sigma_r -> 0 along RFD; the rank-deficient limit keeps s bounded away from 0.
  auto [obj, x] = make_apocalypse(2);
  const Matrix limit = x.leading(1).dense();
  const double s_limit = stationarity_measure(x.leading(1), obj.gradient(limit), 2);
  EXPECT_NEAR(s_limit, 1.0, 1e-12);
  for (int k = 0; k < 500; ++k) x = rfd_step(x, obj, 2, {}).next;
  EXPECT_LT(x.singular_value(2), 0.05);
  EXPECT_LT(stationarity_measure(x, obj.gradient(x.dense()), 2), 1e-4);
}

TEST(Instances, SeedDeterminesInstance) {
  for (InstanceKind kind : {InstanceKind::target_least_squares, InstanceKind::matrix_completion,
                            InstanceKind::matrix_sensing}) {
    InstanceSpec spec;
    spec.kind = kind;
    spec.m = 8;
    spec.n = 7;
    spec.init = InitKind::random;
    const Instance a = make_instance(spec);
    const Instance b = make_instance(spec);
    Rng rng(9);
    const Matrix x = gaussian_matrix(rng, 8, 7);
    EXPECT_EQ(a.objective.value(x), b.objective.value(x));
    EXPECT_EQ(a.initial.dense(), b.initial.dense());
    EXPECT_EQ(*a.planted, *b.planted);
    spec.seed = 2;
    EXPECT_NE(make_instance(spec).objective.value(x), a.objective.value(x));
  }
}

TEST(Instances, JsonRoundTrip) {
  InstanceSpec spec;
  spec.kind = InstanceKind::matrix_sensing;
  spec.seed = 0xfeedbeefULL;
  spec.target_spectrum = {3.0, 1.0};
  spec.noise = 0.01;
  const nlohmann::json j = spec;
  EXPECT_EQ(j.at("kind"), "matrix_sensing");
  EXPECT_EQ(j.get<InstanceSpec>(), spec);
}

TEST(Instances, TargetSpectrumIsPlanted) {
  InstanceSpec spec;
  spec.m = 9;
  spec.n = 6;
  spec.target_spectrum = {4.0, 2.0, 0.5};
  const Instance inst = make_instance(spec);
  const FactoredMatrix t = truncated_svd(*inst.planted, 6);
  ASSERT_EQ(t.rank(), 3);
  EXPECT_NEAR(t.sigma()(0), 4.0, 1e-12);
  EXPECT_NEAR(t.sigma()(2), 0.5, 1e-12);
}

TEST(Instances, ValidationErrors) {
  InstanceSpec spec;
  spec.rank = 20;
  EXPECT_THROW(make_instance(spec), PreconditionError);
  spec = {};
  spec.mask_density = 1.5;
  EXPECT_THROW(make_instance(spec), PreconditionError);
  spec = {};
  spec.target_spectrum = {1.0, 2.0};
  EXPECT_THROW(make_instance(spec), PreconditionError);
}

TEST(Instances, ApocalypseFixesDimensions) {
  InstanceSpec spec;
  spec.kind = InstanceKind::apocalypse;
  spec.rank = 3;
  const Instance inst = make_instance(spec);
  EXPECT_EQ(inst.spec.m, 4);
  EXPECT_EQ(inst.objective.rows(), 4);
  EXPECT_FALSE(inst.planted.has_value());
}
