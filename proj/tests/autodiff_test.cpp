#include <gtest/gtest.h>

#include "ctcvo/errors.hpp"
#include "ctcvo/pose.hpp"
#include "ctcvo/raw_pose.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

namespace ctcvo {
namespace {

using namespace ctcvo::testing;

constexpr double kTol = 1e-6;

TEST(Autodiff, BinaryOps) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4), c = random_matrix(rng, 4, 2);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::add(v[0], v[1]); }, {a, b}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::sub(v[0], v[1]); }, {a, b}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::mul(v[0], v[1]); }, {a, b}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::matmul(v[0], v[1]); }, {a, c}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::scale(v[0], -2.5); }, {a}, rng), kTol);
}

TEST(Autodiff, RowwiseOps) {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(rng, 5, 3), bias = random_matrix(rng, 1, 3);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::add_rowwise(v[0], v[1]); }, {x, bias}, rng), kTol);
  const Eigen::RowVectorXd s = Eigen::RowVector3d(2.0, -1.0, 0.5), sh = Eigen::RowVector3d(1.0, 2.0, 3.0);
  EXPECT_LT(gradient_error([&](Tape&, const auto& v) { return ad::affine_rowwise(v[0], s, sh); }, {x}, rng), kTol);
}

TEST(Autodiff, Activations) {
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(rng, 4, 5);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::elu(v[0]); }, {x}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::sigmoid(v[0]); }, {x}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::tanh(v[0]); }, {x}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::sum(v[0]); }, {x}, rng), kTol);
}

TEST(Autodiff, EluValues) {
  Tape t;
  Matrix x(1, 3);
  x << -1.0, 0.0, 2.0;
  const Matrix y = ad::elu(t.constant(x)).value();
  EXPECT_NEAR(y(0, 0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(0, 2), 2.0);
}

TEST(Autodiff, LayoutOps) {
  std::mt19937_64 rng(4);
  const Matrix a = random_matrix(rng, 6, 3), b = random_matrix(rng, 2, 3), c = random_matrix(rng, 6, 2);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::concat_rows({v[0], v[1]}); }, {a, b}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::concat_cols({v[0], v[1]}); }, {a, c}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::slice_rows(v[0], 2, 3); }, {a}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::slice_cols(v[0], 1, 2); }, {a}, rng), kTol);
  EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::flatten_blocks(v[0], 2, 3); }, {a}, rng), kTol);
}

TEST(Autodiff, FlattenBlocksLayout) {
  Tape t;
  Matrix x(4, 2);
  x << 1, 5, 2, 6, 3, 7, 4, 8;
  const Matrix y = ad::flatten_blocks(t.constant(x), 2, 2).value();
  Matrix expected(2, 4);
  expected << 1, 2, 5, 6, 3, 4, 7, 8;
  EXPECT_EQ(y, expected);
}

TEST(Autodiff, PoseOpsMatchPoseAlgebra) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    Tape t;
    Var va = t.constant(Matrix(to_raw(a).transpose())), vb = t.constant(Matrix(to_raw(b).transpose()));
    const Pose c = from_raw(ad::compose_pose(va, vb).value().row(0).transpose());
    EXPECT_LT(pose_distance(c, compose(a, b)), 1e-12);
    const Pose ai = from_raw(ad::inverse_pose(va).value().row(0).transpose());
    EXPECT_LT(pose_distance(ai, inverse(a)), 1e-12);
  }
}

TEST(Autodiff, PoseOpGradients) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 1, 7), b = random_matrix(rng, 1, 7);
    EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::compose_pose(v[0], v[1]); }, {a, b}, rng), 1e-6);
    EXPECT_LT(gradient_error([](Tape&, const auto& v) { return ad::inverse_pose(v[0]); }, {a}, rng), 1e-6);
  }
}

TEST(Autodiff, ReusedNodesAccumulate) {
  std::mt19937_64 rng(7);
  const Matrix a = random_matrix(rng, 3, 3);
  auto f = [](Tape&, const std::vector<Var>& v) { return ad::matmul(ad::tanh(v[0]), ad::mul(v[0], v[0])); };
  EXPECT_LT(gradient_error(f, {a}, rng), kTol);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(Matrix::Ones(2, 2));
  Var v = t.variable(Matrix::Ones(2, 2));
  t.backward(ad::sum(ad::mul(c, v)));
  EXPECT_FALSE(t.has_grad(c.id()));
  EXPECT_TRUE(t.has_grad(v.id()));
}

TEST(Autodiff, ShapeErrors) {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3)), b = t.constant(Matrix::Zero(2, 2));
  EXPECT_THROW(ad::add(a, b), ShapeMismatch);
  EXPECT_THROW(ad::matmul(a, a), ShapeMismatch);
  EXPECT_THROW(t.backward(a), ShapeMismatch);
}

}  // namespace
}  // namespace ctcvo
