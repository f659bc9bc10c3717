#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fd_checks.hpp"
#include "metacal/error.hpp"
#include "metacal/nnet.hpp"
#include "reference_mlp.hpp"
#include "test_helpers.hpp"

using namespace metacal;
using testutil::random_batch;
using testutil::random_params;
using testutil::small_spec;

TEST(MlpSpec, ParamCountSumsLayers) {
  const MlpSpec def;
  EXPECT_EQ(def.param_count(), 4u * 128 + 128 + 128u * 128 + 128 + 128 + 1);
  EXPECT_EQ(small_spec(1, {4}).param_count(), 13u);
  EXPECT_EQ(def.layer_count(), 3u);
}

TEST(MlpSpec, RejectsZeroDimensions) {
  EXPECT_THROW(small_spec(0, {3}).validate(), InvalidArgument);
  EXPECT_THROW(small_spec(2, {3, 0}).validate(), InvalidArgument);
  MlpSpec s;
  s.output_dim = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  EXPECT_NO_THROW(small_spec(2, {}).validate());
}

TEST(LayerLayout, WeightsThenBiasPerLayer) {
  const auto layout = layer_layout(small_spec(3, {2}));
  ASSERT_EQ(layout.size(), 2u);
  EXPECT_EQ(layout[0].weight_offset, 0u);
  EXPECT_EQ(layout[0].bias_offset, 6u);
  EXPECT_EQ(layout[1].weight_offset, 8u);
  EXPECT_EQ(layout[1].bias_offset, 10u);
  EXPECT_EQ(layout[0].activation, Activation::ReLU);
  EXPECT_EQ(layout[1].activation, Activation::Linear);
}

TEST(ParamVector, LengthChecked) {
  const auto spec = small_spec(1, {2});
  EXPECT_THROW(ParamVector(spec, std::vector<double>(3)), ShapeError);
  EXPECT_EQ(ParamVector(spec).size(), spec.param_count());
  ParamVector a(spec), b(small_spec(1, {3}));
  EXPECT_THROW(a += b, ShapeError);
}

TEST(ParamVector, Arithmetic) {
  const auto spec = small_spec(1, {1});
  ParamVector a(spec, {1, 2, 3, 4}), b(spec, {0.5, 0.5, 0.5, 0.5});
  EXPECT_EQ((a - b).values()[1], 1.5);
  EXPECT_EQ((2.0 * a).values()[3], 8.0);
  EXPECT_DOUBLE_EQ(a.dot(b), 5.0);
  EXPECT_DOUBLE_EQ(b.norm(), 1.0);
  a.add_scaled(b, -2.0);
  EXPECT_EQ(a, ParamVector(spec, {0, 1, 2, 3}));
}

TEST(Forward, ZeroParamsGiveZero) {
  const auto spec = small_spec(4, {8, 8});
  const auto b = random_batch(5, 4, 1);
  const auto y = forward(ParamVector(spec), b.inputs);
  EXPECT_EQ(y.rows(), 5);
  EXPECT_TRUE((y.array() == 0.0).all());
}

TEST(Forward, HandEvaluatedOneTwoOne) {
  const auto spec = small_spec(1, {2});
  const ParamVector p(spec, {1, 1, 0, 0, 1, 1, 0});
  Eigen::MatrixXd x(1, 1);
  x << 1.0;
  EXPECT_EQ(forward(p, x)(0, 0), 2.0);
  x << -1.0;
  EXPECT_EQ(forward(p, x)(0, 0), 0.0);  // both hidden units clipped
}

TEST(Forward, DuplicatedRowsAgree) {
  const auto spec = small_spec(3, {6, 5});
  const auto p = random_params(spec, 3);
  Eigen::MatrixXd x(2, 3);
  x.row(0) << 0.3, -1.2, 0.8;
  x.row(1) = x.row(0);
  const auto y = forward(p, x);
  EXPECT_EQ(y(0, 0), y(1, 0));
}

TEST(Forward, WidthMismatchNamesBothSides) {
  const auto p = random_params(small_spec(3, {4}), 1);
  try {
    forward(p, Eigen::MatrixXd::Zero(2, 5));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('5'), std::string::npos);
  }
}

TEST(Forward, MatchesReference) {
  const auto spec = small_spec(3, {7, 4});
  const auto p = random_params(spec, 11);
  const auto b = random_batch(9, 3, 12);
  const auto y = forward(p, b.inputs);
  for (std::size_t r = 0; r < 9; ++r) {
    const auto t = reftest::forward_one(spec, reftest::to_real(p), reftest::row(b, r));
    EXPECT_NEAR(y(Eigen::Index(r), 0), double(t.post.back()[0]), 1e-12);
  }
}

TEST(LossMae, PerfectFitIsZero) {
  const auto spec = small_spec(2, {3});
  const auto p = random_params(spec, 5);
  auto b = random_batch(6, 2, 6);
  b.targets = forward(p, b.inputs).col(0);
  EXPECT_EQ(loss_mae(p, b), 0.0);
  EXPECT_TRUE((grad(p, b).as_eigen().array() == 0.0).all());
}

TEST(LossMae, SingleSample) {
  const auto spec = small_spec(1, {});
  const ParamVector p(spec, {0.0, 3.0});  // constant 3
  Batch b{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Constant(1, 1.0)};
  EXPECT_EQ(loss_mae(p, b), 2.0);
}

TEST(LossMae, MatchesBruteForceLoop) {
  const auto spec = small_spec(3, {5});
  const auto p = random_params(spec, 21);
  const auto b = random_batch(10, 3, 22);
  const auto y = forward(p, b.inputs);
  double s = 0.0;
  for (Eigen::Index i = 0; i < 10; ++i) s += std::fabs(y(i, 0) - b.targets(i));
  EXPECT_NEAR(loss_mae(p, b), s / 10.0, 1e-12);
  EXPECT_NEAR(loss_mae(p, b), double(reftest::loss(spec, reftest::to_real(p), b)), 1e-12);
}

TEST(LossMae, RejectsEmptyAndMultiOutput) {
  const auto spec = small_spec(2, {3});
  Batch empty{Eigen::MatrixXd(0, 2), Eigen::VectorXd(0)};
  EXPECT_THROW(loss_mae(random_params(spec, 1), empty), InvalidArgument);
  EXPECT_THROW(grad(random_params(spec, 1), empty), InvalidArgument);
  MlpSpec two = spec;
  two.output_dim = 2;
  EXPECT_THROW(loss_mae(random_params(two, 1), random_batch(3, 2, 1)), ShapeError);
}

TEST(Grad, MatchesFiniteDifferences) {
  const auto s = fdcheck::grad_check(100, 0x6ad);
  EXPECT_EQ(s.failures, 0u) << "max rel " << s.max_rel;
  EXPECT_GT(s.coords_checked, 10 * s.coords_skipped);
}

TEST(Grad, MatchesReferenceBackprop) {
  const auto spec = small_spec(3, {6, 4});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_params(spec, seed);
    const auto b = random_batch(7, 3, 100 + seed);
    EXPECT_LT(reftest::rel_err(grad(p, b), reftest::gradient(spec, reftest::to_real(p), b)), 1e-12);
  }
}

TEST(Grad, PermutationInvariant) {
  const auto spec = small_spec(2, {5});
  const auto p = random_params(spec, 8);
  const auto b = random_batch(6, 2, 9);
  Batch r = b;
  r.inputs = b.inputs.colwise().reverse();
  r.targets = b.targets.reverse();
  EXPECT_LT((grad(p, b) - grad(p, r)).norm(), 1e-15);
}

TEST(LossAndGrad, AgreesWithSeparateCalls) {
  const auto spec = small_spec(2, {4, 3});
  const auto p = random_params(spec, 4);
  const auto b = random_batch(8, 2, 5);
  const auto lg = loss_and_grad(p, b);
  EXPECT_EQ(lg.loss, loss_mae(p, b));
  EXPECT_EQ(lg.gradient, grad(p, b));
}

TEST(Hvp, ZeroDirectionGivesZero) {
  const auto spec = small_spec(2, {4, 3});
  const auto h = hvp(random_params(spec, 1), random_batch(5, 2, 2), ParamVector(spec));
  EXPECT_TRUE((h.as_eigen().array() == 0.0).all());
}

TEST(Hvp, LinearInDirection) {
  const auto spec = small_spec(3, {5, 4});
  const auto p = random_params(spec, 31);
  const auto b = random_batch(8, 3, 32);
  const auto v1 = testutil::random_direction(spec, 33), v2 = testutil::random_direction(spec, 34);
  const auto lhs = hvp(p, b, v1 + v2);
  const auto rhs = hvp(p, b, v1) + hvp(p, b, v2);
  EXPECT_LT((lhs - rhs).norm(), 1e-10);
}

TEST(Hvp, SymmetricOperator) {
  const auto spec = small_spec(2, {5, 3});
  const auto p = random_params(spec, 41);
  const auto b = random_batch(6, 2, 42);
  const auto u = testutil::random_direction(spec, 43), v = testutil::random_direction(spec, 44);
  EXPECT_NEAR(u.dot(hvp(p, b, v)), v.dot(hvp(p, b, u)), 1e-10);
}

TEST(Hvp, MatchesFiniteDifferenceOfGradient) {
  const auto s = fdcheck::hvp_check(50, 0x4e55);
  EXPECT_EQ(s.failures, 0u) << "max rel " << s.max_rel;
}

TEST(Hvp, DirectionLengthChecked) {
  const auto spec = small_spec(2, {3});
  EXPECT_THROW(hvp(random_params(spec, 1), random_batch(3, 2, 1), ParamVector(small_spec(2, {4}))), ShapeError);
}

TEST(Determinism, RepeatedCallsBitIdentical) {
  const auto spec = small_spec(4, {16, 16});
  const auto p = random_params(spec, 51);
  const auto b = random_batch(20, 4, 52);
  const auto v = testutil::random_direction(spec, 53);
  EXPECT_EQ(forward(p, b.inputs), forward(p, b.inputs));
  EXPECT_EQ(loss_mae(p, b), loss_mae(p, b));
  EXPECT_EQ(grad(p, b), grad(p, b));
  EXPECT_EQ(hvp(p, b, v), hvp(p, b, v));
}

TEST(InitParams, DeterministicAndSeedSensitive) {
  const MlpSpec spec;
  EXPECT_EQ(init_params(spec, 7), init_params(spec, 7));
  EXPECT_FALSE(init_params(spec, 7) == init_params(spec, 8));
}

TEST(InitParams, WithinGlorotBoundAndZeroBias) {
  const MlpSpec spec;
  const auto p = init_params(spec, 3);
  for (const auto& L : layer_layout(spec)) {
    const double bound = std::sqrt(6.0 / double(L.fan_in + L.fan_out));
    double widest = 0.0;
    for (std::size_t i = 0; i < L.fan_in * L.fan_out; ++i) {
      const double w = p[L.weight_offset + i];
      EXPECT_LE(std::fabs(w), bound);
      widest = std::max(widest, std::fabs(w));
    }
    if (L.fan_in * L.fan_out > 100) EXPECT_GT(widest, 0.9 * bound);
    for (std::size_t i = 0; i < L.fan_out; ++i) EXPECT_EQ(p[L.bias_offset + i], 0.0);
  }
}

TEST(Batch, ValidateRejectsNonFinite) {
  auto b = random_batch(3, 2, 1);
  EXPECT_NO_THROW(b.validate());
  b.inputs(1, 1) = std::nan("");
  EXPECT_THROW(b.validate(), DataError);
  Batch mismatch{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(2)};
  EXPECT_THROW(mismatch.validate(), ShapeError);
}

TEST(Batch, ConcatenateStacksRows) {
  const std::vector<Batch> parts{random_batch(3, 2, 1), random_batch(4, 2, 2)};
  const auto all = concatenate(parts);
  EXPECT_EQ(all.size(), 7u);
  EXPECT_EQ(all.inputs.row(3), parts[1].inputs.row(0));
  EXPECT_EQ(all.targets(6), parts[1].targets(3));
  const std::vector<Batch> bad{random_batch(3, 2, 1), random_batch(3, 3, 1)};
  EXPECT_THROW(concatenate(bad), ShapeError);
}
