#include "psgd/rnn.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace psgd;

namespace {

// Small random batch; classes/targets depend on the loss kind.
SequenceBatch random_batch(const RnnDims& dims, int T, int batch, LossKind kind, Rng& rng,
                           bool mask_all = true) {
  SequenceBatch b;
  b.loss_kind = kind;
  b.T = T;
  b.batch = batch;
  b.n_u = dims.n_u;
  b.n_y = dims.n_y;
  b.inputs.resize(T);
  b.targets.resize(T);
  b.classes.resize(T);
  b.loss_mask.assign(T, 0);
  for (int t = 0; t < T; ++t) {
    b.inputs[t] = gaussian_matrix(dims.n_u, batch, 1.0, rng);
    const bool masked = mask_all || t == T - 1;
    if (!masked) continue;
    b.loss_mask[t] = 1;
    if (kind == LossKind::Mse) {
      b.targets[t] = gaussian_matrix(dims.n_y, batch, 1.0, rng);
    } else {
      b.classes[t].resize(batch);
      for (int k = 0; k < batch; ++k)
        b.classes[t](k) = static_cast<int>(rng.uniform_int(0, dims.n_y - 1));
    }
  }
  b.eval_mask = b.loss_mask;
  return b;
}

RnnParams zero_params(const RnnDims& dims) {
  RnnParams p;
  p.dims = dims;
  p.W1.setZero(dims.n_x, dims.w1_cols());
  p.W2.setZero(dims.n_y, dims.w2_cols());
  return p;
}

}  // namespace

TEST(InitParams, RecurrentBlockIsOrthogonal) {
  Rng rng(1);
  const RnnDims dims{3, 12, 2};
  const RnnParams p = init_params(dims, rng);
  const Matrix b = p.W1.middleCols(dims.n_u, dims.n_x);
  EXPECT_LE((b.transpose() * b - Matrix::Identity(12, 12)).norm(), 1e-12);
}

TEST(InitParams, BiasColumnsAreZero) {
  Rng rng(2);
  const RnnDims dims{3, 5, 2};
  const RnnParams p = init_params(dims, rng);
  EXPECT_EQ(p.W1.col(dims.n_u + dims.n_x).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(p.W2.col(dims.n_x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitParams, NonRecurrentStdNearPointOne) {
  Rng rng(3);
  const RnnDims dims{20, 20, 20};  // 400 input-block entries
  const RnnParams p = init_params(dims, rng);
  const Matrix block = p.W1.leftCols(dims.n_u);
  const double std = std::sqrt(block.array().square().mean());
  EXPECT_GE(std, 0.05);
  EXPECT_LE(std, 0.15);
}

TEST(Forward, ZeroW1GivesZeroActivations) {
  const RnnDims dims{2, 4, 3};
  RnnParams p = zero_params(dims);
  Rng rng(4);
  const auto b = random_batch(dims, 5, 3, LossKind::Mse, rng);
  const auto tr = forward(p, b);
  for (int t = 1; t <= b.T; ++t) {
    EXPECT_EQ(tr.hidden[t].minCoeff(), 0.0);
    EXPECT_EQ(tr.hidden[t].maxCoeff(), 0.0);
  }
}

TEST(Forward, ZeroW2GivesZeroOutputs) {
  const RnnDims dims{2, 4, 3};
  Rng rng(5);
  RnnParams p = init_params(dims, rng);
  p.W2.setZero();
  const auto b = random_batch(dims, 5, 3, LossKind::Mse, rng);
  const auto tr = forward(p, b);
  for (const auto& y : tr.outputs) EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, HandComputedScalarStep) {
  const RnnDims dims{1, 1, 1};
  RnnParams p = zero_params(dims);
  p.W1 << 1, 0, 0;
  p.W2 << 2, 1;
  SequenceBatch b;
  b.loss_kind = LossKind::Mse;
  b.T = 1;
  b.batch = 1;
  b.n_u = 1;
  b.n_y = 1;
  b.inputs = {Matrix::Constant(1, 1, 1.0)};
  b.targets = {Matrix::Zero(1, 1)};
  b.classes.resize(1);
  b.loss_mask = {1};
  b.eval_mask = {1};
  const auto tr = forward(p, b);
  EXPECT_NEAR(tr.hidden[1](0, 0), std::tanh(1.0), 1e-15);
  EXPECT_NEAR(tr.outputs[0](0, 0), 2.0 * std::tanh(1.0) + 1.0, 1e-15);
  EXPECT_NEAR(tr.outputs[0](0, 0), 2.5231883119115298, 1e-12);
}

TEST(Forward, HiddenStaysInActivationRange) {
  Rng rng(6);
  const RnnDims dims{3, 6, 2};
  const RnnParams p = init_params(dims, rng);
  const auto b = random_batch(dims, 9, 4, LossKind::Mse, rng);
  const auto tr = forward(p, b);
  for (int t = 1; t <= b.T; ++t) {
    EXPECT_GT(tr.hidden[t].minCoeff(), -1.0);
    EXPECT_LT(tr.hidden[t].maxCoeff(), 1.0);
  }
}

TEST(Forward, DeterministicBitExact) {
  Rng rng(7);
  const RnnDims dims{3, 6, 2};
  const RnnParams p = init_params(dims, rng);
  const auto b = random_batch(dims, 9, 4, LossKind::Mse, rng);
  const auto t1 = forward(p, b);
  const auto t2 = forward(p, b);
  for (int t = 0; t < b.T; ++t) ASSERT_TRUE(t1.outputs[t] == t2.outputs[t]);
}

TEST(Forward, ShapeMismatchThrows) {
  Rng rng(8);
  const RnnDims dims{3, 6, 2};
  const RnnParams p = init_params(dims, rng);
  const RnnDims wrong{4, 6, 2};
  const auto b = random_batch(wrong, 5, 2, LossKind::Mse, rng);
  EXPECT_THROW(forward(p, b), DimensionError);
}

TEST(Loss, PerfectMseFitIsZero) {
  Rng rng(9);
  const RnnDims dims{2, 4, 2};
  const RnnParams p = init_params(dims, rng);
  auto b = random_batch(dims, 6, 3, LossKind::Mse, rng);
  const auto tr = forward(p, b);
  for (int t = 0; t < b.T; ++t) b.targets[t] = tr.outputs[t];
  EXPECT_EQ(loss(tr, b), 0.0);
  const auto g = bptt_grad(p, b);
  EXPECT_EQ(g.dW1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.dW2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, UniformLogitsGiveLogNumClasses) {
  const RnnDims dims{2, 3, 4};
  RnnParams p = zero_params(dims);
  Rng rng(10);
  const auto b = random_batch(dims, 4, 5, LossKind::CrossEntropy, rng);
  EXPECT_NEAR(loss(forward(p, b), b), std::log(4.0), 1e-12);
}

TEST(Loss, SingleMaskedMseStepByHand) {
  const RnnDims dims{1, 1, 2};
  RnnParams p = zero_params(dims);
  p.W2 << 0, 0, 1, 0;  // y = (0, x); we overwrite outputs anyway
  SequenceBatch b;
  b.loss_kind = LossKind::Mse;
  b.T = 1;
  b.batch = 1;
  b.n_u = 1;
  b.n_y = 2;
  b.inputs = {Matrix::Zero(1, 1)};
  b.targets = {Matrix::Zero(2, 1)};
  b.classes.resize(1);
  b.loss_mask = {1};
  b.eval_mask = {1};
  ForwardTrace tr;
  tr.hidden = {Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  Matrix y(2, 1);
  y << 1, 2;
  tr.outputs = {y};
  EXPECT_NEAR(loss(tr, b), 2.5, 1e-15);
}

TEST(Loss, EmptyMaskThrows) {
  Rng rng(11);
  const RnnDims dims{2, 3, 2};
  const RnnParams p = init_params(dims, rng);
  auto b = random_batch(dims, 4, 2, LossKind::Mse, rng);
  std::fill(b.loss_mask.begin(), b.loss_mask.end(), 0);
  EXPECT_THROW(loss(forward(p, b), b), ContractViolation);
  EXPECT_THROW(bptt_grad(p, b), ContractViolation);
}

TEST(Loss, CrossEntropyInvariantToLogitShift) {
  Rng rng(12);
  const RnnDims dims{2, 4, 5};
  const RnnParams p = init_params(dims, rng);
  const auto b = random_batch(dims, 6, 3, LossKind::CrossEntropy, rng);
  auto tr = forward(p, b);
  const double base = loss(tr, b);
  for (auto& y : tr.outputs) y.array() += 17.25;  // constant shift of every logit
  EXPECT_LE(std::abs(loss(tr, b) - base), 1e-12);
}

TEST(Bptt, CrossEntropyW2GradientHasZeroColumnSums) {
  Rng rng(13);
  const RnnDims dims{2, 4, 3};
  const RnnParams p = init_params(dims, rng);
  const auto b = random_batch(dims, 6, 4, LossKind::CrossEntropy, rng);
  const auto g = bptt_grad(p, b);
  EXPECT_LE(g.dW2.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bptt, MatchesFiniteDifferencesOnRandomInstances) {
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng(100 + rep);
    const RnnDims dims{3, 5, 2};
    const RnnParams p = init_params(dims, rng);
    const LossKind kind = rep % 2 == 0 ? LossKind::Mse : LossKind::CrossEntropy;
    const auto b = random_batch(dims, 7, 4, kind, rng, rep % 3 != 0);
    const auto g = bptt_grad(p, b);
    const auto fd = test::finite_difference_grad(p, b);
    ASSERT_LE(test::max_relative_error(g, fd), 1e-6) << "rep=" << rep;
    EXPECT_NEAR(g.loss, fd.loss, 1e-12);
  }
}

TEST(ProjectZeroColumnSum, EqualEntriesBecomeZero) {
  const Matrix m = Matrix::Constant(3, 4, 2.5);
  EXPECT_EQ(project_zero_column_sum(m).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProjectZeroColumnSum, HandColumn) {
  Matrix m(3, 1);
  m << 1, 2, 3;
  const Matrix out = project_zero_column_sum(m);
  EXPECT_NEAR(out(0, 0), -1.0, 1e-15);
  EXPECT_NEAR(out(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(out(2, 0), 1.0, 1e-15);
}

TEST(ProjectZeroColumnSum, IdempotentAndNonExpansive) {
  Rng rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix m = gaussian_matrix(5, 7, 2.0, rng);
    const Matrix once = project_zero_column_sum(m);
    const Matrix twice = project_zero_column_sum(once);
    EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE(once.norm(), m.norm() + 1e-14);
    EXPECT_LE(once.colwise().sum().cwiseAbs().maxCoeff(), 1e-13);
  }
  const Matrix zero_sum = project_zero_column_sum(gaussian_matrix(4, 4, 1.0, rng));
  EXPECT_LE((project_zero_column_sum(zero_sum) - zero_sum).cwiseAbs().maxCoeff(), 1e-15);
}
