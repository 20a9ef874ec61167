// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "mie/nn.hpp"

using namespace mie;

namespace {

ModalityModel zero_model(std::size_t in, std::size_t c) {
  std::mt19937_64 rng(0);
  ModalityModel m = make_model(in, c, test::tiny_arch(), rng);
  for (auto& l : m.layers) {
    for (double& w : l.weights.data()) w = 0.0;
    for (double& b : l.biases) b = 0.0;
  }
  return m;
}

}  // namespace

TEST(Model, ShapeMatchesArchitecture) {
  std::mt19937_64 rng(1);
  const ModalityModel m = make_model(32, 10, Architecture{}, rng);
  ASSERT_EQ(m.layers.size(), 5u);
  EXPECT_EQ(m.encoder_count, 2u);
  EXPECT_EQ(m.layers[0].weights.rows(), 32u);
  EXPECT_EQ(m.layers[1].out_dim(), 64u);
  EXPECT_EQ(m.layers[2].out_dim(), 256u);
  EXPECT_EQ(m.layers[3].out_dim(), 64u);
  EXPECT_EQ(m.num_classes(), 10u);
  EXPECT_EQ(m.layers[3].activation, Activation::none);
  EXPECT_EQ(m.layers[4].activation, Activation::none);
  for (const auto& l : m.layers)
    for (double b : l.biases) EXPECT_EQ(b, 0.0);
}

TEST(Model, InitIsSeedDeterministic) {
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(make_model(8, 3, test::tiny_arch(), a), make_model(8, 3, test::tiny_arch(), b));
}

TEST(Forward, ZeroModelGivesUniformPrediction) {
  const ModalityModel m = zero_model(4, 5);
  std::mt19937_64 rng(2);
  const auto t = forward(m, test::random_matrix(3, 4, rng));
  for (double p : t.predictions.data()) EXPECT_DOUBLE_EQ(p, 0.2);
}

TEST(Forward, SoftmaxOfEqualLogits) {
  const Matrix p = softmax_rows(Matrix{{0.0, 0.0}});
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
}

TEST(Forward, RowsOnSimplexAndShiftInvariant) {
  std::mt19937_64 rng(3);
  const ModalityModel m = test::tiny_model(6, 4, 3);
  const auto t = forward(m, test::random_matrix(5, 6, rng));
  Matrix shifted = t.logits;
  for (double& v : shifted.data()) v += 100.0;
  const Matrix ps = softmax_rows(shifted);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (double v : t.predictions.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_LT(test::max_abs_diff(ps, t.predictions), 1e-12);
}

TEST(Forward, LargeLogitsStayFinite) {
  const Matrix p = softmax_rows(Matrix{{1000.0, -1000.0, 0.0}});
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
  EXPECT_TRUE(all_finite(p.data()));
}

TEST(Forward, VectorOverloadAndShapeError) {
  const ModalityModel m = test::tiny_model(6, 4, 4);
  const Vector x{1, 2, 3, 4, 5, 6};
  const auto one = forward(m, x);
  EXPECT_EQ(one.predictions.rows(), 1u);
  EXPECT_THROW(forward(m, Vector{1, 2}), ValidationError);
}

TEST(CrossEntropy, Examples) {
  EXPECT_DOUBLE_EQ(cross_entropy(Vector{0, 1, 0}, Vector{0, 1, 0}), 0.0);
  EXPECT_NEAR(cross_entropy(Vector{0.25, 0.25, 0.25, 0.25}, Vector{1, 0, 0, 0}), std::log(4.0), 1e-12);
  EXPECT_NEAR(cross_entropy(Vector{0.7, 0.2, 0.1}, Vector{0, 1, 0}), -std::log(0.2), 1e-12);
  EXPECT_NEAR(cross_entropy(Vector{0.7, 0.2, 0.1}, Vector{0, 1, 0}), 1.609438, 1e-6);
}

TEST(CrossEntropy, FloorsZeroProbability) {
  EXPECT_NEAR(cross_entropy(Vector{1, 0}, Vector{0, 1}), -std::log(kProbabilityFloor), 1e-9);
}

TEST(CrossEntropy, RejectsBadInputs) {
  EXPECT_THROW(cross_entropy(Vector{0.5, 0.5}, Vector{1, 0, 0}), ValidationError);
  EXPECT_THROW(cross_entropy(Vector{0.5, 0.5}, Vector{1, 1}), ValidationError);
  EXPECT_THROW(cross_entropy(Vector{0.5, 0.5}, Vector{0.5, 0.5}), ValidationError);
  EXPECT_THROW(cross_entropy(Vector{0.9, 0.9}, Vector{1, 0}), ValidationError);
  EXPECT_THROW(cross_entropy(Vector{1.5, -0.5}, Vector{1, 0}), ValidationError);
}

TEST(BatchLoss, SingleSampleEqualsCrossEntropy) {
  std::mt19937_64 rng(5);
  const ModalityModel m = test::tiny_model(6, 3, 5);
  const Batch b = test::random_batch(1, 6, 3, rng);
  const auto t = forward(m, b.inputs);
  Vector y(3, 0.0);
  y[b.labels[0]] = 1.0;
  EXPECT_DOUBLE_EQ(batch_loss(m, b), cross_entropy(t.predictions.row(0), y));
}

TEST(BatchLoss, DuplicatedSampleAndSumOracle) {
  std::mt19937_64 rng(6);
  const ModalityModel m = test::tiny_model(6, 3, 6);
  const Batch one = test::random_batch(1, 6, 3, rng);
  Batch two{Matrix(2, 6), {one.labels[0], one.labels[0]}};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 6; ++k) two.inputs(r, k) = one.inputs(0, k);
  EXPECT_DOUBLE_EQ(batch_loss(m, one), batch_loss(m, two));

  const Batch b = test::random_batch(12, 6, 3, rng);
  const auto t = forward(m, b.inputs);
  double s = 0.0;
  for (std::size_t i = 0; i < 12; ++i) s += -std::log(t.predictions(i, b.labels[i]));
  EXPECT_NEAR(batch_loss(m, b), s / 12.0, 1e-14);
}

TEST(BatchLoss, RejectsEmptyAndOutOfRange) {
  const ModalityModel m = test::tiny_model(6, 3, 7);
  EXPECT_THROW(batch_loss(m, Batch{Matrix(0, 6), {}}), ValidationError);
  EXPECT_THROW(batch_loss(m, Batch{Matrix(1, 6), {3}}), ValidationError);
  EXPECT_THROW(batch_loss(m, Batch{Matrix(2, 6), {0}}), ValidationError);
}

TEST(Backward, ZeroModelLogitDeltaIsPMinusY) {
  const ModalityModel m = zero_model(4, 4);
  // With every weight zero the last layer's input is zero, so the logit
  // delta shows up directly in the bias gradient.
  Batch b{Matrix(1, 4, {1, 2, 3, 4}), {2}};
  const GradientSet g = backward(m, b);
  const auto& gb = g.layers.back().biases;
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(gb[k], 0.25 - (k == 2 ? 1.0 : 0.0));
}

TEST(Backward, IdenticalSamplesMatchSingle) {
  std::mt19937_64 rng(8);
  const ModalityModel m = test::tiny_model(6, 3, 8);
  const Batch one = test::random_batch(1, 6, 3, rng);
  Batch many{Matrix(4, 6), std::vector<std::size_t>(4, one.labels[0])};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 6; ++k) many.inputs(r, k) = one.inputs(0, k);
  const GradientSet g1 = backward(m, one);
  const GradientSet g4 = backward(m, many);
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    EXPECT_LT(test::max_abs_diff(g1.layers[l].weights, g4.layers[l].weights), 1e-15);
    for (std::size_t k = 0; k < g1.layers[l].biases.size(); ++k)
      EXPECT_NEAR(g1.layers[l].biases[k], g4.layers[l].biases[k], 1e-15);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ModalityModel m = test::tiny_model(6, 4, 100 + s);
    const Batch b = test::random_batch(5, 6, 4, rng);
    const auto st = test::finite_difference_check(m, b);
    EXPECT_GE(static_cast<double>(st.passed), 0.99 * static_cast<double>(st.checked))
        << "worst relative error " << st.worst;
  }
}

TEST(Gradient, NormAndCongruence) {
  const ModalityModel m = test::tiny_model(6, 3, 10);
  GradientSet g = GradientSet::zeros_like(m);
  EXPECT_TRUE(congruent(m, g));
  EXPECT_EQ(g.norm(), 0.0);
  g.layers[0].weights(0, 0) = 3.0;
  g.layers[4].biases[1] = 4.0;
  EXPECT_DOUBLE_EQ(g.norm(), 5.0);
  g.layers.pop_back();
  EXPECT_FALSE(congruent(m, g));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ModalityModel m = test::tiny_model(6, 3, 11);
  std::stringstream ss;
  write_checkpoint(ss, m);
  EXPECT_EQ(read_checkpoint(ss), m);
}

TEST(Checkpoint, RejectsCorruption) {
  const ModalityModel m = test::tiny_model(6, 3, 12);
  std::stringstream ss;
  write_checkpoint(ss, m);
  const std::string good = ss.str();

  std::stringstream bad_magic(std::string("XIE1") + good.substr(4));
  EXPECT_THROW(read_checkpoint(bad_magic), FormatError);

  std::stringstream truncated(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), FormatError);

  std::stringstream trailing(good + "x");
  EXPECT_THROW(read_checkpoint(trailing), FormatError);

  std::string bad_act = good;
  bad_act[12 + 8] = 7;  // activation tag of layer 0
  std::stringstream act(bad_act);
  EXPECT_THROW(read_checkpoint(act), FormatError);

  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), std::runtime_error);
}
