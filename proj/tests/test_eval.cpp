// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "mie/eval.hpp"

using namespace mie;

namespace {

Matrix random_scores(std::size_t n, std::size_t c, std::mt19937_64& rng, bool ties) {
  Matrix p(n, c);
  std::uniform_int_distribution<int> coarse(0, 3);
  std::uniform_real_distribution<double> fine(0.0, 1.0);
  for (double& v : p.data()) v = ties ? 0.25 * coarse(rng) : fine(rng);
  return p;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, c - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

}  // namespace

TEST(Fusion, AverageExamples) {
  std::mt19937_64 rng(1);
  const Matrix p = softmax_rows(test::random_matrix(5, 3, rng));
  EXPECT_LT(test::max_abs_diff(fuse_average({{p, p, p}, {}}), p), 1e-15);
  const Matrix f = fuse_average({{Matrix{{1, 0}}, Matrix{{0, 1}}}, {}});
  EXPECT_DOUBLE_EQ(f(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(f(0, 1), 0.5);
  const Matrix g = fuse_average({{p, softmax_rows(test::random_matrix(5, 3, rng))}, {}});
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (double v : g.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Fusion, WeightedExamples) {
  const Matrix uniform{{0.5, 0.5}};
  const Matrix f = fuse_weighted({{uniform, uniform}, {}});
  EXPECT_DOUBLE_EQ(f(0, 0), 0.5);
  // One-hot has entropy 0, uniform over 2 has ln 2: weights 2/3 and 1/3.
  const Matrix g = fuse_weighted({{Matrix{{1, 0}}, uniform}, {}});
  EXPECT_NEAR(g(0, 0), 2.0 / 3.0 + 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(g(0, 1), 1.0 / 6.0, 1e-12);
  std::mt19937_64 rng(2);
  const Matrix p = softmax_rows(test::random_matrix(4, 3, rng));
  EXPECT_LT(test::max_abs_diff(fuse_weighted({{p}, {}}), p), 1e-15);
}

TEST(Fusion, RejectsMismatchedShapes) {
  EXPECT_THROW(fuse_average({{Matrix(2, 3), Matrix(2, 2)}, {}}), ValidationError);
  EXPECT_THROW(fuse_weighted({{}, {}}), ValidationError);
}

TEST(Accuracy, Examples) {
  const Matrix p{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(accuracy(p, {0, 1, 2}), 1.0);
  EXPECT_EQ(accuracy(p, {1, 2, 0}), 0.0);
  // Ties go to the lowest index.
  EXPECT_EQ(accuracy(Matrix{{0.5, 0.5}}, {0}), 1.0);
  EXPECT_THROW(accuracy(p, {0, 1}), ValidationError);
  EXPECT_THROW(accuracy(p, {0, 1, 3}), ValidationError);
}

TEST(Accuracy, CountingOracle) {
  std::mt19937_64 rng(3);
  const Matrix p = random_scores(200, 5, rng, true);
  const auto y = random_labels(200, 5, rng);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 200; ++i) hits += test::first_max(p.row(i)) == y[i];
  EXPECT_EQ(accuracy(p, y), static_cast<double>(hits) / 200.0);
}

TEST(Map, Examples) {
  const Matrix p{{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}};
  EXPECT_DOUBLE_EQ(mean_average_precision(p, {0, 0, 1}), 1.0);
  const auto r = mean_average_precision_detail(Matrix{{0.7, 0.3}}, {0});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.excluded_classes, (std::vector<std::size_t>{1}));
}

TEST(Map, HandRankedExample) {
  // Class 0 ranking: s0 (pos), s2 (neg), s1 (pos) -> AP = (1 + 2/3) / 2.
  const Matrix p{{0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}};
  EXPECT_NEAR(*average_precision(p, {0, 0, 1}, 0), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(Map, BruteForceOracle) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 1000; ++rep) {
    const bool ties = rep % 2 == 0;
    const Matrix p = random_scores(20, 4, rng, ties);
    const auto y = random_labels(20, 4, rng);
    EXPECT_NEAR(mean_average_precision(p, y), test::brute_force_map(p, y), 1e-12);
  }
}

TEST(MacroF1, Examples) {
  const Matrix p{{1, 0}, {0, 1}};
  EXPECT_DOUBLE_EQ(macro_f1(p, {0, 1}), 1.0);
  // Class 2 is never predicted and has one sample, so F1_2 = 0 drags the mean.
  const Matrix q{{1, 0, 0}, {0, 1, 0}, {0, 1, 0}};
  EXPECT_NEAR(macro_f1(q, {0, 1, 2}), (1.0 + 2.0 / 3.0 + 0.0) / 3.0, 1e-15);
}

TEST(MacroF1, ConfusionMatrixOracle) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 500; ++rep) {
    const Matrix p = random_scores(25, 5, rng, rep % 2 == 0);
    const auto y = random_labels(25, 5, rng);
    EXPECT_NEAR(macro_f1(p, y), test::confusion_f1(p, y), 1e-12);
  }
}

TEST(Metrics, PermutationInvariance) {
  std::mt19937_64 rng(6);
  const Matrix p = random_scores(30, 4, rng, false);
  const auto y = random_labels(30, 4, rng);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix q(30, 4);
  std::vector<std::size_t> z(30);
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t k = 0; k < 4; ++k) q(i, k) = p(perm[i], k);
    z[i] = y[perm[i]];
  }
  const Metrics a = compute_metrics(p, y);
  const Metrics b = compute_metrics(q, z);
  EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
  EXPECT_NEAR(a.map, b.map, 1e-12);
  EXPECT_DOUBLE_EQ(a.macro_f1, b.macro_f1);
}

TEST(Landscape, CenterGridAndModelUntouched) {
  std::mt19937_64 rng(7);
  const ModalityModel m = test::tiny_model(6, 3, 7);
  const ModalityModel before = m;
  const Batch b = test::random_batch(8, 6, 3, rng);
  const LandscapeSlice s = landscape_slice(m, b, 0.5, 5, 11);
  EXPECT_EQ(m, before);
  ASSERT_EQ(s.cells.size(), 25u);
  EXPECT_EQ(s.cells[12].alpha, 0.0);
  EXPECT_EQ(s.cells[12].beta, 0.0);
  EXPECT_EQ(s.cells[12].loss, batch_loss(m, b));
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_DOUBLE_EQ(s.cells[a * 5 + c].alpha, -0.5 + 0.25 * static_cast<double>(a));
      EXPECT_DOUBLE_EQ(s.cells[a * 5 + c].beta, -0.5 + 0.25 * static_cast<double>(c));
    }
  EXPECT_THROW(landscape_slice(m, b, 0.5, 4, 11), ValidationError);
}

TEST(Landscape, DirectionsAreFilterNormalizedAndOrthogonal) {
  const ModalityModel m = test::tiny_model(6, 3, 8);
  const auto [d1, d2] = landscape_directions(m, 3);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_NEAR(norm2(d1.layers[l].weights.data()), norm2(m.layers[l].weights.data()), 1e-12);
    EXPECT_NEAR(norm2(d2.layers[l].weights.data()), norm2(m.layers[l].weights.data()), 1e-12);
    for (double v : d1.layers[l].biases) EXPECT_EQ(v, 0.0);
  }
  const auto again = landscape_directions(m, 3);
  EXPECT_EQ(again.first.layers[2].weights, d1.layers[2].weights);
}

TEST(Landscape, QuadraticLossGivesExactParaboloid) {
  const ModalityModel m = test::tiny_model(6, 3, 9);
  auto sq = [](const ModalityModel& x) {
    double s = 0.0;
    for (const auto& l : x.layers) s += dot(l.weights.data(), l.weights.data());
    return 0.5 * s;
  };
  const LandscapeSlice s = landscape_slice(m, sq, 1.0, 7, 5);
  double d11 = 0, d22 = 0, d12 = 0, g1 = 0, g2 = 0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& w = m.layers[l].weights.data();
    const auto& a = s.direction1.layers[l].weights.data();
    const auto& b = s.direction2.layers[l].weights.data();
    d11 += dot(a, a);
    d22 += dot(b, b);
    d12 += dot(a, b);
    g1 += dot(w, a);
    g2 += dot(w, b);
  }
  const double center = sq(m);
  for (const auto& c : s.cells) {
    const double expect = c.alpha * g1 + c.beta * g2 + 0.5 * (c.alpha * c.alpha * d11 + 2 * c.alpha * c.beta * d12 +
                                                              c.beta * c.beta * d22);
    EXPECT_NEAR(c.loss - center, expect, 1e-10 * std::max(1.0, std::abs(expect)));
  }
}

TEST(Landscape, CsvFormat) {
  LandscapeSlice s;
  s.cells = {{-1.0, 0.5, 2.25}, {0.0, 0.0, 0.1}};
  std::ostringstream os;
  write_landscape_csv(os, s);
  EXPECT_EQ(os.str(), "alpha,beta,loss\n-1,0.5,2.25\n0,0,0.10000000000000001\n");
}
