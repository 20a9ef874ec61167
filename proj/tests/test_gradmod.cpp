// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mie/gradmod.hpp"

using namespace mie;

namespace {

LayerCovariance fresh(std::size_t d) { return {0, Matrix(d, d), Matrix::identity(d), 0, {}}; }

LayerCovariance with_cov(const Matrix& cov) {
  LayerCovariance lc = fresh(cov.rows());
  lc.cumulative_cov = cov;
  lc.batches_seen = 1;
  return lc;
}

Matrix t_of(const Matrix& cov, double tau) {
  LayerCovariance lc = with_cov(cov);
  build_t(lc, GmConfig{tau, {}, 1e-12});
  return lc.t_matrix;
}

}  // namespace

TEST(Accumulate, SingleBatchOuterProduct) {
  LayerCovariance lc = fresh(2);
  accumulate(lc, Matrix{{0, 1}, {2, 3}});
  EXPECT_EQ(lc.cumulative_cov, (Matrix{{1, 2}, {2, 4}}));
  EXPECT_EQ(lc.batches_seen, 1u);
}

TEST(Accumulate, IdenticalBatchesDouble) {
  std::mt19937_64 rng(1);
  const Matrix z = test::random_matrix(4, 3, rng);
  LayerCovariance a = fresh(3), b = fresh(3);
  accumulate(a, z);
  accumulate(b, z);
  accumulate(b, z);
  EXPECT_EQ(b.cumulative_cov, 2.0 * a.cumulative_cov);
}

TEST(Accumulate, MatchesExplicitSum) {
  std::mt19937_64 rng(2);
  LayerCovariance lc = fresh(6);
  Matrix oracle(6, 6);
  for (int i = 0; i < 5; ++i) {
    const Matrix z = test::random_matrix(12, 6, rng);
    accumulate(lc, z);
    const Vector zbar = mean_rows(z);
    oracle = oracle + outer(zbar, zbar);
  }
  EXPECT_LT(test::max_abs_diff(lc.cumulative_cov, oracle), 1e-12);
}

TEST(Accumulate, RejectsWidthMismatch) {
  LayerCovariance lc = fresh(3);
  EXPECT_THROW(accumulate(lc, Matrix(2, 4)), ValidationError);
}

TEST(BuildT, DiagonalExample) {
  const Matrix t = t_of(Matrix{{4, 0}, {0, 1}}, 0.4);
  EXPECT_NEAR(t(0, 0), std::exp(-0.4), 1e-12);
  EXPECT_NEAR(t(0, 0), 0.670320, 1e-6);
  EXPECT_NEAR(t(1, 1), 1.0, 1e-12);
  EXPECT_NEAR(t(0, 1), 0.0, 1e-12);
}

TEST(BuildT, TauZeroAndDegenerateGiveIdentity) {
  std::mt19937_64 rng(3);
  EXPECT_EQ(t_of(test::random_psd(5, rng), 0.0), Matrix::identity(5));
  EXPECT_EQ(t_of(3.0 * Matrix::identity(4), 0.4), Matrix::identity(4));
  EXPECT_EQ(t_of(Matrix(3, 3), 0.4), Matrix::identity(3));
}

TEST(BuildT, ResetsCovarianceAndRecordsSpectrum) {
  LayerCovariance lc = with_cov(Matrix{{4, 0}, {0, 1}});
  build_t(lc, GmConfig{});
  EXPECT_EQ(lc.cumulative_cov, Matrix(2, 2));
  EXPECT_EQ(lc.batches_seen, 0u);
  EXPECT_EQ(lc.last_eigenvalues, (Vector{4, 1}));
  EXPECT_THROW(build_t(lc, GmConfig{}), ValidationError);
}

TEST(BuildT, SymmetricWithBoundedSpectrum) {
  std::mt19937_64 rng(4);
  for (std::size_t d : {2u, 5u, 17u, 40u}) {
    const double tau = 0.4;
    const Matrix t = t_of(test::random_psd(d, rng), tau);
    EXPECT_LT(test::max_abs_diff(t, transpose(t)), 1e-10);
    for (double l : sym_eigen(t).eigenvalues) {
      EXPECT_GE(l, std::exp(-tau) - 1e-9);
      EXPECT_LE(l, 1.0 + 1e-9);
    }
  }
}

TEST(BuildT, InvariantToCovarianceScale) {
  std::mt19937_64 rng(5);
  const Matrix cov = test::random_psd(12, rng);
  const Matrix t = t_of(cov, 0.4);
  for (double c : {1e-3, 1e3}) EXPECT_LT(test::max_abs_diff(t_of(c * cov, 0.4), t), 1e-8);
}

TEST(Modify, Examples) {
  std::mt19937_64 rng(6);
  const Matrix g = test::random_matrix(3, 4, rng);
  EXPECT_EQ(modify(Matrix::identity(3), g), g);

  const Matrix t = t_of(Matrix{{4, 0}, {0, 1}}, 0.4);
  const Matrix out = modify(t, Matrix{{1, 1}, {1, 1}});
  EXPECT_NEAR(out(0, 0), 0.670320, 1e-6);
  EXPECT_NEAR(out(0, 1), 0.670320, 1e-6);
  EXPECT_NEAR(out(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(out(1, 1), 1.0, 1e-12);
  EXPECT_THROW(modify(Matrix::identity(2), g), ValidationError);
}

TEST(Modify, ScaleProperty) {
  std::mt19937_64 rng(7);
  const Matrix cov = test::random_psd(8, rng, 3);
  const Matrix g = test::random_matrix(8, 5, rng);
  const Matrix base = modify(t_of(cov, 0.4), g);
  for (double c : {1e-3, 1e3}) EXPECT_LT(test::max_abs_diff(modify(t_of(c * cov, 0.4), g), base), 1e-8);
}

TEST(FlatnessResponse, Examples) {
  const Matrix cov{{4, 0}, {0, 1}};
  EXPECT_DOUBLE_EQ(flatness_response(cov, Vector{1, 0}, 1.0), 4.0);
  EXPECT_EQ(flatness_response(cov, Vector{1, 0}, 0.0), 0.0);
  EXPECT_THROW(flatness_response(cov, Vector{1, 1}, 1.0), ValidationError);
}

TEST(FlatnessResponse, MatchesEigenpairs) {
  std::mt19937_64 rng(8);
  const Matrix cov = test::random_psd(10, rng);
  const auto eig = sym_eigen(cov);
  for (std::size_t i = 0; i < 10; ++i) {
    Vector v(10);
    for (std::size_t k = 0; k < 10; ++k) v[k] = eig.eigenvectors(k, i);
    EXPECT_NEAR(flatness_response(cov, v, 0.7), 0.7 * eig.eigenvalues[i], 1e-9);
  }
}

TEST(SingularReport, Stats) {
  GradModState st;
  st.layers.push_back(with_cov(Matrix{{4, 0}, {0, 1}}));
  st.layers.push_back(with_cov(Matrix(3, 3)));
  st.layers[1].layer = 1;
  std::mt19937_64 rng(9);
  const Matrix r = test::random_psd(7, rng);
  st.layers.push_back(with_cov(r));
  st.layers[2].layer = 2;
  build_t(st, GmConfig{});
  const SingularReport rep = singular_report(st);
  ASSERT_EQ(rep.size(), 3u);
  EXPECT_DOUBLE_EQ(rep[0].max, 4.0);
  EXPECT_DOUBLE_EQ(rep[0].mean, 2.5);
  EXPECT_EQ(rep[1].max, 0.0);
  EXPECT_EQ(rep[1].mean, 0.0);
  const auto eig = sym_eigen(r);
  double mean = 0.0;
  for (double l : eig.eigenvalues) mean += l;
  mean /= 7.0;
  EXPECT_NEAR(rep[2].max, eig.eigenvalues[0], 1e-10);
  EXPECT_NEAR(rep[2].mean, mean, 1e-10);
}

TEST(Scope, HeadOnlyAndFractions) {
  const ModalityModel m = test::tiny_model(6, 3, 1);
  EXPECT_EQ(monitored_layers(m, GmScope::head_only()), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_TRUE(monitored_layers(m, GmScope::deep_fraction(0.0)).empty());
  EXPECT_EQ(monitored_layers(m, GmScope::deep_fraction(1.0)), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  // The deepest layer alone holds 4*3+3 = 15 of the parameters.
  const double share = 15.0 / static_cast<double>(m.parameter_count());
  EXPECT_EQ(monitored_layers(m, GmScope::deep_fraction(share)), (std::vector<std::size_t>{4}));
  EXPECT_EQ(monitored_layers(m, GmScope::deep_fraction(share + 1e-6)), (std::vector<std::size_t>{3, 4}));
  EXPECT_THROW(GmScope::deep_fraction(1.5), ValidationError);
}

TEST(State, AccumulatesFromForwardTrace) {
  std::mt19937_64 rng(10);
  const ModalityModel m = test::tiny_model(6, 3, 2);
  GradModState st = GradModState::for_layers(m, monitored_layers(m, GmScope::head_only()));
  const auto trace = forward(m, test::random_matrix(4, 6, rng));
  accumulate(st, trace);
  for (const auto& lc : st.layers) {
    const Vector zbar = mean_rows(trace.layer_inputs[lc.layer]);
    EXPECT_LT(test::max_abs_diff(lc.cumulative_cov, outer(zbar, zbar)), 1e-15);
  }
  EXPECT_NE(st.find(3), nullptr);
  EXPECT_EQ(st.find(0), nullptr);
}
