// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit tests.

#pragma once

#include <cstdint>
#include <random>

#include "mie/data.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"

namespace mie::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline Matrix random_symmetric(std::size_t d, std::mt19937_64& rng) {
  Matrix a = random_matrix(d, d, rng);
  return 0.5 * (a + transpose(a));
}

inline Matrix random_psd(std::size_t d, std::mt19937_64& rng, std::size_t rank = 0) {
  Matrix b = random_matrix(d, rank ? rank : d, rng);
  return matmul_nt(b, b);
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline Architecture tiny_arch() { return {6, 5, 7, 4}; }

/// Small model with non-zero biases so every parameter matters.
inline ModalityModel tiny_model(std::size_t in, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModalityModel m = make_model(in, c, tiny_arch(), rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& l : m.layers)
    for (double& b : l.biases) b = u(rng);
  return m;
}

inline Batch random_batch(std::size_t b, std::size_t in, std::size_t c, std::mt19937_64& rng) {
  Batch batch{random_matrix(b, in, rng), {}};
  std::uniform_int_distribution<std::size_t> lab(0, c - 1);
  for (std::size_t i = 0; i < b; ++i) batch.labels.push_back(lab(rng));
  return batch;
}

inline SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.n = 120;
  s.num_classes = 4;
  s.dims = {6, 5};
  s.snr = {3.0, 0.8};
  s.seed = seed;
  return s;
}

}  // namespace mie::test

namespace mie::test {

struct FdStats {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst = 0.0;
};

/// Compares every parameter's analytic gradient with a central difference,
/// h = 1e-6 * max(1, |theta|). Relative error uses max(|a|, |b|, floor) as
/// denominator so that gradients at round-off level do not dominate.
inline FdStats finite_difference_check(ModalityModel model, const Batch& batch, double tol = 1e-4,
                                       double floor = 1e-6) {
  const GradientSet g = backward(model, batch);
  FdStats s;
  auto probe = [&](double& theta, double analytic) {
    const double saved = theta;
    const double h = 1e-6 * std::max(1.0, std::abs(saved));
    theta = saved + h;
    const double up = batch_loss(model, batch);
    theta = saved - h;
    const double down = batch_loss(model, batch);
    theta = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), floor});
    ++s.checked;
    if (rel <= tol) ++s.passed;
    s.worst = std::max(s.worst, rel);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& w = model.layers[l].weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) probe(w[k], g.layers[l].weights.data()[k]);
    auto& b = model.layers[l].biases;
    for (std::size_t k = 0; k < b.size(); ++k) probe(b[k], g.layers[l].biases[k]);
  }
  return s;
}

}  // namespace mie::test
