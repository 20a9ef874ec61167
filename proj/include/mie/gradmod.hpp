// SPDX-License-Identifier: Apache-2.0
//
// Flat-direction gradient modification.
//
// For each monitored layer we accumulate the outer product of the batch-mean
// layer input over a full pass of training batches. The eigenvectors of that
// cumulative matrix with large eigenvalues are the directions along which the
// layer output reacts strongly; small eigenvalues mark flat directions. The
// modification matrix T = V exp(-tau (L - lmin) / (lmax - lmin)) V^T damps
// gradient components along sharp directions, and it left-multiplies the
// weight gradient of the matching layer in another modality's model.

#ifndef MIE_GRADMOD_HPP
#define MIE_GRADMOD_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mie/errors.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"

namespace mie {

/// Which layers receive gradient modification.
struct GmScope {
  enum class Kind { head_only, deep_fraction };
  Kind kind = Kind::head_only;
  double fraction = 1.0;  // used by deep_fraction only

  static GmScope head_only() { return {}; }
  static GmScope deep_fraction(double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("gm.scope: fraction must lie in [0,1]");
    return {Kind::deep_fraction, f};
  }
  std::string to_string() const {
    if (kind == Kind::head_only) return "head_only";
    std::string s = std::to_string(fraction);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

struct GmConfig {
  double tau = 0.4;
  GmScope scope;
  double degenerate_tolerance = 1e-12;
};

/// Layer indices selected by `scope`, ascending.
///
/// head_only picks the three head layers. deep_fraction(f) walks layers from
/// the deepest one towards the input and keeps the shortest suffix whose
/// parameter share reaches f (nothing for f = 0).
inline std::vector<std::size_t> monitored_layers(const ModalityModel& model, const GmScope& scope) {
  std::vector<std::size_t> out;
  if (scope.kind == GmScope::Kind::head_only) {
    for (std::size_t l = model.head_begin(); l < model.layers.size(); ++l) out.push_back(l);
    return out;
  }
  if (scope.fraction <= 0.0) return out;
  const double total = static_cast<double>(model.parameter_count());
  double taken = 0.0;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    out.push_back(l);
    taken += static_cast<double>(model.layers[l].parameter_count());
    if (taken / total >= scope.fraction - 1e-12) break;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

struct LayerCovariance {
  std::size_t layer = 0;     // index into ModalityModel::layers
  Matrix cumulative_cov;     // d x d
  Matrix t_matrix;           // d x d, identity until the first build
  std::size_t batches_seen = 0;
  Vector last_eigenvalues;   // spectrum of the cumulative matrix at the last build
};

struct GradModState {
  std::vector<LayerCovariance> layers;

  static GradModState for_layers(const ModalityModel& model, const std::vector<std::size_t>& indices) {
    GradModState s;
    for (std::size_t l : indices) {
      if (l >= model.layers.size()) throw ValidationError("gradmod: layer index out of range");
      const std::size_t d = model.layers[l].in_dim();
      s.layers.push_back({l, Matrix(d, d), Matrix::identity(d), 0, {}});
    }
    return s;
  }

  const LayerCovariance* find(std::size_t layer) const {
    for (const auto& lc : layers)
      if (lc.layer == layer) return &lc;
    return nullptr;
  }
};

/// cumulative_cov += mean(Z) mean(Z)^T for a B x d batch of layer inputs.
inline void accumulate(LayerCovariance& state, const Matrix& layer_inputs) {
  const std::size_t d = state.cumulative_cov.rows();
  if (layer_inputs.cols() != d) {
    throw ValidationError("accumulate: layer input width " + std::to_string(layer_inputs.cols()) +
                          " does not match covariance dimension " + std::to_string(d));
  }
  const Vector zbar = mean_rows(layer_inputs);
  auto& y = state.cumulative_cov;
  for (std::size_t i = 0; i < d; ++i) {
    const double zi = zbar[i];
    for (std::size_t j = 0; j < d; ++j) y(i, j) += zi * zbar[j];
  }
  ++state.batches_seen;
}

/// Feeds one forward trace into every monitored layer of `state`.
inline void accumulate(GradModState& state, const ForwardTrace& trace) {
  for (auto& lc : state.layers) {
    if (lc.layer >= trace.layer_inputs.size()) throw ValidationError("accumulate: trace is missing a monitored layer");
    accumulate(lc, trace.layer_inputs[lc.layer]);
  }
}

/// Diagonal of the damping matrix for a spectrum sorted in any order.
/// Returns all ones when the spectrum is degenerate.
inline Vector damping_factors(std::span<const double> eigenvalues, double tau, double degenerate_tolerance = 1e-12) {
  Vector sigma(eigenvalues.size(), 1.0);
  if (eigenvalues.empty() || tau == 0.0) return sigma;
  const auto [mn, mx] = std::minmax_element(eigenvalues.begin(), eigenvalues.end());
  const double range = *mx - *mn;
  if (range < degenerate_tolerance * std::max(1.0, *mx)) return sigma;
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::exp(-tau * (eigenvalues[i] - *mn) / range);
  return sigma;
}

/// Rebuilds T from the cumulative covariance, then clears the covariance.
inline void build_t(LayerCovariance& state, const GmConfig& config) {
  if (state.batches_seen == 0) throw ValidationError("build_T: no batches accumulated");
  if (!(config.tau >= 0.0)) throw ValidationError("build_T: tau must be non-negative");
  const std::size_t d = state.cumulative_cov.rows();
  const SymEigenResult eig = sym_eigen(state.cumulative_cov);
  const Vector sigma = damping_factors(eig.eigenvalues, config.tau, config.degenerate_tolerance);
  if (std::all_of(sigma.begin(), sigma.end(), [](double s) { return s == 1.0; })) {
    state.t_matrix = Matrix::identity(d);
  } else {
    state.t_matrix = reconstruct(eig.eigenvectors, sigma);
    // Symmetrize away round-off from the reconstruction.
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) {
        const double v = 0.5 * (state.t_matrix(i, j) + state.t_matrix(j, i));
        state.t_matrix(i, j) = state.t_matrix(j, i) = v;
      }
  }
  state.last_eigenvalues = eig.eigenvalues;
  state.cumulative_cov = Matrix(d, d);
  state.batches_seen = 0;
}

inline void build_t(GradModState& state, const GmConfig& config) {
  for (auto& lc : state.layers) build_t(lc, config);
}

/// T * weight_grad. Bias gradients are never modified.
inline Matrix modify(const Matrix& t_matrix, const Matrix& weight_grad) {
  if (t_matrix.rows() != t_matrix.cols() || t_matrix.cols() != weight_grad.rows()) {
    throw ValidationError("modify: T is " + shape_str(t_matrix) + " but gradient is " + shape_str(weight_grad));
  }
  return matmul(t_matrix, weight_grad);
}

/// ||cov * gamma v||_2; equals gamma * lambda_i when v is the i-th eigenvector.
inline double flatness_response(const Matrix& cov, std::span<const double> v, double gamma) {
  if (std::abs(norm2(v) - 1.0) > 1e-9) throw ValidationError("flatness_response: direction must be unit-norm");
  Vector r = matvec(cov, v);
  return std::abs(gamma) * norm2(r);
}

struct SingularStats {
  std::size_t layer = 0;
  double max = 0.0;
  double mean = 0.0;
};

using SingularReport = std::vector<SingularStats>;

inline SingularStats singular_stats(std::size_t layer, std::span<const double> eigenvalues) {
  SingularStats s{layer, 0.0, 0.0};
  if (eigenvalues.empty()) return s;
  s.max = *std::max_element(eigenvalues.begin(), eigenvalues.end());
  s.mean = std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0) / static_cast<double>(eigenvalues.size());
  return s;
}

/// Max and mean eigenvalue of the last cumulative covariance of every layer
/// that has been built at least once.
inline SingularReport singular_report(const GradModState& state) {
  SingularReport r;
  for (const auto& lc : state.layers) {
    if (lc.last_eigenvalues.empty()) continue;
    r.push_back(singular_stats(lc.layer, lc.last_eigenvalues));
  }
  return r;
}

}  // namespace mie

#endif  // MIE_GRADMOD_HPP
