// SPDX-License-Identifier: Apache-2.0
//
// Late fusion, classification metrics, and 2D loss-landscape slices.

#ifndef MIE_EVAL_HPP
#define MIE_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mie/errors.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"

namespace mie {

/// Per-modality n x c prediction matrices sharing one label vector.
struct PredictionSet {
  std::vector<Matrix> per_modality;
  std::vector<std::size_t> labels;
};

enum class Fusion { average, weighted };

inline const char* fusion_name(Fusion f) { return f == Fusion::average ? "average" : "weighted"; }

inline void check_predictions(const PredictionSet& preds) {
  if (preds.per_modality.empty()) throw ValidationError("fusion: no modalities");
  for (const auto& p : preds.per_modality)
    if (!p.same_shape(preds.per_modality.front())) throw ValidationError("fusion: prediction shapes differ");
}

inline Matrix fuse_average(const PredictionSet& preds) {
  check_predictions(preds);
  Matrix out = preds.per_modality.front();
  for (std::size_t j = 1; j < preds.per_modality.size(); ++j) out = out + preds.per_modality[j];
  const double m = static_cast<double>(preds.per_modality.size());
  for (double& v : out.data()) v /= m;
  return out;
}

/// Shannon entropy in nats, 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

/// Confidence-weighted fusion: per sample, modality j gets weight
/// softmax_j(-H(p_j)), so sharper predictions count more.
inline Matrix fuse_weighted(const PredictionSet& preds) {
  check_predictions(preds);
  const std::size_t m = preds.per_modality.size();
  const Matrix& first = preds.per_modality.front();
  Matrix out(first.rows(), first.cols());
  std::vector<double> w(m);
  for (std::size_t i = 0; i < first.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      w[j] = -entropy(preds.per_modality[j].row(i));
      mx = std::max(mx, w[j]);
    }
    double sum = 0.0;
    for (double& x : w) sum += (x = std::exp(x - mx));
    auto r = out.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto pj = preds.per_modality[j].row(i);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] += (w[j] / sum) * pj[k];
    }
  }
  return out;
}

inline Matrix fuse(const PredictionSet& preds, Fusion f) {
  return f == Fusion::average ? fuse_average(preds) : fuse_weighted(preds);
}

inline void check_scores(const Matrix& pred, const std::vector<std::size_t>& labels) {
  if (pred.rows() == 0 || pred.cols() == 0) throw ValidationError("metrics: empty prediction matrix");
  if (pred.rows() != labels.size()) throw ValidationError("metrics: label count does not match prediction rows");
  for (auto y : labels)
    if (y >= pred.cols()) throw ValidationError("metrics: label out of range");
}

/// Index of the row maximum; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> r) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.size(); ++k)
    if (r[k] > r[best]) best = k;
  return best;
}

inline double accuracy(const Matrix& pred, const std::vector<std::size_t>& labels) {
  check_scores(pred, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax(pred.row(i)) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Average precision of class k; nullopt when the class has no positives.
inline std::optional<double> average_precision(const Matrix& pred, const std::vector<std::size_t>& labels,
                                               std::size_t k) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred(a, k) > pred(b, k); });
  std::size_t positives = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != k) continue;
    ++positives;
    sum += static_cast<double>(positives) / static_cast<double>(r + 1);
  }
  if (positives == 0) return std::nullopt;
  return sum / static_cast<double>(positives);
}

struct MapResult {
  double value = 0.0;
  std::vector<std::size_t> excluded_classes;  // classes without positives
};

inline MapResult mean_average_precision_detail(const Matrix& pred, const std::vector<std::size_t>& labels) {
  check_scores(pred, labels);
  MapResult r;
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < pred.cols(); ++k) {
    if (auto ap = average_precision(pred, labels, k)) {
      sum += *ap;
      ++counted;
    } else {
      r.excluded_classes.push_back(k);
    }
  }
  r.value = sum / static_cast<double>(counted);
  return r;
}

inline double mean_average_precision(const Matrix& pred, const std::vector<std::size_t>& labels) {
  return mean_average_precision_detail(pred, labels).value;
}

inline double macro_f1(const Matrix& pred, const std::vector<std::size_t>& labels) {
  check_scores(pred, labels);
  const std::size_t c = pred.cols();
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t yhat = argmax(pred.row(i));
    if (yhat == labels[i]) {
      ++tp[yhat];
    } else {
      ++fp[yhat];
      ++fn[labels[i]];
    }
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double p = tp[k] + fp[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fp[k]) : 0.0;
    const double r = tp[k] + fn[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fn[k]) : 0.0;
    sum += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return sum / static_cast<double>(c);
}

struct Metrics {
  double accuracy = 0.0;
  double map = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::size_t> map_excluded_classes;
};

inline Metrics compute_metrics(const Matrix& pred, const std::vector<std::size_t>& labels) {
  auto map = mean_average_precision_detail(pred, labels);
  return {accuracy(pred, labels), map.value, macro_f1(pred, labels), std::move(map.excluded_classes)};
}

struct MetricsReport {
  Metrics fused_average;
  Metrics fused_weighted;
  std::vector<Metrics> per_modality;
};

inline MetricsReport evaluate(const PredictionSet& preds) {
  MetricsReport r;
  r.fused_average = compute_metrics(fuse_average(preds), preds.labels);
  r.fused_weighted = compute_metrics(fuse_weighted(preds), preds.labels);
  for (const auto& p : preds.per_modality) r.per_modality.push_back(compute_metrics(p, preds.labels));
  return r;
}

// ---------------------------------------------------------------------------
// Loss landscape

struct LandscapeCell {
  double alpha = 0.0;
  double beta = 0.0;
  double loss = 0.0;  // NaN/inf are recorded as-is
};

struct LandscapeSlice {
  std::vector<LandscapeCell> cells;  // alpha-major
  GradientSet direction1;
  GradientSet direction2;
};

/// Two random directions, Gram-Schmidt orthogonalized over all weights, then
/// filter-normalized: each layer block is rescaled to the norm of that
/// layer's weights. Bias entries of the directions are zero.
inline std::pair<GradientSet, GradientSet> landscape_directions(const ModalityModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    GradientSet d = GradientSet::zeros_like(model);
    for (auto& l : d.layers)
      for (double& v : l.weights.data()) v = normal(rng);
    return d;
  };
  GradientSet d1 = draw();
  GradientSet d2 = draw();
  auto inner = [](const GradientSet& a, const GradientSet& b) {
    double s = 0.0;
    for (std::size_t l = 0; l < a.layers.size(); ++l) s += dot(a.layers[l].weights.data(), b.layers[l].weights.data());
    return s;
  };
  const double proj = inner(d1, d2) / inner(d1, d1);
  for (std::size_t l = 0; l < d2.layers.size(); ++l) {
    auto& w2 = d2.layers[l].weights.data();
    const auto& w1 = d1.layers[l].weights.data();
    for (std::size_t k = 0; k < w2.size(); ++k) w2[k] -= proj * w1[k];
  }
  for (GradientSet* d : {&d1, &d2}) {
    for (std::size_t l = 0; l < d->layers.size(); ++l) {
      auto& w = d->layers[l].weights.data();
      const double dn = norm2(w);
      const double target = norm2(model.layers[l].weights.data());
      const double s = dn > 0.0 ? target / dn : 0.0;
      for (double& v : w) v *= s;
    }
  }
  return {std::move(d1), std::move(d2)};
}

/// Evaluates loss(theta + alpha d1 + beta d2) on a points x points grid over
/// [-radius, radius]^2. The model is only read; perturbed copies are built
/// per cell.
template <class LossFn>
LandscapeSlice landscape_slice(const ModalityModel& model, LossFn&& loss, double radius, std::size_t points,
                               std::uint64_t seed) {
  if (points == 0 || points % 2 == 0) throw ValidationError("landscape: grid_points must be odd");
  if (!(radius >= 0.0) || !std::isfinite(radius)) throw ValidationError("landscape: radius must be finite and >= 0");
  LandscapeSlice out;
  std::tie(out.direction1, out.direction2) = landscape_directions(model, seed);
  const long half = static_cast<long>(points / 2);
  auto coord = [&](long i) { return half == 0 ? 0.0 : radius * static_cast<double>(i - half) / static_cast<double>(half); };
  out.cells.reserve(points * points);
  ModalityModel shifted = model;
  for (long a = 0; a < static_cast<long>(points); ++a) {
    for (long b = 0; b < static_cast<long>(points); ++b) {
      const double alpha = coord(a);
      const double beta = coord(b);
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& w0 = model.layers[l].weights.data();
        const auto& d1 = out.direction1.layers[l].weights.data();
        const auto& d2 = out.direction2.layers[l].weights.data();
        auto& w = shifted.layers[l].weights.data();
        if (alpha == 0.0 && beta == 0.0) {
          w = w0;
        } else {
          for (std::size_t k = 0; k < w.size(); ++k) w[k] = w0[k] + alpha * d1[k] + beta * d2[k];
        }
      }
      double value;
      try {
        value = loss(static_cast<const ModalityModel&>(shifted));
      } catch (const NumericError&) {
        value = std::numeric_limits<double>::quiet_NaN();
      }
      out.cells.push_back({alpha, beta, value});
    }
  }
  return out;
}

inline LandscapeSlice landscape_slice(const ModalityModel& model, const Batch& batch, double radius, std::size_t points,
                                      std::uint64_t seed) {
  check_batch(model, batch);
  return landscape_slice(
      model, [&](const ModalityModel& m) { return batch_loss(m, batch); }, radius, points, seed);
}

inline void write_landscape_csv(std::ostream& os, const LandscapeSlice& slice) {
  os << "alpha,beta,loss\n";
  char buf[128];
  for (const auto& c : slice.cells) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", c.alpha, c.beta, c.loss);
    os << buf;
  }
}

}  // namespace mie

#endif  // MIE_EVAL_HPP
