// SPDX-License-Identifier: Apache-2.0
//
// Alternating per-modality training.
//
// Every outer iteration visits the modalities in order. While modality j
// trains, its weight gradients are left-multiplied by the modification
// matrices built from its cyclic predecessor k. When j's phase ends, a
// covariance pass over j's training batches rebuilds j's own matrices, which
// the next modality then uses.

#ifndef MIE_TRAINER_HPP
#define MIE_TRAINER_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mie/data.hpp"
#include "mie/errors.hpp"
#include "mie/eval.hpp"
#include "mie/gradmod.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"
#include "mie/sam.hpp"

namespace mie {

/// k = ((j + m - 2) mod m) + 1, both 1-based: the cyclic predecessor of j.
inline std::size_t modality_index(std::size_t j, std::size_t m) {
  if (m == 0 || j == 0 || j > m) {
    throw ValidationError("modality_index: j=" + std::to_string(j) + " out of range for m=" + std::to_string(m));
  }
  return (j + m - 2) % m + 1;
}

struct Ablation {
  bool sam_on = true;
  bool gm_on = true;
  /// gm_mask[k][j]: may modality k's matrices modify modality j (0-based)?
  /// Empty means every ordered pair is allowed.
  std::vector<std::vector<bool>> gm_mask;

  bool allows(std::size_t k, std::size_t j) const {
    if (!gm_on) return false;
    if (gm_mask.empty()) return true;
    return gm_mask.at(k).at(j);
  }
};

struct TrainConfig {
  std::size_t out_iters = 5;
  std::size_t inner_iters = 0;  // 0: one pass over the training split per phase
  std::size_t batch_size = 12;
  std::vector<double> lr{1e-2};   // one value, or one per modality
  std::vector<double> rho{0.05};  // one value, or one per modality
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t patience = 2;
  double plateau_min_delta = 1e-4;
  double zero_grad_threshold = 1e-12;
  GmConfig gm;
  Ablation ablation;
  Architecture arch;
  Fusion fusion = Fusion::average;
  Split eval_split = Split::test;
  std::uint64_t seed = 0;

  void validate(std::size_t modalities) const {
    if (out_iters == 0) throw ValidationError("train.out_iters must be >= 1");
    if (batch_size == 0) throw ValidationError("train.batch_size must be >= 1");
    if (patience == 0) throw ValidationError("train.patience must be >= 1");
    auto check_list = [&](const std::vector<double>& v, const char* name, bool strictly_positive) {
      if (v.size() != 1 && v.size() != modalities)
        throw ValidationError(std::string(name) + ": give one value or one per modality");
      for (double x : v)
        if (!std::isfinite(x) || x < 0.0 || (strictly_positive && x == 0.0))
          throw ValidationError(std::string(name) + (strictly_positive ? ": must be > 0" : ": must be >= 0"));
    };
    check_list(lr, "train.lr", true);
    check_list(rho, "sam.rho", false);
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train.momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
    if (!(gm.tau >= 0.0) || !std::isfinite(gm.tau)) throw ValidationError("gm.tau must be finite and >= 0");
    if (!ablation.gm_mask.empty()) {
      if (ablation.gm_mask.size() != modalities) throw ValidationError("gm.mask: must be m x m");
      for (const auto& row : ablation.gm_mask)
        if (row.size() != modalities) throw ValidationError("gm.mask: must be m x m");
    }
  }

  double lr_of(std::size_t j) const { return lr.size() == 1 ? lr[0] : lr.at(j); }
  double rho_of(std::size_t j) const { return rho.size() == 1 ? rho[0] : rho.at(j); }
};

/// Momentum buffer of one modality.
struct OptimizerState {
  GradientSet velocity;
  static OptimizerState for_model(const ModalityModel& m) { return {GradientSet::zeros_like(m)}; }
};

/// g' = g + wd*theta; v = momentum*v + g'; theta -= lr*v.
inline void sgd_step(ModalityModel& model, const GradientSet& grad, OptimizerState& opt, double lr, double momentum,
                     double weight_decay) {
  if (!congruent(model, grad) || !congruent(model, opt.velocity)) {
    throw ValidationError("sgd_step: gradient or velocity does not match model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto update = [&](std::span<double> theta, std::span<const double> g, std::span<double> v) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gt = g[i] + weight_decay * theta[i];
        v[i] = momentum * v[i] + gt;
        theta[i] -= lr * v[i];
      }
    };
    update(model.layers[l].weights.data(), grad.layers[l].weights.data(), opt.velocity.layers[l].weights.data());
    update(model.layers[l].biases, grad.layers[l].biases, opt.velocity.layers[l].biases);
  }
  for (const auto& l : model.layers) {
    if (!all_finite(l.weights.data()) || !all_finite(l.biases)) {
      throw NumericError("sgd_step: non-finite parameter after update (lr=" + std::to_string(lr) +
                         ", gradient norm=" + std::to_string(grad.norm()) + ")");
    }
  }
}

/// Left-multiplies the weight gradient of every layer in `layers` by the
/// matching T of `modifier`. Layers whose input width differs are skipped.
inline void apply_modification(GradientSet& grad, const GradModState& modifier, std::span<const std::size_t> layers) {
  for (std::size_t l : layers) {
    const LayerCovariance* lc = modifier.find(l);
    if (lc == nullptr || l >= grad.layers.size()) continue;
    if (lc->t_matrix.rows() != grad.layers[l].weights.rows()) continue;
    grad.layers[l].weights = modify(lc->t_matrix, grad.layers[l].weights);
  }
}

struct StepOptions {
  bool sam_on = true;
  SamConfig sam;
  const GradModState* modifier = nullptr;  // null: no modification
  std::span<const std::size_t> layers;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// One minibatch update; returns the loss at the pre-update parameters.
inline double train_step(ModalityModel& model, OptimizerState& opt, const Batch& batch, const StepOptions& o) {
  SamStep step;
  if (o.sam_on) {
    step = sam_step(model, batch, o.sam);
  } else {
    auto lg = loss_and_gradient(model, batch);
    if (!std::isfinite(lg.loss)) throw NumericError("train_step: non-finite loss");
    step = {lg.loss, std::move(lg.gradient)};
  }
  if (o.modifier != nullptr) apply_modification(step.gradient, *o.modifier, o.layers);
  sgd_step(model, step.gradient, opt, o.lr, o.momentum, o.weight_decay);
  return step.loss;
}

struct PhaseRecord {
  std::size_t outer_iter = 0;  // 1-based
  std::size_t modality = 0;    // 1-based
  double multi_accuracy = 0.0;
  std::vector<double> per_modality_accuracy;
  double mean_train_loss = 0.0;
  double lr = 0.0;
};

using PhaseTrace = std::vector<PhaseRecord>;

struct TrainResult {
  std::vector<ModalityModel> models;
  std::vector<GradModState> gm_states;
  PhaseTrace trace;
  MetricsReport final_metrics;
};

/// Mixes a base seed with a few stream identifiers (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ull * (a + 1)) ^ (0xBF58476D1CE4E5B9ull * (b + 7));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline PredictionSet predict(const std::vector<ModalityModel>& models, const MultimodalDataset& ds, Split split) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw ValidationError(std::string("split '") + split_name(split) + "' is empty");
  PredictionSet p;
  for (std::size_t j = 0; j < models.size(); ++j) {
    Batch b = ds.gather(j, idx);
    if (j == 0) p.labels = b.labels;
    p.per_modality.push_back(forward(models[j], b.inputs).predictions);
  }
  return p;
}

inline TrainResult train(const MultimodalDataset& ds, const TrainConfig& cfg) {
  ds.validate();
  const std::size_t m = ds.modalities();
  cfg.validate(m);
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw ValidationError("train split is empty");
  if (ds.indices(cfg.eval_split).empty()) throw ValidationError("evaluation split is empty");

  TrainResult r;
  std::vector<OptimizerState> opts;
  std::vector<std::vector<std::size_t>> scope(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::mt19937_64 init_rng(derive_seed(cfg.seed, 1, j));
    r.models.push_back(make_model(ds.features[j].cols(), ds.num_classes, cfg.arch, init_rng));
    opts.push_back(OptimizerState::for_model(r.models[j]));
    scope[j] = monitored_layers(r.models[j], cfg.gm.scope);
    r.gm_states.push_back(GradModState::for_layers(r.models[j], scope[j]));
  }

  const auto cov_batches = partition(train_idx, cfg.batch_size);
  const std::size_t inner = cfg.inner_iters ? cfg.inner_iters : cov_batches.size();

  std::vector<double> lr(m), best_loss(m, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> stale(m, 0);
  for (std::size_t j = 0; j < m; ++j) lr[j] = cfg.lr_of(j);

  for (std::size_t outer = 1; outer <= cfg.out_iters; ++outer) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t k = modality_index(j + 1, m) - 1;
      StepOptions so;
      so.sam_on = cfg.ablation.sam_on;
      so.sam = {cfg.rho_of(j), cfg.zero_grad_threshold};
      so.modifier = cfg.ablation.allows(k, j) ? &r.gm_states[k] : nullptr;
      so.layers = scope[j];
      so.lr = lr[j];
      so.momentum = cfg.momentum;
      so.weight_decay = cfg.weight_decay;

      double loss_sum = 0.0;
      std::uint64_t shuffle_round = 0;
      auto order = batches(ds, Split::train, cfg.batch_size, derive_seed(cfg.seed, 2 + j, outer * 1000003 + shuffle_round));
      std::size_t cursor = 0;
      for (std::size_t t = 0; t < inner; ++t) {
        if (cursor == order.size()) {
          ++shuffle_round;
          order = batches(ds, Split::train, cfg.batch_size, derive_seed(cfg.seed, 2 + j, outer * 1000003 + shuffle_round));
          cursor = 0;
        }
        const Batch b = ds.gather(j, order[cursor++]);
        loss_sum += train_step(r.models[j], opts[j], b, so);
      }

      for (const auto& idx : cov_batches) accumulate(r.gm_states[j], forward(r.models[j], ds.gather(j, idx).inputs));
      build_t(r.gm_states[j], cfg.gm);

      PhaseRecord rec;
      rec.outer_iter = outer;
      rec.modality = j + 1;
      rec.mean_train_loss = loss_sum / static_cast<double>(inner);
      rec.lr = lr[j];
      const PredictionSet preds = predict(r.models, ds, cfg.eval_split);
      rec.multi_accuracy = accuracy(fuse(preds, cfg.fusion), preds.labels);
      for (const auto& p : preds.per_modality) rec.per_modality_accuracy.push_back(accuracy(p, preds.labels));
      r.trace.push_back(std::move(rec));

      // Divide the rate by 10 once the phase loss stops improving.
      const double phase_loss = r.trace.back().mean_train_loss;
      if (phase_loss < best_loss[j] - cfg.plateau_min_delta) {
        best_loss[j] = phase_loss;
        stale[j] = 0;
      } else if (++stale[j] >= cfg.patience) {
        lr[j] /= 10.0;
        stale[j] = 0;
      }
    }
  }

  r.final_metrics = evaluate(predict(r.models, ds, cfg.eval_split));
  return r;
}

// ---------------------------------------------------------------------------
// Ablation grids

struct AblationVariant {
  std::string label;
  TrainConfig config;  // seed is overwritten per run
};

struct AblationGrid {
  std::vector<AblationVariant> variants;
  std::vector<std::uint64_t> seeds;
};

struct RunRecord {
  std::size_t variant = 0;
  std::string label;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  std::vector<SingularReport> singular;  // per modality
  PhaseTrace trace;
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double s = 0.0;
    for (double x : xs) s += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct MetricSummary {
  MeanStd accuracy, map, macro_f1;
};

struct AblationCell {
  std::string label;
  std::size_t runs = 0;
  MetricSummary fused_average;
  MetricSummary fused_weighted;
  std::vector<MetricSummary> per_modality;
};

struct AblationTable {
  std::vector<RunRecord> runs;    // variant-major, then seed order
  std::vector<AblationCell> cells;
};

inline MetricSummary summarize(const std::vector<const Metrics*>& ms) {
  std::vector<double> a, p, f;
  for (const auto* m : ms) {
    a.push_back(m->accuracy);
    p.push_back(m->map);
    f.push_back(m->macro_f1);
  }
  return {mean_std(a), mean_std(p), mean_std(f)};
}

/// Runs every variant under every seed. `threads` bounds concurrent runs;
/// results are identical for any thread count.
inline AblationTable ablate(const MultimodalDataset& ds, const AblationGrid& grid, std::size_t threads = 1) {
  AblationTable table;
  if (grid.variants.empty()) return table;
  if (grid.seeds.empty()) throw ValidationError("ablation: seed list is empty");

  const std::size_t total = grid.variants.size() * grid.seeds.size();
  table.runs.resize(total);
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < total; i = next++) {
      const std::size_t v = i / grid.seeds.size();
      const std::size_t s = i % grid.seeds.size();
      try {
        TrainConfig cfg = grid.variants[v].config;
        cfg.seed = grid.seeds[s];
        TrainResult res = train(ds, cfg);
        RunRecord& rec = table.runs[i];
        rec.variant = v;
        rec.label = grid.variants[v].label;
        rec.seed = cfg.seed;
        rec.metrics = std::move(res.final_metrics);
        for (const auto& st : res.gm_states) rec.singular.push_back(singular_report(st));
        rec.trace = std::move(res.trace);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  threads = std::clamp<std::size_t>(threads, 1, total);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  for (std::size_t v = 0; v < grid.variants.size(); ++v) {
    AblationCell cell;
    cell.label = grid.variants[v].label;
    std::vector<const Metrics*> avg, wtd;
    std::vector<std::vector<const Metrics*>> per;
    for (const auto& run : table.runs) {
      if (run.variant != v) continue;
      ++cell.runs;
      avg.push_back(&run.metrics.fused_average);
      wtd.push_back(&run.metrics.fused_weighted);
      per.resize(run.metrics.per_modality.size());
      for (std::size_t j = 0; j < per.size(); ++j) per[j].push_back(&run.metrics.per_modality[j]);
    }
    cell.fused_average = summarize(avg);
    cell.fused_weighted = summarize(wtd);
    for (const auto& p : per) cell.per_modality.push_back(summarize(p));
    table.cells.push_back(std::move(cell));
  }
  return table;
}

/// "baseline", "sam_only", "gm_only" or "mie" for the two main switches.
inline std::string run_label(const Ablation& a) {
  if (a.sam_on && a.gm_on) return "mie";
  if (a.sam_on) return "sam_only";
  if (a.gm_on) return "gm_only";
  return "baseline";
}

}  // namespace mie

#endif  // MIE_TRAINER_HPP
