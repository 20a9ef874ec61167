// SPDX-License-Identifier: Apache-2.0
//
// Per-modality MLP: encoder layers followed by a three-layer classification
// head, with softmax cross-entropy and exact manual backpropagation.

#ifndef MIE_NN_HPP
#define MIE_NN_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mie/errors.hpp"
#include "mie/linalg.hpp"

namespace mie {

enum class Activation : std::uint8_t { none = 0, relu = 1 };

struct LayerParams {
  Matrix weights;  // in_dim x out_dim
  Vector biases;   // out_dim
  Activation activation = Activation::none;

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }
  std::size_t parameter_count() const { return weights.size() + biases.size(); }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Architecture {
  std::size_t encoder_hidden = 128;
  std::size_t feature_dim = 64;  // "Dim", the encoder output width
  std::size_t head_hidden = 256;
  std::size_t head_bottleneck = 64;
};

/// Encoder layers come first, then exactly three head layers.
struct ModalityModel {
  std::vector<LayerParams> layers;
  std::size_t encoder_count = 0;

  std::size_t head_begin() const { return encoder_count; }
  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t num_classes() const { return layers.back().out_dim(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  friend bool operator==(const ModalityModel&, const ModalityModel&) = default;
};

/// Weight and bias gradients laid out exactly like a ModalityModel.
struct LayerGrad {
  Matrix weights;
  Vector biases;
  friend bool operator==(const LayerGrad&, const LayerGrad&) = default;
};

struct GradientSet {
  std::vector<LayerGrad> layers;

  static GradientSet zeros_like(const ModalityModel& model) {
    GradientSet g;
    g.layers.reserve(model.layers.size());
    for (const auto& l : model.layers) {
      g.layers.push_back({Matrix(l.in_dim(), l.out_dim()), Vector(l.out_dim(), 0.0)});
    }
    return g;
  }

  template <class F>
  void for_each_block(F&& f) {
    for (auto& l : layers) {
      f(std::span<double>(l.weights.data()));
      f(std::span<double>(l.biases));
    }
  }
  template <class F>
  void for_each_block(F&& f) const {
    for (const auto& l : layers) {
      f(std::span<const double>(l.weights.data()));
      f(std::span<const double>(l.biases));
    }
  }

  double norm() const {
    double s = 0.0;
    for_each_block([&](std::span<const double> b) {
      for (double x : b) s += x * x;
    });
    return std::sqrt(s);
  }

  bool finite() const {
    bool ok = true;
    for_each_block([&](std::span<const double> b) { ok = ok && all_finite(b); });
    return ok;
  }

  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

inline bool congruent(const ModalityModel& model, const GradientSet& g) {
  if (model.layers.size() != g.layers.size()) return false;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (!model.layers[i].weights.same_shape(g.layers[i].weights) ||
        model.layers[i].biases.size() != g.layers[i].biases.size())
      return false;
  }
  return true;
}

/// model += scale * offset, elementwise over every weight and bias.
inline void add_scaled(ModalityModel& model, const GradientSet& offset, double scale) {
  if (!congruent(model, offset)) throw ValidationError("add_scaled: gradient set does not match model");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& w = model.layers[i].weights.data();
    const auto& dw = offset.layers[i].weights.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += scale * dw[k];
    auto& b = model.layers[i].biases;
    const auto& db = offset.layers[i].biases;
    for (std::size_t k = 0; k < b.size(); ++k) b[k] += scale * db[k];
  }
}

/// Uniform(-sqrt(6/(in+out)), +sqrt(6/(in+out))) weights and zero biases.
inline LayerParams init_layer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng) {
  LayerParams l{Matrix(in, out), Vector(out, 0.0), act};
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : l.weights.data()) w = dist(rng);
  return l;
}

/// input -> encoder_hidden (relu) -> feature_dim (relu) -> head.
/// Head: feature_dim -> head_hidden (relu) -> head_bottleneck -> classes.
inline ModalityModel make_model(std::size_t input_dim, std::size_t num_classes, const Architecture& arch,
                                std::mt19937_64& rng) {
  if (input_dim == 0 || num_classes == 0) throw ValidationError("make_model: dimensions must be positive");
  ModalityModel m;
  m.layers.push_back(init_layer(input_dim, arch.encoder_hidden, Activation::relu, rng));
  m.layers.push_back(init_layer(arch.encoder_hidden, arch.feature_dim, Activation::relu, rng));
  m.encoder_count = 2;
  m.layers.push_back(init_layer(arch.feature_dim, arch.head_hidden, Activation::relu, rng));
  m.layers.push_back(init_layer(arch.head_hidden, arch.head_bottleneck, Activation::none, rng));
  m.layers.push_back(init_layer(arch.head_bottleneck, num_classes, Activation::none, rng));
  return m;
}

struct ForwardTrace {
  std::vector<Matrix> layer_inputs;  // layer_inputs[l] is the B x in_dim input of layer l
  Matrix logits;                     // B x c
  Matrix predictions;                // B x c, rows on the simplex
};

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    auto out = p.row(i);
    for (std::size_t k = 0; k < z.size(); ++k) {
      out[k] = std::exp(z[k] - mx);
      sum += out[k];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

inline ForwardTrace forward(const ModalityModel& model, const Matrix& x) {
  if (model.layers.empty()) throw ValidationError("forward: empty model");
  if (x.cols() != model.input_dim()) {
    throw ValidationError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                          std::to_string(model.input_dim()));
  }
  ForwardTrace trace;
  trace.layer_inputs.reserve(model.layers.size());
  Matrix act = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix out = matmul(act, layer.weights);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) {
        r[j] += layer.biases[j];
        if (layer.activation == Activation::relu && r[j] < 0.0) r[j] = 0.0;
      }
    }
    trace.layer_inputs.push_back(std::move(act));
    act = std::move(out);
  }
  trace.logits = std::move(act);
  trace.predictions = softmax_rows(trace.logits);
  return trace;
}

inline ForwardTrace forward(const ModalityModel& model, std::span<const double> x) {
  return forward(model, Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())));
}

inline constexpr double kProbabilityFloor = 1e-30;

/// -log(p[true class]) for a one-hot target.
inline double cross_entropy(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size() || p.empty()) throw ValidationError("cross_entropy: length mismatch");
  std::size_t hot = p.size();
  double psum = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    psum += p[k];
    if (y[k] == 1.0) {
      if (hot != p.size()) throw ValidationError("cross_entropy: target is not one-hot");
      hot = k;
    } else if (y[k] != 0.0) {
      throw ValidationError("cross_entropy: target is not one-hot");
    }
    if (p[k] < -1e-9) throw ValidationError("cross_entropy: prediction has a negative entry");
  }
  if (hot == p.size()) throw ValidationError("cross_entropy: target is not one-hot");
  if (std::abs(psum - 1.0) > 1e-9) throw ValidationError("cross_entropy: prediction is off the simplex");
  return -std::log(std::max(p[hot], kProbabilityFloor));
}

/// Inputs of one modality with integer class labels.
struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

inline void check_batch(const ModalityModel& model, const Batch& batch) {
  if (batch.size() == 0) throw ValidationError("empty batch");
  if (batch.inputs.rows() != batch.size()) throw ValidationError("batch: label count does not match input rows");
  for (std::size_t y : batch.labels)
    if (y >= model.num_classes()) throw ValidationError("batch: label out of range");
}

inline double mean_loss(const Matrix& predictions, const std::vector<std::size_t>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += -std::log(std::max(predictions(i, labels[i]), kProbabilityFloor));
  }
  return s / static_cast<double>(labels.size());
}

inline double batch_loss(const ModalityModel& model, const Batch& batch) {
  check_batch(model, batch);
  return mean_loss(forward(model, batch.inputs).predictions, batch.labels);
}

struct LossAndGradient {
  double loss = 0.0;
  GradientSet gradient;
};

/// Loss and its exact gradient with respect to every weight and bias.
inline LossAndGradient loss_and_gradient(const ModalityModel& model, const Batch& batch) {
  check_batch(model, batch);
  const ForwardTrace trace = forward(model, batch.inputs);
  const std::size_t bsz = batch.size();
  LossAndGradient out;
  out.loss = mean_loss(trace.predictions, batch.labels);

  // Fused softmax + cross-entropy: dL/dlogits = (p - y) / B.
  Matrix delta = trace.predictions;
  for (std::size_t i = 0; i < bsz; ++i) delta(i, batch.labels[i]) -= 1.0;
  const double inv_b = 1.0 / static_cast<double>(bsz);
  for (double& v : delta.data()) v *= inv_b;

  out.gradient.layers.resize(model.layers.size());
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Matrix& input = trace.layer_inputs[l];
    auto& g = out.gradient.layers[l];
    g.weights = matmul_tn(input, delta);
    g.biases.assign(delta.cols(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      const auto r = delta.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) g.biases[j] += r[j];
    }
    if (l == 0) break;
    Matrix prev = matmul_nt(delta, model.layers[l].weights);
    if (model.layers[l - 1].activation == Activation::relu) {
      for (std::size_t k = 0; k < prev.size(); ++k)
        if (input.data()[k] <= 0.0) prev.data()[k] = 0.0;
    }
    delta = std::move(prev);
  }
  return out;
}

inline GradientSet backward(const ModalityModel& model, const Batch& batch) {
  return loss_and_gradient(model, batch).gradient;
}

// Checkpoint format: "MIE1", u32 layer count, u32 encoder count, then per layer
// u32 in_dim, u32 out_dim, u8 activation, in*out f64 weights (row-major),
// out f64 biases. All little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const std::string& what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("truncated file while reading " + what);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void get_f64_block(std::istream& is, std::span<double> out, const std::string& what) {
  std::vector<unsigned char> buf(out.size() * 8);
  read_exact(is, buf.data(), buf.size(), what);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ModalityModel& model) {
  os.write("MIE1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(model.encoder_count));
  for (const auto& l : model.layers) {
    detail::put_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    const char act = static_cast<char>(l.activation);
    os.write(&act, 1);
    for (double w : l.weights.data()) detail::put_f64(os, w);
    for (double b : l.biases) detail::put_f64(os, b);
  }
}

inline ModalityModel read_checkpoint(std::istream& is) {
  char magic[4];
  detail::read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, "MIE1", 4) != 0) throw FormatError("checkpoint: bad magic (expected MIE1)");
  ModalityModel m;
  const std::uint32_t count = detail::get_u32(is, "layer count");
  m.encoder_count = detail::get_u32(is, "encoder count");
  if (count == 0 || count > 1024 || m.encoder_count > count) throw FormatError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string tag = "layer " + std::to_string(i);
    const std::uint32_t in = detail::get_u32(is, tag + " in_dim");
    const std::uint32_t out = detail::get_u32(is, tag + " out_dim");
    if (in == 0 || out == 0 || static_cast<std::uint64_t>(in) * out > (1ull << 28))
      throw FormatError("checkpoint: implausible shape for " + tag);
    char act = 0;
    detail::read_exact(is, &act, 1, tag + " activation");
    if (act != 0 && act != 1) throw FormatError("checkpoint: unknown activation tag in " + tag);
    LayerParams l{Matrix(in, out), Vector(out), static_cast<Activation>(act)};
    detail::get_f64_block(is, l.weights.data(), tag + " weights");
    detail::get_f64_block(is, l.biases, tag + " biases");
    if (!m.layers.empty() && m.layers.back().out_dim() != in)
      throw FormatError("checkpoint: layer dimensions do not chain at " + tag);
    m.layers.push_back(std::move(l));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return m;
}

inline void save_checkpoint(const std::string& path, const ModalityModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, model);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline ModalityModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace mie

#endif  // MIE_NN_HPP
