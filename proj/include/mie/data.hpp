// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multimodal classification data, the MMD1 container format, and
// minibatch partitioning.

#ifndef MIE_DATA_HPP
#define MIE_DATA_HPP

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mie/errors.hpp"
#include "mie/linalg.hpp"
#include "mie/nn.hpp"

namespace mie {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct MultimodalDataset {
  std::size_t num_classes = 0;
  std::vector<Matrix> features;         // one n x d_j block per modality
  std::vector<std::uint16_t> labels;    // class index per sample
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  std::size_t modalities() const { return features.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  /// One-hot label vector of sample i.
  Vector one_hot(std::size_t i) const {
    Vector y(num_classes, 0.0);
    y[labels.at(i)] = 1.0;
    return y;
  }

  Batch gather(std::size_t modality, std::span<const std::size_t> idx) const {
    const Matrix& f = features.at(modality);
    Batch b{Matrix(idx.size(), f.cols()), {}};
    b.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto src = f.row(idx[r]);
      std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
      b.labels.push_back(labels[idx[r]]);
    }
    return b;
  }

  void validate() const {
    if (features.empty()) throw ValidationError("dataset: no modalities");
    if (num_classes < 2) throw ValidationError("dataset: need at least two classes");
    const std::size_t n = labels.size();
    if (n == 0) throw ValidationError("dataset: no samples");
    if (splits.size() != n) throw ValidationError("dataset: split tags do not match sample count");
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (features[j].rows() != n) throw ValidationError("dataset: modality " + std::to_string(j + 1) + " has wrong row count");
      if (features[j].cols() == 0) throw ValidationError("dataset: modality " + std::to_string(j + 1) + " has zero width");
      if (!all_finite(features[j].data())) throw ValidationError("dataset: non-finite feature in modality " + std::to_string(j + 1));
    }
    for (auto y : labels)
      if (y >= num_classes) throw ValidationError("dataset: label out of range");
  }

  friend bool operator==(const MultimodalDataset&, const MultimodalDataset&) = default;
};

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t num_classes = 10;
  std::vector<std::size_t> dims{32, 32};
  std::vector<double> snr{3.0, 0.8};
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0) throw ValidationError("data.n: must be positive");
    if (num_classes < 2) throw ValidationError("data.c: need at least two classes");
    if (num_classes > 65535) throw ValidationError("data.c: at most 65535 classes");
    if (dims.empty()) throw ValidationError("data.dims: need at least one modality");
    if (dims.size() != snr.size()) throw ValidationError("data.snr: one value per modality required");
    for (auto d : dims)
      if (d == 0) throw ValidationError("data.dims: dimensions must be positive");
    for (double s : snr)
      if (!std::isfinite(s) || s < 0.0) throw ValidationError("data.snr: values must be finite and non-negative");
    for (double f : {train_fraction, val_fraction, test_fraction})
      if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("data.splits: fractions must lie in [0,1]");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
      throw ValidationError("data.splits: fractions must sum to 1");
  }
};

/// x = snr_j * prototype(y, j) + N(0, I). Prototypes are standard normal,
/// drawn once per (class, modality). Labels are assigned round-robin and the
/// split is a seeded permutation cut by the split fractions.
inline MultimodalDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t m = spec.dims.size();

  std::vector<Matrix> prototypes;
  for (std::size_t j = 0; j < m; ++j) {
    Matrix p(spec.num_classes, spec.dims[j]);
    for (double& v : p.data()) v = normal(rng);
    prototypes.push_back(std::move(p));
  }

  MultimodalDataset ds;
  ds.num_classes = spec.num_classes;
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) ds.labels[i] = static_cast<std::uint16_t>(i % spec.num_classes);

  for (std::size_t j = 0; j < m; ++j) {
    Matrix x(spec.n, spec.dims[j]);
    for (std::size_t i = 0; i < spec.n; ++i) {
      const auto proto = prototypes[j].row(ds.labels[i]);
      auto r = x.row(i);
      for (std::size_t k = 0; k < r.size(); ++k) r[k] = spec.snr[j] * proto[k] + normal(rng);
    }
    ds.features.push_back(std::move(x));
  }

  std::vector<std::size_t> perm(spec.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.n)));
  const auto n_val = std::min(spec.n - n_train,
                              static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(spec.n))));
  ds.splits.assign(spec.n, Split::test);
  for (std::size_t r = 0; r < spec.n; ++r) {
    if (r < n_train) ds.splits[perm[r]] = Split::train;
    else if (r < n_train + n_val) ds.splits[perm[r]] = Split::val;
  }
  return ds;
}

/// Consecutive chunks of `idx` of size `batch_size`; the last may be short.
inline std::vector<std::vector<std::size_t>> partition(std::span<const std::size_t> idx, std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    const std::size_t e = std::min(idx.size(), s + batch_size);
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s), idx.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

/// Seeded permutation of the split's indices cut into ceil(n/B) batches.
inline std::vector<std::vector<std::size_t>> batches(const MultimodalDataset& ds, Split split, std::size_t batch_size,
                                                     std::uint64_t seed) {
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  auto idx = ds.indices(split);
  if (idx.empty()) throw ValidationError(std::string("split '") + split_name(split) + "' is empty");
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return partition(idx, batch_size);
}

// MMD1 layout (little-endian):
//   "MMD1", u8 version (=1)
//   u32 n, u32 m, u32 c, m x u32 d_j
//   feature blocks, modality-major, each n x d_j f64 row-major
//   n x u16 labels
//   n x u8 split tags (0 train, 1 val, 2 test)
//   u32 CRC-32 of every byte after the version byte and before the checksum

inline constexpr std::uint8_t kDatasetVersion = 1;

namespace detail {

inline void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>(v >> (8 * i)));
}

inline std::uint32_t crc32_of(const std::string& s, std::size_t begin, std::size_t end) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(s.data() + begin), static_cast<uInt>(end - begin));
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  void need(std::size_t n, const std::string& what) const {
    if (pos_ + n > buf_.size())
      throw FormatError("dataset: truncated file, missing " + what + " (need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", file has " + std::to_string(buf_.size()) + ")");
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(static_cast<unsigned char>(buf_[pos_]) |
                                                 (static_cast<unsigned char>(buf_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(buf_[pos_++]); }
  double f64() {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const MultimodalDataset& ds) {
  ds.validate();
  std::string buf = "MMD1";
  buf.push_back(static_cast<char>(kDatasetVersion));
  const std::size_t n = ds.size();
  detail::append_u32(buf, static_cast<std::uint32_t>(n));
  detail::append_u32(buf, static_cast<std::uint32_t>(ds.modalities()));
  detail::append_u32(buf, static_cast<std::uint32_t>(ds.num_classes));
  for (const auto& f : ds.features) detail::append_u32(buf, static_cast<std::uint32_t>(f.cols()));
  for (const auto& f : ds.features) {
    for (double v : f.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>(bits >> (8 * i)));
    }
  }
  for (auto y : ds.labels) {
    buf.push_back(static_cast<char>(y & 0xff));
    buf.push_back(static_cast<char>(y >> 8));
  }
  for (auto s : ds.splits) buf.push_back(static_cast<char>(s));
  detail::append_u32(buf, detail::crc32_of(buf, 5, buf.size()));
  return buf;
}

inline MultimodalDataset deserialize(const std::string& buf) {
  detail::Reader rd(buf);
  rd.need(4, "magic");
  if (buf.compare(0, 4, "MMD1") != 0) throw FormatError("dataset: bad magic (expected MMD1)");
  rd.skip(4);
  rd.need(1, "version byte");
  const std::uint8_t version = rd.u8();
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const std::uint32_t n = rd.u32("header field n");
  const std::uint32_t m = rd.u32("header field m");
  const std::uint32_t c = rd.u32("header field c");
  if (m == 0 || m > 4096) throw FormatError("dataset: implausible modality count " + std::to_string(m));
  std::vector<std::uint32_t> dims(m);
  for (std::uint32_t j = 0; j < m; ++j) dims[j] = rd.u32("dimension of modality " + std::to_string(j + 1));

  MultimodalDataset ds;
  ds.num_classes = c;
  for (std::uint32_t j = 0; j < m; ++j) {
    const std::uint64_t count = static_cast<std::uint64_t>(n) * dims[j];
    rd.need(count * 8, "feature block of modality " + std::to_string(j + 1));
    Matrix f(n, dims[j]);
    for (double& v : f.data()) v = rd.f64();
    ds.features.push_back(std::move(f));
  }
  rd.need(static_cast<std::size_t>(n) * 2, "label block");
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = rd.u16();
  rd.need(n, "split block");
  ds.splits.resize(n);
  for (auto& s : ds.splits) {
    const auto tag = rd.u8();
    if (tag > 2) throw FormatError("dataset: invalid split tag " + std::to_string(tag));
    s = static_cast<Split>(tag);
  }
  const std::size_t payload_end = rd.pos();
  const std::uint32_t stored = rd.u32("checksum");
  if (rd.pos() != buf.size()) throw FormatError("dataset: trailing bytes after checksum");
  if (stored != detail::crc32_of(buf, 5, payload_end)) throw FormatError("dataset: checksum mismatch");
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
  return ds;
}

inline void save(const MultimodalDataset& ds, const std::string& path) {
  const std::string buf = serialize(ds);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline MultimodalDataset load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() == 4 && std::string_view(magic, 4) != "MMD1") throw FormatError("dataset: bad magic (expected MMD1)");
  is.seekg(0);
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace mie

#endif  // MIE_DATA_HPP
