// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, a handful of kernels, and a cyclic Jacobi
// eigensolver for symmetric matrices.

#ifndef MIE_LINALG_HPP
#define MIE_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mie/errors.hpp"

namespace mie {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_) {
      throw ValidationError("Matrix: entry count does not match rows*cols");
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ValidationError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ValidationError("subtract: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] -= b.data()[i];
  return r;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ValidationError("add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += b.data()[i];
  return r;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix r = a;
  for (double& v : r.data()) v *= s;
  return r;
}

/// A·B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul: shape mismatch " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// A^T·B without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ValidationError("matmul_tn: shape mismatch " + shape_str(a) + "^T * " + shape_str(b));
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.data().data() + k * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* ci = c.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// A·B^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ValidationError("matmul_nt: shape mismatch " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw ValidationError("matvec: shape mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * x[k];
    y[i] = s;
  }
  return y;
}

inline Matrix outer(std::span<const double> u, std::span<const double> v) {
  Matrix r(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) r(i, j) = u[i] * v[j];
  return r;
}

/// Column means of a B×d matrix.
inline Vector mean_rows(const Matrix& z) {
  if (z.rows() == 0 || z.cols() == 0) throw ValidationError("mean_rows: empty matrix");
  Vector m(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += r[j];
  }
  const double inv = static_cast<double>(z.rows());
  for (double& v : m) v /= inv;
  return m;
}

struct SymEigenResult {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column i pairs with eigenvalues[i]
  int sweeps = 0;
};

struct JacobiOptions {
  double relative_tolerance = 1e-12;
  int max_sweeps = 100;
  double symmetry_tolerance = 1e-9;
  double clamp_tolerance = 1e-10;
};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Converges when the off-diagonal Frobenius norm drops to
/// `relative_tolerance * ||A||_F`. Eigenvalues come back sorted in descending
/// order. Each eigenvector is oriented so that its largest-magnitude component
/// is non-negative. Negative eigenvalues within `clamp_tolerance * ||A||_F` of
/// zero are clamped to zero.
inline SymEigenResult sym_eigen(const Matrix& input, const JacobiOptions& opts = {}) {
  const std::size_t n = input.rows();
  if (n == 0 || input.cols() != n) {
    throw ValidationError("sym_eigen: expected a non-empty square matrix, got " + shape_str(input));
  }
  for (double v : input.data())
    if (!std::isfinite(v)) throw ValidationError("sym_eigen: matrix has non-finite entries");
  const double norm_a = frobenius_norm(input);
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = input(i, j) - input(j, i);
      asym += d * d;
    }
  if (std::sqrt(asym) > opts.symmetry_tolerance * std::max(1.0, norm_a)) {
    throw ValidationError("sym_eigen: matrix is not symmetric (||A-A^T||_F = " +
                          std::to_string(std::sqrt(asym)) + ")");
  }

  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));
  // Row i of vt is the i-th eigenvector; rows keep the rotation updates contiguous.
  Matrix vt = Matrix::identity(n);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  auto rotate_rows = [](std::span<double> x, std::span<double> y, double c, double s) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double xk = x[k];
      const double yk = y[k];
      x[k] = c * xk - s * yk;
      y[k] = s * xk + c * yk;
    }
  };

  // Round-robin ("tournament") cyclic ordering: each sweep visits every pair
  // (p, q) exactly once, in n-1 rounds of disjoint pairs. Rotations inside a
  // round commute, so a round is applied as one row pass and one column pass.
  const std::size_t players = n + (n % 2);
  std::vector<std::size_t> ring(players);
  std::iota(ring.begin(), ring.end(), 0);
  struct Rotation {
    std::size_t p, q;
    double c, s;
  };
  std::vector<Rotation> round;
  round.reserve(players / 2);

  const double target = opts.relative_tolerance * norm_a;
  int sweep = 0;
  double off = off_norm();
  while (off > target) {
    if (sweep >= opts.max_sweeps) {
      std::ostringstream os;
      os << "sym_eigen: no convergence after " << sweep << " sweeps, off-diagonal residual " << off
         << " (target " << target << ")";
      throw NumericError(os.str());
    }
    ++sweep;
    // Early sweeps skip entries that are small next to the average
    // off-diagonal magnitude.
    const double threshold = sweep < 4 ? 0.2 * off / static_cast<double>(n * n) : 0.0;
    for (std::size_t r = 0; r + 1 < players; ++r) {
      round.clear();
      for (std::size_t i = 0; i < players / 2; ++i) {
        std::size_t p = ring[i];
        std::size_t q = ring[players - 1 - i];
        if (p > q) std::swap(p, q);
        if (q >= n) continue;  // padding slot for odd n
        const double apq = a(p, q);
        if (apq == 0.0 || std::abs(apq) <= threshold) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // The rotation cannot change the diagonal in double precision.
        if (sweep > 4 && std::abs(apq) * 1e18 < std::abs(app) && std::abs(apq) * 1e18 < std::abs(aqq)) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        round.push_back({p, q, c, t * c});
      }
      if (!round.empty()) {
        for (const auto& rot : round) rotate_rows(a.row(rot.p), a.row(rot.q), rot.c, rot.s);
        for (std::size_t i = 0; i < n; ++i) {
          auto row = a.row(i);
          for (const auto& rot : round) {
            const double x = row[rot.p];
            const double y = row[rot.q];
            row[rot.p] = rot.c * x - rot.s * y;
            row[rot.q] = rot.s * x + rot.c * y;
          }
        }
        for (const auto& rot : round) {
          a(rot.p, rot.q) = a(rot.q, rot.p) = 0.0;
          rotate_rows(vt.row(rot.p), vt.row(rot.q), rot.c, rot.s);
        }
      }
      const std::size_t last = ring[players - 1];
      for (std::size_t k = players - 1; k > 1; --k) ring[k] = ring[k - 1];
      if (players > 1) ring[1] = last;
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  SymEigenResult out;
  out.sweeps = sweep;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    double lambda = a(src, src);
    if (lambda < 0.0 && -lambda <= opts.clamp_tolerance * norm_a) lambda = 0.0;
    out.eigenvalues[col] = lambda;
    std::size_t pivot = 0;
    const auto vec = vt.row(src);
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(vec[k]) > std::abs(vec[pivot])) pivot = k;
    const double sign = vec[pivot] < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, col) = sign * vec[k];
  }
  return out;
}

/// V·diag(d)·V^T.
inline Matrix reconstruct(const Matrix& v, std::span<const double> d) {
  if (v.cols() != d.size()) throw ValidationError("reconstruct: shape mismatch");
  Matrix scaled = v;
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) scaled(i, j) *= d[j];
  return matmul_nt(scaled, v);
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace mie

#endif  // MIE_LINALG_HPP
