/*
 * Copyright 2026 The smadp Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Deterministic numeric substrate: counter-based random streams, Gaussian
// sampling and a cyclic Jacobi eigensolver for small symmetric matrices.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smadp/error.hpp"

namespace smadp::numerics {

enum class Purpose : std::uint64_t { kNoise = 1, kSampling = 2, kInit = 3, kData = 4 };

// Immutable descriptor of a random substream. Two descriptors with the same
// coordinates always yield the same sequence; changing any coordinate gives
// an unrelated sequence.
struct RandomStream {
  std::uint64_t seed = 0;
  std::uint64_t step_index = 0;
  std::uint64_t group_index = 0;
  Purpose purpose = Purpose::kNoise;

  friend bool operator==(const RandomStream&, const RandomStream&) = default;
};

namespace internal {

// SplitMix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t StreamKey(const RandomStream& s) {
  std::uint64_t k = Mix64(s.seed);
  k = Mix64(k ^ Mix64(s.step_index + 0x632be59bd9b4e019ULL));
  k = Mix64(k ^ Mix64(s.group_index + 0x8cb92ba72f3d8dd7ULL));
  k = Mix64(k ^ (static_cast<std::uint64_t>(s.purpose) * 0xd1342543de82ef95ULL));
  return k;
}

}  // namespace internal

// Sequential reader over a RandomStream. Word i of the stream is
// Mix64(key + (i + 1) * golden), so the sequence is a pure function of the
// descriptor. Satisfies UniformRandomBitGenerator.
class StreamEngine {
 public:
  using result_type = std::uint64_t;

  explicit StreamEngine(const RandomStream& stream)
      : key_(internal::StreamKey(stream)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    ++counter_;
    return internal::Mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double Uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via the Box-Muller transform. Variates are produced in
  // pairs (cos, sin); the sin half is cached for the next call.
  double Gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// dim i.i.d. N(0, std^2) samples drawn from the start of `stream`.
inline std::vector<double> gaussian_vector(const RandomStream& stream,
                                           std::size_t dim, double std_dev) {
  if (!std::isfinite(std_dev) || std_dev < 0.0) {
    throw ParameterError("gaussian_vector: std must be finite and >= 0, got " +
                         std::to_string(std_dev));
  }
  if (dim == 0) throw ParameterError("gaussian_vector: dim must be >= 1");
  StreamEngine engine(stream);
  std::vector<double> out(dim);
  for (double& v : out) v = std_dev * engine.Gaussian();
  return out;
}

// Row-major dense matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> entries;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), entries(r * c, fill) {}
  DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), entries(std::move(values)) {
    if (entries.size() != rows * cols) {
      throw StructuralError("DenseMatrix: expected " +
                            std::to_string(rows * cols) + " entries, got " +
                            std::to_string(entries.size()));
    }
  }

  static DenseMatrix Identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return entries[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return entries[r * cols + c];
  }

  std::span<const double> row(std::size_t r) const {
    return {entries.data() + r * cols, cols};
  }

  bool all_finite() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;
};

inline double frobenius_norm(const DenseMatrix& m) {
  double s = 0.0;
  for (double v : m.entries) s += v * v;
  return std::sqrt(s);
}

// mᵀm, computed so that the result is exactly symmetric.
inline DenseMatrix gram(const DenseMatrix& m) {
  DenseMatrix x(m.cols, m.cols);
  for (std::size_t i = 0; i < m.cols; ++i) {
    for (std::size_t j = i; j < m.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m.rows; ++k) s += m(k, i) * m(k, j);
      x(i, j) = s;
      x(j, i) = s;
    }
  }
  return x;
}

struct SymmetricEigen {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column k pairs with values[k]
};

inline constexpr double kEigenConvergence = 1e-12;
inline constexpr int kEigenMaxSweeps = 100;

// Cyclic Jacobi rotations until off(m) <= 1e-12 * ||m||_F.
inline SymmetricEigen sym_eigen(const DenseMatrix& m) {
  if (m.rows != m.cols || m.rows == 0) {
    throw StructuralError("sym_eigen: matrix must be square and non-empty, got " +
                          std::to_string(m.rows) + "x" + std::to_string(m.cols));
  }
  if (!m.all_finite()) throw NumericalError("sym_eigen: non-finite entry");
  const std::size_t n = m.rows;
  const double norm = frobenius_norm(m);
  const double sym_tol = 1e-9 * std::max(1.0, norm);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > sym_tol) {
        throw StructuralError("sym_eigen: matrix is not symmetric at (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }

  DenseMatrix a = m;
  DenseMatrix v = DenseMatrix::Identity(n);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const double target = kEigenConvergence * norm;
  bool converged = off_norm() <= target;
  for (int sweep = 0; sweep < kEigenMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Symmetric Schur decomposition of the (p, q) 2x2 block.
        const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= target;
  }
  if (!converged) {
    throw NumericalError("sym_eigen: Jacobi did not converge in " +
                         std::to_string(kEigenMaxSweeps) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out{std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

inline std::vector<double> sym_eigvals(const DenseMatrix& m) {
  return sym_eigen(m).values;
}

// Vector helpers shared by the optimizer-side modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw StructuralError("dot: length mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

}  // namespace smadp::numerics
