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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "smadp/error.hpp"
#include "smadp/numerics.hpp"

namespace smadp::data {

using numerics::DenseMatrix;
using numerics::RandomStream;

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct Dataset {
  DenseMatrix features;  // one row per example
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }

  void Validate() const {
    if (labels.empty()) throw StructuralError("Dataset '" + name + "' is empty");
    if (features.rows != labels.size()) {
      throw StructuralError("Dataset '" + name + "': " +
                            std::to_string(features.rows) + " rows but " +
                            std::to_string(labels.size()) + " labels");
    }
    if (!features.all_finite()) {
      throw NumericalError("Dataset '" + name + "' has non-finite features");
    }
    for (int y : labels) {
      if (y < 0 || y >= num_classes) {
        throw StructuralError("Dataset '" + name + "': label " +
                              std::to_string(y) + " outside [0, " +
                              std::to_string(num_classes) + ")");
      }
    }
  }
};

// Outcome of one Poisson subsampling event.
struct SampleBatch {
  std::vector<bool> mask;
  std::vector<std::size_t> indices;  // ascending, exactly where mask is true
  double q = 0.0;
  double expected_lot = 0.0;  // q * N

  std::size_t size() const { return indices.size(); }

  // Drops one sampled position; used to form the remove-one neighbour.
  SampleBatch Without(std::size_t index) const {
    SampleBatch out = *this;
    if (index < out.mask.size() && out.mask[index]) {
      out.mask[index] = false;
      std::erase(out.indices, index);
    }
    return out;
  }
};

// Builds a SampleBatch from an explicit mask.
inline SampleBatch batch_from_mask(std::vector<bool> mask, double q) {
  SampleBatch b;
  b.q = q;
  b.expected_lot = q * static_cast<double>(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) b.indices.push_back(i);
  b.mask = std::move(mask);
  return b;
}

inline SampleBatch poisson_sample(const RandomStream& stream, std::size_t n,
                                  double q) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ParameterError("poisson_sample: q must lie in [0,1], got " +
                         std::to_string(q));
  }
  if (n == 0) throw ParameterError("poisson_sample: n must be >= 1");
  numerics::StreamEngine engine(stream);
  std::vector<bool> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = engine.Uniform() < q;
  return batch_from_mask(std::move(mask), q);
}

// Gaussian blobs. Class c is centred at 3 * u_c where u_c is the unit vector
// at angle 2*pi*c/classes in the first two coordinates (the sign +-1 when
// d == 1); noise is unit isotropic. Labels cycle 0, 1, ..., classes-1.
inline Dataset gen_synthetic(const RandomStream& stream, std::size_t n,
                             std::size_t d, int classes) {
  if (n == 0 || d == 0) throw ParameterError("gen_synthetic: n and d must be >= 1");
  if (classes < 2) throw ParameterError("gen_synthetic: classes must be >= 2");
  if (d == 1 && classes != 2) {
    throw ParameterError("gen_synthetic: d == 1 supports exactly 2 classes");
  }
  constexpr double kRadius = 3.0;
  DenseMatrix centers(static_cast<std::size_t>(classes), d);
  for (int c = 0; c < classes; ++c) {
    if (d == 1) {
      centers(c, 0) = c == 0 ? kRadius : -kRadius;
    } else {
      const double angle = 2.0 * std::numbers::pi * c / classes;
      centers(c, 0) = kRadius * std::cos(angle);
      centers(c, 1) = kRadius * std::sin(angle);
    }
  }
  numerics::StreamEngine engine(stream);
  Dataset out{DenseMatrix(n, d), std::vector<int>(n), classes, "synthetic"};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    out.labels[i] = y;
    for (std::size_t j = 0; j < d; ++j)
      out.features(i, j) = centers(y, j) + engine.Gaussian();
  }
  return out;
}

namespace internal {

inline std::vector<unsigned char> ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open IDX file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t ReadBigEndian32(const std::vector<unsigned char>& bytes,
                                     std::size_t offset,
                                     const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw LengthError("IDX file " + path.string() + " truncated in header");
  }
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void CheckMagic(std::uint32_t got, std::uint32_t expected,
                       const std::filesystem::path& path) {
  if (got != expected) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "bad magic 0x%08x, expected 0x%08x", got,
                  expected);
    throw FormatError("IDX file " + path.string() + ": " + buf);
  }
}

}  // namespace internal

// Reads an IDX image/label pair (MNIST layout). Pixels are scaled to [0, 1]
// by dividing by 255.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path,
                        std::optional<std::size_t> limit = std::nullopt) {
  if (limit && *limit == 0) throw ParameterError("load_idx: limit must be >= 1");
  const auto images = internal::ReadFile(images_path);
  const auto labels = internal::ReadFile(labels_path);

  internal::CheckMagic(internal::ReadBigEndian32(images, 0, images_path),
                       kIdxImagesMagic, images_path);
  internal::CheckMagic(internal::ReadBigEndian32(labels, 0, labels_path),
                       kIdxLabelsMagic, labels_path);
  const std::size_t image_count = internal::ReadBigEndian32(images, 4, images_path);
  const std::size_t rows = internal::ReadBigEndian32(images, 8, images_path);
  const std::size_t cols = internal::ReadBigEndian32(images, 12, images_path);
  const std::size_t label_count = internal::ReadBigEndian32(labels, 4, labels_path);
  if (image_count != label_count) {
    throw FormatError("IDX pair disagrees on count: " + std::to_string(image_count) +
                      " images vs " + std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + image_count * pixels) {
    throw LengthError("IDX images file " + images_path.string() + " holds " +
                      std::to_string(images.size() - 16) + " payload bytes, expected " +
                      std::to_string(image_count * pixels));
  }
  if (labels.size() < 8 + label_count) {
    throw LengthError("IDX labels file " + labels_path.string() + " holds " +
                      std::to_string(labels.size() - 8) + " payload bytes, expected " +
                      std::to_string(label_count));
  }
  const std::size_t n = limit ? std::min(*limit, image_count) : image_count;
  if (n == 0) throw StructuralError("IDX pair contains no examples");

  Dataset out{DenseMatrix(n, pixels), std::vector<int>(n), 10,
              images_path.filename().string()};
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* src = images.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) out.features(i, j) = src[j] / 255.0;
    out.labels[i] = labels[8 + i];
    out.num_classes = std::max(out.num_classes, out.labels[i] + 1);
  }
  return out;
}

}  // namespace smadp::data
