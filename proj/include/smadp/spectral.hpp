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

// Heavy-tailed layer diagnostics: eigenvalues of WᵀW, a maximum-likelihood
// power-law tail exponent, its distance from a reliability interval and the
// resulting memory tempering coefficient.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smadp/error.hpp"
#include "smadp/numerics.hpp"

namespace smadp::spectral {

using numerics::DenseMatrix;

struct SpectralInterval {
  double rho_min = 2.0;
  double rho_max = 6.0;

  double midpoint() const { return 0.5 * (rho_min + rho_max); }
  double half_width() const { return 0.5 * (rho_max - rho_min); }

  void Validate() const {
    if (!(std::isfinite(rho_min) && std::isfinite(rho_max) && rho_min < rho_max)) {
      throw ParameterError("spectral interval needs finite rho_min < rho_max, got [" +
                           std::to_string(rho_min) + "," + std::to_string(rho_max) + "]");
    }
  }

  friend bool operator==(const SpectralInterval&, const SpectralInterval&) = default;
};

struct SpectralReport {
  int group_id = 0;
  std::size_t step = 0;
  double rho = 0.0;
  double deviation = 0.0;
  double tempering = 0.0;
  std::size_t tail_size = 0;
  bool valid = false;
};

struct PowerLawFit {
  double rho = 0.0;
  std::size_t tail_size = 0;
  bool valid = false;
};

inline constexpr std::size_t kDefaultMinTail = 8;
inline constexpr double kEigenFloor = 1e-12;
inline constexpr double kNegativeSlack = 1e-10;

// Eigenvalues of WᵀW, descending, negatives from round-off clamped to 0.
inline std::vector<double> spectral_eigs(const DenseMatrix& weight) {
  if (!weight.all_finite()) throw NumericalError("spectral_eigs: non-finite weight");
  std::vector<double> eigs = numerics::sym_eigvals(numerics::gram(weight));
  const double scale = std::max(1.0, eigs.empty() ? 0.0 : eigs.front());
  for (double& e : eigs) {
    if (e < -kNegativeSlack * scale) {
      throw NumericalError("spectral_eigs: eigenvalue " + std::to_string(e) +
                           " of a Gram matrix is negative beyond round-off");
    }
    if (e < 0.0) e = 0.0;
  }
  return eigs;
}

// Continuous MLE of the tail exponent over the top ceil(n/2) usable
// eigenvalues (at least min_tail), with x_min the smallest retained one:
//   rho = 1 + k / sum_i ln(x_i / x_min).
// Eigenvalues <= 1e-12 are discarded before the tail is selected.
inline PowerLawFit fit_powerlaw_exponent(const std::vector<double>& eigs,
                                         std::size_t min_tail = kDefaultMinTail) {
  if (eigs.empty()) throw StructuralError("fit_powerlaw_exponent: empty spectrum");
  std::vector<double> usable;
  for (double e : eigs)
    if (e > kEigenFloor) usable.push_back(e);
  std::sort(usable.begin(), usable.end(), std::greater<>());

  PowerLawFit fit;
  if (usable.size() < min_tail || usable.size() < 2) return fit;
  const std::size_t half = (usable.size() + 1) / 2;
  const std::size_t k = std::min(usable.size(), std::max(half, min_tail));
  const double x_min = usable[k - 1];
  fit.tail_size = k;
  if (x_min == usable.front()) return fit;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) log_sum += std::log(usable[i] / x_min);
  fit.rho = 1.0 + static_cast<double>(k) / log_sum;
  fit.valid = std::isfinite(fit.rho);
  return fit;
}

inline double interval_deviation(double rho, const SpectralInterval& interval) {
  return std::max({0.0, interval.rho_min - rho, rho - interval.rho_max});
}

// Same quantity through the midpoint/half-width form.
inline double interval_deviation_centered(double rho, const SpectralInterval& interval) {
  return std::max(0.0, std::abs(rho - interval.midpoint()) - interval.half_width());
}

inline double tempering(double deviation, double c_lambda) {
  if (!(deviation >= 0.0)) {
    throw ParameterError("tempering: deviation must be >= 0, got " + std::to_string(deviation));
  }
  if (!(c_lambda > 0.0)) {
    throw ParameterError("tempering: c_lambda must be > 0, got " + std::to_string(c_lambda));
  }
  return 1.0 - std::exp(-c_lambda * deviation);
}

// Full per-group diagnostic for one weight matrix. An invalid fit yields
// deviation 0 (no tempering).
inline SpectralReport spectral_report(const DenseMatrix& weight, int group_id,
                                      std::size_t step,
                                      const SpectralInterval& interval,
                                      double c_lambda,
                                      std::size_t min_tail = kDefaultMinTail) {
  const PowerLawFit fit = fit_powerlaw_exponent(spectral_eigs(weight), min_tail);
  SpectralReport r;
  r.group_id = group_id;
  r.step = step;
  r.tail_size = fit.tail_size;
  r.valid = fit.valid;
  r.rho = fit.valid ? fit.rho : std::nan("");
  r.deviation = fit.valid ? interval_deviation(fit.rho, interval) : 0.0;
  r.tempering = tempering(r.deviation, c_lambda);
  return r;
}

struct StageSummary {
  double mean_rho = 0.0;
  double mean_lambda = 0.0;
  std::size_t count = 0;
};

// Per-stage means over valid reports. A stage with no valid report maps to
// std::nullopt.
inline std::map<std::string, std::optional<StageSummary>> aggregate_stagewise(
    const std::vector<SpectralReport>& reports,
    const std::map<int, std::string>& stages) {
  std::map<std::string, std::optional<StageSummary>> out;
  for (const auto& r : reports) {
    const auto it = stages.find(r.group_id);
    if (it == stages.end()) {
      throw StructuralError("aggregate_stagewise: group " + std::to_string(r.group_id) +
                            " has no stage tag");
    }
    auto& slot = out[it->second];
    if (!r.valid) continue;
    if (!slot) slot = StageSummary{};
    slot->mean_rho += r.rho;
    slot->mean_lambda += r.tempering;
    ++slot->count;
  }
  for (auto& [tag, summary] : out) {
    if (!summary) continue;
    summary->mean_rho /= static_cast<double>(summary->count);
    summary->mean_lambda /= static_cast<double>(summary->count);
  }
  return out;
}

}  // namespace smadp::spectral
