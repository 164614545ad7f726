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

// Release-history memory. Everything here consumes only previously released
// (already noised) vectors and public hyperparameters; no function accepts the
// current clipped sum except the diagnostic memory_ratio.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smadp/error.hpp"
#include "smadp/numerics.hpp"

namespace smadp::memory {

// One private release s̃ = query + noise, stored with both components.
struct ReleaseRecord {
  std::size_t step = 0;
  int group_id = 0;
  std::vector<double> query;
  std::vector<double> noise;
  std::vector<double> release;

  static ReleaseRecord Make(std::size_t step, int group_id, std::vector<double> query,
                            std::vector<double> noise) {
    if (query.size() != noise.size()) {
      throw StructuralError("ReleaseRecord: query/noise length mismatch");
    }
    std::vector<double> release(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) release[i] = query[i] + noise[i];
    return {step, group_id, std::move(query), std::move(noise), std::move(release)};
  }
};

// Ring buffer of the last `capacity` = K-1 releases of one group, newest
// first, plus the private EMA trend.
class ReleaseHistory {
 public:
  ReleaseHistory() = default;
  ReleaseHistory(int group_id, std::size_t capacity, double gamma_ema)
      : group_id_(group_id), capacity_(capacity), gamma_ema_(gamma_ema) {
    if (!(gamma_ema > 0.0 && gamma_ema <= 1.0)) {
      throw ParameterError("ReleaseHistory: gamma_ema must lie in (0,1], got " +
                           std::to_string(gamma_ema));
    }
  }

  int group_id() const { return group_id_; }
  std::size_t capacity() const { return capacity_; }
  double gamma_ema() const { return gamma_ema_; }
  const std::deque<ReleaseRecord>& records() const { return records_; }
  const std::optional<std::vector<double>>& ema_trend() const { return ema_; }
  std::size_t releases_seen() const { return releases_seen_; }

  // Appends the release of step `record.step` and advances the EMA trend.
  void Append(ReleaseRecord record);

 private:
  int group_id_ = 0;
  std::size_t capacity_ = 0;
  double gamma_ema_ = 0.9;
  std::deque<ReleaseRecord> records_;
  std::optional<std::vector<double>> ema_;
  std::size_t releases_seen_ = 0;
};

struct KernelWeights {
  std::vector<double> raw;  // a_j, j = 1..M
  std::vector<double> hat;  // a_j / sum_l a_l
};

// a_j = (j+1)^(alpha-1) * exp(-lambda j), j = 1..m_t, normalised to â.
inline KernelWeights kernel_weights(double alpha, double lambda, std::size_t m_t) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ParameterError("kernel_weights: alpha must lie in (0,1], got " +
                         std::to_string(alpha));
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ParameterError("kernel_weights: lambda must be finite and >= 0");
  }
  KernelWeights w;
  w.raw.resize(m_t);
  double total = 0.0;
  for (std::size_t j = 1; j <= m_t; ++j) {
    const double jd = static_cast<double>(j);
    w.raw[j - 1] = std::pow(jd + 1.0, alpha - 1.0) * std::exp(-lambda * jd);
    total += w.raw[j - 1];
  }
  w.hat.resize(m_t);
  for (std::size_t j = 0; j < m_t; ++j) w.hat[j] = w.raw[j] / total;
  return w;
}

// D_eff = sum_j j * â_j.
inline double effective_depth(std::span<const double> hat) {
  double d = 0.0;
  for (std::size_t j = 0; j < hat.size(); ++j) d += static_cast<double>(j + 1) * hat[j];
  return d;
}

namespace internal {

template <typename Field>
std::vector<double> WeightedSum(const ReleaseHistory& history,
                                std::span<const double> hat, Field field) {
  const auto& recs = history.records();
  if (hat.size() > recs.size()) {
    throw StructuralError("memory: " + std::to_string(hat.size()) +
                          " kernel weights but only " + std::to_string(recs.size()) +
                          " stored releases");
  }
  if (hat.empty()) return {};
  const std::size_t dim = (recs.front().*field).size();
  std::vector<double> out(dim, 0.0);
  for (std::size_t j = 0; j < hat.size(); ++j) {
    const std::vector<double>& v = recs[j].*field;
    if (v.size() != dim) {
      throw StructuralError("memory: release dimensions differ across history");
    }
    for (std::size_t i = 0; i < dim; ++i) out[i] += hat[j] * v[i];
  }
  return out;
}

}  // namespace internal

// ν = sum_j â_j s̃_{t-j}; the newest record pairs with â_1. Empty when hat is.
inline std::vector<double> memory_vector(const ReleaseHistory& history,
                                         std::span<const double> hat) {
  return internal::WeightedSum(history, hat, &ReleaseRecord::release);
}

struct MemoryDecomposition {
  std::vector<double> nu_rec;    // sum_j â_j r_{t-j}
  std::vector<double> nu_noise;  // sum_j â_j Z_{t-j}
};

inline MemoryDecomposition memory_decompose(const ReleaseHistory& history,
                                            std::span<const double> hat) {
  return {internal::WeightedSum(history, hat, &ReleaseRecord::query),
          internal::WeightedSum(history, hat, &ReleaseRecord::noise)};
}

inline std::vector<double> ema_update(const std::optional<std::vector<double>>& prev,
                                      std::span<const double> release, double gamma,
                                      bool is_first) {
  if (is_first) return {release.begin(), release.end()};
  if (!prev) throw StateError("ema_update: previous trend missing after the first step");
  if (prev->size() != release.size()) {
    throw StructuralError("ema_update: trend/release length mismatch");
  }
  std::vector<double> out(release.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = gamma * release[i] + (1.0 - gamma) * (*prev)[i];
  return out;
}

inline void ReleaseHistory::Append(ReleaseRecord record) {
  if (record.group_id != group_id_) {
    throw StructuralError("ReleaseHistory: record for group " +
                          std::to_string(record.group_id) + " appended to group " +
                          std::to_string(group_id_));
  }
  if (record.step != releases_seen_) {
    throw StateError("ReleaseHistory: expected release of step " +
                     std::to_string(releases_seen_) + ", got " +
                     std::to_string(record.step));
  }
  ema_ = ema_update(ema_, record.release, gamma_ema_, releases_seen_ == 0);
  ++releases_seen_;
  if (capacity_ == 0) return;
  records_.push_front(std::move(record));
  if (records_.size() > capacity_) records_.pop_back();
}

// Γ = max(0, <μ,ν> / (|μ||ν| + eps)).
inline double alignment_gate(std::span<const double> mu, std::span<const double> nu,
                             double eps) {
  if (!(eps > 0.0)) throw ParameterError("alignment_gate: eps must be > 0");
  const double num = numerics::dot(mu, nu);
  const double den = numerics::l2_norm(mu) * numerics::l2_norm(nu) + eps;
  return std::clamp(num / den, 0.0, 1.0);
}

// Ψ = min(xi_max, |μ| / (|ν| + eps)).
inline double norm_scale(std::span<const double> mu, std::span<const double> nu,
                         double xi_max, double eps) {
  if (!(xi_max > 0.0)) throw ParameterError("norm_scale: xi_max must be > 0");
  if (!(eps > 0.0)) throw ParameterError("norm_scale: eps must be > 0");
  return std::min(xi_max, numerics::l2_norm(mu) / (numerics::l2_norm(nu) + eps));
}

// ω_t = 1 - exp(-t / tau), kept strictly below 1.
inline double warmup(std::size_t t, double tau) {
  if (!(tau > 0.0)) throw ParameterError("warmup: tau must be > 0");
  const double w = 1.0 - std::exp(-static_cast<double>(t) / tau);
  return std::min(w, std::nextafter(1.0, 0.0));
}

// Public hyperparameters of the memory branch.
struct MemoryParams {
  double alpha = 0.7;
  std::size_t window_k = 4;
  double beta = 0.7;
  double xi_max = 3.0;
  double eps_num = 1e-12;
  double tau_warm = 5.0;
};

struct MemoryState {
  std::vector<double> weights_hat;
  std::vector<double> nu;
  double d_eff = 0.0;
  double gate = 0.0;
  double scale = 0.0;
  double warmup = 0.0;
  std::vector<double> branch;  // (1-β) ω Γ Ψ ν
};

inline std::size_t available_lags(std::size_t t, std::size_t window_k) {
  return std::min(window_k - 1, t);
}

// Memory state of one group at step t from its history and tempering λ.
// At t = 0 everything is zero.
inline MemoryState build_memory_state(const ReleaseHistory& history, double lambda,
                                      std::size_t t, std::size_t dim,
                                      const MemoryParams& p) {
  if (p.window_k < 1) throw ParameterError("memory: window K must be >= 1");
  MemoryState s;
  s.warmup = warmup(t, p.tau_warm);
  s.nu.assign(dim, 0.0);
  s.branch.assign(dim, 0.0);
  if (t == 0) return s;

  const std::size_t m_t = available_lags(t, p.window_k);
  if (history.records().size() < m_t) {
    throw StateError("memory: history of group " + std::to_string(history.group_id()) +
                     " holds " + std::to_string(history.records().size()) +
                     " releases, step " + std::to_string(t) + " needs " +
                     std::to_string(m_t));
  }
  if (!history.ema_trend()) {
    throw StateError("memory: EMA trend missing at step " + std::to_string(t));
  }
  const std::vector<double>& mu = *history.ema_trend();
  if (mu.size() != dim) throw StructuralError("memory: trend dimension mismatch");

  s.weights_hat = kernel_weights(p.alpha, lambda, m_t).hat;
  s.d_eff = effective_depth(s.weights_hat);
  if (m_t > 0) s.nu = memory_vector(history, s.weights_hat);
  if (s.nu.size() != dim) throw StructuralError("memory: release dimension mismatch");
  s.gate = alignment_gate(mu, s.nu, p.eps_num);
  s.scale = norm_scale(mu, s.nu, p.xi_max, p.eps_num);
  const double coeff = (1.0 - p.beta) * s.warmup * s.gate * s.scale;
  for (std::size_t i = 0; i < dim; ++i) s.branch[i] = coeff * s.nu[i];
  return s;
}

// Diagnostic |b| / (|β s| + eps).
inline double memory_ratio(std::span<const double> branch,
                           std::span<const double> clipped_sum, double beta,
                           double eps) {
  return numerics::l2_norm(branch) / (beta * numerics::l2_norm(clipped_sum) + eps);
}

}  // namespace smadp::memory
