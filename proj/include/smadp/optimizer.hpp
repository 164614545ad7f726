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

// One step of memory-augmented DP-SGD:
//
//   s_t   = sum_{i in S_t} clip(g_i)                     (per group)
//   r_t   = beta * s_t + (1-beta) * omega_t * Gamma * Psi * nu_{t-1}
//   s~_t  = r_t + N(0, sigma^2 C^2 I)
//   theta <- theta - eta * s~_t / L,   L = q N
//
// The memory branch is a function of the release history and theta_t only,
// so conditioned on the history the query's sensitivity to one example is at
// most beta * C per group. beta = 1 is plain group-wise DP-SGD.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smadp/data.hpp"
#include "smadp/error.hpp"
#include "smadp/memory.hpp"
#include "smadp/model.hpp"
#include "smadp/numerics.hpp"
#include "smadp/spectral.hpp"

namespace smadp::optimizer {

using memory::MemoryState;
using memory::ReleaseHistory;
using memory::ReleaseRecord;
using model::ModelState;
using model::PerExampleGradient;
using numerics::Purpose;
using numerics::RandomStream;

struct OptimizerConfig {
  double beta = 0.7;
  double alpha = 0.7;
  std::size_t window_k = 4;
  double learning_rate = 0.5;
  double q = 0.1;
  spectral::SpectralInterval interval{2.0, 6.0};
  double c_lambda = 1.0;
  double gamma_ema = 0.9;
  double tau_warm = 5.0;
  double xi_max = 3.0;
  double eps_num = 1e-12;
  std::size_t steps = 300;
  std::uint64_t seed = 0;
  std::size_t min_tail = spectral::kDefaultMinTail;

  // Every violated range, in declaration order. Empty when valid.
  std::vector<std::string> Problems() const {
    std::vector<std::string> out;
    auto check = [&](bool ok, const std::string& msg) {
      if (!ok) out.push_back(msg);
    };
    check(beta > 0.0 && beta <= 1.0, "beta must lie in (0,1]");
    check(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0,1]");
    check(window_k >= 1, "window_k must be >= 1");
    check(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
    check(q > 0.0 && q <= 1.0, "q must lie in (0,1]");
    check(std::isfinite(interval.rho_min) && std::isfinite(interval.rho_max) &&
              interval.rho_min < interval.rho_max,
          "interval needs rho_min < rho_max");
    check(c_lambda > 0.0 && std::isfinite(c_lambda), "c_lambda must be > 0");
    check(gamma_ema > 0.0 && gamma_ema <= 1.0, "gamma_ema must lie in (0,1]");
    check(tau_warm > 0.0 && std::isfinite(tau_warm), "tau_warm must be > 0");
    check(xi_max > 0.0 && std::isfinite(xi_max), "xi_max must be > 0");
    check(eps_num > 0.0 && std::isfinite(eps_num), "eps_num must be > 0");
    check(steps >= 1, "steps must be >= 1");
    return out;
  }

  void Validate() const {
    const auto problems = Problems();
    if (problems.empty()) return;
    std::string msg = "invalid optimizer config:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ParameterError(msg);
  }

  memory::MemoryParams memory_params() const {
    return {alpha, window_k, beta, xi_max, eps_num, tau_warm};
  }
};

struct GroupTrace {
  int group_id = 0;
  std::vector<double> clipped_sum;
  std::optional<spectral::SpectralReport> spectral;
  MemoryState memory;
  std::vector<double> query;
  ReleaseRecord release;
  double update_norm = 0.0;
  double memory_ratio = 0.0;
};

struct StepTrace {
  std::size_t step = 0;
  std::size_t batch_size = 0;
  double expected_lot = 0.0;
  std::vector<bool> mask;
  std::vector<GroupTrace> groups;
};

struct AdjacencyProbeResult {
  std::size_t removed_index = 0;
  int group_id = 0;
  double delta = 0.0;
  double bound = 0.0;
  bool satisfied = false;
};

inline constexpr double kProbeSlack = 1e-9;

// ḡ = g / max(1, |g| / C).
inline PerExampleGradient clip_gradient(const PerExampleGradient& g, double clip_norm) {
  if (!(clip_norm > 0.0)) {
    throw ParameterError("clip_gradient: clip norm must be > 0, got " +
                         std::to_string(clip_norm));
  }
  const double norm = numerics::l2_norm(g.flat);
  if (!std::isfinite(norm)) {
    throw NumericalError("clip_gradient: non-finite gradient in group " +
                         std::to_string(g.group_id));
  }
  const double factor = std::max(1.0, norm / clip_norm);
  PerExampleGradient out{g.group_id, g.flat};
  for (double& v : out.flat) v /= factor;
  return out;
}

namespace internal {

// Clipped sums of all groups at theta_t, examples visited in ascending index.
inline std::vector<std::vector<double>> ClippedSums(const data::SampleBatch& batch,
                                                    const ModelState& m,
                                                    const data::Dataset& d) {
  if (batch.mask.size() != d.size()) {
    throw StructuralError("clipped_sum: mask length " + std::to_string(batch.mask.size()) +
                          " != dataset size " + std::to_string(d.size()));
  }
  std::vector<std::vector<double>> sums;
  for (const auto& g : m.groups) sums.emplace_back(g.param_count(), 0.0);
  for (std::size_t i : batch.indices) {
    const auto grads = model::per_example_grads(m, d.features.row(i), d.labels[i], i);
    for (std::size_t g = 0; g < grads.size(); ++g) {
      const auto clipped = clip_gradient(grads[g], m.groups[g].clip_norm);
      for (std::size_t k = 0; k < clipped.flat.size(); ++k) sums[g][k] += clipped.flat[k];
    }
  }
  return sums;
}

inline RandomStream NoiseStream(std::uint64_t seed, std::size_t t, int group) {
  return {seed, t, static_cast<std::uint64_t>(group), Purpose::kNoise};
}

inline void CheckGroup(const ModelState& m, int group_id) { (void)m.group(group_id); }

}  // namespace internal

inline RandomStream sampling_stream(std::uint64_t seed, std::size_t t) {
  return {seed, t, 0, Purpose::kSampling};
}

inline std::vector<double> clipped_sum(const data::SampleBatch& batch,
                                       const ModelState& m, const data::Dataset& d,
                                       int group_id) {
  internal::CheckGroup(m, group_id);
  return internal::ClippedSums(batch, m, d)[static_cast<std::size_t>(group_id)];
}

// r = beta * s + branch. The branch already carries the (1-beta) factor.
inline std::vector<double> recursive_query(std::span<const double> s,
                                           std::span<const double> branch, double beta) {
  if (s.size() != branch.size()) {
    throw StructuralError("recursive_query: clipped sum has " + std::to_string(s.size()) +
                          " entries, branch has " + std::to_string(branch.size()));
  }
  std::vector<double> r(s.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = beta * s[i] + branch[i];
  return r;
}

inline ReleaseRecord private_release(std::vector<double> query, double clip_norm,
                                     double sigma, const RandomStream& stream,
                                     std::size_t step = 0, int group_id = 0) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("private_release: sigma must be > 0");
  }
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
    throw ParameterError("private_release: clip norm must be > 0");
  }
  auto noise = numerics::gaussian_vector(stream, query.size(), sigma * clip_norm);
  return ReleaseRecord::Make(step, group_id, std::move(query), std::move(noise));
}

// theta^(g) <- theta^(g) - eta * (release / lot); other groups untouched.
inline ModelState apply_update(ModelState m, int group_id,
                               std::span<const double> release, double eta, double lot) {
  if (!(lot > 0.0)) throw ParameterError("apply_update: lot must be > 0");
  internal::CheckGroup(m, group_id);
  auto& g = m.groups[static_cast<std::size_t>(group_id)];
  if (release.size() != g.param_count()) {
    throw StructuralError("apply_update: release length " + std::to_string(release.size()) +
                          " != group parameter count " + std::to_string(g.param_count()));
  }
  const std::size_t nw = g.weight.entries.size();
  for (std::size_t i = 0; i < nw; ++i) g.weight.entries[i] -= eta * (release[i] / lot);
  for (std::size_t i = 0; i < g.bias.size(); ++i) g.bias[i] -= eta * (release[nw + i] / lot);
  return m;
}

inline double update_norm(std::span<const double> release, double eta, double lot) {
  double s = 0.0;
  for (double v : release) {
    const double u = eta * (v / lot);
    s += u * u;
  }
  return std::sqrt(s);
}

// Fresh (empty) histories, one per group.
inline std::vector<ReleaseHistory> make_histories(const ModelState& m,
                                                  const OptimizerConfig& c) {
  std::vector<ReleaseHistory> out;
  for (const auto& g : m.groups) out.emplace_back(g.group_id, c.window_k - 1, c.gamma_ema);
  return out;
}

// Spectral diagnostics of every group at the current parameters.
inline std::vector<spectral::SpectralReport> spectral_reports(const ModelState& m,
                                                              const OptimizerConfig& c,
                                                              std::size_t t) {
  std::vector<spectral::SpectralReport> out;
  for (const auto& g : m.groups) {
    out.push_back(spectral::spectral_report(g.weight, g.group_id, t, c.interval,
                                            c.c_lambda, c.min_tail));
  }
  return out;
}

// Memory states of every group at step t. Depends only on theta_t (through
// the spectral reports) and the histories, never on a batch.
inline std::vector<MemoryState> memory_states(
    const ModelState& m, const OptimizerConfig& c,
    const std::vector<ReleaseHistory>& histories,
    const std::vector<spectral::SpectralReport>& reports, std::size_t t) {
  std::vector<MemoryState> out;
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    const double lambda = t == 0 ? 0.0 : reports[g].tempering;
    out.push_back(memory::build_memory_state(histories[g], lambda, t,
                                             m.groups[g].param_count(),
                                             c.memory_params()));
  }
  return out;
}

struct StepResult {
  ModelState model;
  std::vector<ReleaseHistory> histories;
  StepTrace trace;
};

namespace internal {

inline void CheckHistories(const ModelState& m,
                           const std::vector<ReleaseHistory>& histories, std::size_t t) {
  if (histories.size() != m.groups.size()) {
    throw StructuralError("step: " + std::to_string(histories.size()) +
                          " histories for " + std::to_string(m.groups.size()) + " groups");
  }
  for (std::size_t g = 0; g < histories.size(); ++g) {
    if (histories[g].group_id() != m.groups[g].group_id) {
      throw StructuralError("step: history order does not match group order");
    }
    if (histories[g].releases_seen() != t) {
      throw StateError("step " + std::to_string(t) + ": history of group " +
                       std::to_string(g) + " has seen " +
                       std::to_string(histories[g].releases_seen()) + " releases");
    }
  }
}

}  // namespace internal

// One full step. Pure: inputs are untouched, and any failure leaves the
// caller's model and histories exactly as they were.
inline StepResult step(const ModelState& m, const data::Dataset& d,
                       const OptimizerConfig& c,
                       const std::vector<ReleaseHistory>& histories, std::size_t t) {
  c.Validate();
  internal::CheckHistories(m, histories, t);

  // Spectral state is read from theta_t before any example is touched.
  const auto reports = spectral_reports(m, c, t);
  const auto memories = memory_states(m, c, histories, reports, t);

  const auto batch = data::poisson_sample(sampling_stream(c.seed, t), d.size(), c.q);
  const auto sums = internal::ClippedSums(batch, m, d);

  StepResult out{m, histories, StepTrace{}};
  out.trace.step = t;
  out.trace.batch_size = batch.size();
  out.trace.expected_lot = batch.expected_lot;
  out.trace.mask = batch.mask;
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    const auto& group = m.groups[g];
    GroupTrace gt;
    gt.group_id = group.group_id;
    gt.clipped_sum = sums[g];
    gt.spectral = reports[g];
    gt.memory = memories[g];
    gt.query = recursive_query(gt.clipped_sum, gt.memory.branch, c.beta);
    gt.release = private_release(gt.query, group.clip_norm, group.noise_multiplier,
                                 internal::NoiseStream(c.seed, t, group.group_id), t,
                                 group.group_id);
    gt.update_norm = update_norm(gt.release.release, c.learning_rate, batch.expected_lot);
    gt.memory_ratio =
        memory::memory_ratio(gt.memory.branch, gt.clipped_sum, c.beta, c.eps_num);
    out.trace.groups.push_back(std::move(gt));
  }
  // Single writer at step end: parameters, then histories.
  for (const auto& gt : out.trace.groups) {
    out.model = apply_update(std::move(out.model), gt.group_id, gt.release.release,
                             c.learning_rate, batch.expected_lot);
  }
  for (std::size_t g = 0; g < out.histories.size(); ++g) {
    out.histories[g].Append(out.trace.groups[g].release);
  }
  return out;
}

// Plain group-wise DP-SGD step driven by the same streams as `step`. Used as
// the reference arm of comparisons; carries no memory or spectral state.
inline std::pair<ModelState, StepTrace> dpsgd_reference_step(const ModelState& m,
                                                             const data::Dataset& d,
                                                             const OptimizerConfig& c,
                                                             std::size_t t) {
  const auto batch = data::poisson_sample(sampling_stream(c.seed, t), d.size(), c.q);
  const double lot = c.q * static_cast<double>(d.size());
  StepTrace trace;
  trace.step = t;
  trace.batch_size = batch.size();
  trace.expected_lot = lot;
  trace.mask = batch.mask;
  ModelState next = m;
  for (std::size_t g = 0; g < m.groups.size(); ++g) {
    const auto& group = m.groups[g];
    std::vector<double> sum(group.param_count(), 0.0);
    for (std::size_t i : batch.indices) {
      const auto grad = model::per_example_grads(m, d.features.row(i), d.labels[i], i)[g];
      double sq = 0.0;
      for (double v : grad.flat) sq += v * v;
      const double factor = std::max(1.0, std::sqrt(sq) / group.clip_norm);
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += grad.flat[k] / factor;
    }
    const auto noise = numerics::gaussian_vector(
        internal::NoiseStream(c.seed, t, group.group_id), sum.size(),
        group.noise_multiplier * group.clip_norm);
    GroupTrace gt;
    gt.group_id = group.group_id;
    gt.clipped_sum = sum;
    gt.query = sum;
    gt.release = ReleaseRecord::Make(t, group.group_id, sum, noise);
    gt.memory.nu.assign(sum.size(), 0.0);
    gt.memory.branch.assign(sum.size(), 0.0);
    gt.update_norm = update_norm(gt.release.release, c.learning_rate, lot);
    auto& p = next.groups[g];
    const std::size_t nw = p.weight.entries.size();
    for (std::size_t k = 0; k < nw; ++k)
      p.weight.entries[k] -= c.learning_rate * (gt.release.release[k] / lot);
    for (std::size_t k = 0; k < p.bias.size(); ++k)
      p.bias[k] -= c.learning_rate * (gt.release.release[nw + k] / lot);
    trace.groups.push_back(std::move(gt));
  }
  return {std::move(next), std::move(trace)};
}

// Remove-one sensitivity oracle. For every sampled example i and every group,
// recomputes the query with i dropped from the fixed mask while holding the
// history and theta_t fixed, and compares |r(D) - r(D\i)| with beta * C.
inline std::vector<AdjacencyProbeResult> adjacency_probe(
    const data::Dataset& d, const data::SampleBatch& mask, const ModelState& m,
    const OptimizerConfig& c, const std::vector<ReleaseHistory>& histories,
    std::size_t t) {
  if (d.size() > 12) {
    throw ParameterError("adjacency_probe: dataset of " + std::to_string(d.size()) +
                         " examples exceeds the 12-example oracle limit");
  }
  internal::CheckHistories(m, histories, t);
  const auto reports = spectral_reports(m, c, t);
  const auto memories = memory_states(m, c, histories, reports, t);
  const auto full = internal::ClippedSums(mask, m, d);

  std::vector<AdjacencyProbeResult> out;
  for (std::size_t i : mask.indices) {
    const auto reduced = internal::ClippedSums(mask.Without(i), m, d);
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
      const auto r_full = recursive_query(full[g], memories[g].branch, c.beta);
      const auto r_reduced = recursive_query(reduced[g], memories[g].branch, c.beta);
      double sq = 0.0;
      for (std::size_t k = 0; k < r_full.size(); ++k) {
        const double diff = r_full[k] - r_reduced[k];
        sq += diff * diff;
      }
      AdjacencyProbeResult res;
      res.removed_index = i;
      res.group_id = m.groups[g].group_id;
      res.delta = std::sqrt(sq);
      res.bound = c.beta * m.groups[g].clip_norm;
      res.satisfied = res.delta <= res.bound + kProbeSlack;
      out.push_back(res);
    }
  }
  return out;
}

}  // namespace smadp::optimizer
