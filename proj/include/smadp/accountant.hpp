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

// Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//
// Per step the joint release over all groups is charged at the effective
// noise ratio sigma_eff = 1 / (beta * sqrt(sum_g sigma_g^-2)). Per-order costs
// add up over steps and convert to (epsilon, delta) by
//   epsilon = min_order eps_tot(order) + ln(1/delta) / (order - 1).
//
// The marginal ratio sigma / beta describes a single group in isolation and
// is only a diagnostic, never a guarantee for the full model.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "smadp/error.hpp"

namespace smadp::accountant {

inline constexpr const char* kMarginalTag = "marginal-diagnostic";

enum class LedgerMode { kJoint, kMarginal };

inline std::string to_string(LedgerMode m) {
  return m == LedgerMode::kJoint ? "joint" : kMarginalTag;
}

struct RdpOrderGrid {
  std::vector<int> orders;

  static RdpOrderGrid Range(int lo, int hi) {
    RdpOrderGrid g;
    for (int o = lo; o <= hi; ++o) g.orders.push_back(o);
    g.Validate();
    return g;
  }
  static RdpOrderGrid Default() { return Range(2, 64); }

  void Validate() const {
    if (orders.empty()) throw ParameterError("RDP order grid is empty");
    for (std::size_t i = 0; i < orders.size(); ++i) {
      if (orders[i] < 2) throw ParameterError("RDP orders must be >= 2");
      if (i > 0 && orders[i] <= orders[i - 1]) {
        throw ParameterError("RDP orders must be strictly increasing");
      }
    }
  }

  friend bool operator==(const RdpOrderGrid&, const RdpOrderGrid&) = default;
};

struct StepRecord {
  std::size_t step = 0;
  double q = 0.0;
  double sigma_eff = 0.0;
};

struct PrivacyLedger {
  RdpOrderGrid grid;
  LedgerMode mode = LedgerMode::kJoint;
  std::vector<StepRecord> records;
  std::vector<double> cumulative;  // eps_tot per grid order

  static PrivacyLedger Empty(RdpOrderGrid grid, LedgerMode mode = LedgerMode::kJoint) {
    grid.Validate();
    PrivacyLedger l;
    l.cumulative.assign(grid.orders.size(), 0.0);
    l.grid = std::move(grid);
    l.mode = mode;
    return l;
  }
};

// log(exp(a) + exp(b)) for a, b possibly -inf.
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// Integer-order RDP of the Poisson-subsampled Gaussian:
//   (1/(a-1)) ln sum_{k=0}^{a} C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2)),
// accumulated in log space.
inline double rdp_subsampled_gaussian(int order, double q, double sigma) {
  if (order < 2) throw ParameterError("RDP order must be an integer >= 2");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("q must lie in [0,1]");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be > 0");
  if (q == 0.0) return 0.0;
  const double a = order;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double log_sum = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= order; ++k) {
    const double kd = k;
    if (order - k > 0 && q == 1.0) continue;  // (1-q)^(a-k) == 0
    const double log_binom =
        std::lgamma(a + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(a - kd + 1.0);
    double term = log_binom + kd * (k > 0 ? log_q : 0.0) +
                  (a - kd) * (order - k > 0 ? log_1mq : 0.0) +
                  kd * (kd - 1.0) / (2.0 * sigma * sigma);
    log_sum = log_add(log_sum, term);
  }
  const double eps = log_sum / (a - 1.0);
  if (!std::isfinite(eps)) {
    throw AccountingError("RDP at order " + std::to_string(order) +
                          " overflowed; use a larger sigma or a smaller order");
  }
  return std::max(0.0, eps);
}

// sigma_eff = 1 / (beta * sqrt(sum_g sigma_g^-2)).
inline double sigma_eff_joint(double beta, const std::vector<double>& sigmas) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0,1]");
  if (sigmas.empty()) throw ParameterError("sigma_eff_joint: no groups");
  double inv = 0.0;
  for (double s : sigmas) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("group sigmas must be > 0");
    inv += 1.0 / (s * s);
  }
  return 1.0 / (beta * std::sqrt(inv));
}

inline double sigma_marginal(double beta, double sigma) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in (0,1]");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
  return sigma / beta;
}

inline PrivacyLedger compose(PrivacyLedger ledger, const StepRecord& record,
                             const RdpOrderGrid& grid) {
  if (!(grid == ledger.grid) || ledger.cumulative.size() != grid.orders.size()) {
    throw StateError("compose: order grid differs from the ledger's grid");
  }
  for (std::size_t i = 0; i < grid.orders.size(); ++i) {
    ledger.cumulative[i] += rdp_subsampled_gaussian(grid.orders[i], record.q, record.sigma_eff);
  }
  ledger.records.push_back(record);
  return ledger;
}

struct DpConversion {
  double epsilon = 0.0;
  int best_order = 0;
};

inline DpConversion rdp_to_dp(const std::vector<double>& cumulative,
                              const RdpOrderGrid& grid, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta must lie in (0,1), got " + std::to_string(delta));
  }
  if (cumulative.size() != grid.orders.size() || grid.orders.empty()) {
    throw StateError("rdp_to_dp: ledger and grid sizes differ");
  }
  const double log_inv_delta = -std::log(delta);
  DpConversion best{std::numeric_limits<double>::infinity(), grid.orders.front()};
  for (std::size_t i = 0; i < grid.orders.size(); ++i) {
    const double eps = cumulative[i] + log_inv_delta / (grid.orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, grid.orders[i]};  // strict: ties keep smaller order
  }
  return best;
}

inline DpConversion rdp_to_dp(const PrivacyLedger& ledger, double delta) {
  return rdp_to_dp(ledger.cumulative, ledger.grid, delta);
}

struct CurvePoint {
  std::size_t step = 0;  // number of composed steps
  double epsilon = 0.0;
  int best_order = 0;
};

// Cumulative (epsilon, delta) after each of `steps` steps, every step charged
// at ratio `sigma_ratio`. steps = 0 returns the single penalty-only point.
inline std::vector<CurvePoint> epsilon_curve(double sigma_ratio, double q, std::size_t steps,
                                             double delta, const RdpOrderGrid& grid) {
  PrivacyLedger ledger = PrivacyLedger::Empty(grid);
  std::vector<CurvePoint> out;
  if (steps == 0) {
    const auto c = rdp_to_dp(ledger, delta);
    out.push_back({0, c.epsilon, c.best_order});
    return out;
  }
  for (std::size_t t = 0; t < steps; ++t) {
    ledger = compose(std::move(ledger), {t, q, sigma_ratio}, grid);
    const auto c = rdp_to_dp(ledger, delta);
    out.push_back({t + 1, c.epsilon, c.best_order});
  }
  return out;
}

// Marginal-diagnostic curve at ratio sigma / beta. Not a full-model
// guarantee; outputs built from it carry kMarginalTag.
inline std::vector<CurvePoint> marginal_epsilon_curve(double beta, double sigma, double q,
                                                      std::size_t steps, double delta,
                                                      const RdpOrderGrid& grid) {
  return epsilon_curve(sigma_marginal(beta, sigma), q, steps, delta, grid);
}

}  // namespace smadp::accountant
