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

// Desk-scale dense models with exact per-example gradients. Each trainable
// layer is one parameter group; its flat layout is the row-major weight
// followed by the bias.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "smadp/data.hpp"
#include "smadp/error.hpp"
#include "smadp/numerics.hpp"

namespace smadp::model {

using numerics::DenseMatrix;

enum class Architecture { kLogReg, kMlp1 };

inline std::string to_string(Architecture a) {
  return a == Architecture::kLogReg ? "logreg" : "mlp1";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "logreg") return Architecture::kLogReg;
  if (s == "mlp1") return Architecture::kMlp1;
  throw ParameterError("unknown architecture '" + s + "' (expected logreg|mlp1)");
}

struct ParameterGroup {
  int group_id = 0;
  DenseMatrix weight;  // out x in
  std::vector<double> bias;
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  std::string stage_tag;

  std::size_t param_count() const { return weight.entries.size() + bias.size(); }

  std::vector<double> flat() const {
    std::vector<double> out(weight.entries);
    out.insert(out.end(), bias.begin(), bias.end());
    return out;
  }
};

struct ModelState {
  std::vector<ParameterGroup> groups;
  Architecture architecture = Architecture::kLogReg;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  int num_classes = 0;

  std::size_t num_groups() const { return groups.size(); }

  const ParameterGroup& group(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= groups.size()) {
      throw StructuralError("no parameter group " + std::to_string(id));
    }
    return groups[static_cast<std::size_t>(id)];
  }
};

struct PerExampleGradient {
  int group_id = 0;
  std::vector<double> flat;  // weight gradient, then bias gradient
};

namespace internal {

inline std::vector<double> Broadcast(const std::vector<double>& values,
                                     std::size_t groups, const char* what) {
  if (values.size() == 1) return std::vector<double>(groups, values[0]);
  if (values.size() != groups) {
    throw ParameterError(std::string(what) + ": expected 1 or " +
                         std::to_string(groups) + " values, got " +
                         std::to_string(values.size()));
  }
  return values;
}

inline ParameterGroup MakeGroup(numerics::StreamEngine& engine, int id,
                                std::size_t out, std::size_t in, double clip,
                                double sigma, std::string tag) {
  ParameterGroup g{id, DenseMatrix(out, in), std::vector<double>(out, 0.0), clip,
                   sigma, std::move(tag)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : g.weight.entries) w = scale * engine.Gaussian();
  return g;
}

// Numerically stable softmax in place; returns log-sum-exp of the input.
inline double SoftmaxInPlace(std::vector<double>& z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return zmax + std::log(sum);
}

inline std::vector<double> Affine(const ParameterGroup& g,
                                  std::span<const double> x) {
  std::vector<double> z(g.bias);
  for (std::size_t r = 0; r < g.weight.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < g.weight.cols; ++c) s += g.weight(r, c) * x[c];
    z[r] += s;
  }
  return z;
}

// Flat gradient of an affine layer given upstream delta and layer input.
inline std::vector<double> AffineGradient(const ParameterGroup& g,
                                          std::span<const double> delta,
                                          std::span<const double> input) {
  std::vector<double> out(g.param_count());
  for (std::size_t r = 0; r < g.weight.rows; ++r)
    for (std::size_t c = 0; c < g.weight.cols; ++c)
      out[r * g.weight.cols + c] = delta[r] * input[c];
  std::copy(delta.begin(), delta.end(), out.begin() + g.weight.entries.size());
  return out;
}

struct Forward {
  std::vector<double> hidden;  // tanh activations (mlp1 only)
  std::vector<double> logits;
};

inline Forward Run(const ModelState& m, std::span<const double> x) {
  Forward f;
  if (m.architecture == Architecture::kLogReg) {
    f.logits = Affine(m.groups[0], x);
  } else {
    f.hidden = Affine(m.groups[0], x);
    for (double& h : f.hidden) h = std::tanh(h);
    f.logits = Affine(m.groups[1], f.hidden);
  }
  return f;
}

}  // namespace internal

// Weights ~ N(0, 1/fan_in), zero biases. `clip_norms` and
// `noise_multipliers` hold one value per group or a single shared value.
inline ModelState init_model(const numerics::RandomStream& stream,
                             Architecture arch, std::size_t input_dim,
                             std::size_t hidden, int classes,
                             const std::vector<double>& clip_norms,
                             const std::vector<double>& noise_multipliers) {
  if (input_dim == 0) throw ParameterError("init_model: input dim must be >= 1");
  if (classes < 2) throw ParameterError("init_model: classes must be >= 2");
  if (arch == Architecture::kMlp1 && hidden == 0) {
    throw ParameterError("init_model: mlp1 needs hidden >= 1");
  }
  const std::size_t groups = arch == Architecture::kLogReg ? 1 : 2;
  const auto clips = internal::Broadcast(clip_norms, groups, "clip_norms");
  const auto sigmas = internal::Broadcast(noise_multipliers, groups, "noise_multipliers");
  for (std::size_t g = 0; g < groups; ++g) {
    if (!(clips[g] > 0.0) || !std::isfinite(clips[g])) {
      throw ParameterError("init_model: clip norm must be > 0");
    }
    if (!(sigmas[g] > 0.0) || !std::isfinite(sigmas[g])) {
      throw ParameterError("init_model: noise multiplier must be > 0");
    }
  }

  numerics::StreamEngine engine(stream);
  ModelState m;
  m.architecture = arch;
  m.input_dim = input_dim;
  m.num_classes = classes;
  const auto k = static_cast<std::size_t>(classes);
  if (arch == Architecture::kLogReg) {
    m.groups.push_back(
        internal::MakeGroup(engine, 0, k, input_dim, clips[0], sigmas[0], "stage1"));
  } else {
    m.hidden_dim = hidden;
    m.groups.push_back(
        internal::MakeGroup(engine, 0, hidden, input_dim, clips[0], sigmas[0], "stage1"));
    m.groups.push_back(
        internal::MakeGroup(engine, 1, k, hidden, clips[1], sigmas[1], "stage2"));
  }
  return m;
}

// Exact gradient of the softmax cross-entropy loss for one example, one
// entry per group. `example_index` only labels error messages.
inline std::vector<PerExampleGradient> per_example_grads(
    const ModelState& m, std::span<const double> features, int label,
    std::size_t example_index = 0) {
  if (features.size() != m.input_dim) {
    throw StructuralError("per_example_grads: feature length " +
                          std::to_string(features.size()) + " != input dim " +
                          std::to_string(m.input_dim));
  }
  if (label < 0 || label >= m.num_classes) {
    throw StructuralError("per_example_grads: label " + std::to_string(label) +
                          " out of range");
  }
  internal::Forward f = internal::Run(m, features);
  std::vector<double> delta = f.logits;
  internal::SoftmaxInPlace(delta);
  delta[static_cast<std::size_t>(label)] -= 1.0;

  std::vector<PerExampleGradient> out;
  if (m.architecture == Architecture::kLogReg) {
    out.push_back({0, internal::AffineGradient(m.groups[0], delta, features)});
  } else {
    const ParameterGroup& w2 = m.groups[1];
    std::vector<double> delta_hidden(m.hidden_dim, 0.0);
    for (std::size_t h = 0; h < m.hidden_dim; ++h) {
      double s = 0.0;
      for (std::size_t r = 0; r < w2.weight.rows; ++r) s += w2.weight(r, h) * delta[r];
      delta_hidden[h] = s * (1.0 - f.hidden[h] * f.hidden[h]);
    }
    out.push_back({0, internal::AffineGradient(m.groups[0], delta_hidden, features)});
    out.push_back({1, internal::AffineGradient(w2, delta, f.hidden)});
  }
  for (const auto& g : out) {
    for (double v : g.flat) {
      if (!std::isfinite(v)) {
        throw NumericalError("per_example_grads: non-finite gradient for example " +
                             std::to_string(example_index) + " in group " +
                             std::to_string(g.group_id));
      }
    }
  }
  return out;
}

// Cross-entropy of a single example.
inline double example_loss(const ModelState& m, std::span<const double> features,
                           int label) {
  internal::Forward f = internal::Run(m, features);
  std::vector<double> p = f.logits;
  const double lse = internal::SoftmaxInPlace(p);
  return lse - f.logits[static_cast<std::size_t>(label)];
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and top-1 accuracy; ties go to the lowest class index.
inline Evaluation evaluate(const ModelState& m, const data::Dataset& d) {
  if (d.dim() != m.input_dim) {
    throw StructuralError("evaluate: dataset dim " + std::to_string(d.dim()) +
                          " != model input dim " + std::to_string(m.input_dim));
  }
  if (d.size() == 0) throw StructuralError("evaluate: empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    internal::Forward f = internal::Run(m, d.features.row(i));
    std::vector<double> p = f.logits;
    const double lse = internal::SoftmaxInPlace(p);
    loss += lse - f.logits[static_cast<std::size_t>(d.labels[i])];
    const auto best = std::max_element(f.logits.begin(), f.logits.end()) - f.logits.begin();
    if (best == d.labels[i]) ++correct;
  }
  const double n = static_cast<double>(d.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace smadp::model
