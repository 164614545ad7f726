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


#include "smadp/optimizer.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "reference_dpsgd.hpp"
#include "smadp/run.hpp"

namespace smadp::optimizer {
namespace {

using data::Dataset;
using model::Architecture;

Dataset Synthetic(std::size_t n, std::size_t d, int classes, std::uint64_t seed = 1) {
  return data::gen_synthetic({seed, 0, 0, Purpose::kData}, n, d, classes);
}

ModelState Model(Architecture arch, std::size_t d, int classes, std::uint64_t seed = 1,
                 double clip = 1.0, double sigma = 1.0) {
  return model::init_model({seed, 0, 0, Purpose::kInit}, arch, d, 6, classes, {clip},
                           {sigma});
}

// Runs `steps` steps and hands each result to `visit`.
template <typename Visit>
void RunSteps(ModelState m, const Dataset& d, const OptimizerConfig& c, std::size_t steps,
         Visit visit) {
  auto h = make_histories(m, c);
  for (std::size_t t = 0; t < steps; ++t) {
    auto res = step(m, d, c, h, t);
    visit(res, h);
    m = std::move(res.model);
    h = std::move(res.histories);
  }
}

TEST(ClipGradientTest, Examples) {
  const PerExampleGradient g{0, {3, 4}};
  const auto c = clip_gradient(g, 2.0);
  EXPECT_DOUBLE_EQ(numerics::l2_norm(c.flat), 2.0);
  EXPECT_EQ(c.flat, (std::vector<double>{3 / 2.5, 4 / 2.5}));
  const PerExampleGradient small{0, {0.6, 0.8}};
  EXPECT_EQ(clip_gradient(small, 2.0).flat, small.flat);
  EXPECT_EQ(clip_gradient({0, {0, 0}}, 1.0).flat, (std::vector<double>{0, 0}));
}

TEST(ClipGradientTest, NormBoundedOnRandomInputs) {
  numerics::StreamEngine e({3, 0, 0, Purpose::kData});
  for (int i = 0; i < 2000; ++i) {
    PerExampleGradient g{0, std::vector<double>(1 + i % 9)};
    const double scale = std::pow(10.0, 4 * e.Uniform() - 2);
    for (double& v : g.flat) v = scale * e.Gaussian();
    const double c = 0.01 + 3 * e.Uniform();
    EXPECT_LE(numerics::l2_norm(clip_gradient(g, c).flat), c * (1 + 1e-12));
  }
}

TEST(ClipGradientTest, Errors) {
  EXPECT_THROW(clip_gradient({0, {1}}, 0.0), ParameterError);
  EXPECT_THROW(clip_gradient({0, {std::nan("")}}, 1.0), NumericalError);
}

TEST(ClippedSumTest, EmptySingletonAndBruteForce) {
  const Dataset d = Synthetic(8, 3, 3);
  const ModelState m = Model(Architecture::kMlp1, 3, 3, 2, 0.3);
  const auto empty = data::batch_from_mask(std::vector<bool>(8, false), 0.5);
  EXPECT_EQ(clipped_sum(empty, m, d, 0), std::vector<double>(m.groups[0].param_count(), 0.0));

  std::vector<bool> one(8, false);
  one[3] = true;
  const auto single = clipped_sum(data::batch_from_mask(one, 0.5), m, d, 1);
  const auto g3 = model::per_example_grads(m, d.features.row(3), d.labels[3])[1];
  EXPECT_EQ(single, clip_gradient(g3, 0.3).flat);

  const auto five = data::batch_from_mask({1, 0, 1, 1, 0, 1, 0, 1}, 0.5);
  for (int g = 0; g < 2; ++g) {
    std::vector<double> expect(m.groups[g].param_count(), 0.0);
    for (std::size_t i : five.indices) {
      const auto grad = clip_gradient(
          model::per_example_grads(m, d.features.row(i), d.labels[i])[g], 0.3);
      for (std::size_t k = 0; k < expect.size(); ++k) expect[k] += grad.flat[k];
    }
    const auto got = clipped_sum(five, m, d, g);
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(got[k], expect[k], 1e-12);
  }
  EXPECT_THROW(clipped_sum(five, m, d, 5), StructuralError);
}

TEST(RecursiveQueryTest, Examples) {
  EXPECT_EQ(recursive_query(std::vector<double>{2, 0}, std::vector<double>{0, 1}, 0.5),
            (std::vector<double>{1, 1}));
  EXPECT_THROW(recursive_query(std::vector<double>{1}, std::vector<double>{1, 2}, 0.5),
               StructuralError);
}

TEST(PrivateReleaseTest, VanishingNoise) {
  const std::vector<double> r{1.0, -2.0, 3.0};
  const auto rec = private_release(r, 1.0, 1e-9, {4, 2, 0, Purpose::kNoise});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(rec.release[i], r[i], 1e-7);
  EXPECT_EQ(rec.query, r);
}

TEST(PrivateReleaseTest, DeterministicAndChiSquare) {
  const RandomStream s{4, 2, 1, Purpose::kNoise};
  const auto a = private_release(std::vector<double>(100000, 0.0), 1.0, 1.0, s);
  const auto b = private_release(std::vector<double>(100000, 0.0), 1.0, 1.0, s);
  EXPECT_EQ(a.release, b.release);
  const double n2 = numerics::l2_norm(a.noise);
  EXPECT_GE(n2 * n2 / 1e5, 0.99);
  EXPECT_LE(n2 * n2 / 1e5, 1.01);
}

TEST(PrivateReleaseTest, NoiseStdIsSigmaTimesClip) {
  const auto rec = private_release(std::vector<double>(100000, 0.0), 0.5, 3.0,
                                   {9, 0, 0, Purpose::kNoise});
  const double n2 = numerics::l2_norm(rec.noise);
  EXPECT_NEAR(n2 * n2 / 1e5, 2.25, 0.05);
  EXPECT_THROW(private_release({1.0}, 1.0, 0.0, {}), ParameterError);
}

TEST(ApplyUpdateTest, Examples) {
  const ModelState m = Model(Architecture::kMlp1, 3, 2);
  const std::size_t n0 = m.groups[0].param_count();
  EXPECT_EQ(apply_update(m, 0, std::vector<double>(n0, 0.0), 0.3, 2.0).groups[0].flat(),
            m.groups[0].flat());

  std::vector<double> v(n0);
  for (std::size_t i = 0; i < n0; ++i) v[i] = 0.1 * static_cast<double>(i) - 0.7;
  const ModelState u = apply_update(m, 0, v, 1.0, 1.0);
  const auto before = m.groups[0].flat(), after = u.groups[0].flat();
  for (std::size_t i = 0; i < n0; ++i) EXPECT_EQ(after[i], before[i] - v[i]);
  EXPECT_EQ(u.groups[1].flat(), m.groups[1].flat());

  std::vector<double> w(n0, 0.25);
  const ModelState twice = apply_update(apply_update(m, 0, v, 1.0, 1.0), 0, w, 1.0, 1.0);
  std::vector<double> vw(n0);
  for (std::size_t i = 0; i < n0; ++i) vw[i] = v[i] + w[i];
  const ModelState once = apply_update(m, 0, vw, 1.0, 1.0);
  for (std::size_t i = 0; i < n0; ++i)
    EXPECT_NEAR(twice.groups[0].flat()[i], once.groups[0].flat()[i], 1e-15);

  EXPECT_THROW(apply_update(m, 0, std::vector<double>(n0 + 1), 1.0, 1.0), StructuralError);
  EXPECT_THROW(apply_update(m, 0, v, 1.0, 0.0), ParameterError);
}

TEST(StepTest, BetaOneMatchesPlainDpSgdBitForBit) {
  const Dataset d = Synthetic(300, 4, 3);
  for (auto arch : {Architecture::kLogReg, Architecture::kMlp1}) {
    OptimizerConfig c;
    c.beta = 1.0;
    c.q = 0.1;
    c.learning_rate = 0.5;
    c.seed = 21;
    ModelState ref = Model(arch, 4, 3, 21, 0.7, 1.1);
    const testing::PlainDpSgd plain{c.learning_rate, c.q, c.seed};
    std::size_t t_seen = 0;
    RunSteps(ref, d, c, 40, [&](const StepResult& res, const auto&) {
      ref = testing::PlainDpSgdStep(ref, d, plain, t_seen++);
      for (std::size_t g = 0; g < ref.groups.size(); ++g)
        ASSERT_EQ(res.model.groups[g].flat(), ref.groups[g].flat()) << "step " << t_seen;
    });
  }
}

TEST(StepTest, LibraryReferenceStepMatchesStepAtBetaOne) {
  const Dataset d = Synthetic(200, 3, 2);
  OptimizerConfig c;
  c.beta = 1.0;
  c.seed = 5;
  ModelState ref = Model(Architecture::kMlp1, 3, 2, 5);
  std::size_t t = 0;
  RunSteps(ref, d, c, 20, [&](const StepResult& res, const auto&) {
    ref = dpsgd_reference_step(ref, d, c, t++).first;
    for (std::size_t g = 0; g < ref.groups.size(); ++g)
      ASSERT_EQ(res.model.groups[g].flat(), ref.groups[g].flat());
  });
}

TEST(StepTest, TraceIdentitiesHoldExactly) {
  const Dataset d = Synthetic(200, 3, 3);
  OptimizerConfig c;
  c.beta = 0.6;
  c.min_tail = 2;
  RunSteps(Model(Architecture::kMlp1, 3, 3), d, c, 30, [&](const StepResult& res, const auto&) {
    for (const auto& gt : res.trace.groups) {
      for (std::size_t k = 0; k < gt.query.size(); ++k) {
        EXPECT_EQ(gt.query[k], c.beta * gt.clipped_sum[k] + gt.memory.branch[k]);
        EXPECT_EQ(gt.release.release[k], gt.query[k] + gt.release.noise[k]);
      }
    }
  });
}

TEST(StepTest, FirstStepHasNoMemory) {
  const Dataset d = Synthetic(100, 3, 2);
  OptimizerConfig c;
  const ModelState m = Model(Architecture::kMlp1, 3, 2);
  const auto res = step(m, d, c, make_histories(m, c), 0);
  for (const auto& gt : res.trace.groups) {
    EXPECT_EQ(gt.memory.gate, 0.0);
    EXPECT_EQ(gt.memory.scale, 0.0);
    EXPECT_EQ(gt.memory.nu, std::vector<double>(gt.query.size(), 0.0));
    for (std::size_t k = 0; k < gt.query.size(); ++k)
      EXPECT_EQ(gt.query[k], c.beta * gt.clipped_sum[k]);
  }
}

TEST(StepTest, WindowOneNeverUsesMemory) {
  const Dataset d = Synthetic(100, 3, 2);
  OptimizerConfig c;
  c.window_k = 1;
  RunSteps(Model(Architecture::kLogReg, 3, 2), d, c, 25, [&](const StepResult& res, const auto&) {
    for (const auto& gt : res.trace.groups) {
      EXPECT_EQ(gt.memory.branch, std::vector<double>(gt.query.size(), 0.0));
      EXPECT_EQ(gt.memory_ratio, 0.0);
    }
  });
}

TEST(StepTest, BranchBoundEveryStep) {
  const Dataset d = Synthetic(200, 4, 3);
  OptimizerConfig c;
  c.beta = 0.5;
  c.window_k = 5;
  c.min_tail = 2;
  RunSteps(Model(Architecture::kMlp1, 4, 3), d, c, 60, [&](const StepResult& res, const auto& h) {
    for (std::size_t g = 0; g < res.trace.groups.size(); ++g) {
      const auto& gt = res.trace.groups[g];
      if (res.trace.step == 0) continue;
      const double mu = numerics::l2_norm(*h[g].ema_trend());
      EXPECT_LE(numerics::l2_norm(gt.memory.branch),
                (1 - c.beta) * gt.memory.warmup * mu * (1 + 1e-12));
    }
  });
}

TEST(StepTest, BranchDoesNotDependOnTheBatch) {
  const Dataset d1 = Synthetic(150, 3, 2, 1);
  const Dataset d2 = Synthetic(150, 3, 2, 2);
  OptimizerConfig c;
  c.min_tail = 2;
  ModelState m = Model(Architecture::kMlp1, 3, 2);
  auto h = make_histories(m, c);
  for (std::size_t t = 0; t < 6; ++t) {
    auto res = step(m, d1, c, h, t);
    m = res.model;
    h = res.histories;
  }
  OptimizerConfig other = c;
  other.q = 0.3;
  const auto a = step(m, d1, c, h, 6);
  const auto b = step(m, d2, other, h, 6);
  ASSERT_NE(a.trace.mask, b.trace.mask);
  for (std::size_t g = 0; g < a.trace.groups.size(); ++g)
    EXPECT_EQ(a.trace.groups[g].memory.branch, b.trace.groups[g].memory.branch);
}

TEST(StepTest, SpectralReportReadsPreUpdateParameters) {
  const Dataset d = Synthetic(100, 3, 2);
  OptimizerConfig c;
  c.min_tail = 2;
  const ModelState m = Model(Architecture::kMlp1, 3, 2);
  const auto res = step(m, d, c, make_histories(m, c), 0);
  const auto expect = spectral_reports(m, c, 0);
  for (std::size_t g = 0; g < expect.size(); ++g) {
    ASSERT_TRUE(res.trace.groups[g].spectral);
    const auto& got = *res.trace.groups[g].spectral;
    EXPECT_EQ(got.valid, expect[g].valid);
    if (expect[g].valid) {
      EXPECT_EQ(got.rho, expect[g].rho);
    }
  }
}

TEST(StepTest, ReproducibleAcrossReruns) {
  const Dataset d = Synthetic(120, 3, 2);
  OptimizerConfig c;
  std::vector<std::vector<double>> first;
  RunSteps(Model(Architecture::kMlp1, 3, 2), d, c, 15, [&](const StepResult& res, const auto&) {
    first.push_back(res.trace.groups[1].release.release);
  });
  std::size_t i = 0;
  RunSteps(Model(Architecture::kMlp1, 3, 2), d, c, 15, [&](const StepResult& res, const auto&) {
    EXPECT_EQ(res.trace.groups[1].release.release, first[i++]);
  });
}

TEST(StepTest, FailedStepLeavesInputsUntouched) {
  Dataset d = Synthetic(50, 2, 2);
  OptimizerConfig c;
  c.q = 1.0;
  ModelState m = Model(Architecture::kLogReg, 2, 2);
  auto h = make_histories(m, c);
  auto res = step(m, d, c, h, 0);
  m = res.model;
  h = res.histories;
  const auto m_copy = m.groups[0].flat();
  d.features(7, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(step(m, d, c, h, 1), NumericalError);
  EXPECT_EQ(m.groups[0].flat(), m_copy);
  EXPECT_EQ(h[0].releases_seen(), 1u);
  EXPECT_THROW(step(m, d, c, h, 3), StateError);
}

TEST(StepTest, InvalidConfigRejected) {
  const Dataset d = Synthetic(50, 2, 2);
  OptimizerConfig c;
  c.beta = 0.0;
  c.alpha = 2.0;
  const ModelState m = Model(Architecture::kLogReg, 2, 2);
  EXPECT_EQ(c.Problems().size(), 2u);
  EXPECT_THROW(step(m, d, c, make_histories(m, OptimizerConfig{}), 0), ParameterError);
}

TEST(AdjacencyProbeTest, EmptyMaskGivesNoResults) {
  const Dataset d = Synthetic(6, 2, 2);
  OptimizerConfig c;
  const ModelState m = Model(Architecture::kLogReg, 2, 2);
  const auto batch = data::batch_from_mask(std::vector<bool>(6, false), 0.5);
  EXPECT_TRUE(adjacency_probe(d, batch, m, c, make_histories(m, c), 0).empty());
}

TEST(AdjacencyProbeTest, RandomInstancesSatisfyBound) {
  std::size_t probes = 0;
  for (std::uint64_t i = 0; i < 120; ++i) {
    const auto inst = run::random_probe_instance(99, i);
    ASSERT_LE(inst.data.size(), 12u);
    const auto res = adjacency_probe(inst.data, inst.mask, inst.model, inst.config,
                                     inst.histories, inst.t);
    EXPECT_EQ(res.size(), inst.mask.size() * inst.model.groups.size());
    for (const auto& r : res) {
      ++probes;
      EXPECT_TRUE(r.satisfied) << "instance " << i << " delta " << r.delta << " bound "
                               << r.bound;
      EXPECT_EQ(r.satisfied, r.delta <= r.bound + kProbeSlack);
    }
  }
  EXPECT_GT(probes, 100u);
}

TEST(AdjacencyProbeTest, UnclippedNegativeControlExceedsSmallBound) {
  Dataset d = Synthetic(6, 2, 2);
  for (std::size_t j = 0; j < 2; ++j) d.features(2, j) *= 50.0;
  const ModelState m = Model(Architecture::kLogReg, 2, 2, 1, 1e6, 1.0);
  OptimizerConfig c;
  c.beta = 0.7;
  const auto batch = data::batch_from_mask({true, false, true, true, false, false}, 0.5);
  const auto res = adjacency_probe(d, batch, m, c, make_histories(m, c), 0);
  constexpr double kSmallClip = 0.1;
  double worst = 0.0;
  for (const auto& r : res) {
    EXPECT_TRUE(r.satisfied);
    worst = std::max(worst, r.delta);
  }
  EXPECT_GT(worst, c.beta * kSmallClip);
}

TEST(AdjacencyProbeTest, RejectsLargeDatasets) {
  const Dataset d = Synthetic(13, 2, 2);
  OptimizerConfig c;
  const ModelState m = Model(Architecture::kLogReg, 2, 2);
  EXPECT_THROW(adjacency_probe(d, data::batch_from_mask(std::vector<bool>(13, true), 1.0), m,
                               c, make_histories(m, c), 0),
               ParameterError);
}

}  // namespace
}  // namespace smadp::optimizer
