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


#include "smadp/run.hpp"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "test_support.hpp"

namespace smadp::run {
namespace {

using smadp::testing::TempDir;

RunConfig SmallConfig(const std::filesystem::path& out, const std::string& label = "run") {
  RunConfig c;
  c.synthetic_n = 300;
  c.eval_n = 200;
  c.synthetic_d = 3;
  c.opt.steps = 25;
  c.opt.seed = 3;
  c.out_dir = out.string();
  c.label = label;
  return c;
}

// Drops the named column from every row of a table.
csv::Table Without(csv::Table t, const std::string& name) {
  const std::size_t col = t.column(name);
  t.header.erase(t.header.begin() + col);
  for (auto& r : t.rows) r.erase(r.begin() + col);
  return t;
}

TEST(RunConfigTest, DefaultsAreValid) {
  EXPECT_TRUE(RunConfig{}.Problems().empty());
}

TEST(RunConfigTest, ParseAppliesTextThenOverrides) {
  const RunConfig c = RunConfig::Parse(
      "# comment\nbeta = 0.4\nk=6\narch=mlp1\nclip=0.5,2\nsigma=1.5  # trailing\n",
      {"beta=0.9", "label=x"});
  EXPECT_EQ(c.opt.beta, 0.9);
  EXPECT_EQ(c.opt.window_k, 6u);
  EXPECT_EQ(c.arch, model::Architecture::kMlp1);
  EXPECT_EQ(c.clip_norms, (std::vector<double>{0.5, 2}));
  EXPECT_EQ(c.group_sigmas(), (std::vector<double>{1.5, 1.5}));
  EXPECT_EQ(c.label, "x");
}

TEST(RunConfigTest, AllProblemsReportedAtOnce) {
  try {
    RunConfig::Parse("beta=2\nalpha=abc\nbogus=1\nno equals sign\nq=0\n", {"delta=1"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const auto& p = e.problems();
    EXPECT_GE(p.size(), 6u);
    const std::string all = e.what();
    for (const char* needle : {"beta", "alpha", "bogus", "line 4", "q must", "delta"})
      EXPECT_NE(all.find(needle), std::string::npos) << needle;
  }
}

TEST(RunConfigTest, IdxPathsMustExist) {
  EXPECT_THROW(RunConfig::Parse("dataset=idx\nimages=/no/such\nlabels=/no/such\n"),
               ConfigError);
  EXPECT_THROW(RunConfig::Parse("dataset=csv\n"), ConfigError);
}

TEST(RunConfigTest, LoadMissingFile) {
  EXPECT_THROW(RunConfig::Load("/no/such/config.txt"), ConfigError);
}

TEST(RunTrainTest, WritesReparseableCsvs) {
  TempDir dir("train_csv");
  const RunReport r = run_train(SmallConfig(dir.path()));
  ASSERT_FALSE(r.summary.failed) << r.summary.failure;
  EXPECT_EQ(r.summary.steps_completed, 25u);
  const std::map<std::string, std::size_t> rows{{"trace.csv", 25},
                                                {"diagnostics.csv", 25},
                                                {"ledger.csv", 25},
                                                {"report.csv", 25},
                                                {"summary.csv", 1}};
  for (const auto& [file, n] : rows) {
    const auto path = r.output_dir / file;
    ASSERT_TRUE(std::filesystem::exists(path)) << path;
    const csv::Table t = csv::Table::Load(path);
    EXPECT_EQ(t.rows.size(), n) << file;
  }
  const csv::Table report = csv::Table::Load(r.output_dir / "report.csv");
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    EXPECT_EQ(report.number(i, "step"), static_cast<double>(i));
    EXPECT_DOUBLE_EQ(report.number(i, "epoch"), static_cast<double>(i) * 0.1);
    EXPECT_EQ(report.text(i, "epsilon_joint"), csv::format_double(r.rows[i].epsilon_joint));
  }
  const csv::Table ledger = csv::Table::Load(r.output_dir / "ledger.csv");
  for (std::size_t i = 0; i < ledger.rows.size(); ++i)
    EXPECT_EQ(ledger.text(i, "marginal_label"), accountant::kMarginalTag);
}

TEST(RunTrainTest, SummaryMeansAreColumnMeans) {
  TempDir dir("train_means");
  RunConfig c = SmallConfig(dir.path());
  c.arch = model::Architecture::kMlp1;
  c.hidden = 8;
  c.opt.min_tail = 2;
  const RunReport r = run_train(c);
  double d = 0, m = 0;
  for (const auto& row : r.rows) {
    d += row.d_eff;
    m += row.memory_ratio;
  }
  EXPECT_NEAR(r.summary.mean_d_eff, d / r.rows.size(), 1e-12);
  EXPECT_NEAR(r.summary.mean_memory_ratio, m / r.rows.size(), 1e-12);
  EXPECT_EQ(r.summary.final_accuracy, r.rows.back().eval_accuracy);
  EXPECT_GT(r.summary.mean_d_eff, 0.0);
}

TEST(RunTrainTest, BetaOneTraceMatchesReferenceMode) {
  TempDir dir("train_ref");
  for (auto arch : {model::Architecture::kLogReg, model::Architecture::kMlp1}) {
    RunConfig sma = SmallConfig(dir.path(), "sma");
    sma.arch = arch;
    sma.hidden = 5;
    sma.opt.beta = 1.0;
    RunConfig ref = sma;
    ref.label = "ref";
    ref.mode = Mode::kReferenceDpsgd;
    const RunReport a = run_train(sma);
    const RunReport b = run_train(ref);
    const csv::Table ta = Without(csv::Table::Load(a.output_dir / "trace.csv"), "mode");
    const csv::Table tb = Without(csv::Table::Load(b.output_dir / "trace.csv"), "mode");
    EXPECT_EQ(ta.header, tb.header);
    EXPECT_EQ(ta.rows, tb.rows);
    EXPECT_EQ(a.summary.final_epsilon_joint, b.summary.final_epsilon_joint);
    for (std::size_t g = 0; g < a.final_model.groups.size(); ++g)
      EXPECT_EQ(a.final_model.groups[g].flat(), b.final_model.groups[g].flat());
  }
}

TEST(RunTrainTest, WindowOneHasZeroMemoryRatio) {
  TempDir dir("train_k1");
  RunConfig c = SmallConfig(dir.path());
  c.opt.window_k = 1;
  const RunReport r = run_train(c);
  const csv::Table t = csv::Table::Load(r.output_dir / "diagnostics.csv");
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(t.number(i, "memory_ratio"), 0.0);
  EXPECT_EQ(r.summary.mean_memory_ratio, 0.0);
}

TEST(RunTrainTest, MidRunFailureKeepsPartialOutput) {
  TempDir dir("train_fail");
  RunConfig c = SmallConfig(dir.path());
  c.opt.learning_rate = 1e305;
  const RunReport r = run_train(c);
  EXPECT_TRUE(r.summary.failed);
  EXPECT_FALSE(r.summary.failure.empty());
  EXPECT_LT(r.summary.steps_completed, 25u);
  const csv::Table s = csv::Table::Load(r.output_dir / "summary.csv");
  EXPECT_EQ(s.text(0, "status"), "failed");
  const csv::Table rep = csv::Table::Load(r.output_dir / "report.csv");
  EXPECT_EQ(rep.rows.size(), r.summary.steps_completed);
}

TEST(RunTrainTest, ObserverSeesEveryStep) {
  RunConfig c = SmallConfig(".");
  c.write_outputs = false;
  std::size_t calls = 0;
  run_train(c, [&](const optimizer::StepTrace& tr, const auto& hist, const auto&) {
    EXPECT_EQ(tr.step, calls);
    EXPECT_EQ(hist[0].releases_seen(), calls);
    ++calls;
  });
  EXPECT_EQ(calls, 25u);
}

TEST(RunTrainTest, IdxDataset) {
  TempDir dir("train_idx");
  testing::WriteBytes(dir.path() / "img", testing::IdxImages(60, 4, 4));
  testing::WriteBytes(dir.path() / "lbl", testing::IdxLabels(60, 3));
  RunConfig c = RunConfig::Parse("", {"dataset=idx", "images=" + (dir.path() / "img").string(),
                                      "labels=" + (dir.path() / "lbl").string(), "subset=40",
                                      "steps=5", "out=" + dir.path().string()});
  const RunReport r = run_train(c);
  ASSERT_FALSE(r.summary.failed) << r.summary.failure;
  EXPECT_EQ(r.final_model.input_dim, 16u);
  EXPECT_EQ(r.final_model.num_classes, 10);
}

TEST(SweepBetaTest, ArmsShareMasksAndOrderMarginalEpsilon) {
  TempDir dir("sweep_beta");
  const RunConfig c = SmallConfig(dir.path(), "sb");
  const std::vector<double> betas{1.0, 0.9, 0.7, 0.5};
  const SweepResult res = run_sweep_beta(c, betas);
  ASSERT_EQ(res.arms.size(), 4u);
  std::set<std::uint64_t> hashes;
  for (const auto& arm : res.arms) {
    ASSERT_TRUE(arm.ok()) << arm.failure;
    hashes.insert(arm.report->summary.mask_hash);
  }
  EXPECT_EQ(hashes.size(), 1u);
  for (std::size_t t = 0; t < 25; ++t)
    for (std::size_t a = 1; a < 4; ++a)
      EXPECT_GT(res.arms[a - 1].report->rows[t].epsilon_marginal,
                res.arms[a].report->rows[t].epsilon_marginal);
  const csv::Table curves = csv::Table::Load(dir.path() / "sb" / "sweep_beta_curves.csv");
  EXPECT_EQ(curves.rows.size(), 100u);
  const csv::Table summary = csv::Table::Load(dir.path() / "sb" / "sweep_beta_summary.csv");
  EXPECT_EQ(summary.rows.size(), 4u);
}

TEST(SweepBetaTest, SingletonEqualsTrain) {
  TempDir dir("sweep_single");
  RunConfig c = SmallConfig(dir.path(), "one");
  c.opt.beta = 0.7;
  const SweepResult res = run_sweep_beta(c, {0.7});
  const RunReport direct = run_train(c);
  ASSERT_EQ(res.arms.size(), 1u);
  const auto& arm = *res.arms[0].report;
  EXPECT_EQ(arm.summary.mask_hash, direct.summary.mask_hash);
  EXPECT_EQ(arm.summary.final_accuracy, direct.summary.final_accuracy);
  EXPECT_EQ(arm.summary.mean_d_eff, direct.summary.mean_d_eff);
  for (std::size_t g = 0; g < direct.final_model.groups.size(); ++g)
    EXPECT_EQ(arm.final_model.groups[g].flat(), direct.final_model.groups[g].flat());
}

TEST(SweepBetaTest, EmptyListWarns) {
  const SweepResult res = run_sweep_beta(SmallConfig("."), {});
  EXPECT_TRUE(res.arms.empty());
  EXPECT_EQ(res.warnings.size(), 1u);
}

TEST(SweepBetaTest, FailingArmIsIsolated) {
  TempDir dir("sweep_isolated");
  const SweepResult res = run_sweep_beta(SmallConfig(dir.path()), {0.7, 1.5, 1.0});
  ASSERT_EQ(res.arms.size(), 3u);
  EXPECT_TRUE(res.arms[0].ok());
  EXPECT_FALSE(res.arms[1].ok());
  EXPECT_TRUE(res.arms[2].ok());
}

TEST(SweepIntervalTest, OneRowPerInterval) {
  TempDir dir("sweep_iv");
  RunConfig c = SmallConfig(dir.path(), "iv");
  c.arch = model::Architecture::kMlp1;
  c.hidden = 8;
  c.opt.min_tail = 2;
  const std::vector<spectral::SpectralInterval> ivs{{1, 3}, {2, 4}, {2, 6},
                                                    {3, 5}, {4, 6}, {5, 7}};
  const SweepResult res = run_sweep_interval(c, ivs);
  ASSERT_EQ(res.arms.size(), 6u);
  const csv::Table t = csv::Table::Load(dir.path() / "iv" / "sweep_interval.csv");
  ASSERT_EQ(t.rows.size(), 6u);
  std::set<std::string> hashes;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(t.text(i, "status"), "ok");
    EXPECT_EQ(t.number(i, "rho_min"), ivs[i].rho_min);
    hashes.insert(t.text(i, "mask_hash"));
  }
  EXPECT_EQ(hashes.size(), 1u);
}

TEST(AccountantArgsTest, WrapperIsTransparent) {
  AccountantArgs a;
  a.q = 0.05;
  a.sigmas = {1.0};
  a.beta = 0.5;
  a.groups = 4;
  a.steps = 20;
  const csv::Table t = csv::Table::Parse(run_accountant(a).str());
  ASSERT_EQ(t.rows.size(), 20u);
  const auto grid = accountant::RdpOrderGrid::Default();
  const auto joint = accountant::epsilon_curve(1.0, 0.05, 20, 1e-5, grid);
  const auto marg = accountant::marginal_epsilon_curve(0.5, 1.0, 0.05, 20, 1e-5, grid);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(t.text(i, "epsilon_joint"), csv::format_double(joint[i].epsilon));
    EXPECT_EQ(t.text(i, "epsilon_marginal"), csv::format_double(marg[i].epsilon));
    EXPECT_EQ(t.number(i, "best_order"), joint[i].best_order);
    EXPECT_EQ(t.text(i, "marginal_label"), accountant::kMarginalTag);
  }
}

TEST(AccountantArgsTest, Validation) {
  AccountantArgs a;
  a.q = 1.5;
  a.sigmas = {1.0, 2.0};
  a.groups = 3;
  try {
    run_accountant(a);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.problems().size(), 2u);
  }
}

TEST(ProbeSuiteTest, NoViolations) {
  const ProbeSuiteResult r = run_probe_suite(40, 1);
  EXPECT_EQ(r.instances, 40u);
  EXPECT_EQ(r.violations, 0u);
  EXPECT_GT(r.probes, 0u);
  EXPECT_LE(r.max_delta_over_bound, 1.0 + 1e-9);
  EXPECT_EQ(csv::Table::Parse(r.rows.str()).rows.size(), r.probes);
}

TEST(ProbeSuiteTest, InstancesCoverBothArchitecturesAndBetas) {
  std::set<int> archs;
  std::set<double> betas;
  std::set<std::size_t> windows;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto inst = random_probe_instance(0, i);
    archs.insert(static_cast<int>(inst.model.architecture));
    betas.insert(inst.config.beta);
    windows.insert(inst.config.window_k);
    EXPECT_LE(inst.data.size(), 12u);
  }
  EXPECT_EQ(archs.size(), 2u);
  EXPECT_EQ(betas, (std::set<double>{0.3, 0.7, 1.0}));
  EXPECT_EQ(windows.size(), 5u);
}

TEST(CsvTest, RoundTripAndWidthCheck) {
  csv::Writer w({"a", "b"});
  w.Cell(1.5).Cell("x");
  w.EndRow();
  w.Cell(true).Cell(std::size_t{7});
  w.EndRow();
  const csv::Table t = csv::Table::Parse(w.str());
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(t.number(0, "a"), 1.5);
  EXPECT_EQ(t.text(1, "a"), "1");
  w.Cell(1.0);
  EXPECT_THROW(w.EndRow(), StructuralError);
  EXPECT_THROW(csv::Table::Parse("a,b\n1\n"), FormatError);
  EXPECT_EQ(csv::format_double(0.1 + 0.2), "0.3");
}

}  // namespace
}  // namespace smadp::run
