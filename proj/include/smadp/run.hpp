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

// Run orchestration: configuration, training runs, sweeps and the CSV
// reports they emit.
//
// Files written by a run into <out>/<label>/:
//   trace.csv        step,mode,group_id,batch_size,clipped_sum_norm,query_norm,
//                    noise_norm,release_norm,update_norm,param_norm,param_hash
//   diagnostics.csv  step,group_id,rho,deviation,lambda,valid,d_eff,gate,scale,
//                    warmup,branch_norm,memory_ratio
//   ledger.csv       step,q,sigma_eff,epsilon_joint,best_order,sigma_marginal,
//                    epsilon_marginal,marginal_label
//   report.csv       step,epoch,train_loss,eval_accuracy,d_eff,memory_ratio,rho,
//                    lambda,epsilon_joint,epsilon_marginal
//   summary.csv      one row of run-level means and final values

#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smadp/accountant.hpp"
#include "smadp/csv.hpp"
#include "smadp/data.hpp"
#include "smadp/error.hpp"
#include "smadp/memory.hpp"
#include "smadp/model.hpp"
#include "smadp/numerics.hpp"
#include "smadp/optimizer.hpp"
#include "smadp/spectral.hpp"

namespace smadp::run {

// Collects every configuration problem before reporting.
class ConfigError : public ParameterError {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : ParameterError(Join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string Join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& x : p) s += "\n  - " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class Mode { kSma, kReferenceDpsgd };

inline std::string to_string(Mode m) {
  return m == Mode::kSma ? "sma" : "reference-dpsgd";
}

struct RunConfig {
  optimizer::OptimizerConfig opt;

  std::string dataset = "synthetic";  // synthetic | idx
  std::string images, labels, test_images, test_labels;
  std::optional<std::size_t> subset;
  std::size_t synthetic_n = 2000;
  std::size_t synthetic_d = 2;
  int classes = 2;
  std::size_t eval_n = 1000;

  model::Architecture arch = model::Architecture::kLogReg;
  std::size_t hidden = 16;
  std::vector<double> clip_norms{1.0};
  std::vector<double> sigmas{1.0};

  double delta = 1e-5;
  int max_order = 64;

  std::string out_dir = "runs";
  std::string label = "run";
  bool write_outputs = true;
  Mode mode = Mode::kSma;

  std::size_t num_groups() const {
    return arch == model::Architecture::kLogReg ? 1 : 2;
  }

  accountant::RdpOrderGrid grid() const { return accountant::RdpOrderGrid::Range(2, max_order); }

  std::vector<double> group_sigmas() const {
    return sigmas.size() == 1 ? std::vector<double>(num_groups(), sigmas[0]) : sigmas;
  }

  std::vector<std::string> Problems() const;
  void Validate() const {
    auto p = Problems();
    if (!p.empty()) throw ConfigError(std::move(p));
  }

  // Applies one key=value pair; problems are appended instead of thrown.
  void Set(const std::string& key, const std::string& value,
           std::vector<std::string>& problems);

  // Flat key=value text; '#' starts a comment. Overrides win over the text.
  static RunConfig Parse(const std::string& text,
                         const std::vector<std::string>& overrides = {});
  static RunConfig Load(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});
};

namespace internal {

inline std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> ParseDouble(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (*end != '\0') return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> ParseUnsigned(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::vector<double>> ParseList(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = ParseDouble(Trim(item));
    if (!v) return std::nullopt;
    out.push_back(*v);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

inline bool SplitKeyValue(const std::string& line, std::string& key, std::string& value) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) return false;
  key = Trim(line.substr(0, eq));
  value = Trim(line.substr(eq + 1));
  return !key.empty();
}

}  // namespace internal

inline void RunConfig::Set(const std::string& key, const std::string& value,
                           std::vector<std::string>& problems) {
  auto real = [&](double& slot) {
    if (auto v = internal::ParseDouble(value)) slot = *v;
    else problems.push_back(key + ": '" + value + "' is not a number");
  };
  auto count = [&](std::size_t& slot) {
    if (auto v = internal::ParseUnsigned(value)) slot = static_cast<std::size_t>(*v);
    else problems.push_back(key + ": '" + value + "' is not a non-negative integer");
  };
  auto list = [&](std::vector<double>& slot) {
    if (auto v = internal::ParseList(value)) slot = *v;
    else problems.push_back(key + ": '" + value + "' is not a comma-separated number list");
  };
  auto& o = opt;
  if (key == "beta") real(o.beta);
  else if (key == "alpha") real(o.alpha);
  else if (key == "k") count(o.window_k);
  else if (key == "lr") real(o.learning_rate);
  else if (key == "q") real(o.q);
  else if (key == "rho_min") real(o.interval.rho_min);
  else if (key == "rho_max") real(o.interval.rho_max);
  else if (key == "c_lambda") real(o.c_lambda);
  else if (key == "gamma_ema") real(o.gamma_ema);
  else if (key == "tau_warm") real(o.tau_warm);
  else if (key == "xi_max") real(o.xi_max);
  else if (key == "eps") real(o.eps_num);
  else if (key == "steps") count(o.steps);
  else if (key == "min_tail") count(o.min_tail);
  else if (key == "seed") {
    if (auto v = internal::ParseUnsigned(value)) o.seed = *v;
    else problems.push_back("seed: '" + value + "' is not a non-negative integer");
  } else if (key == "dataset") dataset = value;
  else if (key == "images") images = value;
  else if (key == "labels") labels = value;
  else if (key == "test_images") test_images = value;
  else if (key == "test_labels") test_labels = value;
  else if (key == "subset") {
    std::size_t n = 0;
    count(n);
    subset = n;
  } else if (key == "n") count(synthetic_n);
  else if (key == "d") count(synthetic_d);
  else if (key == "classes") {
    std::size_t c = 0;
    count(c);
    classes = static_cast<int>(c);
  } else if (key == "eval_n") count(eval_n);
  else if (key == "arch") {
    if (value == "logreg" || value == "mlp1") arch = model::parse_architecture(value);
    else problems.push_back("arch: '" + value + "' is not logreg|mlp1");
  } else if (key == "hidden") count(hidden);
  else if (key == "clip") list(clip_norms);
  else if (key == "sigma") list(sigmas);
  else if (key == "delta") real(delta);
  else if (key == "max_order") {
    std::size_t m = 0;
    count(m);
    max_order = static_cast<int>(m);
  } else if (key == "out") out_dir = value;
  else if (key == "label") label = value;
  else if (key == "mode") {
    if (value == "sma") mode = Mode::kSma;
    else if (value == "reference-dpsgd") mode = Mode::kReferenceDpsgd;
    else problems.push_back("mode: '" + value + "' is not sma|reference-dpsgd");
  } else {
    problems.push_back("unknown key '" + key + "'");
  }
}

inline std::vector<std::string> RunConfig::Problems() const {
  std::vector<std::string> p = opt.Problems();
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  if (dataset == "synthetic") {
    check(synthetic_n >= 1, "n must be >= 1");
    check(synthetic_d >= 1, "d must be >= 1");
    check(classes >= 2, "classes must be >= 2");
    check(synthetic_d >= 2 || classes == 2, "d == 1 supports exactly 2 classes");
    check(eval_n >= 1, "eval_n must be >= 1");
  } else if (dataset == "idx") {
    check(!images.empty() && std::filesystem::exists(images),
          "images path '" + images + "' does not exist");
    check(!labels.empty() && std::filesystem::exists(labels),
          "labels path '" + labels + "' does not exist");
    check(test_images.empty() == test_labels.empty(),
          "test_images and test_labels must be given together");
    if (!test_images.empty()) {
      check(std::filesystem::exists(test_images),
            "test_images path '" + test_images + "' does not exist");
      check(std::filesystem::exists(test_labels),
            "test_labels path '" + test_labels + "' does not exist");
    }
    check(!subset || *subset >= 1, "subset must be >= 1");
  } else {
    p.push_back("dataset must be synthetic|idx, got '" + dataset + "'");
  }
  check(arch == model::Architecture::kLogReg || hidden >= 1, "hidden must be >= 1 for mlp1");
  const std::size_t g = num_groups();
  check(clip_norms.size() == 1 || clip_norms.size() == g,
        "clip needs 1 or " + std::to_string(g) + " values");
  check(sigmas.size() == 1 || sigmas.size() == g,
        "sigma needs 1 or " + std::to_string(g) + " values");
  for (double c : clip_norms) check(c > 0.0 && std::isfinite(c), "clip norms must be > 0");
  for (double s : sigmas) check(s > 0.0 && std::isfinite(s), "sigmas must be > 0");
  check(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  check(max_order >= 2, "max_order must be >= 2");
  check(!label.empty(), "label must not be empty");
  return p;
}

inline RunConfig RunConfig::Parse(const std::string& text,
                                  const std::vector<std::string>& overrides) {
  RunConfig c;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = internal::Trim(line);
    if (line.empty()) continue;
    std::string key, value;
    if (!internal::SplitKeyValue(line, key, value)) {
      problems.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    c.Set(key, value, problems);
  }
  for (const auto& o : overrides) {
    std::string key, value;
    if (!internal::SplitKeyValue(o, key, value)) {
      problems.push_back("override '" + o + "': expected key=value");
      continue;
    }
    c.Set(key, value, problems);
  }
  auto more = c.Problems();
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

inline RunConfig RunConfig::Load(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError({"config file '" + path.string() + "' cannot be read"});
  std::ostringstream ss;
  ss << f.rdbuf();
  return Parse(ss.str(), overrides);
}

// FNV-1a over 64-bit words.
class Fnv64 {
 public:
  void Add(std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (word >> (8 * i)) & 0xffu;
      h_ *= 0x100000001b3ULL;
    }
  }
  void Add(double v) { Add(std::bit_cast<std::uint64_t>(v)); }
  void Add(const std::vector<bool>& bits) {
    for (bool b : bits) Add(std::uint64_t{b});
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct StepRow {
  std::size_t step = 0;
  double epoch = 0.0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
  double d_eff = 0.0;         // mean over groups
  double memory_ratio = 0.0;  // mean over groups
  double rho = std::nan("");  // mean over groups with a valid fit
  double lambda = 0.0;        // mean over groups
  double epsilon_joint = 0.0;
  double epsilon_marginal = 0.0;
  std::vector<double> group_d_eff, group_memory_ratio, group_rho, group_lambda;
};

struct RunSummary {
  double mean_d_eff = 0.0;
  double mean_memory_ratio = 0.0;
  double final_accuracy = 0.0;
  double final_epsilon_joint = 0.0;
  double final_epsilon_marginal = 0.0;
  std::uint64_t mask_hash = 0;
  std::size_t steps_completed = 0;
  bool failed = false;
  std::string failure;
};

struct RunReport {
  RunConfig config;
  std::vector<StepRow> rows;
  RunSummary summary;
  model::ModelState final_model;
  std::filesystem::path output_dir;
};

// Called after every step with the step's trace, the histories the step
// conditioned on, and the updated model.
using StepObserver =
    std::function<void(const optimizer::StepTrace&,
                       const std::vector<memory::ReleaseHistory>& histories_before,
                       const model::ModelState& model_after)>;

struct Datasets {
  data::Dataset train;
  data::Dataset eval;
};

inline Datasets make_datasets(const RunConfig& c) {
  if (c.dataset == "synthetic") {
    using numerics::Purpose;
    return {data::gen_synthetic({c.opt.seed, 0, 0, Purpose::kData}, c.synthetic_n,
                                c.synthetic_d, c.classes),
            data::gen_synthetic({c.opt.seed, 0, 1, Purpose::kData}, c.eval_n,
                                c.synthetic_d, c.classes)};
  }
  Datasets d{data::load_idx(c.images, c.labels, c.subset), {}};
  if (!c.test_images.empty()) {
    d.eval = data::load_idx(c.test_images, c.test_labels, c.subset);
  } else {
    d.eval = d.train;
  }
  const int classes = std::max(d.train.num_classes, d.eval.num_classes);
  d.train.num_classes = d.eval.num_classes = classes;
  return d;
}

inline model::ModelState make_model(const RunConfig& c, const data::Dataset& train) {
  return model::init_model({c.opt.seed, 0, 0, numerics::Purpose::kInit}, c.arch,
                           train.dim(), c.hidden, train.num_classes, c.clip_norms,
                           c.sigmas);
}

namespace internal {

inline double Mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double GroupNorm(const model::ParameterGroup& g) {
  return numerics::l2_norm(g.flat());
}

inline std::uint64_t GroupHash(const model::ParameterGroup& g) {
  Fnv64 h;
  for (double v : g.flat()) h.Add(v);
  return h.value();
}

struct RunFiles {
  csv::Writer trace{{"step", "mode", "group_id", "batch_size", "clipped_sum_norm",
                     "query_norm", "noise_norm", "release_norm", "update_norm",
                     "param_norm", "param_hash"}};
  csv::Writer diagnostics{{"step", "group_id", "rho", "deviation", "lambda", "valid",
                           "d_eff", "gate", "scale", "warmup", "branch_norm",
                           "memory_ratio"}};
  csv::Writer ledger{{"step", "q", "sigma_eff", "epsilon_joint", "best_order",
                      "sigma_marginal", "epsilon_marginal", "marginal_label"}};
  csv::Writer report{{"step", "epoch", "train_loss", "eval_accuracy", "d_eff",
                      "memory_ratio", "rho", "lambda", "epsilon_joint",
                      "epsilon_marginal"}};
  csv::Writer summary{{"label", "mode", "status", "steps_completed", "mean_d_eff",
                       "mean_memory_ratio", "final_accuracy", "final_epsilon_joint",
                       "final_epsilon_marginal", "mask_hash", "failure"}};
};

inline std::string Sanitize(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return s;
}

}  // namespace internal

// Executes a full training run. Configuration problems are thrown (all at
// once) before any compute; a failure during the run stops it, marks the
// summary failed and still writes the completed rows.
inline RunReport run_train(const RunConfig& config, const StepObserver& observer = {}) {
  config.Validate();
  const Datasets ds = make_datasets(config);
  ds.train.Validate();
  ds.eval.Validate();

  const auto& opt = config.opt;
  const bool reference = config.mode == Mode::kReferenceDpsgd;
  const double beta = reference ? 1.0 : opt.beta;
  const auto grid = config.grid();
  const auto sigmas = config.group_sigmas();
  const double sigma_eff = accountant::sigma_eff_joint(beta, sigmas);
  const double sigma_marg =
      accountant::sigma_marginal(beta, *std::min_element(sigmas.begin(), sigmas.end()));

  RunReport report;
  report.config = config;
  report.output_dir = std::filesystem::path(config.out_dir) / config.label;
  model::ModelState model = make_model(config, ds.train);
  if (model.num_groups() != config.num_groups()) {
    throw StructuralError("run_train: unexpected group count");
  }
  auto histories = optimizer::make_histories(model, opt);
  auto joint = accountant::PrivacyLedger::Empty(grid, accountant::LedgerMode::kJoint);
  auto marginal = accountant::PrivacyLedger::Empty(grid, accountant::LedgerMode::kMarginal);
  internal::RunFiles files;
  Fnv64 mask_hash;

  try {
    for (std::size_t t = 0; t < opt.steps; ++t) {
      optimizer::StepTrace trace;
      if (reference) {
        auto [next, tr] = optimizer::dpsgd_reference_step(model, ds.train, opt, t);
        if (observer) observer(tr, histories, next);
        model = std::move(next);
        trace = std::move(tr);
      } else {
        auto res = optimizer::step(model, ds.train, opt, histories, t);
        if (observer) observer(res.trace, histories, res.model);
        model = std::move(res.model);
        histories = std::move(res.histories);
        trace = std::move(res.trace);
      }
      mask_hash.Add(trace.mask);

      joint = accountant::compose(std::move(joint), {t, opt.q, sigma_eff}, grid);
      marginal = accountant::compose(std::move(marginal), {t, opt.q, sigma_marg}, grid);
      const auto eps_joint = accountant::rdp_to_dp(joint, config.delta);
      const auto eps_marg = accountant::rdp_to_dp(marginal, config.delta);

      const auto train_eval = model::evaluate(model, ds.train);
      const auto eval = model::evaluate(model, ds.eval);
      if (!std::isfinite(train_eval.loss)) {
        throw NumericalError("run_train: training loss became non-finite at step " +
                             std::to_string(t));
      }

      StepRow row;
      row.step = t;
      row.epoch = static_cast<double>(t) * opt.q;
      row.train_loss = train_eval.loss;
      row.eval_accuracy = eval.accuracy;
      row.epsilon_joint = eps_joint.epsilon;
      row.epsilon_marginal = eps_marg.epsilon;
      std::vector<double> valid_rho;
      for (const auto& gt : trace.groups) {
        const auto& mem = gt.memory;
        const double rho = gt.spectral && gt.spectral->valid ? gt.spectral->rho : std::nan("");
        const double lam = gt.spectral && t > 0 ? gt.spectral->tempering : 0.0;
        const double dev = gt.spectral ? gt.spectral->deviation : 0.0;
        row.group_d_eff.push_back(mem.d_eff);
        row.group_memory_ratio.push_back(gt.memory_ratio);
        row.group_rho.push_back(rho);
        row.group_lambda.push_back(lam);
        if (std::isfinite(rho)) valid_rho.push_back(rho);

        const auto& p = model.groups[static_cast<std::size_t>(gt.group_id)];
        files.trace.Cell(t).Cell(to_string(config.mode)).Cell(gt.group_id)
            .Cell(trace.batch_size).Cell(numerics::l2_norm(gt.clipped_sum))
            .Cell(numerics::l2_norm(gt.query)).Cell(numerics::l2_norm(gt.release.noise))
            .Cell(numerics::l2_norm(gt.release.release)).Cell(gt.update_norm)
            .Cell(internal::GroupNorm(p)).Cell(hex(internal::GroupHash(p)));
        files.trace.EndRow();
        files.diagnostics.Cell(t).Cell(gt.group_id).Cell(rho).Cell(dev).Cell(lam)
            .Cell(gt.spectral && gt.spectral->valid).Cell(mem.d_eff).Cell(mem.gate)
            .Cell(mem.scale).Cell(mem.warmup).Cell(numerics::l2_norm(mem.branch))
            .Cell(gt.memory_ratio);
        files.diagnostics.EndRow();
      }
      row.d_eff = internal::Mean(row.group_d_eff);
      row.memory_ratio = internal::Mean(row.group_memory_ratio);
      row.rho = valid_rho.empty() ? std::nan("") : internal::Mean(valid_rho);
      row.lambda = internal::Mean(row.group_lambda);

      files.ledger.Cell(t).Cell(opt.q).Cell(sigma_eff).Cell(eps_joint.epsilon)
          .Cell(eps_joint.best_order).Cell(sigma_marg).Cell(eps_marg.epsilon)
          .Cell(accountant::kMarginalTag);
      files.ledger.EndRow();
      files.report.Cell(t).Cell(row.epoch).Cell(row.train_loss).Cell(row.eval_accuracy)
          .Cell(row.d_eff).Cell(row.memory_ratio).Cell(row.rho).Cell(row.lambda)
          .Cell(row.epsilon_joint).Cell(row.epsilon_marginal);
      files.report.EndRow();
      report.rows.push_back(std::move(row));
    }
  } catch (const Error& e) {
    report.summary.failed = true;
    report.summary.failure = e.what();
  }

  auto& s = report.summary;
  s.steps_completed = report.rows.size();
  s.mask_hash = mask_hash.value();
  std::vector<double> d_eff, ratio;
  for (const auto& r : report.rows) {
    d_eff.push_back(r.d_eff);
    ratio.push_back(r.memory_ratio);
  }
  s.mean_d_eff = internal::Mean(d_eff);
  s.mean_memory_ratio = internal::Mean(ratio);
  if (!report.rows.empty()) {
    s.final_accuracy = report.rows.back().eval_accuracy;
    s.final_epsilon_joint = report.rows.back().epsilon_joint;
    s.final_epsilon_marginal = report.rows.back().epsilon_marginal;
  }
  report.final_model = std::move(model);

  files.summary.Cell(config.label).Cell(to_string(config.mode))
      .Cell(s.failed ? "failed" : "ok").Cell(s.steps_completed).Cell(s.mean_d_eff)
      .Cell(s.mean_memory_ratio).Cell(s.final_accuracy).Cell(s.final_epsilon_joint)
      .Cell(s.final_epsilon_marginal).Cell(hex(s.mask_hash))
      .Cell(internal::Sanitize(s.failure));
  files.summary.EndRow();

  if (config.write_outputs) {
    const auto& dir = report.output_dir;
    files.trace.Save(dir / "trace.csv");
    files.diagnostics.Save(dir / "diagnostics.csv");
    files.ledger.Save(dir / "ledger.csv");
    files.report.Save(dir / "report.csv");
    files.summary.Save(dir / "summary.csv");
  }
  return report;
}

struct SweepArm {
  std::string name;
  std::optional<RunReport> report;  // absent when the arm failed to start
  std::string failure;

  bool ok() const { return report && !report->summary.failed; }
};

struct SweepResult {
  std::vector<SweepArm> arms;
  std::vector<std::string> warnings;
  csv::Writer curves{{}};
  csv::Writer summary{{}};
};

namespace internal {

inline SweepArm RunArm(RunConfig cfg, const std::string& name) {
  SweepArm arm{name, std::nullopt, ""};
  try {
    arm.report = run_train(cfg);
    if (arm.report->summary.failed) arm.failure = arm.report->summary.failure;
  } catch (const Error& e) {
    arm.failure = e.what();
  }
  return arm;
}

inline std::string FormatInterval(const spectral::SpectralInterval& i) {
  return "[" + csv::format_double(i.rho_min) + ";" + csv::format_double(i.rho_max) + "]";
}

}  // namespace internal

// One run per beta on shared seeds (hence identical sampling masks). Writes
// sweep_beta_curves.csv and sweep_beta_summary.csv under <out>/<label>/.
inline SweepResult run_sweep_beta(const RunConfig& config, const std::vector<double>& betas) {
  SweepResult out;
  out.curves = csv::Writer({"beta", "step", "epoch", "eval_accuracy", "epsilon_marginal",
                            "epsilon_joint", "marginal_label"});
  out.summary = csv::Writer({"beta", "status", "final_accuracy", "final_epsilon_marginal",
                             "final_epsilon_joint", "mean_d_eff", "mean_memory_ratio",
                             "mask_hash", "failure"});
  if (betas.empty()) {
    out.warnings.push_back("sweep-beta: empty beta list, nothing to run");
    return out;
  }
  for (double beta : betas) {
    RunConfig cfg = config;
    cfg.opt.beta = beta;
    cfg.label = config.label + "/beta_" + csv::format_double(beta);
    SweepArm arm = internal::RunArm(cfg, "beta=" + csv::format_double(beta));
    if (arm.report) {
      for (const auto& r : arm.report->rows) {
        out.curves.Cell(beta).Cell(r.step).Cell(r.epoch).Cell(r.eval_accuracy)
            .Cell(r.epsilon_marginal).Cell(r.epsilon_joint).Cell(accountant::kMarginalTag);
        out.curves.EndRow();
      }
      const auto& s = arm.report->summary;
      out.summary.Cell(beta).Cell(arm.ok() ? "ok" : "failed").Cell(s.final_accuracy)
          .Cell(s.final_epsilon_marginal).Cell(s.final_epsilon_joint).Cell(s.mean_d_eff)
          .Cell(s.mean_memory_ratio).Cell(hex(s.mask_hash))
          .Cell(internal::Sanitize(arm.failure));
    } else {
      out.summary.Cell(beta).Cell("failed").Cell(0.0).Cell(0.0).Cell(0.0).Cell(0.0)
          .Cell(0.0).Cell("").Cell(internal::Sanitize(arm.failure));
    }
    out.summary.EndRow();
    out.arms.push_back(std::move(arm));
  }
  if (config.write_outputs) {
    const auto dir = std::filesystem::path(config.out_dir) / config.label;
    out.curves.Save(dir / "sweep_beta_curves.csv");
    out.summary.Save(dir / "sweep_beta_summary.csv");
  }
  return out;
}

// One run per spectral interval; the summary mirrors a (interval, mean D_eff,
// mean memory ratio) table. Writes sweep_interval.csv under <out>/<label>/.
inline SweepResult run_sweep_interval(const RunConfig& config,
                                      const std::vector<spectral::SpectralInterval>& intervals) {
  SweepResult out;
  out.summary = csv::Writer({"interval", "rho_min", "rho_max", "status", "mean_d_eff",
                             "mean_memory_ratio", "final_accuracy", "mask_hash", "failure"});
  if (intervals.empty()) {
    out.warnings.push_back("sweep-interval: empty interval list, nothing to run");
    return out;
  }
  for (const auto& interval : intervals) {
    RunConfig cfg = config;
    cfg.opt.interval = interval;
    const std::string name = internal::FormatInterval(interval);
    cfg.label = config.label + "/interval_" + csv::format_double(interval.rho_min) + "_" +
                csv::format_double(interval.rho_max);
    SweepArm arm = internal::RunArm(cfg, name);
    out.summary.Cell(name).Cell(interval.rho_min).Cell(interval.rho_max)
        .Cell(arm.ok() ? "ok" : "failed");
    if (arm.report) {
      const auto& s = arm.report->summary;
      out.summary.Cell(s.mean_d_eff).Cell(s.mean_memory_ratio).Cell(s.final_accuracy)
          .Cell(hex(s.mask_hash));
    } else {
      out.summary.Cell(0.0).Cell(0.0).Cell(0.0).Cell("");
    }
    out.summary.Cell(internal::Sanitize(arm.failure));
    out.summary.EndRow();
    out.arms.push_back(std::move(arm));
  }
  if (config.write_outputs) {
    out.summary.Save(std::filesystem::path(config.out_dir) / config.label /
                     "sweep_interval.csv");
  }
  return out;
}

struct AccountantArgs {
  double q = 0.0;
  std::vector<double> sigmas;  // one shared value or one per group
  double beta = 1.0;
  std::size_t groups = 1;
  std::size_t steps = 0;
  double delta = 1e-5;
  int max_order = 64;

  std::vector<std::string> Problems() const {
    std::vector<std::string> p;
    if (!(q >= 0.0 && q <= 1.0)) p.push_back("--q must lie in [0,1]");
    if (!(beta > 0.0 && beta <= 1.0)) p.push_back("--beta must lie in (0,1]");
    if (groups < 1) p.push_back("--groups must be >= 1");
    if (sigmas.empty()) p.push_back("--sigma is required");
    if (sigmas.size() != 1 && sigmas.size() != groups) {
      p.push_back("--sigma needs 1 or --groups values");
    }
    for (double s : sigmas)
      if (!(s > 0.0) || !std::isfinite(s)) p.push_back("--sigma values must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) p.push_back("--delta must lie in (0,1)");
    if (max_order < 2) p.push_back("--max-order must be >= 2");
    return p;
  }
};

// step, epsilon_joint, epsilon_marginal, best_order (of the joint bound).
inline csv::Writer run_accountant(const AccountantArgs& a) {
  if (auto p = a.Problems(); !p.empty()) throw ConfigError(std::move(p));
  const auto grid = accountant::RdpOrderGrid::Range(2, a.max_order);
  const std::vector<double> sigmas =
      a.sigmas.size() == 1 ? std::vector<double>(a.groups, a.sigmas[0]) : a.sigmas;
  const double sigma_eff = accountant::sigma_eff_joint(a.beta, sigmas);
  const double min_sigma = *std::min_element(sigmas.begin(), sigmas.end());
  const auto joint = accountant::epsilon_curve(sigma_eff, a.q, a.steps, a.delta, grid);
  const auto marginal =
      accountant::marginal_epsilon_curve(a.beta, min_sigma, a.q, a.steps, a.delta, grid);
  csv::Writer w({"step", "epsilon_joint", "epsilon_marginal", "best_order", "marginal_label"});
  for (std::size_t i = 0; i < joint.size(); ++i) {
    w.Cell(joint[i].step).Cell(joint[i].epsilon).Cell(marginal[i].epsilon)
        .Cell(joint[i].best_order).Cell(accountant::kMarginalTag);
    w.EndRow();
  }
  return w;
}

// A randomised tiny instance for the remove-one sensitivity oracle.
struct ProbeInstance {
  data::Dataset data;
  data::SampleBatch mask;
  model::ModelState model;
  optimizer::OptimizerConfig config;
  std::vector<memory::ReleaseHistory> histories;
  std::size_t t = 0;
};

// N in [2,12], either architecture, beta in {0.3,0.7,1.0}, K in [1,5], a
// random fixed mask and a random release history of length t.
inline ProbeInstance random_probe_instance(std::uint64_t seed, std::uint64_t index) {
  using numerics::Purpose;
  numerics::StreamEngine rng({seed, index, 0, Purpose::kData});
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return lo + rng() % (hi - lo + 1);
  };
  ProbeInstance inst;
  const std::size_t n = pick(2, 12);
  const std::size_t d = pick(2, 5);
  const int classes = static_cast<int>(pick(2, 3));
  inst.data = data::gen_synthetic({seed, index, 1, Purpose::kData}, n, d, classes);
  // Occasional large-magnitude examples so some gradients hit the clip.
  for (std::size_t i = 0; i < n; ++i)
    if (rng.Uniform() < 0.3)
      for (std::size_t j = 0; j < d; ++j) inst.data.features(i, j) *= 10.0;

  const auto arch = rng() % 2 == 0 ? model::Architecture::kLogReg : model::Architecture::kMlp1;
  const std::size_t groups = arch == model::Architecture::kLogReg ? 1 : 2;
  std::vector<double> clips, sigmas;
  for (std::size_t g = 0; g < groups; ++g) {
    clips.push_back(0.05 + 2.0 * rng.Uniform());
    sigmas.push_back(0.5 + rng.Uniform());
  }
  inst.model = model::init_model({seed, index, 0, Purpose::kInit}, arch, d, pick(2, 6),
                                 classes, clips, sigmas);
  constexpr double kBetas[] = {0.3, 0.7, 1.0};
  inst.config.beta = kBetas[rng() % 3];
  inst.config.alpha = 0.2 + 0.8 * rng.Uniform();
  inst.config.window_k = pick(1, 5);
  inst.config.q = 0.5;
  inst.config.seed = seed;
  inst.config.min_tail = 2;
  inst.config.interval = {1.5 + rng.Uniform(), 4.0 + 2.0 * rng.Uniform()};

  std::vector<bool> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = rng.Uniform() < 0.6;
  inst.mask = data::batch_from_mask(std::move(bits), inst.config.q);

  inst.t = pick(0, 8);
  inst.histories = optimizer::make_histories(inst.model, inst.config);
  for (std::size_t s = 0; s < inst.t; ++s) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t dim = inst.model.groups[g].param_count();
      auto query = numerics::gaussian_vector({seed, index * 64 + s, g, Purpose::kData}, dim,
                                             0.5 + 3.0 * rng.Uniform());
      auto noise = numerics::gaussian_vector({seed, index * 64 + s, g, Purpose::kNoise}, dim,
                                             sigmas[g] * clips[g]);
      inst.histories[g].Append(memory::ReleaseRecord::Make(s, static_cast<int>(g),
                                                           std::move(query), std::move(noise)));
    }
  }
  return inst;
}

struct ProbeSuiteResult {
  std::size_t instances = 0;
  std::size_t probes = 0;
  std::size_t violations = 0;
  double max_delta_over_bound = 0.0;
  csv::Writer rows{{"instance", "arch", "beta", "k", "t", "removed_index", "group_id",
                    "delta", "bound", "satisfied"}};
};

inline ProbeSuiteResult run_probe_suite(std::size_t instances, std::uint64_t seed) {
  ProbeSuiteResult out;
  for (std::size_t i = 0; i < instances; ++i) {
    const ProbeInstance inst = random_probe_instance(seed, i);
    const auto results = optimizer::adjacency_probe(inst.data, inst.mask, inst.model,
                                                    inst.config, inst.histories, inst.t);
    ++out.instances;
    for (const auto& r : results) {
      ++out.probes;
      if (!r.satisfied) ++out.violations;
      out.max_delta_over_bound = std::max(out.max_delta_over_bound, r.delta / r.bound);
      out.rows.Cell(i).Cell(model::to_string(inst.model.architecture)).Cell(inst.config.beta)
          .Cell(inst.config.window_k).Cell(inst.t).Cell(r.removed_index).Cell(r.group_id)
          .Cell(r.delta).Cell(r.bound).Cell(r.satisfied);
      out.rows.EndRow();
    }
  }
  return out;
}

}  // namespace smadp::run
