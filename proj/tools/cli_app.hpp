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

// Command-line front end. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#pragma once

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smadp/smadp.hpp"

namespace smadp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr const char* kOutputDirEnv = "SMADP_OUTPUT_DIR";

namespace internal {

inline run::RunConfig LoadConfig(const std::string& path,
                                 const std::vector<std::string>& user_overrides) {
  std::vector<std::string> overrides;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) {
    overrides.push_back(std::string("out=") + env);
  }
  overrides.insert(overrides.end(), user_overrides.begin(), user_overrides.end());
  return path.empty() ? run::RunConfig::Parse("", overrides)
                      : run::RunConfig::Load(path, overrides);
}

inline void Emit(const csv::Writer& w, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << w.str();
  } else {
    w.Save(path);
  }
}

inline numerics::DenseMatrix ReadMatrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open matrix file '" + path + "'");
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (*end != '\0') throw FormatError("matrix file: '" + tok + "' is not a number");
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (cols == 0) cols = row.size();
    if (row.size() != cols) {
      throw FormatError("matrix file: row " + std::to_string(rows + 1) + " has " +
                        std::to_string(row.size()) + " entries, expected " +
                        std::to_string(cols));
    }
    values.insert(values.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw FormatError("matrix file '" + path + "' is empty");
  return numerics::DenseMatrix(rows, cols, std::move(values));
}

// Empty input gives an empty list.
inline std::vector<double> ParseDoubles(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = run::internal::ParseDouble(run::internal::Trim(item));
    if (!v) throw ParameterError(flag + ": '" + item + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

inline std::vector<spectral::SpectralInterval> ParseIntervals(const std::string& s) {
  std::vector<spectral::SpectralInterval> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ParameterError("interval '" + item + "' must look like lo:hi");
    }
    const auto lo = run::internal::ParseDouble(run::internal::Trim(item.substr(0, colon)));
    const auto hi = run::internal::ParseDouble(run::internal::Trim(item.substr(colon + 1)));
    if (!lo || !hi) throw ParameterError("interval '" + item + "' has a non-numeric end");
    spectral::SpectralInterval iv{*lo, *hi};
    iv.Validate();
    out.push_back(iv);
  }
  return out;
}

inline void PrintSummary(const run::RunReport& r, std::ostream& out) {
  const auto& s = r.summary;
  out << "run " << r.config.label << " (" << run::to_string(r.config.mode) << "): "
      << (s.failed ? "FAILED" : "ok") << ", steps=" << s.steps_completed
      << ", final_accuracy=" << csv::format_double(s.final_accuracy)
      << ", epsilon_joint=" << csv::format_double(s.final_epsilon_joint)
      << ", epsilon_marginal=" << csv::format_double(s.final_epsilon_marginal) << " ("
      << accountant::kMarginalTag << ")"
      << ", mean_d_eff=" << csv::format_double(s.mean_d_eff)
      << ", mean_memory_ratio=" << csv::format_double(s.mean_memory_ratio) << "\n";
  if (r.config.write_outputs) out << "outputs in " << r.output_dir.string() << "\n";
  if (s.failed) out << "failure: " << s.failure << "\n";
}

}  // namespace internal

inline int RunCli(const std::vector<std::string>& args, std::ostream& out,
                  std::ostream& err) {
  CLI::App app{"Memory-augmented DP-SGD: training, sweeps, accounting and diagnostics"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* train = app.add_subcommand("train", "Run one training job");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("overrides", overrides, "key=value overrides");

  auto* sweep_beta = app.add_subcommand("sweep-beta", "One run per mixing coefficient");
  std::string betas;
  sweep_beta->add_option("--betas", betas, "comma-separated betas")->required();
  sweep_beta->add_option("--config", config_path, "key=value config file");
  sweep_beta->add_option("overrides", overrides, "key=value overrides");

  auto* sweep_interval = app.add_subcommand("sweep-interval", "One run per spectral interval");
  std::string intervals;
  sweep_interval->add_option("--intervals", intervals, "lo:hi[,lo:hi...]")->required();
  sweep_interval->add_option("--config", config_path, "key=value config file");
  sweep_interval->add_option("overrides", overrides, "key=value overrides");

  auto* acct = app.add_subcommand("accountant", "Privacy budget curve");
  run::AccountantArgs acct_args;
  std::string acct_out;
  acct->add_option("--q", acct_args.q, "sampling probability")
      ->required()->check(CLI::Range(0.0, 1.0));
  std::string sigmas;
  acct->add_option("--sigma", sigmas, "noise multiplier(s)")->required();
  acct->add_option("--beta", acct_args.beta, "mixing coefficient")
      ->check(CLI::Range(0.0, 1.0));
  acct->add_option("--groups", acct_args.groups, "number of parameter groups");
  acct->add_option("--steps", acct_args.steps, "number of steps")->required();
  acct->add_option("--delta", acct_args.delta, "target delta");
  acct->add_option("--max-order", acct_args.max_order, "largest integer RDP order");
  acct->add_option("--out", acct_out, "CSV path (stdout when omitted)");

  auto* fit = app.add_subcommand("spectral-fit", "Tail exponent of a weight matrix");
  std::string matrix_path;
  spectral::SpectralInterval fit_interval;
  double fit_c_lambda = 1.0;
  std::size_t fit_min_tail = spectral::kDefaultMinTail;
  fit->add_option("matrix", matrix_path, "whitespace-delimited matrix file")->required();
  fit->add_option("--rho-min", fit_interval.rho_min, "interval lower end");
  fit->add_option("--rho-max", fit_interval.rho_max, "interval upper end");
  fit->add_option("--c-lambda", fit_c_lambda, "tempering constant");
  fit->add_option("--min-tail", fit_min_tail, "minimum tail size");

  auto* probe = app.add_subcommand("probe-sensitivity", "Remove-one sensitivity oracle");
  std::size_t probe_instances = 100;
  std::uint64_t probe_seed = 0;
  std::string probe_out;
  probe->add_option("--instances", probe_instances, "random instances");
  probe->add_option("--seed", probe_seed, "seed");
  probe->add_option("--out", probe_out, "CSV path for per-probe rows");

  std::vector<const char*> argv;
  argv.push_back("smadp");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (train->parsed()) {
      const auto cfg = internal::LoadConfig(config_path, overrides);
      const auto report = run::run_train(cfg);
      internal::PrintSummary(report, out);
      return report.summary.failed ? kExitRuntime : kExitOk;
    }
    if (sweep_beta->parsed()) {
      const auto cfg = internal::LoadConfig(config_path, overrides);
      const auto result = run::run_sweep_beta(cfg, internal::ParseDoubles(betas, "--betas"));
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      out << result.summary.str();
      for (const auto& arm : result.arms)
        if (!arm.ok()) return kExitRuntime;
      return kExitOk;
    }
    if (sweep_interval->parsed()) {
      const auto cfg = internal::LoadConfig(config_path, overrides);
      const auto result = run::run_sweep_interval(cfg, internal::ParseIntervals(intervals));
      for (const auto& w : result.warnings) err << "warning: " << w << "\n";
      out << result.summary.str();
      for (const auto& arm : result.arms)
        if (!arm.ok()) return kExitRuntime;
      return kExitOk;
    }
    if (acct->parsed()) {
      acct_args.sigmas = internal::ParseDoubles(sigmas, "--sigma");
      internal::Emit(run::run_accountant(acct_args), acct_out, out);
      return kExitOk;
    }
    if (fit->parsed()) {
      fit_interval.Validate();
      const auto m = internal::ReadMatrix(matrix_path);
      const auto report = spectral::spectral_report(m, 0, 0, fit_interval, fit_c_lambda,
                                                    fit_min_tail);
      csv::Writer w({"rho", "deviation", "tempering", "tail_size", "valid"});
      w.Cell(report.rho).Cell(report.deviation).Cell(report.tempering)
          .Cell(report.tail_size).Cell(report.valid);
      w.EndRow();
      out << w.str();
      return kExitOk;
    }
    if (probe->parsed()) {
      const auto result = run::run_probe_suite(probe_instances, probe_seed);
      if (!probe_out.empty()) result.rows.Save(probe_out);
      out << "instances=" << result.instances << " probes=" << result.probes
          << " violations=" << result.violations
          << " max_delta_over_bound=" << csv::format_double(result.max_delta_over_bound)
          << "\n";
      return result.violations == 0 ? kExitOk : kExitRuntime;
    }
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const LengthError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace smadp::cli
