/* Copyright 2026 The moesched Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "moesched/engine.h"
#include "moesched/errors.h"
#include "moesched/metrics.h"
#include "moesched/model.h"
#include "moesched/simulation.h"
#include "moesched/workload.h"

namespace moesched {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Every key is optional; see README for the file layout.
struct ExperimentConfig {
  ModelConfig model = default_experiment_model();
  CostModel cost;
  std::vector<std::string> schedulers{"qllm", "baseline"};
  std::size_t max_batch = 32;
  double slo_ms = 3000.0;
  WorkloadSpec workload = default_experiment_workload();
  std::optional<std::string> trace_path;
  std::vector<double> rates{1, 2, 3, 4, 5, 6, 7};
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  std::uint64_t cache_capacity_bytes = 8ULL << 30;

  static ModelConfig default_experiment_model();
  static WorkloadSpec default_experiment_workload();

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Parses the JSON config text; unknown keys are rejected.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const ExperimentConfig& config);

struct RunResult {
  std::string scheduler;
  std::string rate_label;
  double rate = 0.0;
  SimulationResult sim;
  AggregateReport report;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
};

// Observer installed on every simulation of the sweep.
using RunObserver = std::function<void(const std::string& scheduler, double rate,
                                       const SimulationView& view)>;

// One simulation per (scheduler, rate). With a trace path the trace is
// replayed once per scheduler. BE slowdown is reported against the baseline
// run of the same rate when one is part of the sweep.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const RunObserver& observer = {});

// Writes <out>/summary.csv and <out>/<scheduler>/rate_<r>/jobs.csv.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result);

// Per-rate LS/BE table comparing every scheduler against the baseline.
std::string comparison_table(const ExperimentResult& result);

// Same table rebuilt from a summary.csv written by write_outputs.
std::string compare_summary(std::istream& summary_csv);

// Virtual duration of one decode iteration of `batch` sequences whose
// contexts hold `context` prompt tokens, measured on the engine.
double measure_decode_iteration(const ModelConfig& model, const CostModel& cost,
                                std::size_t batch = 32, int context = 128);

struct CalibrationResult {
  CostModel cost;
  double iteration_ms = 0.0;
};

// Scales the compute terms of `base` so the reference decode iteration lands
// in [lo_ms, hi_ms], then verifies by simulation. Throws InvalidArgument if
// the range is infeasible.
CalibrationResult calibrate(const ModelConfig& model, const CostModel& base,
                            double lo_ms, double hi_ms, std::size_t batch = 32,
                            int context = 128);

}  // namespace moesched
