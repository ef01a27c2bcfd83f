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

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moesched/experiment.h"

using namespace moesched;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitInvariant = 2;

struct Overrides {
  std::string config_path;
  std::vector<std::string> schedulers;
  std::vector<double> rates;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> trace;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON experiment config");
  cmd->add_option("--scheduler", o.schedulers, "qllm, baseline or never-preempt (repeatable)");
  cmd->add_option("--rate", o.rates, "arrival rate in jobs per virtual second (repeatable)");
  cmd->add_option("--seed", o.seed, "global seed");
  cmd->add_option("--out", o.out, "output directory or file");
  cmd->add_option("--trace", o.trace, "replay this trace instead of generating one");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (!o.schedulers.empty()) c.schedulers = o.schedulers;
  if (!o.rates.empty()) c.rates = o.rates;
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.trace) c.trace_path = *o.trace;
  c.validate();
  return c;
}

int cmd_run(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const ExperimentResult result = run_experiment(c);
  write_outputs(c, result);
  std::cout << comparison_table(result);
  std::cout << "\nwrote " << result.runs.size() << " runs to " << c.out_dir << "\n";
  return kExitOk;
}

int cmd_calibrate(const Overrides& o, double lo, double hi) {
  ExperimentConfig c = resolve(o);
  const CalibrationResult cal = calibrate(c.model, c.cost, lo, hi, c.max_batch);
  c.cost = cal.cost;
  std::cerr << "decode iteration (batch " << c.max_batch << ", " << c.model.num_layers
            << " layers): " << format_double(cal.iteration_ms) << " ms\n";
  const std::string text = config_to_text(c);
  if (o.out) {
    std::ofstream out(*o.out, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + *o.out);
    out << text;
  } else {
    std::cout << text;
  }
  return kExitOk;
}

int cmd_gen_trace(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  WorkloadSpec spec = c.workload;
  spec.rate_per_s = c.rates.front();
  spec.seed = c.seed;
  const auto trace = generate(spec);
  if (o.out) {
    save_trace(trace, *o.out);
  } else {
    write_trace(std::cout, trace);
  }
  return kExitOk;
}

int cmd_compare(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::cout << compare_summary(in);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moesched: preemptive LS/BE scheduling for MoE inference on a virtual clock"};
  app.require_subcommand(1);

  Overrides run_o, cal_o, gen_o;
  double lo = 300.0, hi = 400.0;
  std::string summary_path;

  auto* run = app.add_subcommand("run", "run the scheduler x rate sweep");
  add_common(run, run_o);
  auto* cal = app.add_subcommand("calibrate", "fit the cost model to a decode iteration range");
  add_common(cal, cal_o);
  cal->add_option("--lo", lo, "lower bound, virtual ms");
  cal->add_option("--hi", hi, "upper bound, virtual ms");
  auto* gen = app.add_subcommand("gen-trace", "write a synthetic trace (first --rate)");
  add_common(gen, gen_o);
  auto* cmp = app.add_subcommand("compare", "print the comparison table of a summary.csv");
  cmp->add_option("summary", summary_path, "summary.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_o);
    if (*cal) return cmd_calibrate(cal_o, lo, hi);
    if (*gen) return cmd_gen_trace(gen_o);
    if (*cmp) return cmd_compare(summary_path);
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const StateCorruption& e) {
    std::cerr << "state corruption: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvariant;
  }
  return kExitOk;
}
