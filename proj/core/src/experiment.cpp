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

#include "moesched/experiment.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "moesched/errors.h"

namespace moesched {

using nlohmann::json;

ModelConfig ExperimentConfig::default_experiment_model() {
  // Narrower than the library default so the 32-layer KV cache streams half
  // the bytes per decode iteration.
  ModelConfig m;
  m.num_layers = 32;
  m.hidden_dim = 8;
  return m;
}

WorkloadSpec ExperimentConfig::default_experiment_workload() {
  WorkloadSpec w;
  w.max_jobs = 160;
  return w;
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string(field) + ": " + e.what());
    }
  };
  wrap("model", [&] { model.validate(); });
  wrap("cost", [&] { cost.validate(); });
  if (schedulers.empty()) throw ConfigError("schedulers: at least one scheduler is required");
  wrap("schedulers", [&] {
    for (const auto& s : schedulers) parse_scheduler(s);
  });
  if (max_batch < 1) throw ConfigError("max_batch: must be >= 1");
  if (!(slo_ms > 0.0) || !std::isfinite(slo_ms)) throw ConfigError("slo_ms: must be > 0");
  if (!trace_path) {
    if (rates.empty()) throw ConfigError("rates: at least one rate is required");
    for (double r : rates) {
      if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("rates: every rate must be > 0");
    }
    wrap("workload", [&] { workload.validate(); });
  }
  if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
}

namespace {

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!keys.count(key)) {
      throw ConfigError((where.empty() ? key : where + "." + key) + ": unknown key");
    }
  }
}

template <typename T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  const std::string field = where.empty() ? key : where + "." + key;
  if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw ConfigError(field + ": expected a number");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw ConfigError(field + ": expected an integer");
    if (std::is_unsigned_v<T> && it->is_number_integer() && !it->is_number_unsigned()) {
      throw ConfigError(field + ": must be non-negative");
    }
  }
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

void read_lengths(const json& obj, const std::string& where, LengthDistribution& d) {
  reject_unknown(obj, where, {"mean", "sigma", "min", "max"});
  read(obj, where, "mean", d.mean);
  read(obj, where, "sigma", d.sigma);
  read(obj, where, "min", d.min);
  read(obj, where, "max", d.max);
}

json lengths_json(const LengthDistribution& d) {
  return {{"mean", d.mean}, {"sigma", d.sigma}, {"min", d.min}, {"max", d.max}};
}

std::uint64_t mix_seed(std::uint64_t seed, double rate) {
  // splitmix64 over (seed, rate in milli-jobs/s)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (1 + static_cast<std::uint64_t>(
                                                           std::llround(rate * 1000.0)));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  reject_unknown(root, "",
                 {"model", "cost", "scheduler", "schedulers", "max_batch", "slo_ms", "workload",
                  "trace_path", "rates", "out_dir", "seed", "cache_capacity_bytes"});
  if (auto it = root.find("model"); it != root.end()) {
    reject_unknown(*it, "model",
                   {"num_layers", "hidden_dim", "num_experts", "top_k", "vocab_size", "seed"});
    read(*it, "model", "num_layers", c.model.num_layers);
    read(*it, "model", "hidden_dim", c.model.hidden_dim);
    read(*it, "model", "num_experts", c.model.num_experts);
    read(*it, "model", "top_k", c.model.top_k);
    read(*it, "model", "vocab_size", c.model.vocab_size);
    read(*it, "model", "seed", c.model.seed);
  }
  if (auto it = root.find("cost"); it != root.end()) {
    reject_unknown(*it, "cost",
                   {"attn_base_ms", "attn_per_token_ms", "attn_per_cached_ms", "router_ms",
                    "expert_base_ms", "expert_per_entry_ms", "checkpoint_ms", "restore_ms"});
    read(*it, "cost", "attn_base_ms", c.cost.attn_base_ms);
    read(*it, "cost", "attn_per_token_ms", c.cost.attn_per_token_ms);
    read(*it, "cost", "attn_per_cached_ms", c.cost.attn_per_cached_ms);
    read(*it, "cost", "router_ms", c.cost.router_ms);
    read(*it, "cost", "expert_base_ms", c.cost.expert_base_ms);
    read(*it, "cost", "expert_per_entry_ms", c.cost.expert_per_entry_ms);
    read(*it, "cost", "checkpoint_ms", c.cost.checkpoint_ms);
    read(*it, "cost", "restore_ms", c.cost.restore_ms);
  }
  if (root.contains("scheduler") && root.contains("schedulers")) {
    throw ConfigError("scheduler: give either scheduler or schedulers, not both");
  }
  if (auto it = root.find("scheduler"); it != root.end()) {
    if (!it->is_string()) throw ConfigError("scheduler: expected a string");
    c.schedulers = {it->get<std::string>()};
  }
  if (auto it = root.find("schedulers"); it != root.end()) {
    if (!it->is_array()) throw ConfigError("schedulers: expected an array of names");
    c.schedulers.clear();
    for (const auto& s : *it) {
      if (!s.is_string()) throw ConfigError("schedulers: expected an array of names");
      c.schedulers.push_back(s.get<std::string>());
    }
  }
  read(root, "", "max_batch", c.max_batch);
  read(root, "", "slo_ms", c.slo_ms);
  if (auto it = root.find("workload"); it != root.end()) {
    reject_unknown(*it, "workload",
                   {"ls_fraction", "prompt", "output", "duration_s", "max_jobs"});
    read(*it, "workload", "ls_fraction", c.workload.ls_fraction);
    read(*it, "workload", "duration_s", c.workload.duration_s);
    read(*it, "workload", "max_jobs", c.workload.max_jobs);
    if (auto p = it->find("prompt"); p != it->end()) {
      read_lengths(*p, "workload.prompt", c.workload.prompt);
    }
    if (auto o = it->find("output"); o != it->end()) {
      read_lengths(*o, "workload.output", c.workload.output);
    }
  }
  if (auto it = root.find("trace_path"); it != root.end()) {
    if (!it->is_string()) throw ConfigError("trace_path: expected a string");
    c.trace_path = it->get<std::string>();
  }
  if (auto it = root.find("rates"); it != root.end()) {
    if (!it->is_array()) throw ConfigError("rates: expected an array of numbers");
    c.rates.clear();
    for (const auto& r : *it) {
      if (!r.is_number()) throw ConfigError("rates: expected an array of numbers");
      c.rates.push_back(r.get<double>());
    }
  }
  read(root, "", "out_dir", c.out_dir);
  read(root, "", "seed", c.seed);
  read(root, "", "cache_capacity_bytes", c.cache_capacity_bytes);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const ExperimentConfig& c) {
  json root;
  root["model"] = {{"num_layers", c.model.num_layers}, {"hidden_dim", c.model.hidden_dim},
                   {"num_experts", c.model.num_experts}, {"top_k", c.model.top_k},
                   {"vocab_size", c.model.vocab_size}, {"seed", c.model.seed}};
  root["cost"] = {{"attn_base_ms", c.cost.attn_base_ms},
                  {"attn_per_token_ms", c.cost.attn_per_token_ms},
                  {"attn_per_cached_ms", c.cost.attn_per_cached_ms},
                  {"router_ms", c.cost.router_ms},
                  {"expert_base_ms", c.cost.expert_base_ms},
                  {"expert_per_entry_ms", c.cost.expert_per_entry_ms},
                  {"checkpoint_ms", c.cost.checkpoint_ms},
                  {"restore_ms", c.cost.restore_ms}};
  root["schedulers"] = c.schedulers;
  root["max_batch"] = c.max_batch;
  root["slo_ms"] = c.slo_ms;
  root["workload"] = {{"ls_fraction", c.workload.ls_fraction},
                      {"prompt", lengths_json(c.workload.prompt)},
                      {"output", lengths_json(c.workload.output)},
                      {"duration_s", c.workload.duration_s},
                      {"max_jobs", c.workload.max_jobs}};
  if (c.trace_path) root["trace_path"] = *c.trace_path;
  root["rates"] = c.rates;
  root["out_dir"] = c.out_dir;
  root["seed"] = c.seed;
  root["cache_capacity_bytes"] = c.cache_capacity_bytes;
  return root.dump(2) + "\n";
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunObserver& observer) {
  config.validate();
  struct TraceJob {
    std::string label;
    double rate;
    std::vector<TraceRecord> trace;
  };
  std::vector<TraceJob> jobs;
  if (config.trace_path) {
    jobs.push_back({"trace", 0.0, load_trace(*config.trace_path)});
  } else {
    for (double rate : config.rates) {
      WorkloadSpec spec = config.workload;
      spec.rate_per_s = rate;
      spec.seed = mix_seed(config.seed, rate);
      jobs.push_back({format_double(rate), rate, generate(spec)});
    }
  }

  ExperimentResult result;
  for (const auto& job : jobs) {
    for (const auto& name : config.schedulers) {
      SimulationConfig sc;
      sc.model = config.model;
      sc.cost = config.cost;
      sc.scheduler = parse_scheduler(name);
      sc.max_batch = config.max_batch;
      sc.cache_capacity_bytes = config.cache_capacity_bytes;
      SimulationHooks hooks;
      if (observer) {
        hooks.on_boundary = [&](const SimulationView& v) { observer(name, job.rate, v); };
      }
      RunResult run;
      run.scheduler = name;
      run.rate_label = job.label;
      run.rate = job.rate;
      run.sim = simulate(sc, job.trace, hooks);
      result.runs.push_back(std::move(run));
    }
  }

  auto duration_of = [](const RunResult& r) {
    return r.sim.makespan_ms > 0.0 ? r.sim.makespan_ms : 1.0;
  };
  std::map<std::string, const RunResult*> baseline_by_rate;
  for (auto& run : result.runs) {
    if (run.scheduler == "baseline") {
      run.report = aggregate(run.sim.jobs, config.slo_ms, duration_of(run));
      run.report = aggregate(run.sim.jobs, config.slo_ms, duration_of(run), &run.report);
      baseline_by_rate[run.rate_label] = &run;
    }
  }
  for (auto& run : result.runs) {
    if (run.scheduler == "baseline") continue;
    auto it = baseline_by_rate.find(run.rate_label);
    run.report = aggregate(run.sim.jobs, config.slo_ms, duration_of(run),
                           it == baseline_by_rate.end() ? nullptr : &it->second->report);
  }
  return result;
}

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const fs::path out(config.out_dir);
  fs::create_directories(out);
  std::ofstream summary(out / "summary.csv", std::ios::binary);
  if (!summary) throw InvalidArgument("cannot write " + (out / "summary.csv").string());
  write_summary_header(summary);
  for (const auto& run : result.runs) {
    write_summary_row(summary, run.scheduler, run.rate_label, run.report);
    const fs::path dir = out / run.scheduler / ("rate_" + run.rate_label);
    fs::create_directories(dir);
    std::ofstream jobs(dir / "jobs.csv", std::ios::binary);
    if (!jobs) throw InvalidArgument("cannot write " + (dir / "jobs.csv").string());
    write_jobs_csv(jobs, run.sim.jobs);
  }
}

namespace {

struct TableRow {
  std::string scheduler;
  std::string rate;
  double completion_rate;
  double ls_ttft;
  double ls_slo;
  double ls_turnaround;
  double be_ttft;
  double be_turnaround;
};

std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string render(const std::vector<TableRow>& rows) {
  std::map<std::string, const TableRow*> base;
  for (const auto& r : rows) {
    if (r.scheduler == "baseline") base[r.rate] = &r;
  }
  std::string out;
  char line[512];
  std::snprintf(line, sizeof(line), "%-6s %-14s %12s %8s %12s %9s %12s %12s %9s %9s\n", "rate",
                "scheduler", "LS_TTFT_ms", "LS_SLO", "LS_turn_ms", "LS_gain", "BE_TTFT_ms",
                "BE_turn_ms", "BE_slow", "jobs/s");
  out += line;
  for (const auto& r : rows) {
    auto it = base.find(r.rate);
    const TableRow* b = it == base.end() ? nullptr : it->second;
    const double nan = std::nan("");
    const double gain = b ? b->ls_turnaround / r.ls_turnaround : nan;
    const double slow = b ? r.be_turnaround / b->be_turnaround : nan;
    std::snprintf(line, sizeof(line), "%-6s %-14s %12s %8s %12s %9s %12s %12s %9s %9s\n",
                  r.rate.c_str(), r.scheduler.c_str(), fmt("%.1f", r.ls_ttft).c_str(),
                  fmt("%.3f", r.ls_slo).c_str(), fmt("%.1f", r.ls_turnaround).c_str(),
                  fmt("%.2fx", gain).c_str(), fmt("%.1f", r.be_ttft).c_str(),
                  fmt("%.1f", r.be_turnaround).c_str(), fmt("%.2fx", slow).c_str(),
                  fmt("%.3f", r.completion_rate).c_str());
    out += line;
  }
  if (!base.empty()) {
    out += "\nLS TTFT improvement over baseline:\n";
    for (const auto& r : rows) {
      auto it = base.find(r.rate);
      if (r.scheduler == "baseline" || it == base.end()) continue;
      std::snprintf(line, sizeof(line), "  rate %-6s %-14s %s\n", r.rate.c_str(),
                    r.scheduler.c_str(), fmt("%.1fx", it->second->ls_ttft / r.ls_ttft).c_str());
      out += line;
    }
  }
  return out;
}

TableRow row_of(const std::string& scheduler, const std::string& rate,
                const AggregateReport& a) {
  return {scheduler,          rate,         a.completion_rate,
          a.ls.ttft.mean,     a.ls.slo_attainment, a.ls.turnaround.mean,
          a.be.ttft.mean,     a.be.turnaround.mean};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  if (s.empty() || s == "nan") return std::nan("");
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw InvalidArgument("summary: bad number '" + s + "'");
  }
}

}  // namespace

std::string comparison_table(const ExperimentResult& result) {
  std::vector<TableRow> rows;
  for (const auto& run : result.runs) rows.push_back(row_of(run.scheduler, run.rate_label, run.report));
  return render(rows);
}

std::string compare_summary(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("summary: empty file");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  auto need = [&](const char* name) {
    auto it = col.find(name);
    if (it == col.end()) throw InvalidArgument(std::string("summary: missing column ") + name);
    return it->second;
  };
  const std::size_t c_sched = need("scheduler"), c_rate = need("rate"),
                    c_cr = need("completion_rate"), c_lt = need("ls_ttft_mean_ms"),
                    c_ls = need("ls_slo_attainment"), c_lturn = need("ls_turnaround_mean_ms"),
                    c_bt = need("be_ttft_mean_ms"), c_bturn = need("be_turnaround_mean_ms");
  std::vector<TableRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) throw InvalidArgument("summary: ragged row '" + line + "'");
    rows.push_back({f[c_sched], f[c_rate], to_double(f[c_cr]), to_double(f[c_lt]),
                    to_double(f[c_ls]), to_double(f[c_lturn]), to_double(f[c_bt]),
                    to_double(f[c_bturn])});
  }
  return render(rows);
}

double measure_decode_iteration(const ModelConfig& model_config, const CostModel& cost,
                                std::size_t batch, int context) {
  if (batch < 1 || context < 1) throw InvalidArgument("measure: batch and context must be >= 1");
  const MoeModel model(model_config);
  SequenceTable table;
  UnifiedDynamicCache cache(model_config.num_layers, model_config.hidden_dim, 0);
  VirtualClock clock;
  Engine engine(model, cost, table, cache, clock);
  std::vector<SeqId> ids;
  for (std::size_t i = 0; i < batch; ++i) {
    TraceRecord r;
    r.prompt_len = context;
    r.output_len = 4;
    r.seed = i + 1;
    ids.push_back(table.add(sequence_new(static_cast<SeqId>(i),
                                         prompt_tokens(r, model_config.vocab_size),
                                         Priority::kBestEffort, r.output_len, 0.0)));
  }
  auto run = [&](Phase phase) {
    const IterationOutcome out = engine.execute(
        batch_form(table, ids, phase, batch),
        [](const EngineReport&) { return SchedulerDirective::kContinue; });
    for (const auto& [id, token] : out.tokens) {
      // Keep every member alive; only the cost matters here.
      table.at(id).append_token(token == kEndOfSequence ? 1 : token, clock.now());
    }
  };
  run(Phase::kPrefill);
  const double start = clock.now();
  run(Phase::kDecode);
  return clock.now() - start;
}

CalibrationResult calibrate(const ModelConfig& model, const CostModel& base, double lo_ms,
                            double hi_ms, std::size_t batch, int context) {
  if (!std::isfinite(lo_ms) || !std::isfinite(hi_ms) || !(hi_ms > 0.0) || lo_ms < 0.0 ||
      lo_ms > hi_ms) {
    throw InvalidArgument("calibrate: infeasible target range [" + format_double(lo_ms) + ", " +
                          format_double(hi_ms) + "]");
  }
  model.validate();
  base.validate();
  const double t0 = measure_decode_iteration(model, base, batch, context);
  if (t0 >= lo_ms && t0 <= hi_ms) return {base, t0};
  if (!(t0 > 0.0)) throw InvalidArgument("calibrate: base cost model has no compute cost");
  // Every compute term scales linearly, so one step lands on the midpoint.
  const CostModel cost = base.scaled((lo_ms + hi_ms) / 2.0 / t0);
  const double t1 = measure_decode_iteration(model, cost, batch, context);
  if (t1 < lo_ms || t1 > hi_ms) {
    throw InvalidArgument("calibrate: no parameter set lands in [" + format_double(lo_ms) +
                          ", " + format_double(hi_ms) + "] (got " + format_double(t1) + ")");
  }
  return {cost, t1};
}

}  // namespace moesched
