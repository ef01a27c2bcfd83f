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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moesched/cache.h"
#include "moesched/engine.h"
#include "moesched/metrics.h"
#include "moesched/model.h"
#include "moesched/scheduler.h"
#include "moesched/workload.h"

namespace moesched {

// "qllm" (preemptive, default policy), "never-preempt" (same batch selection,
// no preemption) or "baseline" (FCFS continuous batching).
enum class SchedulerKind { kQllm, kNeverPreempt, kBaseline };

SchedulerKind parse_scheduler(std::string_view name);
std::string_view to_string(SchedulerKind kind);

struct SimulationConfig {
  ModelConfig model;
  CostModel cost;
  SchedulerKind scheduler = SchedulerKind::kQllm;
  std::size_t max_batch = 32;
  // 0 = unlimited.
  std::uint64_t cache_capacity_bytes = 0;
  // Stop at the first batch boundary past this virtual time instead of
  // draining every job.
  std::optional<double> stop_at_ms;
};

// State visible to boundary observers.
struct SimulationView {
  const SequenceTable& table;
  const UnifiedDynamicCache& cache;
  const EngineReport& report;
};

struct SimulationHooks {
  // Replaces the policy of the qllm/never-preempt schedulers.
  Policy policy;
  std::function<void(const SimulationView&)> on_boundary;
};

struct SimulationResult {
  SchedulerKind scheduler = SchedulerKind::kQllm;
  SequenceTable table;
  std::vector<JobRecord> jobs;  // in finish order
  double makespan_ms = 0.0;
  std::size_t admitted = 0;
  std::size_t finished = 0;
  std::uint64_t final_cache_bytes = 0;
  std::uint64_t final_cache_recount = 0;
  EngineStats engine;
};

// Replays `trace` against one scheduler on a fresh model, cache and clock.
// Sequence ids follow trace order.
SimulationResult simulate(const SimulationConfig& config,
                          const std::vector<TraceRecord>& trace,
                          const SimulationHooks& hooks = {});

}  // namespace moesched
