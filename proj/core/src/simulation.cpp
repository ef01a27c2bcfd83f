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

#include "moesched/simulation.h"

#include <string>

#include "moesched/baseline.h"
#include "moesched/errors.h"

namespace moesched {

SchedulerKind parse_scheduler(std::string_view name) {
  if (name == "qllm") return SchedulerKind::kQllm;
  if (name == "never-preempt") return SchedulerKind::kNeverPreempt;
  if (name == "baseline") return SchedulerKind::kBaseline;
  throw InvalidArgument("unknown scheduler '" + std::string(name) +
                        "' (expected qllm, baseline or never-preempt)");
}

std::string_view to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::kQllm:
      return "qllm";
    case SchedulerKind::kNeverPreempt:
      return "never-preempt";
    case SchedulerKind::kBaseline:
      return "baseline";
  }
  return "?";
}

namespace {

// Creates sequences for every trace record that has arrived by `now`.
class ArrivalFeed {
 public:
  ArrivalFeed(const std::vector<TraceRecord>& trace, SequenceTable& table, int vocab_size)
      : trace_(trace), table_(table), vocab_size_(vocab_size) {}

  template <typename Dispatch>
  void admit_until(double now_ms, Dispatch&& dispatch) {
    while (next_ < trace_.size() && trace_[next_].arrival_ms <= now_ms) {
      const TraceRecord& r = trace_[next_];
      const auto id = static_cast<SeqId>(next_);
      table_.add(sequence_new(id, prompt_tokens(r, vocab_size_), r.priority, r.output_len,
                              r.arrival_ms));
      dispatch(id);
      ++next_;
    }
  }

  bool exhausted() const { return next_ >= trace_.size(); }
  double next_arrival_ms() const { return trace_[next_].arrival_ms; }
  std::size_t admitted() const { return next_; }

 private:
  const std::vector<TraceRecord>& trace_;
  SequenceTable& table_;
  int vocab_size_;
  std::size_t next_ = 0;
};

}  // namespace

SimulationResult simulate(const SimulationConfig& config, const std::vector<TraceRecord>& trace,
                          const SimulationHooks& hooks) {
  config.model.validate();
  config.cost.validate();
  validate_trace(trace);

  const MoeModel model(config.model);
  SimulationResult result;
  result.scheduler = config.scheduler;
  SequenceTable& table = result.table;
  table.reserve(trace.size());
  UnifiedDynamicCache cache(config.model.num_layers, config.model.hidden_dim,
                            config.cache_capacity_bytes);
  VirtualClock clock;
  Engine engine(model, config.cost, table, cache, clock);
  if (hooks.on_boundary) {
    engine.set_boundary_observer([&](const EngineReport& report) {
      hooks.on_boundary(SimulationView{table, cache, report});
    });
  }
  ArrivalFeed feed(trace, table, config.model.vocab_size);
  MetricsRecorder recorder;
  auto stop_requested = [&] { return config.stop_at_ms && clock.now() >= *config.stop_at_ms; };
  bool stopped = false;

  if (config.scheduler == SchedulerKind::kBaseline) {
    BaselineScheduler sched(table, cache, config.max_batch);
    auto admit = [&] {
      feed.admit_until(clock.now(), [&](SeqId id) { sched.dispatch_arrival(id); });
    };
    while (true) {
      admit();
      if (stop_requested()) {
        stopped = true;
        break;
      }
      if (sched.pending().empty() && sched.running().empty()) {
        if (feed.exhausted()) break;
        clock.advance_to(feed.next_arrival_ms());
        continue;
      }
      const BaselineStep step = sched.step(engine, admit);
      for (SeqId id : step.finished) recorder.record(table.at(id));
    }
    result.finished = sched.finished();
  } else {
    Policy policy = hooks.policy ? hooks.policy
                                 : make_policy(config.scheduler == SchedulerKind::kQllm
                                                   ? "qllm"
                                                   : "never-preempt");
    Scheduler sched(table, cache, config.max_batch, std::move(policy));
    auto admit = [&] {
      feed.admit_until(clock.now(), [&](SeqId id) { sched.dispatch_arrival(id); });
    };
    while (true) {
      admit();
      if (stop_requested()) {
        stopped = true;
        break;
      }
      auto batch = sched.get_next_batch();
      if (!batch) {
        if (feed.exhausted()) break;
        clock.advance_to(feed.next_arrival_ms());
        continue;
      }
      IterationOutcome outcome = engine.execute(*batch, [&](const EngineReport& report) {
        admit();
        return sched.on_engine_report(report);
      });
      // Arrivals during the last stage or the checkpoint charge still saw
      // this batch running.
      admit();
      if (outcome.kind == IterationOutcome::Kind::kCompleted) {
        sched.on_completed(outcome);
        for (const auto& [id, token] : outcome.tokens) {
          if (table.at(id).finished()) recorder.record(table.at(id));
        }
      } else {
        sched.on_preempted(outcome);
      }
      sched.check_conservation();
    }
    result.finished = sched.finished();
  }

  result.admitted = feed.admitted();
  if (!stopped && (result.finished != trace.size() || result.admitted != trace.size())) {
    throw InvariantViolation("simulation drained with " +
                             std::to_string(trace.size() - result.finished) +
                             " unfinished jobs");
  }
  result.jobs = recorder.records();
  result.makespan_ms = clock.now();
  result.final_cache_bytes = cache.usage_bytes();
  result.final_cache_recount = cache.recount_bytes();
  result.engine = engine.stats();
  return result;
}

}  // namespace moesched
