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

#include <gtest/gtest.h>

#include <map>

#include "moesched/baseline.h"
#include "moesched/errors.h"
#include "moesched/simulation.h"
#include "testing.h"

namespace moesched {
namespace {

TraceRecord record(double t, Priority p, int prompt, int output, std::uint64_t seed) {
  TraceRecord r;
  r.arrival_ms = t;
  r.priority = p;
  r.prompt_len = prompt;
  r.output_len = output;
  r.seed = seed;
  return r;
}

struct BatchSpan {
  double first_report = -1.0;
  double last_report = 0.0;
};

// Report times of every batch of a run, keyed by batch id.
std::map<BatchId, BatchSpan> batch_spans(const SimulationConfig& cfg,
                                         const std::vector<TraceRecord>& trace) {
  std::map<BatchId, BatchSpan> spans;
  SimulationHooks hooks;
  hooks.on_boundary = [&](const SimulationView& v) {
    auto& s = spans[v.report.batch];
    if (s.first_report < 0) s.first_report = v.report.time_ms;
    s.last_report = v.report.time_ms;
  };
  simulate(cfg, trace, hooks);
  return spans;
}

TEST(Baseline, LsArrivalWaitsForTheWholeIteration) {
  SimulationConfig cfg;
  cfg.scheduler = SchedulerKind::kBaseline;
  std::vector<TraceRecord> trace;
  for (int i = 0; i < 4; ++i) trace.push_back(record(0.0, Priority::kBestEffort, 8, 30, 100 + i));
  // Third batch is a decode iteration; arrive one stage into it.
  const auto spans = batch_spans(cfg, trace);
  ASSERT_GE(spans.size(), 3u);
  const BatchSpan third = std::next(spans.begin(), 2)->second;
  const double arrival = third.first_report;
  trace.push_back(record(arrival, Priority::kLatencySensitive, 4, 2, 999));

  const auto base = simulate(cfg, trace);
  const Sequence& ls = base.table.at(4);
  ASSERT_TRUE(ls.first_scheduled_ms);
  const double delay = *ls.first_scheduled_ms - arrival;
  EXPECT_GE(delay, third.last_report - arrival);
  EXPECT_EQ(base.engine.preemptions, 0u);

  cfg.scheduler = SchedulerKind::kQllm;
  const auto qllm = simulate(cfg, trace);
  const Sequence& ls2 = qllm.table.at(4);
  const double bound = qllm.engine.max_stage_ms + cfg.cost.checkpoint_ms;
  EXPECT_LE(*ls2.first_scheduled_ms - arrival, bound);
  EXPECT_LT(*ls2.first_scheduled_ms - arrival, delay);
  EXPECT_GE(qllm.engine.preemptions, 1u);
}

struct Env {
  Env()
      : model(ModelConfig{}), cache(8, 16, 0),
        engine(model, CostModel{}, table, cache, clock) {}
  SeqId add(int max_new) {
    const auto id = static_cast<SeqId>(table.size());
    std::vector<TokenId> prompt{static_cast<TokenId>(3 + id), 5, 8};
    return table.add(sequence_new(id, prompt, Priority::kBestEffort, max_new, clock.now()));
  }
  MoeModel model;
  SequenceTable table;
  UnifiedDynamicCache cache;
  VirtualClock clock;
  Engine engine;
};

TEST(Baseline, SingleArrivalPrefillsThenDecodes) {
  Env env;
  BaselineScheduler b(env.table, env.cache, 4);
  const SeqId id = env.add(3);
  b.dispatch_arrival(id);
  const auto first = b.step(env.engine, {});
  EXPECT_EQ(first.start_ms, 0.0);
  EXPECT_EQ(first.prefilled, (std::vector<SeqId>{id}));
  if (!env.table.at(id).finished()) {
    EXPECT_EQ(first.decoded, (std::vector<SeqId>{id}));
  }
  while (!b.running().empty()) b.step(env.engine, {});
  EXPECT_TRUE(env.table.at(id).finished());
  EXPECT_EQ(env.table.at(id).generated,
            testing::reference_generate(env.model, env.table.at(id).prompt, 3));
  EXPECT_EQ(env.cache.usage_bytes(), 0u);
  EXPECT_TRUE(b.step(env.engine, {}).idle());
}

TEST(Baseline, FullBatchMakesArrivalsWait) {
  Env env;
  BaselineScheduler b(env.table, env.cache, 2);
  const SeqId a = env.add(40);
  const SeqId c = env.add(40);
  const SeqId late = env.add(5);
  b.dispatch_arrival(a);
  b.dispatch_arrival(c);
  b.dispatch_arrival(late);
  auto s = b.step(env.engine, {});
  EXPECT_EQ(s.prefilled, (std::vector<SeqId>{a, c}));
  while (b.running().size() == 2) {
    EXPECT_EQ(b.pending().size(), 1u);
    EXPECT_FALSE(env.table.at(late).first_scheduled_ms.has_value());
    s = b.step(env.engine, {});
  }
  // a slot freed: the waiting arrival goes next
  s = b.step(env.engine, {});
  EXPECT_EQ(s.prefilled, (std::vector<SeqId>{late}));
}

TEST(Baseline, RejectsNonPrefillArrival) {
  Env env;
  BaselineScheduler b(env.table, env.cache, 2);
  const SeqId id = env.add(4);
  env.table.at(id).append_token(7, 0.0);
  EXPECT_THROW(b.dispatch_arrival(id), InvalidArgument);
  EXPECT_THROW(BaselineScheduler(env.table, env.cache, 0), InvalidArgument);
}

TEST(Baseline, SingleSequenceOutputsMatchQllm) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto trace = testing::random_trace(seed, 1, 24, 16, 5.0);
    SimulationConfig cfg;
    cfg.scheduler = SchedulerKind::kBaseline;
    const auto base = simulate(cfg, trace);
    cfg.scheduler = SchedulerKind::kQllm;
    const auto qllm = simulate(cfg, trace);
    EXPECT_EQ(base.table.at(0).generated, qllm.table.at(0).generated) << "seed " << seed;
  }
}

}  // namespace
}  // namespace moesched
