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

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "moesched/cache.h"
#include "moesched/engine.h"
#include "moesched/types.h"

namespace moesched {

// What one boundary step of the baseline executed.
struct BaselineStep {
  std::vector<SeqId> prefilled;
  std::vector<SeqId> decoded;
  std::vector<SeqId> finished;
  double start_ms = 0.0;
  double end_ms = 0.0;
  bool idle() const { return prefilled.empty() && decoded.empty(); }
};

// Priority-oblivious iteration-level FCFS continuous batching. Control only
// returns at iteration boundaries.
class BaselineScheduler {
 public:
  BaselineScheduler(SequenceTable& table, UnifiedDynamicCache& cache,
                    std::size_t max_batch);

  void dispatch_arrival(SeqId id);

  // One boundary: drops finished sequences, prefills pending arrivals into
  // the free slots (FCFS), then runs one full decode iteration over the
  // running set. `admit` is invoked whenever the clock moves so arrivals
  // that happened meanwhile get dispatched.
  BaselineStep step(Engine& engine, const std::function<void()>& admit);

  const std::deque<SeqId>& pending() const { return pending_; }
  const std::vector<SeqId>& running() const { return running_; }
  bool busy() const { return in_flight_; }
  std::size_t finished() const { return finished_; }

 private:
  IterationOutcome run(Engine& engine, Batch batch, const std::function<void()>& admit);
  bool apply(SeqId id, TokenId token, double now_ms);

  SequenceTable& table_;
  UnifiedDynamicCache& cache_;
  std::size_t max_batch_;
  std::deque<SeqId> pending_;
  std::vector<SeqId> running_;
  bool in_flight_ = false;
  BatchId next_batch_id_ = 1;
  std::size_t finished_ = 0;
};

}  // namespace moesched
