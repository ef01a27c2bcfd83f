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
#include <vector>

#include "moesched/cache.h"
#include "moesched/model.h"
#include "moesched/types.h"

namespace moesched {

// Virtual time in milliseconds. Never reads wall time.
class VirtualClock {
 public:
  double now() const { return now_ms_; }
  // Throws InvalidArgument on a negative charge.
  void advance(double ms);
  // Moves to `t_ms` if it lies in the future; never goes backwards.
  void advance_to(double t_ms);

 private:
  double now_ms_ = 0.0;
};

// Linear per-stage cost model, in virtual milliseconds. The defaults put a
// 32-sequence decode iteration of a 32-layer model (128-token contexts) at
// roughly 340 ms.
struct CostModel {
  double attn_base_ms = 3.0;
  double attn_per_token_ms = 0.002;
  double attn_per_cached_ms = 0.00001;
  double router_ms = 0.2;
  double expert_base_ms = 0.9;
  double expert_per_entry_ms = 0.0005;
  double checkpoint_ms = 2.0;
  double restore_ms = 2.0;

  // Throws InvalidArgument if any parameter is negative or not finite.
  void validate() const;

  // a0 + a1 * tokens + a2 * cached entries scanned.
  double attention(std::size_t tokens, std::uint64_t scanned) const;
  double router() const { return router_ms; }
  // Zero for an empty queue.
  double expert(std::size_t entries) const;

  // Copy with every compute term multiplied by `factor`; checkpoint and
  // restore charges are kept.
  CostModel scaled(double factor) const;
};

struct EngineStats {
  std::uint64_t reports = 0;
  std::uint64_t stages = 0;
  std::uint64_t iterations_completed = 0;
  std::uint64_t preemptions = 0;
  std::uint64_t restores = 0;
  std::uint64_t gating_checks = 0;
  std::uint64_t gating_violations = 0;
  double max_stage_ms = 0.0;
  double charged_ms = 0.0;
};

// Result of driving one batch.
struct IterationOutcome {
  enum class Kind { kCompleted, kPreempted };
  Kind kind = Kind::kCompleted;
  // kCompleted: one token per member, in member order.
  std::vector<std::pair<SeqId, TokenId>> tokens;
  // kPreempted: checkpointed members (their Sequence::checkpoint is set) and
  // the shared checkpoint cursor.
  std::vector<SeqId> preempted;
  Cursor checkpoint_cursor;
  // Joiners that had not merged yet; returned untouched.
  std::vector<Joiner> unmerged;
  double started_ms = 0.0;
  double finished_ms = 0.0;
};

// Called after every report; the returned directive takes effect at the
// boundary the report describes.
using ReportCallback = std::function<SchedulerDirective(const EngineReport&)>;

// Optional observer invoked at every stage boundary, used for audits.
using BoundaryObserver = std::function<void(const EngineReport&)>;

// Drives batches through layers and stages on the virtual clock, reporting
// after Attention, after Router and after each non-empty expert drain.
class Engine {
 public:
  Engine(const MoeModel& model, const CostModel& cost, SequenceTable& table,
         UnifiedDynamicCache& cache, VirtualClock& clock);

  // Runs `batch` from its cursor until IterationDone or until the callback
  // requests preemption. Fresh members are admitted to the cache here.
  IterationOutcome execute(const Batch& batch, const ReportCallback& on_report);

  // Restores checkpointed sequences into a batch positioned at their common
  // cursor. Pending expert work is re-enqueued when the cursor is inside the
  // Experts stage; completed outputs are kept. Charges one restore.
  // Throws InvalidArgument on mixed cursors or a member without checkpoint.
  Batch restore(const std::vector<SeqId>& members, Phase phase);

  // Cost of `stage` for the given members at their current state; Experts
  // is priced from the current queue contents of `layer`.
  double stage_cost(Stage stage, const std::vector<SeqId>& members, int layer) const;

  void set_boundary_observer(BoundaryObserver observer) { observer_ = std::move(observer); }

  const EngineStats& stats() const { return stats_; }
  const ExpertQueues& expert_queues() const { return queues_; }
  const CostModel& cost_model() const { return cost_; }
  VirtualClock& clock() { return clock_; }

 private:
  void begin_iteration(SeqId id);
  void merge_joiners(std::vector<SeqId>& active, std::vector<Joiner>& waiting,
                     const Cursor& cursor);
  void restore_members(const std::vector<SeqId>& members, const Cursor& cursor);
  void run_attention(const std::vector<SeqId>& active, int layer);
  void run_router(const std::vector<SeqId>& active, int layer);
  std::size_t drain_expert(int expert, int layer);
  void finish_layer(const std::vector<SeqId>& active, int layer);
  void checkpoint(const std::vector<SeqId>& active, const Cursor& cursor);
  void charge(double ms, bool is_stage);
  EngineReport make_report(BatchId batch, Stage stage, int layer, int expert,
                           const std::vector<SeqId>& active) const;

  const MoeModel& model_;
  CostModel cost_;
  SequenceTable& table_;
  UnifiedDynamicCache& cache_;
  VirtualClock& clock_;
  ExpertQueues queues_;
  EngineStats stats_;
  BoundaryObserver observer_;
};

}  // namespace moesched
