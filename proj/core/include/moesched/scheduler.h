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

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "moesched/cache.h"
#include "moesched/engine.h"
#include "moesched/types.h"

namespace moesched {

// Sequences preempted together and sharing one checkpoint cursor.
struct ResumeGroup {
  Cursor cursor;
  std::vector<SeqId> members;
};

// FCFS queue of one (priority, phase) class. Resume groups sit ahead of fresh
// sequences, ordered among themselves by preemption time.
class ClassQueue {
 public:
  struct Taken {
    std::vector<Joiner> groups;
    std::vector<SeqId> fresh;
    std::size_t size() const;
  };

  void push_back(SeqId id) { fresh_.push_back(id); }
  void push_front(SeqId id) { fresh_.push_front(id); }
  void push_group(ResumeGroup group);
  void push_group_front(ResumeGroup group);

  // Removes up to `n` sequences: resume groups first (the last one may be
  // split), then fresh sequences in FIFO order.
  Taken take(std::size_t n);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  const std::deque<ResumeGroup>& groups() const { return groups_; }
  const std::deque<SeqId>& fresh() const { return fresh_; }

 private:
  std::deque<ResumeGroup> groups_;
  std::deque<SeqId> fresh_;
};

struct QueueSet {
  ClassQueue ls_prefill;
  ClassQueue be_prefill;
  ClassQueue ls_decode;
  ClassQueue be_decode;

  ClassQueue& of(Priority priority, Phase phase);
  const ClassQueue& of(Priority priority, Phase phase) const;
};

struct QueueSnapshot {
  std::size_t ls_prefill = 0;
  std::size_t be_prefill = 0;
  std::size_t ls_decode = 0;
  std::size_t be_decode = 0;

  bool ls_waiting() const { return ls_prefill + ls_decode > 0; }
};

QueueSnapshot snapshot_of(const QueueSet& queues);

// A user policy: pure decision over the latest report and the queue state.
using Policy = std::function<SchedulerDirective(const EngineReport&, const QueueSnapshot&)>;

// Preempts iff an LS job waits and the running batch holds no LS member.
SchedulerDirective qllm_policy(const EngineReport& report, const QueueSnapshot& queues);
SchedulerDirective never_preempt_policy(const EngineReport& report,
                                        const QueueSnapshot& queues);

// "qllm" or "never-preempt". Throws InvalidArgument otherwise.
Policy make_policy(std::string_view name);

// Sequences chosen for the next batch. `joiners` are resume groups that
// merge at their checkpoint cursor.
struct BatchPlan {
  Phase phase = Phase::kPrefill;
  bool latency_sensitive_led = false;
  std::vector<SeqId> fresh;
  std::vector<Joiner> joiners;

  std::size_t size() const;
};

// Batch selection (LS decode when it fills a batch, else LS prefill topped up
// with BE prefill, else LS decode topped up with BE decode, else BE decode,
// else BE prefill). Removes the selected sequences from `queues`.
std::optional<BatchPlan> select_batch(QueueSet& queues, std::size_t max_batch);

// Dispatcher + batch engine + closed-loop controller.
class Scheduler {
 public:
  Scheduler(SequenceTable& table, UnifiedDynamicCache& cache,
            std::size_t max_batch, Policy policy);

  // Enqueues a Prefill sequence by priority. Throws InvalidArgument on a
  // duplicate admission or a sequence that is not in Prefill.
  void dispatch_arrival(SeqId id);

  // Applies one output token: finished sequences leave the system (cache
  // evicted), others join their decode queue. Returns true when finished.
  bool route_output(SeqId id, TokenId token, double now_ms);

  // Next batch per the selection logic, or nullopt when all queues are empty.
  std::optional<Batch> get_next_batch();

  SchedulerDirective on_engine_report(const EngineReport& report) const;

  // Puts checkpointed sequences back as resume groups and returns unmerged
  // joiners to the head of their queues.
  void on_preempted(const IterationOutcome& outcome);

  // Marks the running batch as done after its outcome has been applied.
  void on_completed(const IterationOutcome& outcome);

  QueueSnapshot snapshot() const { return snapshot_of(queues_); }
  const QueueSet& queues() const { return queues_; }
  bool running() const { return running_.has_value(); }
  bool running_has_latency_sensitive() const { return running_has_ls_; }
  std::size_t admitted() const { return admitted_; }
  std::size_t finished() const { return finished_; }
  std::size_t max_batch() const { return max_batch_; }

  // Recounts queue and batch membership: every admitted sequence must be in
  // exactly one of {queue, running batch, finished}. Throws
  // InvariantViolation otherwise.
  void check_conservation() const;

 private:
  enum class Where : unsigned char { kNone, kQueued, kRunning, kFinished };

  void place(SeqId id, Where where);
  ClassQueue& queue_for(const Sequence& seq);

  SequenceTable& table_;
  UnifiedDynamicCache& cache_;
  std::size_t max_batch_;
  Policy policy_;
  QueueSet queues_;
  std::vector<Where> where_;
  std::optional<Batch> running_;
  bool running_has_ls_ = false;
  BatchId next_batch_id_ = 1;
  std::size_t admitted_ = 0;
  std::size_t finished_ = 0;
};

}  // namespace moesched
