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

#include "moesched/scheduler.h"

#include <algorithm>
#include <string>

#include "moesched/errors.h"

namespace moesched {

std::size_t ClassQueue::Taken::size() const {
  std::size_t n = fresh.size();
  for (const auto& g : groups) n += g.members.size();
  return n;
}

void ClassQueue::push_group(ResumeGroup group) {
  if (!group.members.empty()) groups_.push_back(std::move(group));
}

void ClassQueue::push_group_front(ResumeGroup group) {
  if (!group.members.empty()) groups_.push_front(std::move(group));
}

ClassQueue::Taken ClassQueue::take(std::size_t n) {
  Taken out;
  while (n > 0 && !groups_.empty()) {
    ResumeGroup& head = groups_.front();
    if (head.members.size() <= n) {
      n -= head.members.size();
      out.groups.push_back({head.cursor, std::move(head.members)});
      groups_.pop_front();
    } else {
      const auto split = head.members.begin() + static_cast<std::ptrdiff_t>(n);
      out.groups.push_back({head.cursor, std::vector<SeqId>(head.members.begin(), split)});
      head.members.erase(head.members.begin(), split);
      n = 0;
    }
  }
  while (n > 0 && !fresh_.empty()) {
    out.fresh.push_back(fresh_.front());
    fresh_.pop_front();
    --n;
  }
  return out;
}

std::size_t ClassQueue::size() const {
  std::size_t n = fresh_.size();
  for (const auto& g : groups_) n += g.members.size();
  return n;
}

ClassQueue& QueueSet::of(Priority priority, Phase phase) {
  const bool ls = priority == Priority::kLatencySensitive;
  if (phase == Phase::kPrefill) return ls ? ls_prefill : be_prefill;
  if (phase == Phase::kDecode) return ls ? ls_decode : be_decode;
  throw InvalidArgument("no queue for finished sequences");
}

const ClassQueue& QueueSet::of(Priority priority, Phase phase) const {
  return const_cast<QueueSet&>(*this).of(priority, phase);
}

QueueSnapshot snapshot_of(const QueueSet& q) {
  return {q.ls_prefill.size(), q.be_prefill.size(), q.ls_decode.size(), q.be_decode.size()};
}

SchedulerDirective qllm_policy(const EngineReport& report, const QueueSnapshot& queues) {
  if (queues.ls_waiting() && !report.has_latency_sensitive()) {
    return SchedulerDirective::kPreemptAtNextBoundary;
  }
  return SchedulerDirective::kContinue;
}

SchedulerDirective never_preempt_policy(const EngineReport&, const QueueSnapshot&) {
  return SchedulerDirective::kContinue;
}

Policy make_policy(std::string_view name) {
  if (name == "qllm") return qllm_policy;
  if (name == "never-preempt") return never_preempt_policy;
  throw InvalidArgument("unknown policy '" + std::string(name) + "'");
}

std::size_t BatchPlan::size() const {
  std::size_t n = fresh.size();
  for (const auto& j : joiners) n += j.members.size();
  return n;
}

namespace {

void absorb(BatchPlan& plan, ClassQueue::Taken taken) {
  plan.fresh.insert(plan.fresh.end(), taken.fresh.begin(), taken.fresh.end());
  for (auto& g : taken.groups) plan.joiners.push_back(std::move(g));
}

BatchPlan take_batch(ClassQueue& queue, std::size_t max_batch, Phase phase, bool ls) {
  BatchPlan plan;
  plan.phase = phase;
  plan.latency_sensitive_led = ls;
  absorb(plan, queue.take(max_batch));
  return plan;
}

}  // namespace

std::optional<BatchPlan> select_batch(QueueSet& q, std::size_t max_batch) {
  if (q.ls_decode.size() >= max_batch) {
    return take_batch(q.ls_decode, max_batch, Phase::kDecode, true);
  }
  if (!q.ls_prefill.empty()) {
    BatchPlan plan = take_batch(q.ls_prefill, max_batch, Phase::kPrefill, true);
    if (plan.size() < max_batch) absorb(plan, q.be_prefill.take(max_batch - plan.size()));
    return plan;
  }
  if (!q.ls_decode.empty()) {
    BatchPlan plan = take_batch(q.ls_decode, max_batch, Phase::kDecode, true);
    if (plan.size() < max_batch) absorb(plan, q.be_decode.take(max_batch - plan.size()));
    return plan;
  }
  if (!q.be_decode.empty()) return take_batch(q.be_decode, max_batch, Phase::kDecode, false);
  if (!q.be_prefill.empty()) return take_batch(q.be_prefill, max_batch, Phase::kPrefill, false);
  return std::nullopt;
}

Scheduler::Scheduler(SequenceTable& table, UnifiedDynamicCache& cache,
                     std::size_t max_batch, Policy policy)
    : table_(table), cache_(cache), max_batch_(max_batch), policy_(std::move(policy)) {
  if (max_batch_ < 1) throw InvalidArgument("scheduler: max batch size must be >= 1");
  if (!policy_) throw InvalidArgument("scheduler: no policy");
}

void Scheduler::place(SeqId id, Where where) {
  if (where_.size() <= id) where_.resize(static_cast<std::size_t>(id) + 1, Where::kNone);
  where_[id] = where;
}

ClassQueue& Scheduler::queue_for(const Sequence& seq) {
  return queues_.of(seq.priority, seq.phase);
}

void Scheduler::dispatch_arrival(SeqId id) {
  Sequence& seq = table_.at(id);
  if (id < where_.size() && where_[id] != Where::kNone) {
    throw InvalidArgument("dispatch: sequence " + std::to_string(id) + " admitted twice");
  }
  if (seq.phase != Phase::kPrefill) {
    throw InvalidArgument("dispatch: sequence " + std::to_string(id) + " is not in prefill");
  }
  seq.arrived_behind_be_only = !running_ || !running_has_ls_;
  queue_for(seq).push_back(id);
  place(id, Where::kQueued);
  ++admitted_;
}

bool Scheduler::route_output(SeqId id, TokenId token, double now_ms) {
  Sequence& seq = table_.at(id);
  if (seq.append_token(token, now_ms)) {
    cache_.evict(id);
    place(id, Where::kFinished);
    ++finished_;
    return true;
  }
  queue_for(seq).push_back(id);
  place(id, Where::kQueued);
  return false;
}

std::optional<Batch> Scheduler::get_next_batch() {
  if (running_) throw InvariantViolation("scheduler: a batch is already running");
  auto plan = select_batch(queues_, max_batch_);
  if (!plan) return std::nullopt;
  Batch batch;
  batch.id = next_batch_id_++;
  batch.phase = plan->phase;
  batch.members = std::move(plan->fresh);
  batch.joiners = std::move(plan->joiners);
  batch.cursor = kIterationStart;
  if (batch.members.empty()) {
    batch.cursor = std::min_element(batch.joiners.begin(), batch.joiners.end(),
                                    [](const Joiner& a, const Joiner& b) {
                                      return a.cursor < b.cursor;
                                    })
                       ->cursor;
  }
  running_has_ls_ = false;
  for (SeqId id : batch.all_members()) {
    place(id, Where::kRunning);
    running_has_ls_ = running_has_ls_ || table_.at(id).latency_sensitive();
  }
  running_ = batch;
  return batch;
}

SchedulerDirective Scheduler::on_engine_report(const EngineReport& report) const {
  return policy_(report, snapshot());
}

void Scheduler::on_completed(const IterationOutcome& outcome) {
  auto tokens = outcome.tokens;
  std::sort(tokens.begin(), tokens.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [id, token] : tokens) route_output(id, token, outcome.finished_ms);
  running_.reset();
  running_has_ls_ = false;
}

void Scheduler::on_preempted(const IterationOutcome& outcome) {
  // Groups that never merged are older than the one just preempted.
  for (auto it = outcome.unmerged.rbegin(); it != outcome.unmerged.rend(); ++it) {
    if (it->members.empty()) continue;
    const Sequence& head = table_.at(it->members.front());
    queue_for(head).push_group_front({it->cursor, it->members});
    for (SeqId id : it->members) place(id, Where::kQueued);
  }
  // Split by class, preserving member order.
  std::vector<std::pair<ClassQueue*, std::vector<SeqId>>> by_class;
  for (SeqId id : outcome.preempted) {
    ClassQueue* q = &queue_for(table_.at(id));
    auto it = std::find_if(by_class.begin(), by_class.end(),
                           [&](const auto& e) { return e.first == q; });
    if (it == by_class.end()) {
      by_class.emplace_back(q, std::vector<SeqId>{});
      it = std::prev(by_class.end());
    }
    it->second.push_back(id);
    place(id, Where::kQueued);
  }
  for (auto& [queue, members] : by_class) {
    if (outcome.checkpoint_cursor == kIterationStart) {
      // Nothing was computed: drop the checkpoint and requeue at the head.
      for (auto it = members.rbegin(); it != members.rend(); ++it) {
        Sequence& seq = table_.at(*it);
        seq.checkpoint.reset();
        seq.inflight.clear();
        queue->push_front(*it);
      }
    } else {
      queue->push_group({outcome.checkpoint_cursor, std::move(members)});
    }
  }
  running_.reset();
  running_has_ls_ = false;
}

void Scheduler::check_conservation() const {
  std::vector<unsigned char> seen(where_.size(), 0);
  auto visit = [&](SeqId id, Where expected) {
    if (id >= where_.size() || where_[id] != expected || seen[id]) {
      throw InvariantViolation("conservation: sequence " + std::to_string(id) +
                               " is misplaced or held twice");
    }
    seen[id] = 1;
  };
  for (const ClassQueue* q :
       {&queues_.ls_prefill, &queues_.be_prefill, &queues_.ls_decode, &queues_.be_decode}) {
    for (const auto& g : q->groups()) {
      for (SeqId id : g.members) visit(id, Where::kQueued);
    }
    for (SeqId id : q->fresh()) visit(id, Where::kQueued);
  }
  if (running_) {
    for (SeqId id : running_->all_members()) visit(id, Where::kRunning);
  }
  std::size_t finished = 0;
  std::size_t admitted = 0;
  for (std::size_t id = 0; id < where_.size(); ++id) {
    if (where_[id] == Where::kNone) continue;
    ++admitted;
    if (where_[id] == Where::kFinished) {
      ++finished;
      if (!table_.at(static_cast<SeqId>(id)).finished()) {
        throw InvariantViolation("conservation: sequence " + std::to_string(id) +
                                 " marked finished while still active");
      }
      continue;
    }
    if (!seen[id]) {
      throw InvariantViolation("conservation: sequence " + std::to_string(id) + " was lost");
    }
  }
  if (finished != finished_ || admitted != admitted_) {
    throw InvariantViolation("conservation: counters disagree with membership");
  }
}

}  // namespace moesched
