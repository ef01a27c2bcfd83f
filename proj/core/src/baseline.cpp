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

#include "moesched/baseline.h"

#include <algorithm>
#include <string>

#include "moesched/errors.h"

namespace moesched {

BaselineScheduler::BaselineScheduler(SequenceTable& table, UnifiedDynamicCache& cache,
                                     std::size_t max_batch)
    : table_(table), cache_(cache), max_batch_(max_batch) {
  if (max_batch_ < 1) throw InvalidArgument("baseline: max batch size must be >= 1");
}

void BaselineScheduler::dispatch_arrival(SeqId id) {
  if (table_.at(id).phase != Phase::kPrefill) {
    throw InvalidArgument("baseline: sequence " + std::to_string(id) + " is not in prefill");
  }
  pending_.push_back(id);
}

bool BaselineScheduler::apply(SeqId id, TokenId token, double now_ms) {
  if (table_.at(id).append_token(token, now_ms)) {
    cache_.evict(id);
    ++finished_;
    return true;
  }
  return false;
}

IterationOutcome BaselineScheduler::run(Engine& engine, Batch batch,
                                        const std::function<void()>& admit) {
  batch.id = next_batch_id_++;
  in_flight_ = true;
  // Reports still flow, but nothing they carry can change the execution.
  IterationOutcome outcome = engine.execute(batch, [&](const EngineReport&) {
    if (admit) admit();
    return SchedulerDirective::kContinue;
  });
  if (admit) admit();
  in_flight_ = false;
  if (outcome.kind != IterationOutcome::Kind::kCompleted) {
    throw InvariantViolation("baseline: iteration did not run to completion");
  }
  return outcome;
}

BaselineStep BaselineScheduler::step(Engine& engine, const std::function<void()>& admit) {
  BaselineStep s;
  s.start_ms = engine.clock().now();

  const std::size_t free_slots = max_batch_ - running_.size();
  if (!pending_.empty() && free_slots > 0) {
    Batch prefill;
    prefill.phase = Phase::kPrefill;
    while (!pending_.empty() && prefill.members.size() < free_slots) {
      prefill.members.push_back(pending_.front());
      pending_.pop_front();
    }
    s.prefilled = prefill.members;
    const IterationOutcome out = run(engine, std::move(prefill), admit);
    for (const auto& [id, token] : out.tokens) {
      if (apply(id, token, out.finished_ms)) {
        s.finished.push_back(id);
      } else {
        running_.push_back(id);
      }
    }
  }

  if (!running_.empty()) {
    Batch decode;
    decode.phase = Phase::kDecode;
    decode.members = running_;
    s.decoded = running_;
    const IterationOutcome out = run(engine, std::move(decode), admit);
    std::vector<SeqId> still_running;
    still_running.reserve(running_.size());
    for (const auto& [id, token] : out.tokens) {
      if (apply(id, token, out.finished_ms)) {
        s.finished.push_back(id);
      } else {
        still_running.push_back(id);
      }
    }
    running_ = std::move(still_running);
  }
  s.end_ms = engine.clock().now();
  return s;
}

}  // namespace moesched
