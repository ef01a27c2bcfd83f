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

#include "moesched/engine.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "moesched/errors.h"

namespace moesched {

void VirtualClock::advance(double ms) {
  if (!(ms >= 0.0) || !std::isfinite(ms)) {
    throw InvalidArgument("clock: invalid charge " + std::to_string(ms));
  }
  now_ms_ += ms;
}

void VirtualClock::advance_to(double t_ms) {
  if (t_ms > now_ms_) now_ms_ = t_ms;
}

void CostModel::validate() const {
  for (double v : {attn_base_ms, attn_per_token_ms, attn_per_cached_ms, router_ms,
                   expert_base_ms, expert_per_entry_ms, checkpoint_ms, restore_ms}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("cost model: parameters must be finite and >= 0");
    }
  }
}

double CostModel::attention(std::size_t tokens, std::uint64_t scanned) const {
  if (tokens == 0) return 0.0;
  return attn_base_ms + attn_per_token_ms * static_cast<double>(tokens) +
         attn_per_cached_ms * static_cast<double>(scanned);
}

double CostModel::expert(std::size_t entries) const {
  if (entries == 0) return 0.0;
  return expert_base_ms + expert_per_entry_ms * static_cast<double>(entries);
}

CostModel CostModel::scaled(double factor) const {
  CostModel c = *this;
  c.attn_base_ms *= factor;
  c.attn_per_token_ms *= factor;
  c.attn_per_cached_ms *= factor;
  c.router_ms *= factor;
  c.expert_base_ms *= factor;
  c.expert_per_entry_ms *= factor;
  return c;
}

Engine::Engine(const MoeModel& model, const CostModel& cost, SequenceTable& table,
               UnifiedDynamicCache& cache, VirtualClock& clock)
    : model_(model),
      cost_(cost),
      table_(table),
      cache_(cache),
      clock_(clock),
      queues_(model.config().num_layers, model.config().num_experts) {
  cost_.validate();
}

void Engine::charge(double ms, bool is_stage) {
  clock_.advance(ms);
  stats_.charged_ms += ms;
  if (is_stage) {
    ++stats_.stages;
    stats_.max_stage_ms = std::max(stats_.max_stage_ms, ms);
  }
}

void Engine::begin_iteration(SeqId id) {
  Sequence& seq = table_.at(id);
  if (seq.phase == Phase::kFinished) {
    throw StateCorruption("engine: sequence " + std::to_string(id) + " already finished");
  }
  if (!seq.first_scheduled_ms) seq.first_scheduled_ms = clock_.now();
  seq.inflight.clear();
  if (seq.phase == Phase::kPrefill) {
    if (!cache_.contains(id)) cache_.open(id);
    seq.cache_handle = id;
    seq.inflight.reserve(seq.prompt.size());
    for (std::size_t i = 0; i < seq.prompt.size(); ++i) {
      TokenState t;
      t.position = static_cast<int>(i);
      t.hidden = model_.embed(seq.prompt[i], t.position);
      seq.inflight.push_back(std::move(t));
    }
  } else {
    if (seq.generated.empty()) {
      throw StateCorruption("engine: decode of sequence " + std::to_string(id) +
                            " without a generated token");
    }
    TokenState t;
    t.position = seq.tokens_processed();
    t.hidden = model_.embed(seq.generated.back(), t.position);
    seq.inflight.push_back(std::move(t));
  }
}

void Engine::restore_members(const std::vector<SeqId>& members, const Cursor& cursor) {
  for (SeqId id : members) {
    const Sequence& seq = table_.at(id);
    if (!seq.checkpoint) {
      throw InvalidArgument("restore: sequence " + std::to_string(id) + " has no checkpoint");
    }
    if (seq.checkpoint->cursor != cursor) {
      throw InvalidArgument("restore: checkpoints at mixed positions");
    }
  }
  for (SeqId id : members) {
    Sequence& seq = table_.at(id);
    seq.inflight = std::move(seq.checkpoint->tokens);
    seq.checkpoint.reset();
    if (cursor.stage == Stage::kExperts) queues_.enqueue(id, cursor.layer, seq.inflight);
  }
  ++stats_.restores;
  charge(cost_.restore_ms, false);
}

Batch Engine::restore(const std::vector<SeqId>& members, Phase phase) {
  if (members.empty()) throw InvalidArgument("restore: no checkpoints");
  const Sequence& first = table_.at(members.front());
  if (!first.checkpoint) {
    throw InvalidArgument("restore: sequence " + std::to_string(first.id) +
                          " has no checkpoint");
  }
  const Cursor cursor = first.checkpoint->cursor;
  restore_members(members, cursor);
  Batch batch;
  batch.members = members;
  batch.phase = phase;
  batch.cursor = cursor;
  return batch;
}

void Engine::merge_joiners(std::vector<SeqId>& active, std::vector<Joiner>& waiting,
                           const Cursor& cursor) {
  std::vector<SeqId> merging;
  auto it = waiting.begin();
  while (it != waiting.end()) {
    if (it->cursor < cursor) {
      throw StateCorruption("engine: joiner missed its merge point");
    }
    if (it->cursor == cursor) {
      merging.insert(merging.end(), it->members.begin(), it->members.end());
      it = waiting.erase(it);
    } else {
      ++it;
    }
  }
  if (merging.empty()) return;
  restore_members(merging, cursor);
  active.insert(active.end(), merging.begin(), merging.end());
}

void Engine::run_attention(const std::vector<SeqId>& active, int layer) {
  std::size_t tokens = 0;
  std::uint64_t scanned = 0;
  for (SeqId id : active) {
    Sequence& seq = table_.at(id);
    for (auto& token : seq.inflight) {
      model_.attention(id, layer, token, cache_);
      ++tokens;
      scanned += static_cast<std::uint64_t>(token.position) + 1;
    }
  }
  charge(cost_.attention(tokens, scanned), true);
}

void Engine::run_router(const std::vector<SeqId>& active, int layer) {
  for (SeqId id : active) {
    Sequence& seq = table_.at(id);
    router_stage(model_, seq.inflight, layer);
    queues_.enqueue(id, layer, seq.inflight);
  }
  charge(cost_.router(), true);
}

std::size_t Engine::drain_expert(int expert, int layer) {
  const auto entries = queues_.drain(expert, layer);
  for (const auto& entry : entries) {
    TokenState& token = table_.at(entry.seq).inflight.at(static_cast<std::size_t>(entry.token));
    auto pending = std::find(token.pending.begin(), token.pending.end(), expert);
    if (pending == token.pending.end()) {
      throw InvariantViolation("engine: expert " + std::to_string(expert) +
                               " ran for a token that was not waiting for it");
    }
    token.completed.emplace_back(expert, model_.expert_forward(expert, layer, token.residual));
    token.pending.erase(pending);
  }
  if (!entries.empty()) charge(cost_.expert(entries.size()), true);
  return entries.size();
}

void Engine::finish_layer(const std::vector<SeqId>& active, int layer) {
  if (queues_.layer_size(layer) != 0) {
    throw InvariantViolation("engine: expert queues of layer " + std::to_string(layer) +
                             " not drained");
  }
  for (SeqId id : active) {
    for (auto& token : table_.at(id).inflight) {
      ++stats_.gating_checks;
      if (!token.pending.empty()) ++stats_.gating_violations;
      combine_expert_outputs(token);
    }
  }
}

void Engine::checkpoint(const std::vector<SeqId>& active, const Cursor& cursor) {
  if (cursor.stage == Stage::kExperts) queues_.clear_layer(cursor.layer);
  for (SeqId id : active) {
    Sequence& seq = table_.at(id);
    Checkpoint cp;
    cp.cursor = cursor;
    cp.tokens = std::move(seq.inflight);
    seq.inflight.clear();
    if (!cp.partition_holds()) {
      throw InvariantViolation("checkpoint: completed and pending experts of sequence " +
                               std::to_string(id) + " do not partition the routed set");
    }
    seq.checkpoint = std::move(cp);
  }
  ++stats_.preemptions;
  charge(cost_.checkpoint_ms, false);
}

EngineReport Engine::make_report(BatchId batch, Stage stage, int layer, int expert,
                                 const std::vector<SeqId>& active) const {
  EngineReport r;
  r.batch = batch;
  r.stage = stage;
  r.layer = layer;
  r.expert = expert;
  r.time_ms = clock_.now();
  r.progress.reserve(active.size());
  for (SeqId id : active) {
    const Sequence& seq = table_.at(id);
    SequenceProgress p;
    p.id = id;
    p.priority = seq.priority;
    p.tokens = static_cast<int>(seq.inflight.size());
    for (const auto& t : seq.inflight) p.pending_experts += static_cast<int>(t.pending.size());
    r.progress.push_back(p);
  }
  return r;
}

IterationOutcome Engine::execute(const Batch& batch, const ReportCallback& on_report) {
  IterationOutcome out;
  out.started_ms = clock_.now();
  const int num_layers = model_.config().num_layers;
  const int num_experts = model_.config().num_experts;

  std::vector<SeqId> active = batch.members;
  std::vector<Joiner> waiting = batch.joiners;
  std::stable_sort(waiting.begin(), waiting.end(),
                   [](const Joiner& a, const Joiner& b) { return a.cursor < b.cursor; });
  Cursor cursor = batch.cursor;
  if (active.empty()) {
    if (waiting.empty()) throw InvalidArgument("engine: empty batch");
    cursor = waiting.front().cursor;
  }

  std::vector<SeqId> to_restore;
  for (SeqId id : active) {
    const Sequence& seq = table_.at(id);
    if (seq.phase != batch.phase) {
      throw StateCorruption("engine: sequence " + std::to_string(id) +
                            " does not match the batch phase");
    }
    if (seq.checkpoint) {
      to_restore.push_back(id);
    } else if (seq.inflight.empty()) {
      if (cursor != kIterationStart) {
        throw StateCorruption("engine: fresh sequence " + std::to_string(id) +
                              " in a batch positioned mid-iteration");
      }
      begin_iteration(id);
    }
  }
  if (!to_restore.empty()) restore_members(to_restore, cursor);

  // Everything the batch refers to, for reports and the LS test.
  auto report = [&](Stage stage, int layer, int expert) {
    std::vector<SeqId> everyone = active;
    for (const auto& j : waiting) everyone.insert(everyone.end(), j.members.begin(), j.members.end());
    EngineReport r = make_report(batch.id, stage, layer, expert, everyone);
    ++stats_.reports;
    if (observer_) observer_(r);
    return on_report && on_report(r) == SchedulerDirective::kPreemptAtNextBoundary;
  };
  auto preempt = [&](const Cursor& at) {
    checkpoint(active, at);
    out.kind = IterationOutcome::Kind::kPreempted;
    out.preempted = active;
    out.checkpoint_cursor = at;
    out.unmerged = std::move(waiting);
    out.finished_ms = clock_.now();
    return out;
  };

  while (true) {
    merge_joiners(active, waiting, cursor);
    const int layer = cursor.layer;
    switch (cursor.stage) {
      case Stage::kAttention:
        run_attention(active, layer);
        cursor.stage = Stage::kRouter;
        if (report(Stage::kAttention, layer, -1)) return preempt(cursor);
        break;
      case Stage::kRouter:
        run_router(active, layer);
        cursor.stage = Stage::kExperts;
        if (report(Stage::kRouter, layer, -1)) return preempt(cursor);
        break;
      case Stage::kExperts: {
        int last_busy = -1;
        for (int e = 0; e < num_experts; ++e) {
          if (queues_.size(e, layer) > 0) last_busy = e;
        }
        bool stop = false;
        for (int e = 0; e < num_experts && !stop; ++e) {
          if (drain_expert(e, layer) == 0) continue;
          // Past the final drain of the last layer the next boundary is the
          // end of the iteration, so the iteration simply completes.
          const bool iteration_ends = layer == num_layers - 1 && e == last_busy;
          if (report(Stage::kExperts, layer, e) && !iteration_ends) stop = true;
        }
        if (stop) return preempt(cursor);
        finish_layer(active, layer);
        cursor = layer + 1 == num_layers ? Cursor{num_layers, Stage::kIterationDone}
                                         : Cursor{layer + 1, Stage::kAttention};
        break;
      }
      case Stage::kLayerDone:
        cursor = Cursor{layer + 1, Stage::kAttention};
        break;
      case Stage::kIterationDone: {
        if (!waiting.empty()) throw StateCorruption("engine: joiners left after the iteration");
        for (SeqId id : active) {
          Sequence& seq = table_.at(id);
          const TokenState& last = seq.inflight.back();
          for (int l = 0; l < num_layers; ++l) {
            if (cache_.entries(id, l) != static_cast<std::size_t>(last.position) + 1) {
              throw StateCorruption("engine: cache of sequence " + std::to_string(id) +
                                    " out of step at layer " + std::to_string(l));
            }
          }
          out.tokens.emplace_back(id, model_.emit_token(last.hidden));
          seq.inflight.clear();
        }
        ++stats_.iterations_completed;
        out.kind = IterationOutcome::Kind::kCompleted;
        out.finished_ms = clock_.now();
        return out;
      }
    }
  }
}

double Engine::stage_cost(Stage stage, const std::vector<SeqId>& members, int layer) const {
  switch (stage) {
    case Stage::kAttention: {
      std::size_t tokens = 0;
      std::uint64_t scanned = 0;
      for (SeqId id : members) {
        const Sequence& seq = table_.at(id);
        if (!seq.inflight.empty()) {
          for (const auto& t : seq.inflight) {
            ++tokens;
            scanned += static_cast<std::uint64_t>(t.position) + 1;
          }
        } else if (seq.phase == Phase::kPrefill) {
          const auto p = static_cast<std::uint64_t>(seq.prompt.size());
          tokens += p;
          scanned += p * (p + 1) / 2;
        } else {
          tokens += 1;
          scanned += static_cast<std::uint64_t>(seq.tokens_processed()) + 1;
        }
      }
      return cost_.attention(tokens, scanned);
    }
    case Stage::kRouter:
      return members.empty() ? 0.0 : cost_.router();
    case Stage::kExperts: {
      double total = 0.0;
      for (int e = 0; e < queues_.num_experts(); ++e) total += cost_.expert(queues_.size(e, layer));
      return total;
    }
    case Stage::kLayerDone:
    case Stage::kIterationDone:
      return 0.0;
  }
  return 0.0;
}

}  // namespace moesched
