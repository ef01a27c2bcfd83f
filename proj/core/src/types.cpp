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

#include "moesched/types.h"

#include <algorithm>
#include <string>

#include "moesched/errors.h"

namespace moesched {

std::string_view to_string(Priority p) {
  return p == Priority::kLatencySensitive ? "LS" : "BE";
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kPrefill:
      return "prefill";
    case Phase::kDecode:
      return "decode";
    case Phase::kFinished:
      return "finished";
  }
  return "?";
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kAttention:
      return "attention";
    case Stage::kRouter:
      return "router";
    case Stage::kExperts:
      return "experts";
    case Stage::kLayerDone:
      return "layer-done";
    case Stage::kIterationDone:
      return "iteration-done";
  }
  return "?";
}

bool Checkpoint::partition_holds() const {
  for (const auto& token : tokens) {
    if (token.routing.empty()) {
      if (!token.completed.empty() || !token.pending.empty()) return false;
      continue;
    }
    std::vector<int> seen;
    for (const auto& [expert, _] : token.completed) seen.push_back(expert);
    seen.insert(seen.end(), token.pending.begin(), token.pending.end());
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) return false;
    std::vector<int> routed;
    for (const auto& choice : token.routing) routed.push_back(choice.expert);
    std::sort(routed.begin(), routed.end());
    if (seen != routed) return false;
  }
  return true;
}

int Sequence::tokens_processed() const {
  const int generated_count = static_cast<int>(generated.size());
  return static_cast<int>(prompt.size()) + std::max(0, generated_count - 1);
}

bool Sequence::append_token(TokenId token, double now_ms) {
  if (phase == Phase::kFinished) {
    throw InvariantViolation("sequence " + std::to_string(id) +
                             " produced a token after finishing");
  }
  if (static_cast<int>(generated.size()) >= max_new_tokens) {
    throw InvariantViolation("sequence " + std::to_string(id) +
                             " exceeded max_new_tokens");
  }
  generated.push_back(token);
  if (!first_token_ms) first_token_ms = now_ms;
  if (token == kEndOfSequence || static_cast<int>(generated.size()) == max_new_tokens) {
    phase = Phase::kFinished;
    finish_ms = now_ms;
    return true;
  }
  phase = Phase::kDecode;
  return false;
}

Sequence sequence_new(SeqId id, std::vector<TokenId> prompt, Priority priority,
                      int max_new_tokens, double arrival_ms) {
  if (prompt.empty()) throw InvalidArgument("sequence_new: empty prompt");
  if (max_new_tokens < 1) throw InvalidArgument("sequence_new: max_new_tokens must be >= 1");
  Sequence seq;
  seq.id = id;
  seq.priority = priority;
  seq.arrival_ms = arrival_ms;
  seq.prompt = std::move(prompt);
  seq.max_new_tokens = max_new_tokens;
  return seq;
}

std::size_t Batch::size() const {
  std::size_t n = members.size();
  for (const auto& j : joiners) n += j.members.size();
  return n;
}

std::vector<SeqId> Batch::all_members() const {
  std::vector<SeqId> out = members;
  for (const auto& j : joiners) out.insert(out.end(), j.members.begin(), j.members.end());
  return out;
}

Batch batch_form(const SequenceTable& table, std::vector<SeqId> members,
                 Phase phase, std::size_t max_batch_size) {
  if (members.empty()) throw InvalidArgument("batch_form: no members");
  if (members.size() > max_batch_size) {
    throw InvalidArgument("batch_form: " + std::to_string(members.size()) +
                          " members exceed the maximum batch size " +
                          std::to_string(max_batch_size));
  }
  if (phase == Phase::kFinished) throw InvalidArgument("batch_form: finished phase");
  std::optional<Cursor> cursor;
  for (SeqId id : members) {
    const Sequence& seq = table.at(id);
    if (seq.phase != phase) {
      throw InvalidArgument("batch_form: sequence " + std::to_string(id) + " is in " +
                            std::string(to_string(seq.phase)) + ", batch is " +
                            std::string(to_string(phase)));
    }
    const Cursor at = seq.checkpoint ? seq.checkpoint->cursor : kIterationStart;
    if (cursor && *cursor != at) {
      throw InvalidArgument("batch_form: members are not stage-aligned");
    }
    cursor = at;
  }
  Batch batch;
  batch.members = std::move(members);
  batch.phase = phase;
  batch.cursor = *cursor;
  return batch;
}

bool EngineReport::has_latency_sensitive() const {
  return std::any_of(progress.begin(), progress.end(), [](const SequenceProgress& p) {
    return p.priority == Priority::kLatencySensitive;
  });
}

SeqId SequenceTable::add(Sequence seq) {
  if (seq.id != seqs_.size()) {
    throw InvalidArgument("sequence ids must be dense and increasing; expected " +
                          std::to_string(seqs_.size()) + ", got " +
                          std::to_string(seq.id));
  }
  seqs_.push_back(std::move(seq));
  return seqs_.back().id;
}

Sequence& SequenceTable::at(SeqId id) {
  if (id >= seqs_.size()) throw InvalidArgument("unknown sequence " + std::to_string(id));
  return seqs_[id];
}

const Sequence& SequenceTable::at(SeqId id) const {
  if (id >= seqs_.size()) throw InvalidArgument("unknown sequence " + std::to_string(id));
  return seqs_[id];
}

}  // namespace moesched
