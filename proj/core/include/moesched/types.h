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

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace moesched {

using SeqId = std::uint32_t;
using TokenId = std::int32_t;
using BatchId = std::uint64_t;

// Reserved token id that terminates generation early.
inline constexpr TokenId kEndOfSequence = 0;

// Total order: kLatencySensitive > kBestEffort.
enum class Priority : std::uint8_t { kBestEffort = 0, kLatencySensitive = 1 };

// Transitions only Prefill -> Decode -> Finished.
enum class Phase : std::uint8_t { kPrefill = 0, kDecode = 1, kFinished = 2 };

// Per layer: Attention -> Router -> Experts -> LayerDone; IterationDone after
// the last layer.
enum class Stage : std::uint8_t {
  kAttention = 0,
  kRouter = 1,
  kExperts = 2,
  kLayerDone = 3,
  kIterationDone = 4,
};

enum class SchedulerDirective : std::uint8_t { kContinue, kPreemptAtNextBoundary };

std::string_view to_string(Priority p);
std::string_view to_string(Phase p);
std::string_view to_string(Stage s);

// Position of a batch (or checkpoint) inside one iteration. `stage` is the
// next stage to execute at `layer`.
struct Cursor {
  int layer = 0;
  Stage stage = Stage::kAttention;

  auto operator<=>(const Cursor&) const = default;
};

inline constexpr Cursor kIterationStart{0, Stage::kAttention};

struct ExpertChoice {
  int expert = 0;
  double weight = 0.0;

  bool operator==(const ExpertChoice&) const = default;
};

// Execution state of one token inside the current iteration. The sequence
// object owns it; a batch only refers to sequences by id.
struct TokenState {
  int position = 0;
  // Input to the layer being processed; after combine, input to the next one.
  std::vector<double> hidden;
  // Attention output of the current layer. Router and experts read it.
  std::vector<double> residual;
  // Top-k experts with normalized weights. Empty before the router ran.
  std::vector<ExpertChoice> routing;
  // Partial expert results, in completion order.
  std::vector<std::pair<int, std::vector<double>>> completed;
  // Routed experts not executed yet, ascending.
  std::vector<int> pending;
  // Layer whose input `hidden` is.
  int hidden_layer = 0;

  bool operator==(const TokenState&) const = default;
};

// Mid-iteration snapshot of a sequence taken at a stage boundary.
struct Checkpoint {
  Cursor cursor;
  std::vector<TokenState> tokens;

  // completed ∪ pending equals routing, disjointly, for every token (only
  // meaningful once the router ran).
  bool partition_holds() const;
};

struct Sequence {
  SeqId id = 0;
  Priority priority = Priority::kBestEffort;
  double arrival_ms = 0.0;
  std::vector<TokenId> prompt;
  int max_new_tokens = 1;
  std::vector<TokenId> generated;
  Phase phase = Phase::kPrefill;
  // Key into the cache; equal to the sequence id once admitted.
  std::optional<SeqId> cache_handle;
  std::optional<Checkpoint> checkpoint;
  std::optional<double> first_token_ms;
  std::optional<double> finish_ms;

  // Virtual time the sequence first entered a running batch (prefill start).
  std::optional<double> first_scheduled_ms;
  // Set by the dispatcher when the engine was idle or running BE-only work at
  // arrival; the preemption latency bound applies to exactly these jobs.
  bool arrived_behind_be_only = false;

  // In-flight state for the current iteration, empty between iterations.
  std::vector<TokenState> inflight;

  bool finished() const { return phase == Phase::kFinished; }
  bool latency_sensitive() const { return priority == Priority::kLatencySensitive; }

  // Tokens that have been fed through the model: the prompt plus every
  // generated token except the latest one.
  int tokens_processed() const;

  // Records an output token at virtual time `now_ms` and advances the phase.
  // Returns true when the sequence finished with this token.
  bool append_token(TokenId token, double now_ms);
};

// Creates a sequence in Prefill. Throws InvalidArgument on an empty prompt or
// max_new_tokens < 1.
Sequence sequence_new(SeqId id, std::vector<TokenId> prompt, Priority priority,
                      int max_new_tokens, double arrival_ms);

// A checkpointed group waiting to merge into a running batch once the batch
// reaches `cursor`.
struct Joiner {
  Cursor cursor;
  std::vector<SeqId> members;
};

// Facade over a set of sequences executed together. All active members share
// `cursor`; joiners merge at their own cursor, which is never behind it.
struct Batch {
  BatchId id = 0;
  std::vector<SeqId> members;
  Phase phase = Phase::kPrefill;
  Cursor cursor;
  std::vector<Joiner> joiners;

  std::size_t size() const;
  std::vector<SeqId> all_members() const;
};

class SequenceTable;

// Validates that `members` can run together and positions the batch at their
// common cursor: the iteration start for fresh sequences, the checkpoint
// cursor for preempted ones.
Batch batch_form(const SequenceTable& table, std::vector<SeqId> members,
                 Phase phase, std::size_t max_batch_size);

struct SequenceProgress {
  SeqId id = 0;
  Priority priority = Priority::kBestEffort;
  int tokens = 0;
  int pending_experts = 0;
};

struct EngineReport {
  BatchId batch = 0;
  Stage stage = Stage::kAttention;  // stage just completed
  int layer = 0;
  int expert = -1;  // set for per-expert drain reports
  double time_ms = 0.0;
  std::vector<SequenceProgress> progress;

  bool has_latency_sensitive() const;
};

// Central owner of all sequences of a simulation. Ids are dense from 0.
class SequenceTable {
 public:
  SeqId add(Sequence seq);
  void reserve(std::size_t n) { seqs_.reserve(n); }
  Sequence& at(SeqId id);
  const Sequence& at(SeqId id) const;
  bool contains(SeqId id) const { return id < seqs_.size(); }
  std::size_t size() const { return seqs_.size(); }
  std::span<const Sequence> all() const { return seqs_; }

 private:
  std::vector<Sequence> seqs_;
};

}  // namespace moesched
