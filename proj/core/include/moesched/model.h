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
#include <deque>
#include <span>
#include <unordered_set>
#include <vector>

#include "moesched/types.h"

namespace moesched {

class UnifiedDynamicCache;

struct ModelConfig {
  int num_layers = 8;
  int hidden_dim = 16;
  int num_experts = 8;
  int top_k = 2;
  int vocab_size = 256;
  std::uint64_t seed = 1;

  static constexpr int kMaxLayers = 32;

  // Throws InvalidArgument when a dimension is out of range.
  void validate() const;

  // Ledger size of one KV entry (one token, one layer): key + value doubles.
  std::uint64_t kv_entry_bytes() const {
    return 2ULL * static_cast<std::uint64_t>(hidden_dim) * sizeof(double);
  }
};

// Toy MoE transformer with parameters drawn from `seed`. Every method is a
// pure function of its inputs and the parameters; all reductions run in a
// fixed order so results replay bit-identically.
class MoeModel {
 public:
  explicit MoeModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Layer-0 input for `token` at `position`: embedding plus sinusoidal
  // position signal.
  std::vector<double> embed(TokenId token, int position) const;

  // Appends the token's K/V at `layer` to the sequence's cache store and
  // writes the attention output into token.residual. The token attends to
  // every cached entry including its own.
  // Throws StateCorruption if the store does not hold exactly
  // token.position entries at this layer.
  void attention(SeqId seq, int layer, TokenState& token,
                 UnifiedDynamicCache& cache) const;

  // Top-k experts by router score, ties to the lower expert id, weights are
  // the softmax over the selected scores.
  std::vector<ExpertChoice> route(std::span<const double> hidden, int layer) const;

  // tanh(A_e x + b_e).
  std::vector<double> expert_forward(int expert, int layer,
                                     std::span<const double> input) const;

  // Output token: argmax of (W_out h + b_out), ties to the lowest id.
  TokenId emit_token(std::span<const double> hidden) const;

  // W_out h + b_out.
  std::vector<double> logits(std::span<const double> hidden) const;
  // Raw router scores, exposed for tests and tooling.
  std::vector<double> router_scores(std::span<const double> hidden, int layer) const;

 private:
  struct LayerParams {
    std::vector<double> w_key;     // d x d
    std::vector<double> w_value;   // d x d
    std::vector<double> w_router;  // E x d
    std::vector<double> expert_w;  // E x d x d
    std::vector<double> expert_b;  // E x d
  };

  ModelConfig config_;
  std::vector<double> embedding_;  // V x d
  std::vector<double> out_w_;      // V x d
  std::vector<double> out_b_;      // V
  std::vector<LayerParams> layers_;
};

// Top-k indices of `scores`, ties to the lower index; weights are the softmax
// over the selected scores. Throws InvalidArgument unless 1 <= k <= size.
std::vector<ExpertChoice> select_top_k(std::span<const double> scores, int k);

// Index of the largest value, ties to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

// Routes every token of `state` (router output written into token.routing)
// and marks all selected experts pending.
void router_stage(const MoeModel& model, std::span<TokenState> tokens, int layer);

// hidden = residual + sum_e weight_e * output_e, summed in routing order.
// Throws PartialTokenError while any routed expert is still pending.
void combine_expert_outputs(TokenState& token);

struct ExpertQueueEntry {
  SeqId seq = 0;
  int token = 0;
  int layer = 0;
  int expert = 0;
  double weight = 0.0;
};

// FIFO per (expert, layer).
class ExpertQueues {
 public:
  ExpertQueues(int num_layers, int num_experts);

  // Appends one entry per routed expert that is still pending for each
  // token. Returns the number of entries added.
  // Throws InvariantViolation on a duplicate (seq, token, layer, expert).
  std::size_t enqueue(SeqId seq, int layer, std::span<const TokenState> tokens);

  // Removes and returns the whole queue of (expert, layer) in FIFO order.
  std::vector<ExpertQueueEntry> drain(int expert, int layer);

  // Drops every queued entry of `layer`, e.g. when a batch is checkpointed
  // between experts. Returns the number dropped.
  std::size_t clear_layer(int layer);

  std::size_t size(int expert, int layer) const;
  std::size_t layer_size(int layer) const;
  std::size_t total() const { return keys_.size(); }
  int num_experts() const { return num_experts_; }

 private:
  struct Key {
    SeqId seq;
    int token;
    int layer;
    int expert;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };

  std::size_t index(int expert, int layer) const;
  std::deque<ExpertQueueEntry>& queue(int expert, int layer);

  int num_layers_;
  int num_experts_;
  std::vector<std::deque<ExpertQueueEntry>> queues_;
  std::unordered_set<Key, KeyHash> keys_;
};

}  // namespace moesched
