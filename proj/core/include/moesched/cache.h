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
#include <map>
#include <span>
#include <vector>

#include "moesched/types.h"

namespace moesched {

// Per-sequence KV storage with a byte ledger. Each sequence owns its own
// arrays, so changing batch composition never moves or copies cache content.
class UnifiedDynamicCache {
 public:
  // capacity_bytes == 0 means unlimited.
  UnifiedDynamicCache(int num_layers, int hidden_dim, std::uint64_t capacity_bytes);

  // Creates the store for `seq`. Opening twice is an error.
  SeqId open(SeqId seq);
  bool contains(SeqId seq) const { return stores_.count(seq) != 0; }

  // Throws CapacityExceeded if the append would overflow the ledger.
  void append(SeqId seq, int layer, std::span<const double> key,
              std::span<const double> value);

  std::size_t entries(SeqId seq, int layer) const;
  std::span<const double> keys(SeqId seq, int layer) const;
  std::span<const double> values(SeqId seq, int layer) const;

  // Frees every entry of `seq`; returns the bytes released.
  std::uint64_t evict(SeqId seq);

  std::uint64_t usage_bytes() const { return ledger_bytes_; }
  std::uint64_t capacity_bytes() const { return capacity_bytes_; }
  std::uint64_t entry_bytes() const { return entry_bytes_; }
  std::size_t num_sequences() const { return stores_.size(); }

  // Walks the stored arrays and recomputes the byte total from scratch,
  // independent of the ledger.
  std::uint64_t recount_bytes() const;

 private:
  struct LayerStore {
    std::vector<double> keys;
    std::vector<double> values;
  };
  using Store = std::vector<LayerStore>;

  const Store& store(SeqId seq) const;

  int num_layers_;
  int hidden_dim_;
  std::uint64_t capacity_bytes_;
  std::uint64_t entry_bytes_;
  std::uint64_t ledger_bytes_ = 0;
  std::map<SeqId, Store> stores_;
};

}  // namespace moesched
