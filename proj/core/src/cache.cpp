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

#include "moesched/cache.h"

#include <string>

#include "moesched/errors.h"

namespace moesched {

UnifiedDynamicCache::UnifiedDynamicCache(int num_layers, int hidden_dim,
                                         std::uint64_t capacity_bytes)
    : num_layers_(num_layers),
      hidden_dim_(hidden_dim),
      capacity_bytes_(capacity_bytes),
      entry_bytes_(2ULL * static_cast<std::uint64_t>(hidden_dim) * sizeof(double)) {
  if (num_layers < 1 || hidden_dim < 1) throw InvalidArgument("cache: bad dimensions");
}

SeqId UnifiedDynamicCache::open(SeqId seq) {
  auto [it, inserted] = stores_.try_emplace(seq, Store(static_cast<std::size_t>(num_layers_)));
  if (!inserted) throw InvalidArgument("cache: sequence " + std::to_string(seq) + " already open");
  return seq;
}

const UnifiedDynamicCache::Store& UnifiedDynamicCache::store(SeqId seq) const {
  auto it = stores_.find(seq);
  if (it == stores_.end()) {
    throw StateCorruption("cache: no store for sequence " + std::to_string(seq));
  }
  return it->second;
}

void UnifiedDynamicCache::append(SeqId seq, int layer, std::span<const double> key,
                                 std::span<const double> value) {
  auto it = stores_.find(seq);
  if (it == stores_.end()) {
    throw StateCorruption("cache: append to unknown sequence " + std::to_string(seq));
  }
  if (layer < 0 || layer >= num_layers_) throw InvalidArgument("cache: layer out of range");
  const auto d = static_cast<std::size_t>(hidden_dim_);
  if (key.size() != d || value.size() != d) throw InvalidArgument("cache: bad vector size");
  if (capacity_bytes_ != 0 && ledger_bytes_ + entry_bytes_ > capacity_bytes_) {
    throw CapacityExceeded("cache: capacity of " + std::to_string(capacity_bytes_) +
                           " bytes exceeded by sequence " + std::to_string(seq));
  }
  auto& ls = it->second[static_cast<std::size_t>(layer)];
  ls.keys.insert(ls.keys.end(), key.begin(), key.end());
  ls.values.insert(ls.values.end(), value.begin(), value.end());
  ledger_bytes_ += entry_bytes_;
}

std::size_t UnifiedDynamicCache::entries(SeqId seq, int layer) const {
  return store(seq).at(static_cast<std::size_t>(layer)).keys.size() /
         static_cast<std::size_t>(hidden_dim_);
}

std::span<const double> UnifiedDynamicCache::keys(SeqId seq, int layer) const {
  return store(seq).at(static_cast<std::size_t>(layer)).keys;
}

std::span<const double> UnifiedDynamicCache::values(SeqId seq, int layer) const {
  return store(seq).at(static_cast<std::size_t>(layer)).values;
}

std::uint64_t UnifiedDynamicCache::evict(SeqId seq) {
  auto it = stores_.find(seq);
  if (it == stores_.end()) return 0;
  std::uint64_t freed = 0;
  for (const auto& ls : it->second) {
    freed += ls.keys.size() / static_cast<std::size_t>(hidden_dim_) * entry_bytes_;
  }
  stores_.erase(it);
  ledger_bytes_ -= freed;
  return freed;
}

std::uint64_t UnifiedDynamicCache::recount_bytes() const {
  std::uint64_t doubles = 0;
  for (const auto& [seq, st] : stores_) {
    for (const auto& ls : st) doubles += ls.keys.size() + ls.values.size();
  }
  return doubles * sizeof(double);
}

}  // namespace moesched
