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
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "moesched/types.h"

namespace moesched {

// Lognormal length distribution parameterized by its mean and the sigma of
// the underlying normal, rounded and clamped to [min, max].
struct LengthDistribution {
  double mean = 180.0;
  double sigma = 0.8;
  int min = 4;
  int max = 2048;
};

struct WorkloadSpec {
  double rate_per_s = 1.0;
  double ls_fraction = 0.20;
  LengthDistribution prompt{180.0, 0.8, 4, 2048};
  LengthDistribution output{220.0, 0.9, 1, 512};
  double duration_s = 600.0;
  // Stop after this many arrivals; 0 = no cap, only duration applies.
  std::size_t max_jobs = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TraceRecord {
  double arrival_ms = 0.0;
  Priority priority = Priority::kBestEffort;
  int prompt_len = 1;
  int output_len = 1;
  // Seeds the prompt token ids.
  std::uint64_t seed = 0;

  bool operator==(const TraceRecord&) const = default;
};

// Poisson arrivals with i.i.d. LS tagging and lognormal lengths. Fully
// determined by spec.seed.
std::vector<TraceRecord> generate(const WorkloadSpec& spec);

// Prompt token ids in [1, vocab_size) derived from record.seed.
std::vector<TokenId> prompt_tokens(const TraceRecord& record, int vocab_size);

// Trace file: one record per line,
//   arrival_ms,priority,prompt_len,output_len,seed
// with priority "LS" or "BE". Blank lines and lines starting with '#' are
// ignored. Arrival times use the shortest round-trip decimal form.
void write_trace(std::ostream& out, const std::vector<TraceRecord>& records);
std::vector<TraceRecord> read_trace(std::istream& in);
void save_trace(const std::vector<TraceRecord>& records, const std::filesystem::path& path);
std::vector<TraceRecord> load_trace(const std::filesystem::path& path);

// Throws ParseError (with the 1-based record index as line) if arrivals are
// out of order or a length is below 1.
void validate_trace(const std::vector<TraceRecord>& records);

}  // namespace moesched
