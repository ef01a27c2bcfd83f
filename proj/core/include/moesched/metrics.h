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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "moesched/types.h"

namespace moesched {

struct JobRecord {
  SeqId id = 0;
  Priority priority = Priority::kBestEffort;
  double arrival_ms = 0.0;
  double first_token_ms = 0.0;
  double finish_ms = 0.0;
  int prompt_len = 0;
  int output_len = 0;

  double ttft_ms() const { return first_token_ms - arrival_ms; }
  double turnaround_ms() const { return finish_ms - arrival_ms; }
};

// Append-only; one record per finished job.
class MetricsRecorder {
 public:
  // Throws InvalidArgument for an unfinished sequence or a second record of
  // the same id.
  const JobRecord& record(const Sequence& seq);
  const std::vector<JobRecord>& records() const { return records_; }

 private:
  std::vector<JobRecord> records_;
  std::unordered_set<SeqId> seen_;
};

// Nearest-rank percentile: the ceil(p * n)-th smallest value (1-based),
// p in (0, 1]. Throws InvalidArgument on an empty input.
double nearest_rank(std::vector<double> values, double p);

struct LatencySummary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p99 = 0.0;
};

struct ClassReport {
  std::size_t jobs = 0;
  LatencySummary ttft;
  LatencySummary turnaround;
  // Fraction of jobs with TTFT <= slo_ms.
  double slo_attainment = 0.0;
};

struct AggregateReport {
  ClassReport ls;
  ClassReport be;
  ClassReport overall;
  double duration_ms = 0.0;
  std::size_t finished = 0;
  // Finished jobs per virtual second over the whole run.
  double completion_rate = 0.0;
  // Mean BE turnaround / reference mean BE turnaround.
  std::optional<double> be_slowdown;
};

// Classes without records report NaN summaries. Throws InvalidArgument on a
// non-positive duration.
AggregateReport aggregate(std::span<const JobRecord> records, double slo_ms,
                          double duration_ms,
                          const AggregateReport* reference = nullptr);

// Header: id,priority,arrival_ms,ttft_ms,turnaround_ms,prompt_len,output_len
void write_jobs_csv(std::ostream& out, std::span<const JobRecord> records);

void write_summary_header(std::ostream& out);
void write_summary_row(std::ostream& out, const std::string& scheduler,
                       const std::string& rate, const AggregateReport& report);

// Shortest round-trip text for a double; "nan" for NaN.
std::string format_double(double v);

}  // namespace moesched
