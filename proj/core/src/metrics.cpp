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

#include "moesched/metrics.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "moesched/errors.h"

namespace moesched {

const JobRecord& MetricsRecorder::record(const Sequence& seq) {
  if (!seq.finished() || !seq.first_token_ms || !seq.finish_ms) {
    throw InvalidArgument("metrics: sequence " + std::to_string(seq.id) + " is not finished");
  }
  if (!seen_.insert(seq.id).second) {
    throw InvalidArgument("metrics: sequence " + std::to_string(seq.id) + " recorded twice");
  }
  JobRecord r;
  r.id = seq.id;
  r.priority = seq.priority;
  r.arrival_ms = seq.arrival_ms;
  r.first_token_ms = *seq.first_token_ms;
  r.finish_ms = *seq.finish_ms;
  r.prompt_len = static_cast<int>(seq.prompt.size());
  r.output_len = static_cast<int>(seq.generated.size());
  records_.push_back(r);
  return records_.back();
}

double nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidArgument("nearest_rank: no values");
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("nearest_rank: p must be in (0, 1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

LatencySummary summarize(const std::vector<double>& v) {
  LatencySummary s;
  s.count = v.size();
  if (v.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.mean = s.median = s.p99 = nan;
    return s;
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = nearest_rank(v, 0.5);
  s.p99 = nearest_rank(v, 0.99);
  return s;
}

template <typename Pred>
ClassReport class_report(std::span<const JobRecord> records, double slo_ms, Pred keep) {
  std::vector<double> ttft, turnaround;
  std::size_t within = 0;
  for (const auto& r : records) {
    if (!keep(r)) continue;
    ttft.push_back(r.ttft_ms());
    turnaround.push_back(r.turnaround_ms());
    if (r.ttft_ms() <= slo_ms) ++within;
  }
  ClassReport c;
  c.jobs = ttft.size();
  c.ttft = summarize(ttft);
  c.turnaround = summarize(turnaround);
  c.slo_attainment = c.jobs == 0 ? std::numeric_limits<double>::quiet_NaN()
                                 : static_cast<double>(within) / static_cast<double>(c.jobs);
  return c;
}

}  // namespace

AggregateReport aggregate(std::span<const JobRecord> records, double slo_ms, double duration_ms,
                          const AggregateReport* reference) {
  if (!(duration_ms > 0.0)) throw InvalidArgument("aggregate: duration_ms must be > 0");
  AggregateReport a;
  a.ls = class_report(records, slo_ms,
                      [](const JobRecord& r) { return r.priority == Priority::kLatencySensitive; });
  a.be = class_report(records, slo_ms,
                      [](const JobRecord& r) { return r.priority == Priority::kBestEffort; });
  a.overall = class_report(records, slo_ms, [](const JobRecord&) { return true; });
  a.duration_ms = duration_ms;
  a.finished = records.size();
  a.completion_rate = static_cast<double>(records.size()) / (duration_ms / 1000.0);
  if (reference && reference->be.jobs > 0 && a.be.jobs > 0) {
    a.be_slowdown = a.be.turnaround.mean / reference->be.turnaround.mean;
  }
  return a;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_jobs_csv(std::ostream& out, std::span<const JobRecord> records) {
  out << "id,priority,arrival_ms,ttft_ms,turnaround_ms,prompt_len,output_len\n";
  for (const auto& r : records) {
    out << r.id << ',' << (r.priority == Priority::kLatencySensitive ? "LS" : "BE") << ','
        << format_double(r.arrival_ms) << ',' << format_double(r.ttft_ms()) << ','
        << format_double(r.turnaround_ms()) << ',' << r.prompt_len << ',' << r.output_len
        << '\n';
  }
}

void write_summary_header(std::ostream& out) {
  out << "scheduler,rate,finished,duration_ms,completion_rate";
  for (const char* cls : {"ls", "be"}) {
    out << ',' << cls << "_jobs," << cls << "_ttft_mean_ms," << cls << "_ttft_median_ms," << cls
        << "_ttft_p99_ms," << cls << "_turnaround_mean_ms," << cls << "_turnaround_p99_ms,"
        << cls << "_slo_attainment";
  }
  out << ",be_slowdown\n";
}

void write_summary_row(std::ostream& out, const std::string& scheduler, const std::string& rate,
                       const AggregateReport& report) {
  out << scheduler << ',' << rate << ',' << report.finished << ','
      << format_double(report.duration_ms) << ',' << format_double(report.completion_rate);
  for (const ClassReport* c : {&report.ls, &report.be}) {
    out << ',' << c->jobs << ',' << format_double(c->ttft.mean) << ','
        << format_double(c->ttft.median) << ',' << format_double(c->ttft.p99) << ','
        << format_double(c->turnaround.mean) << ',' << format_double(c->turnaround.p99) << ','
        << format_double(c->slo_attainment);
  }
  out << ',' << (report.be_slowdown ? format_double(*report.be_slowdown) : std::string()) << '\n';
}

}  // namespace moesched
