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

#include "moesched/workload.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <string_view>

#include "moesched/errors.h"
#include "moesched/metrics.h"

namespace moesched {

namespace {

void check_lengths(const LengthDistribution& d, const char* name) {
  if (!(d.mean > 0.0) || !std::isfinite(d.mean) || !(d.sigma >= 0.0) || d.min < 1 ||
      d.max < d.min) {
    throw InvalidArgument(std::string("workload: bad ") + name + " length distribution");
  }
}

int draw_length(std::mt19937_64& rng, const LengthDistribution& d) {
  const double mu = std::log(d.mean) - d.sigma * d.sigma / 2.0;
  std::lognormal_distribution<double> dist(mu, d.sigma);
  const double v = std::round(dist(rng));
  if (v <= d.min) return d.min;
  if (v >= d.max) return d.max;
  return static_cast<int>(v);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
T parse_number(std::string_view field, const char* name, std::size_t line) {
  field = trim(field);
  T v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError("bad " + std::string(name) + " '" + std::string(field) + "'", line);
  }
  return v;
}

void check_record(const TraceRecord& r, double prev_arrival, std::size_t line) {
  if (!std::isfinite(r.arrival_ms) || r.arrival_ms < 0.0) {
    throw ParseError("arrival_ms must be finite and non-negative", line);
  }
  if (r.arrival_ms < prev_arrival) throw ParseError("arrivals out of order", line);
  if (r.prompt_len < 1) throw ParseError("prompt_len must be >= 1", line);
  if (r.output_len < 1) throw ParseError("output_len must be >= 1", line);
}

}  // namespace

void WorkloadSpec::validate() const {
  if (!(rate_per_s > 0.0) || !std::isfinite(rate_per_s)) {
    throw InvalidArgument("workload: rate_per_s must be > 0");
  }
  if (!(ls_fraction >= 0.0 && ls_fraction <= 1.0)) {
    throw InvalidArgument("workload: ls_fraction must be in [0, 1]");
  }
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw InvalidArgument("workload: duration_s must be > 0");
  }
  check_lengths(prompt, "prompt");
  check_lengths(output, "output");
}

std::vector<TraceRecord> generate(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::exponential_distribution<double> gap(spec.rate_per_s);
  std::bernoulli_distribution latency_sensitive(spec.ls_fraction);
  const double horizon_ms = spec.duration_s * 1000.0;

  std::vector<TraceRecord> out;
  double t = 0.0;
  while (spec.max_jobs == 0 || out.size() < spec.max_jobs) {
    t += gap(rng) * 1000.0;
    if (t > horizon_ms) break;
    TraceRecord r;
    r.arrival_ms = t;
    r.priority = latency_sensitive(rng) ? Priority::kLatencySensitive : Priority::kBestEffort;
    r.prompt_len = draw_length(rng, spec.prompt);
    r.output_len = draw_length(rng, spec.output);
    r.seed = rng();
    out.push_back(r);
  }
  return out;
}

std::vector<TokenId> prompt_tokens(const TraceRecord& record, int vocab_size) {
  if (vocab_size < 2) throw InvalidArgument("prompt_tokens: vocab_size must be >= 2");
  if (record.prompt_len < 1) throw InvalidArgument("prompt_tokens: prompt_len must be >= 1");
  std::mt19937_64 rng(record.seed);
  // 0 is end-of-sequence, never part of a prompt.
  std::uniform_int_distribution<TokenId> dist(1, vocab_size - 1);
  std::vector<TokenId> tokens(static_cast<std::size_t>(record.prompt_len));
  for (auto& t : tokens) t = dist(rng);
  return tokens;
}

void write_trace(std::ostream& out, const std::vector<TraceRecord>& records) {
  out << "# arrival_ms,priority,prompt_len,output_len,seed\n";
  for (const auto& r : records) {
    out << format_double(r.arrival_ms) << ','
        << (r.priority == Priority::kLatencySensitive ? "LS" : "BE") << ',' << r.prompt_len
        << ',' << r.output_len << ',' << r.seed << '\n';
  }
}

std::vector<TraceRecord> read_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view s = trim(raw);
    if (s.empty() || s.front() == '#') continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      fields.push_back(s.substr(start, comma == std::string_view::npos ? comma : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 5) {
      throw ParseError("expected 5 fields, got " + std::to_string(fields.size()), line);
    }
    TraceRecord r;
    r.arrival_ms = parse_number<double>(fields[0], "arrival_ms", line);
    const auto prio = trim(fields[1]);
    if (prio == "LS") {
      r.priority = Priority::kLatencySensitive;
    } else if (prio == "BE") {
      r.priority = Priority::kBestEffort;
    } else {
      throw ParseError("bad priority '" + std::string(prio) + "' (expected LS or BE)", line);
    }
    r.prompt_len = parse_number<int>(fields[2], "prompt_len", line);
    r.output_len = parse_number<int>(fields[3], "output_len", line);
    r.seed = parse_number<std::uint64_t>(fields[4], "seed", line);
    check_record(r, out.empty() ? 0.0 : out.back().arrival_ms, line);
    out.push_back(r);
  }
  return out;
}

void save_trace(const std::vector<TraceRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write trace " + path.string());
  write_trace(out, records);
}

std::vector<TraceRecord> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read trace " + path.string());
  return read_trace(in);
}

// Records carry no line numbers here; the 1-based index is reported instead.
void validate_trace(const std::vector<TraceRecord>& records) {
  double prev = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    check_record(records[i], prev, i + 1);
    prev = records[i].arrival_ms;
  }
}

}  // namespace moesched
