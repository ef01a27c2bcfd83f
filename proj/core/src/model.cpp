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

#include "moesched/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "moesched/cache.h"
#include "moesched/errors.h"

namespace moesched {
namespace {

constexpr double kNormEpsilon = 1e-9;

std::vector<double> random_matrix(std::mt19937_64& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng) * scale;
  return out;
}

// Softmax-weighted sum of values; returns the softmax denominator.
double attend(const double* h, const double* keys, const double* values, std::size_t n,
              std::size_t d, double inv_sqrt_d, double* mix) {
  thread_local std::vector<double> scores;
  scores.resize(n);
  double max_score = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const double* k = keys + i * d;
    double s[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t c = 0;
    for (; c + 4 <= d; c += 4) {
      s[0] += h[c] * k[c];
      s[1] += h[c + 1] * k[c + 1];
      s[2] += h[c + 2] * k[c + 2];
      s[3] += h[c + 3] * k[c + 3];
    }
    for (; c < d; ++c) s[0] += h[c] * k[c];
    scores[i] = ((s[0] + s[1]) + (s[2] + s[3])) * inv_sqrt_d;
    max_score = std::max(max_score, scores[i]);
  }
  // One pass over the values; same accumulation order as exp-then-mix.
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(scores[i] - max_score);
    total += w;
    const double* v = values + i * d;
    for (std::size_t c = 0; c < d; ++c) mix[c] += w * v[c];
  }
  return total;
}

// out = W x for a row-major rows x cols matrix.
void matvec(std::span<const double> w, std::span<const double> x, std::size_t rows,
            std::span<double> out) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("model config: " + what); };
  if (num_layers < 1 || num_layers > kMaxLayers) {
    fail("num_layers must be in [1, " + std::to_string(kMaxLayers) + "]");
  }
  if (hidden_dim < 1) fail("hidden_dim must be >= 1");
  if (num_experts < 1) fail("num_experts must be >= 1");
  if (top_k < 1 || top_k > num_experts) fail("top_k must be in [1, num_experts]");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
}

MoeModel::MoeModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  const auto e = static_cast<std::size_t>(config_.num_experts);
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::mt19937_64 rng(config_.seed);
  embedding_ = random_matrix(rng, v * d, 1.0);
  out_w_ = random_matrix(rng, v * d, scale);
  out_b_ = random_matrix(rng, v, 0.1);
  layers_.resize(static_cast<std::size_t>(config_.num_layers));
  for (auto& layer : layers_) {
    layer.w_key = random_matrix(rng, d * d, scale);
    layer.w_value = random_matrix(rng, d * d, scale);
    layer.w_router = random_matrix(rng, e * d, scale);
    layer.expert_w = random_matrix(rng, e * d * d, scale);
    layer.expert_b = random_matrix(rng, e * d, 0.1);
  }
}

std::vector<double> MoeModel::embed(TokenId token, int position) const {
  if (token < 0 || token >= config_.vocab_size) {
    throw InvalidArgument("token id " + std::to_string(token) + " outside the vocabulary");
  }
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  std::vector<double> h(embedding_.begin() + static_cast<std::ptrdiff_t>(token * d),
                        embedding_.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
  for (std::size_t i = 0; i < d; ++i) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    h[i] += 0.5 * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return h;
}

void MoeModel::attention(SeqId seq, int layer, TokenState& token,
                         UnifiedDynamicCache& cache) const {
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  if (token.hidden.size() != d || token.hidden_layer != layer) {
    throw StateCorruption("attention: token of sequence " + std::to_string(seq) +
                          " has no input for layer " + std::to_string(layer));
  }
  const std::size_t cached = cache.entries(seq, layer);
  if (cached != static_cast<std::size_t>(token.position)) {
    throw StateCorruption("attention: sequence " + std::to_string(seq) + " holds " +
                          std::to_string(cached) + " cached entries at layer " +
                          std::to_string(layer) + ", expected " +
                          std::to_string(token.position));
  }
  const LayerParams& p = layers_[static_cast<std::size_t>(layer)];
  std::vector<double> key(d);
  std::vector<double> value(d);
  matvec(p.w_key, token.hidden, d, key);
  matvec(p.w_value, token.hidden, d, value);
  cache.append(seq, layer, key, value);

  const auto keys = cache.keys(seq, layer);
  const auto values = cache.values(seq, layer);
  const std::size_t n = keys.size() / d;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> out(token.hidden);
  std::vector<double> mix(d, 0.0);
  const double total =
      attend(token.hidden.data(), keys.data(), values.data(), n, d, inv_sqrt_d, mix.data());
  double norm_sq = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    out[c] += mix[c] / total;
    norm_sq += out[c] * out[c];
  }
  const double denom = std::sqrt(norm_sq) + kNormEpsilon;
  for (auto& x : out) x /= denom;
  token.residual = std::move(out);
}

std::vector<double> MoeModel::router_scores(std::span<const double> hidden, int layer) const {
  const auto e = static_cast<std::size_t>(config_.num_experts);
  std::vector<double> scores(e);
  matvec(layers_[static_cast<std::size_t>(layer)].w_router, hidden, e, scores);
  return scores;
}

std::vector<ExpertChoice> select_top_k(std::span<const double> scores, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size()) {
    throw InvalidArgument("select_top_k: k out of range");
  }
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  const double top = scores[order[0]];
  std::vector<ExpertChoice> out(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].expert = order[i];
    out[i].weight = std::exp(scores[order[i]] - top);
    total += out[i].weight;
  }
  for (auto& c : out) c.weight /= total;
  return out;
}

std::size_t argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax_lowest: no values");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<ExpertChoice> MoeModel::route(std::span<const double> hidden, int layer) const {
  return select_top_k(router_scores(hidden, layer), config_.top_k);
}

std::vector<double> MoeModel::expert_forward(int expert, int layer,
                                             std::span<const double> input) const {
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  const LayerParams& p = layers_[static_cast<std::size_t>(layer)];
  const auto e = static_cast<std::size_t>(expert);
  std::vector<double> out(d);
  matvec(std::span<const double>(p.expert_w).subspan(e * d * d, d * d), input, d, out);
  for (std::size_t i = 0; i < d; ++i) out[i] = std::tanh(out[i] + p.expert_b[e * d + i]);
  return out;
}

std::vector<double> MoeModel::logits(std::span<const double> hidden) const {
  const auto v = static_cast<std::size_t>(config_.vocab_size);
  std::vector<double> out(v);
  matvec(out_w_, hidden, v, out);
  for (std::size_t i = 0; i < v; ++i) out[i] += out_b_[i];
  return out;
}

TokenId MoeModel::emit_token(std::span<const double> hidden) const {
  return static_cast<TokenId>(argmax_lowest(logits(hidden)));
}

void router_stage(const MoeModel& model, std::span<TokenState> tokens, int layer) {
  for (auto& token : tokens) {
    token.routing = model.route(token.residual, layer);
    token.completed.clear();
    token.pending.clear();
    for (const auto& c : token.routing) token.pending.push_back(c.expert);
    std::sort(token.pending.begin(), token.pending.end());
  }
}

void combine_expert_outputs(TokenState& token) {
  if (!token.pending.empty()) {
    throw PartialTokenError("combine: token at position " + std::to_string(token.position) +
                            " still has " + std::to_string(token.pending.size()) +
                            " pending experts");
  }
  std::vector<double> hidden = token.residual;
  for (const auto& choice : token.routing) {
    auto it = std::find_if(token.completed.begin(), token.completed.end(),
                           [&](const auto& c) { return c.first == choice.expert; });
    if (it == token.completed.end()) {
      throw InvariantViolation("combine: routed expert " + std::to_string(choice.expert) +
                               " produced no output");
    }
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] += choice.weight * it->second[i];
  }
  token.hidden = std::move(hidden);
  token.hidden_layer += 1;
  token.routing.clear();
  token.completed.clear();
}

std::size_t ExpertQueues::KeyHash::operator()(const Key& k) const noexcept {
  std::size_t h = std::hash<std::uint64_t>{}(
      (static_cast<std::uint64_t>(k.seq) << 32) | static_cast<std::uint32_t>(k.token));
  h ^= std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(k.layer) << 32) |
                                  static_cast<std::uint32_t>(k.expert)) +
       0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

ExpertQueues::ExpertQueues(int num_layers, int num_experts)
    : num_layers_(num_layers),
      num_experts_(num_experts),
      queues_(static_cast<std::size_t>(num_layers) * static_cast<std::size_t>(num_experts)) {}

std::size_t ExpertQueues::index(int expert, int layer) const {
  if (expert < 0 || expert >= num_experts_ || layer < 0 || layer >= num_layers_) {
    throw InvalidArgument("expert queue: (expert " + std::to_string(expert) + ", layer " +
                          std::to_string(layer) + ") out of range");
  }
  return static_cast<std::size_t>(layer) * static_cast<std::size_t>(num_experts_) +
         static_cast<std::size_t>(expert);
}

std::deque<ExpertQueueEntry>& ExpertQueues::queue(int expert, int layer) {
  return queues_[index(expert, layer)];
}

std::size_t ExpertQueues::enqueue(SeqId seq, int layer, std::span<const TokenState> tokens) {
  std::size_t added = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (const auto& choice : tokens[t].routing) {
      if (!std::binary_search(tokens[t].pending.begin(), tokens[t].pending.end(),
                              choice.expert)) {
        continue;
      }
      const Key key{seq, static_cast<int>(t), layer, choice.expert};
      if (!keys_.insert(key).second) {
        throw InvariantViolation("expert queue: duplicate entry for sequence " +
                                 std::to_string(seq) + " token " + std::to_string(t) +
                                 " layer " + std::to_string(layer) + " expert " +
                                 std::to_string(choice.expert));
      }
      queue(choice.expert, layer)
          .push_back({seq, static_cast<int>(t), layer, choice.expert, choice.weight});
      ++added;
    }
  }
  return added;
}

std::vector<ExpertQueueEntry> ExpertQueues::drain(int expert, int layer) {
  auto& q = queue(expert, layer);
  std::vector<ExpertQueueEntry> out(q.begin(), q.end());
  q.clear();
  for (const auto& e : out) keys_.erase(Key{e.seq, e.token, e.layer, e.expert});
  return out;
}

std::size_t ExpertQueues::clear_layer(int layer) {
  std::size_t dropped = 0;
  for (int e = 0; e < num_experts_; ++e) dropped += drain(e, layer).size();
  return dropped;
}

std::size_t ExpertQueues::size(int expert, int layer) const {
  return queues_[index(expert, layer)].size();
}

std::size_t ExpertQueues::layer_size(int layer) const {
  std::size_t n = 0;
  for (int e = 0; e < num_experts_; ++e) n += size(e, layer);
  return n;
}

}  // namespace moesched
