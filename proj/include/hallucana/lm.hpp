#pragma once

/**
 * White-box language-model contract and generic decoding primitives.
 *
 * A model exposes, per step, the probability distribution the current token
 * was selected from and the hidden state after that token. Decoder states
 * are plain values: copying a state and stepping the copy never disturbs
 * the original, which is what branch exploration relies on.
 */

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hallucana/common.hpp"

namespace hallucana::lm {

/// Index into a model vocabulary.
using TokenId = std::int32_t;

/// Post-softmax probabilities over the vocabulary.
struct LogitDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
};

/// Fixed-length real vector; dimension is a model property.
struct HiddenState {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

/// One decode step: the distribution the emitted token was drawn from and
/// the hidden state after emitting it.
struct StepOutput {
  LogitDistribution logits;
  HiddenState hidden;
};

// clang-format off
template <typename M>
concept LanguageModel = requires(const M& m, const typename M::State& s,
                                 std::span<const TokenId> prompt,
                                 std::optional<TokenId> forced) {
  typename M::State;
  { m.vocab_size() } -> std::convertible_to<std::size_t>;
  { m.hidden_dim() } -> std::convertible_to<std::size_t>;
  { m.eos_token() } -> std::convertible_to<TokenId>;
  { m.period_token() } -> std::convertible_to<TokenId>;
  { m.is_sentence_end(TokenId{}) } -> std::convertible_to<bool>;
  { m.encode(prompt) } -> std::convertible_to<std::pair<typename M::State, HiddenState>>;
  { m.step(s, forced) } -> std::convertible_to<std::pair<StepOutput, typename M::State>>;
};
// clang-format on

// ============================================================================
// Distributions
// ============================================================================

/// Shannon entropy in nats, with 0*ln(0) = 0.
inline double entropy(const LogitDistribution& d) {
  double h = 0.0;
  for (double p : d.probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

/// The K most probable tokens, descending; ties broken by lower token id.
/// K larger than the vocabulary returns the whole vocabulary.
inline std::vector<std::pair<TokenId, double>> top_k(const LogitDistribution& d,
                                                     std::size_t k) {
  if (k == 0) throw ConfigError("top_k: K must be >= 1");
  std::vector<std::pair<TokenId, double>> order(d.probs.size());
  for (std::size_t i = 0; i < d.probs.size(); ++i)
    order[i] = {static_cast<TokenId>(i), d.probs[i]};
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n),
                    order.end(), [](const auto& a, const auto& b) {
                      if (a.second != b.second) return a.second > b.second;
                      return a.first < b.first;
                    });
  order.resize(n);
  return order;
}

/// Argmax with the same tie-break as top_k.
inline TokenId argmax(const LogitDistribution& d) {
  if (d.probs.empty()) throw ShapeError("argmax: empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.probs.size(); ++i)
    if (d.probs[i] > d.probs[best]) best = i;
  return static_cast<TokenId>(best);
}

// ============================================================================
// Generic decoding
// ============================================================================

template <typename M>
struct GreedyResult {
  std::vector<TokenId> tokens;
  HiddenState last_hidden;        // hidden state at the final emitted token
  typename M::State state;        // state after the final emitted token
  std::vector<double> token_probs;  // probability each token had at its step
};

/**
 * Greedy decoding from `state`, stopping at the first of: the stop predicate
 * holding on the emitted token, end-of-sequence, or max_steps tokens.
 * An optional forced first token replaces the argmax at the first step only.
 */
template <typename M>
  requires LanguageModel<M>
GreedyResult<M> greedy_decode(const M& model, typename M::State state,
                              std::size_t max_steps,
                              const std::function<bool(TokenId)>& stop = nullptr,
                              std::optional<TokenId> forced_first = std::nullopt) {
  if (max_steps < 1) throw ConfigError("greedy_decode: max_steps must be >= 1");
  GreedyResult<M> result;
  for (std::size_t i = 0; i < max_steps; ++i) {
    std::optional<TokenId> forced = (i == 0) ? forced_first : std::nullopt;
    auto [out, next] = model.step(state, forced);
    const TokenId tok = forced ? *forced : argmax(out.logits);
    result.tokens.push_back(tok);
    result.token_probs.push_back(out.logits.probs[static_cast<std::size_t>(tok)]);
    result.last_hidden = out.hidden;
    state = std::move(next);
    if (tok == model.eos_token() || (stop && stop(tok))) break;
  }
  result.state = std::move(state);
  return result;
}

}  // namespace hallucana::lm
