#pragma once

/**
 * FactLm: a deterministic template language model over a synthetic world.
 *
 * Responses follow a fixed statement grammar, "<entity> <relation> is
 * <value> .", one statement per relation, then end-of-sequence. Template
 * positions are near-deterministic; value slots spread probability between
 * the true value and hash-jittered distractors, with the truth's share
 * growing in the subject's corpus familiarity. Hidden states expose grammar
 * and subject embeddings, the familiarity scalar and a noisy factuality
 * feature, which is what the probes learn to read.
 */

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hallucana/common.hpp"
#include "hallucana/lm.hpp"
#include "hallucana/probe.hpp"
#include "hallucana/world.hpp"

namespace hallucana::factlm {

using lm::HiddenState;
using lm::LogitDistribution;
using lm::StepOutput;
using lm::TokenId;
using world::Vocabulary;
using world::World;

namespace salt {
inline constexpr std::uint64_t kGrammarEmbed = 0x47524d45ULL;
inline constexpr std::uint64_t kSubjectEmbed = 0x53554245ULL;
inline constexpr std::uint64_t kDistractors = 0x44495354ULL;
inline constexpr std::uint64_t kJitter = 0x4a495454ULL;
inline constexpr std::uint64_t kPhiNoise = 0x50484921ULL;
}  // namespace salt

// Positions within one statement: subject, relation, "is", value, period.
inline constexpr std::uint8_t kSlotPos = 3;
inline constexpr std::uint8_t kEndPos = 4;

class FactLm {
 public:
  struct State {
    enum class Mode : std::uint8_t { bio, qa };
    Mode mode = Mode::bio;
    std::uint32_t subject = 0;
    std::uint32_t qa_relation = 0;  // global relation index, qa mode only
    std::uint16_t stmt = 0;         // statement index within the response
    std::uint8_t pos = 0;           // position within the current statement
    bool at_eos_state = false;      // statements finished; <eos> expected
    bool ended = false;             // <eos> emitted; stepping now throws
    std::int32_t slot_value = -1;   // value index emitted at the open slot
    std::uint64_t ctx_hash = 0;     // rolling hash over all context tokens
    std::vector<TokenId> context;   // full context, prompt plus emissions
  };

  explicit FactLm(std::shared_ptr<const World> w)
      : world_(std::move(w)), params_(world_->params) {
    const std::size_t h = params_.hidden_dim;
    subject_dim_ = (h - 2) / 2;
    grammar_dim_ = h - 2 - subject_dim_;
    const auto counts = world_->mention_counts();
    std::uint64_t max_count = 0;
    for (auto c : counts) max_count = std::max(max_count, c);
    fam_.resize(counts.size());
    const double denom =
        max_count > 0 ? std::log1p(static_cast<double>(max_count)) : 1.0;
    for (std::size_t e = 0; e < counts.size(); ++e)
      fam_[e] = max_count > 0
                    ? std::log1p(static_cast<double>(counts[e])) / denom
                    : 0.0;
  }

  // --- model properties -------------------------------------------------
  std::size_t vocab_size() const { return world_->vocab.size(); }
  std::size_t hidden_dim() const { return params_.hidden_dim; }
  TokenId eos_token() const { return Vocabulary::kEos; }
  TokenId period_token() const { return Vocabulary::kPeriod; }
  bool is_sentence_end(TokenId t) const { return t == Vocabulary::kPeriod; }

  const World& world() const { return *world_; }
  const world::FactLmParams& params() const { return params_; }
  std::size_t fam_index() const { return params_.hidden_dim - 2; }
  std::size_t phi_index() const { return params_.hidden_dim - 1; }

  /// Corpus familiarity in [0,1]; 0 for subjects never mentioned.
  double familiarity(std::uint32_t e) const { return fam_.at(e); }

  // --- white-box interface ----------------------------------------------

  std::pair<State, HiddenState> encode(std::span<const TokenId> prompt) const {
    if (prompt.empty()) throw VocabularyError("encode: empty prompt");
    for (TokenId t : prompt)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_size())
        throw VocabularyError("encode: token id " + std::to_string(t) +
                              " outside vocabulary");
    State s = parse_prompt(prompt);
    double phi;
    std::uint64_t node;
    if (s.mode == State::Mode::bio) {
      phi = expected_bio_correctness(s.subject);
      node = hash_key(params_.seed, 0x50524d42ULL);
    } else {
      phi = slot_argmax(s.subject, s.qa_relation) ==
                    world_->kb.facts[s.subject][s.qa_relation]
                ? 1.0
                : 0.0;
      node = hash_key(params_.seed, 0x50524d51ULL, s.qa_relation);
    }
    return {s, make_hidden(node, s.subject, phi, s.ctx_hash)};
  }

  std::pair<StepOutput, State> step(const State& s,
                                    std::optional<TokenId> forced = {}) const {
    if (s.ended) throw SequenceEndedError();
    if (forced &&
        (*forced < 0 || static_cast<std::size_t>(*forced) >= vocab_size()))
      throw VocabularyError("step: forced token outside vocabulary");
    LogitDistribution dist = distribution(s);
    const TokenId tok = forced ? *forced : lm::argmax(dist);

    State next = s;
    next.ctx_hash = hash_combine(s.ctx_hash, static_cast<std::uint64_t>(tok));
    next.context.push_back(tok);

    double phi_base = 0.5;
    const std::size_t rel = current_relation(s);
    if (s.at_eos_state) {
      if (tok == eos_token()) next.ended = true;
      phi_base = 1.0;  // nothing further is being asserted
    } else if (tok == period_token()) {
      if (s.pos == kEndPos) {
        // statement completed; the factuality feature fires here
        const bool match = s.slot_value >= 0 &&
                           static_cast<std::uint32_t>(s.slot_value) ==
                               world_->kb.facts[s.subject][rel];
        phi_base = match ? 1.0 : 0.0;
      } else {
        phi_base = 0.5;  // statement abandoned mid-way
      }
      advance_statement(next);
    } else if (tok == eos_token()) {
      // stray end marker before statements ran out: treat as ending
      next.ended = true;
      next.at_eos_state = true;
      phi_base = 1.0;
    } else if (s.pos == kSlotPos && world_->vocab.is_value(tok) &&
               world_->vocab.value_of(tok).first == rel) {
      next.slot_value = static_cast<std::int32_t>(world_->vocab.value_of(tok).second);
      next.pos = s.pos + 1;
    } else if (tok == expected_token(s)) {
      next.pos = s.pos + 1;
    }
    // any other token is inert filler: the grammar stays where it was

    HiddenState hidden = make_hidden(node_key(next), next.subject, phi_base,
                                     next.ctx_hash);
    return {StepOutput{std::move(dist), std::move(hidden)}, std::move(next)};
  }

  // --- introspection used by oracles and tests ---------------------------

  /// Probability the distribution at a value slot assigns to each candidate.
  struct SlotMasses {
    double truth_mass = 0;
    std::uint32_t truth_value = 0;
    std::vector<std::pair<std::uint32_t, double>> distractors;  // value -> mass
  };

  SlotMasses slot_masses(std::uint32_t e, std::size_t rel) const {
    SlotMasses m;
    m.truth_value = world_->kb.facts[e][rel];
    m.truth_mass = params_.familiarity_floor +
                   (1.0 - params_.familiarity_floor) * fam_[e];
    const std::size_t n_values = world_->config.values_per_relation;
    const std::size_t d = params_.distractor_count;
    // deterministic distractor choice: walk non-truth values in hash order
    std::vector<std::uint32_t> pool;
    pool.reserve(n_values - 1);
    for (std::uint32_t v = 0; v < n_values; ++v)
      if (v != m.truth_value) pool.push_back(v);
    for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
      const std::size_t j =
          i + hash_key(params_.seed, salt::kDistractors, e, rel, i) %
                  (pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(std::min(d, pool.size()));
    double total = 0;
    std::vector<double> weights(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const double u = hash_unit(params_.seed, salt::kJitter, e, rel, i);
      weights[i] = params_.logit_noise > 0
                       ? std::pow(-std::log1p(-u), params_.logit_noise)
                       : 1.0;
      total += weights[i];
    }
    const double remaining = (1.0 - m.truth_mass) * (1.0 - kSlotBackground);
    for (std::size_t i = 0; i < pool.size(); ++i)
      m.distractors.emplace_back(pool[i], remaining * weights[i] / total);
    return m;
  }

  /// Token the greedy decoder would emit at the (e, rel) value slot.
  std::uint32_t slot_argmax(std::uint32_t e, std::size_t rel) const {
    const SlotMasses m = slot_masses(e, rel);
    std::uint32_t best_value = m.truth_value;
    double best_mass = m.truth_mass;
    for (const auto& [v, mass] : m.distractors) {
      if (mass > best_mass ||
          (mass == best_mass && v < best_value)) {
        best_mass = mass;
        best_value = v;
      }
    }
    return best_value;
  }

  /// Fraction of biography slots whose greedy choice matches the facts.
  double expected_bio_correctness(std::uint32_t e) const {
    const auto& kb = world_->kb;
    std::size_t correct = 0, total = 0;
    for (std::size_t r = kb.n_qa_relations; r < kb.n_relations(); ++r) {
      correct += slot_argmax(e, r) == kb.facts[e][r] ? 1 : 0;
      ++total;
    }
    return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                     : 0.0;
  }

  /// Value surface of the first complete statement, or empty if none.
  std::string extract_answer(std::span<const TokenId> response) const;

  const std::vector<double>& familiarity_table() const { return fam_; }

 private:
  static constexpr double kTemplateMass = 0.995;
  static constexpr double kSlotBackground = 0.01;

  std::size_t n_statements(const State& s) const {
    return s.mode == State::Mode::bio
               ? world_->kb.n_relations() - world_->kb.n_qa_relations
               : 1;
  }

  std::size_t current_relation(const State& s) const {
    if (s.mode == State::Mode::qa) return s.qa_relation;
    const std::size_t idx = world_->kb.n_qa_relations + s.stmt;
    return std::min(idx, world_->kb.n_relations() - 1);
  }

  TokenId expected_token(const State& s) const {
    const auto& v = world_->vocab;
    switch (s.pos) {
      case 0: return v.entity_token(s.subject);
      case 1: return v.relation_token(current_relation(s));
      case 2: return v.word("is");
      case kEndPos: return Vocabulary::kPeriod;
      default: return Vocabulary::kPeriod;  // slot handled separately
    }
  }

  void advance_statement(State& s) const {
    s.slot_value = -1;
    s.pos = 0;
    if (s.at_eos_state) return;
    if (static_cast<std::size_t>(s.stmt) + 1 >= n_statements(s)) {
      s.at_eos_state = true;
    } else {
      s.stmt++;
    }
  }

  std::uint64_t node_key(const State& s) const {
    return hash_key(params_.seed, 0x4e4f4445ULL,
                    static_cast<std::uint64_t>(s.mode),
                    s.at_eos_state ? 1u : 0u, s.stmt, s.pos,
                    current_relation(s));
  }

  HiddenState make_hidden(std::uint64_t node, std::uint32_t subject,
                          double phi_base, std::uint64_t ctx_hash) const {
    HiddenState h;
    h.values.reserve(params_.hidden_dim);
    const auto g = hash_embedding(hash_key(params_.seed, salt::kGrammarEmbed),
                                  node, grammar_dim_);
    const auto sv = hash_embedding(hash_key(params_.seed, salt::kSubjectEmbed),
                                   subject, subject_dim_);
    h.values.insert(h.values.end(), g.begin(), g.end());
    h.values.insert(h.values.end(), sv.begin(), sv.end());
    h.values.push_back(fam_[subject]);
    double phi = phi_base;
    if (params_.noise_sigma > 0)
      phi += params_.noise_sigma * hash_gauss(params_.seed, salt::kPhiNoise,
                                              ctx_hash);
    phi = std::clamp(phi, -0.5, 1.5);
    h.values.push_back(phi);
    return h;
  }

  LogitDistribution distribution(const State& s) const {
    const std::size_t v_size = vocab_size();
    LogitDistribution d;
    d.probs.assign(v_size, 0.0);
    if (s.at_eos_state) {
      concentrate(d, eos_token());
      return d;
    }
    if (s.pos == kSlotPos) {
      const std::size_t rel = current_relation(s);
      const SlotMasses m = slot_masses(s.subject, rel);
      const auto& vocab = world_->vocab;
      const double remaining = 1.0 - m.truth_mass;
      const std::size_t others = v_size - 1 - m.distractors.size();
      const double bg = remaining * kSlotBackground / static_cast<double>(others);
      for (double& p : d.probs) p = bg;
      d.probs[static_cast<std::size_t>(vocab.value_token(rel, m.truth_value))] =
          m.truth_mass;
      for (const auto& [val, mass] : m.distractors)
        d.probs[static_cast<std::size_t>(vocab.value_token(rel, val))] = mass;
      return d;
    }
    concentrate(d, expected_token(s));
    return d;
  }

  void concentrate(LogitDistribution& d, TokenId t) const {
    const double bg = (1.0 - kTemplateMass) / static_cast<double>(d.probs.size());
    for (double& p : d.probs) p = bg;
    d.probs[static_cast<std::size_t>(t)] += kTemplateMass;
  }

  State parse_prompt(std::span<const TokenId> prompt) const {
    const auto& v = world_->vocab;
    State s;
    s.context.assign(prompt.begin(), prompt.end());
    for (TokenId t : prompt) s.ctx_hash = hash_combine(s.ctx_hash, t);

    // biography prompt: bio of <entity> :
    if (prompt.size() == 4 && prompt[0] == v.word("bio") &&
        prompt[1] == v.word("of") && v.is_entity(prompt[2]) &&
        prompt[3] == v.word(":")) {
      s.mode = State::Mode::bio;
      s.subject = v.entity_of(prompt[2]);
      return s;
    }
    // QA prompt: ... Q : <mention tokens and words> <relation> ? A :
    if (prompt.size() >= 6 && prompt[prompt.size() - 1] == v.word(":") &&
        prompt[prompt.size() - 2] == v.word("A")) {
      std::size_t q = prompt.size();
      for (std::size_t i = prompt.size(); i-- > 0;)
        if (prompt[i] == v.word("Q")) {
          q = i;
          break;
        }
      if (q != prompt.size()) {
        std::optional<std::uint32_t> subject;
        std::optional<std::size_t> relation;
        for (std::size_t i = q; i < prompt.size(); ++i) {
          if (!subject && v.is_entity(prompt[i])) subject = v.entity_of(prompt[i]);
          if (auto r = v.relation_of(prompt[i])) relation = *r;
        }
        if (subject && relation) {
          s.mode = State::Mode::qa;
          s.subject = *subject;
          s.qa_relation = static_cast<std::uint32_t>(*relation);
          return s;
        }
      }
    }
    throw ParseError("prompt matches neither the biography nor the QA template");
  }

  std::shared_ptr<const World> world_;
  world::FactLmParams params_;
  std::size_t grammar_dim_ = 0;
  std::size_t subject_dim_ = 0;
  std::vector<double> fam_;
};

static_assert(lm::LanguageModel<FactLm>);

// ============================================================================
// Statement parsing and the factuality oracle
// ============================================================================

/// One atomic statement recovered from a response token span.
struct Statement {
  std::uint32_t subject = 0;
  std::uint32_t relation = 0;
  std::uint32_t value_index = 0;
  std::size_t begin = 0;  // first token of the statement's sentence
  std::size_t end = 0;    // position of the closing sentence-end token
};

/**
 * Recover complete statements from a response. Sentences are split at the
 * period token; a sentence yields a statement when subject, relation, "is"
 * and a value of that relation appear in order (filler tokens are skipped).
 * Incomplete sentences yield nothing. Token ids outside the vocabulary are
 * a parse error: they cannot come from the model and indicate corrupt input.
 */
inline std::vector<Statement> parse_statements(const World& w,
                                               std::span<const TokenId> response) {
  const auto& v = w.vocab;
  for (TokenId t : response)
    if (t < 0 || static_cast<std::size_t>(t) >= v.size())
      throw ParseError("response contains token id outside the vocabulary");
  std::vector<Statement> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (response[i] != Vocabulary::kPeriod) continue;
    // sentence is [start, i]
    std::optional<std::uint32_t> subject;
    std::optional<std::size_t> relation;
    bool saw_is = false;
    std::optional<std::uint32_t> value;
    for (std::size_t k = start; k < i; ++k) {
      const TokenId t = response[k];
      if (!subject) {
        if (v.is_entity(t)) subject = v.entity_of(t);
      } else if (!relation) {
        if (auto r = v.relation_of(t)) relation = *r;
      } else if (!saw_is) {
        if (t == v.word("is")) saw_is = true;
      } else if (!value) {
        if (v.is_value(t) && v.value_of(t).first == *relation)
          value = static_cast<std::uint32_t>(v.value_of(t).second);
      }
    }
    if (subject && relation && saw_is && value)
      out.push_back({*subject, static_cast<std::uint32_t>(*relation), *value,
                     start, i});
    start = i + 1;
  }
  return out;
}

struct OracleResult {
  std::vector<bool> supported;       // parallel to the statements
  std::optional<double> fs;          // unset when there are no statements
  std::size_t n_facts = 0;
};

/// Supported iff the stated value equals the knowledge-base fact. FS is the
/// supported ratio; responses with no statements are excluded (fs unset).
inline OracleResult oracle_factuality(const world::KnowledgeBase& kb,
                                      std::span<const Statement> statements) {
  OracleResult r;
  r.n_facts = statements.size();
  std::size_t good = 0;
  for (const auto& s : statements) {
    const bool ok = kb.facts.at(s.subject).at(s.relation) == s.value_index;
    r.supported.push_back(ok);
    good += ok ? 1 : 0;
  }
  if (!statements.empty())
    r.fs = static_cast<double>(good) / static_cast<double>(statements.size());
  return r;
}

inline OracleResult oracle_response(const World& w,
                                    std::span<const TokenId> response) {
  const auto statements = parse_statements(w, response);
  return oracle_factuality(w.kb, statements);
}

inline std::string FactLm::extract_answer(std::span<const TokenId> response) const {
  const auto statements = parse_statements(*world_, response);
  if (statements.empty()) return "";
  const auto& s = statements.front();
  return Vocabulary::value_surface(s.relation, s.value_index);
}

// ============================================================================
// Oracle probe
// ============================================================================

/**
 * A hand-built probe that reads the factuality feature straight out of the
 * hidden state: score = logistic(sharpness * (phi - 0.5)). Useful as an
 * upper-bound scorer and in tests that need probe quality decoupled from
 * training.
 */
inline probe::Probe oracle_probe(const FactLm& model, double sharpness = 12.0) {
  const std::size_t h = model.hidden_dim();
  probe::Probe p;
  p.arch = probe::ProbeArch::for_input(h);
  p.w1.assign(p.arch.mid_dim * h, 0.0);
  p.b1.assign(p.arch.mid_dim, 0.0);
  p.w2.assign(p.arch.last_dim * p.arch.mid_dim, 0.0);
  p.b2.assign(p.arch.last_dim, 0.0);
  p.w3.assign(p.arch.last_dim, 0.0);
  p.b3.assign(1, 0.0);
  // route phi through the two rectified layers with a +0.5 offset so the
  // clipped range [-0.5, 1.5] stays positive, then recenter at the head
  p.w1[model.phi_index()] = 1.0;
  p.b1[0] = 0.5;
  p.w2[0] = 1.0;
  p.w3[0] = sharpness;
  p.b3[0] = -sharpness;
  return p;
}

}  // namespace hallucana::factlm
