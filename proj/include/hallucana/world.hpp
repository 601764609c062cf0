#pragma once

/**
 * Synthetic world: a knowledge base of (entity, relation, value) facts, a
 * popularity-skewed document corpus with aligned entity mentions, QA sets
 * over one relation subset and a biography benchmark over a disjoint one.
 *
 * Entity popularity follows a Zipf law over entity ids (id 0 most popular).
 * Every known entity has two fixed associates drawn from a small pool of
 * hub entities; its documents and QA questions mention the subject and the
 * associates consecutively, so entity-span frequencies recover popularity.
 * A tail of "unknown" entities never occurs in the corpus at all.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hallucana/common.hpp"
#include "hallucana/io.hpp"
#include "hallucana/lm.hpp"

namespace hallucana::world {

using lm::TokenId;

// ============================================================================
// Configuration
// ============================================================================

struct WorldConfig {
  std::size_t n_entities = 1000;
  std::vector<std::string> qa_relations = {"field", "mentor", "base", "prize"};
  std::vector<std::string> bio_relations = {"birthyear", "origin", "craft",
                                            "honor"};
  std::size_t values_per_relation = 12;
  double zipf_exponent = 1.1;
  std::size_t n_docs = 4000;
  std::size_t noise_sentences = 2;          // extra sentences per document
  std::size_t noise_mentions_per_sentence = 2;
  std::size_t hub_entities = 12;            // associates come from the top ids
  double unknown_fraction = 0.10;           // tail ids absent from the corpus
  double qa_dev_fraction = 0.15;
  std::size_t benchmark_subjects = 200;
  std::size_t benchmark_dev_subjects = 100;
  double benchmark_unknown_fraction = 0.20;
  std::size_t fewshot_examples = 1;

  void validate() const {
    if (n_entities < 1) throw ConfigError("world: need at least one entity");
    if (qa_relations.empty() || bio_relations.empty())
      throw ConfigError("world: need at least one relation per split");
    for (const auto& r : qa_relations)
      for (const auto& b : bio_relations)
        if (r == b)
          throw ConfigError("world: qa and bio relations must be disjoint");
    if (values_per_relation < 2)
      throw ConfigError("world: need at least 2 values per relation");
    if (zipf_exponent <= 0) throw ConfigError("world: zipf exponent must be > 0");
    if (unknown_fraction < 0 || unknown_fraction >= 1 ||
        benchmark_unknown_fraction < 0 || benchmark_unknown_fraction > 1 ||
        qa_dev_fraction <= 0 || qa_dev_fraction >= 1)
      throw ConfigError("world: fractions out of range");
    if (hub_entities < 3 || hub_entities >= n_entities)
      throw ConfigError("world: hub pool must have >= 3 entities and fit");
  }
};

/// Parameters of the deterministic toy model built on top of a world.
struct FactLmParams {
  std::size_t hidden_dim = 64;   // H = grammar + subject embeddings + fam + phi
  double noise_sigma = 0.5;      // corruption of the factuality feature
  std::size_t distractor_count = 6;
  double familiarity_floor = 0.10;  // truth mass for a never-seen subject
  double logit_noise = 2.0;         // slot jitter shape; 0 = even distractors
  std::uint64_t seed = 0;

  void validate(const WorldConfig& w) const {
    if (hidden_dim < 8) throw ConfigError("factlm: hidden_dim must be >= 8");
    if (noise_sigma < 0 || logit_noise < 0)
      throw ConfigError("factlm: noise scales must be >= 0");
    if (familiarity_floor < 0 || familiarity_floor > 1)
      throw ConfigError("factlm: familiarity_floor out of [0,1]");
    if (distractor_count < 1)
      throw ConfigError("factlm: need at least one distractor");
    if (distractor_count > w.values_per_relation - 1)
      throw ConfigError("factlm: more distractors than the value vocabulary");
  }
};

// ============================================================================
// Vocabulary
// ============================================================================

/**
 * Token layout: eos, period, fixed template words, relation words, one token
 * per entity, one token per (relation, value). Derived from the config alone,
 * so corpora serialized as surfaces round-trip exactly.
 */
class Vocabulary {
 public:
  static constexpr TokenId kEos = 0;
  static constexpr TokenId kPeriod = 1;

  Vocabulary() = default;

  explicit Vocabulary(const WorldConfig& cfg) {
    add("<eos>");
    add(".");
    for (const char* w : kWords) word_ids_[w] = add(w);
    n_qa_relations_ = cfg.qa_relations.size();
    for (const auto& r : cfg.qa_relations) relation_base_.push_back(add(r));
    for (const auto& r : cfg.bio_relations) relation_base_.push_back(add(r));
    entity_base_ = static_cast<TokenId>(tokens_.size());
    for (std::size_t e = 0; e < cfg.n_entities; ++e)
      add("entity-" + std::to_string(e));
    const std::size_t n_rel = cfg.qa_relations.size() + cfg.bio_relations.size();
    value_base_ = static_cast<TokenId>(tokens_.size());
    values_per_relation_ = cfg.values_per_relation;
    for (std::size_t r = 0; r < n_rel; ++r)
      for (std::size_t v = 0; v < cfg.values_per_relation; ++v)
        add(value_surface(r, v));
    n_entities_ = cfg.n_entities;
  }

  static std::string value_surface(std::size_t relation, std::size_t value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "value-%zu-%03zu", relation, value);
    return buf;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& text(TokenId t) const { return tokens_.at(static_cast<std::size_t>(t)); }

  TokenId word(const std::string& w) const {
    auto it = word_ids_.find(w);
    if (it == word_ids_.end()) throw VocabularyError("unknown template word: " + w);
    return it->second;
  }

  TokenId entity_token(std::uint32_t e) const {
    return entity_base_ + static_cast<TokenId>(e);
  }
  TokenId relation_token(std::size_t r) const { return relation_base_.at(r); }
  TokenId value_token(std::size_t r, std::size_t v) const {
    return value_base_ + static_cast<TokenId>(r * values_per_relation_ + v);
  }

  bool is_entity(TokenId t) const {
    return t >= entity_base_ && t < entity_base_ + static_cast<TokenId>(n_entities_);
  }
  std::uint32_t entity_of(TokenId t) const {
    return static_cast<std::uint32_t>(t - entity_base_);
  }
  bool is_value(TokenId t) const { return t >= value_base_; }
  /// (relation, value index) of a value token.
  std::pair<std::size_t, std::size_t> value_of(TokenId t) const {
    const std::size_t off = static_cast<std::size_t>(t - value_base_);
    return {off / values_per_relation_, off % values_per_relation_};
  }
  std::optional<std::size_t> relation_of(TokenId t) const {
    for (std::size_t r = 0; r < relation_base_.size(); ++r)
      if (relation_base_[r] == t) return r;
    return std::nullopt;
  }

  TokenId lookup(const std::string& surface) const {
    auto it = index_.find(surface);
    if (it == index_.end())
      throw VocabularyError("surface not in vocabulary: " + surface);
    return it->second;
  }

  /// Render tokens as whitespace-joined surfaces, skipping end-of-sequence.
  std::string render(std::span<const TokenId> tokens) const {
    std::string out;
    for (TokenId t : tokens) {
      if (t == kEos) continue;
      if (!out.empty()) out.push_back(' ');
      out += text(t);
    }
    return out;
  }

 private:
  static constexpr const char* kWords[] = {"bio", "of", ":", "Q",     "A",
                                           "?",   ",",  "about", "with", "and",
                                           "is",  "the"};

  TokenId add(const std::string& s) {
    index_[s] = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(s);
    return static_cast<TokenId>(tokens_.size() - 1);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::unordered_map<std::string, TokenId> word_ids_;
  std::vector<TokenId> relation_base_;
  TokenId entity_base_ = 0;
  TokenId value_base_ = 0;
  std::size_t values_per_relation_ = 0;
  std::size_t n_entities_ = 0;
  std::size_t n_qa_relations_ = 0;
};

// ============================================================================
// World data
// ============================================================================

struct KnowledgeBase {
  std::vector<std::string> relations;  // qa relations first, then bio
  std::size_t n_qa_relations = 0;
  // facts[e][r] = value index into the relation's value pool
  std::vector<std::vector<std::uint32_t>> facts;

  std::size_t n_relations() const { return relations.size(); }
  bool is_bio_relation(std::size_t r) const { return r >= n_qa_relations; }
};

struct Mention {
  std::size_t pos = 0;       // token position within the document
  std::uint32_t entity = 0;
};

struct Doc {
  std::vector<TokenId> tokens;
  std::vector<Mention> mentions;  // in document order
};

struct SynthCorpus {
  std::vector<Doc> docs;
};

struct QaEntry {
  std::string id;
  std::string source;  // "alpha" or "beta"; epochs concatenate both
  std::uint32_t entity = 0;
  std::uint32_t relation = 0;            // global relation index
  std::vector<TokenId> question;         // question segment only
  std::vector<std::string> gold;         // alias surfaces; empty = null gold
  std::vector<std::uint32_t> mentions;   // entity ids in question order
};

struct BenchmarkEntry {
  std::string id;
  std::uint32_t entity = 0;
  std::vector<TokenId> prompt;
};

struct World {
  WorldConfig config;
  FactLmParams params;
  std::uint64_t seed = 0;
  Vocabulary vocab;
  KnowledgeBase kb;
  SynthCorpus corpus;
  std::vector<QaEntry> qa_train;
  std::vector<QaEntry> qa_dev;
  std::vector<BenchmarkEntry> benchmark;
  std::vector<BenchmarkEntry> benchmark_dev;

  std::size_t n_known() const {
    return config.n_entities -
           static_cast<std::size_t>(static_cast<double>(config.n_entities) *
                                    config.unknown_fraction);
  }
  bool is_unknown(std::uint32_t e) const { return e >= n_known(); }

  /// Subject and its two fixed associates, the mention triple used by both
  /// documents and QA questions.
  std::array<std::uint32_t, 3> mention_triple(std::uint32_t e) const {
    const auto pool = static_cast<std::uint32_t>(config.hub_entities);
    auto a1 = static_cast<std::uint32_t>(hash_key(seed, 0x41535331ULL, e) % pool);
    while (a1 == e) a1 = (a1 + 1) % pool;
    auto a2 = static_cast<std::uint32_t>(hash_key(seed, 0x41535332ULL, e) % pool);
    while (a2 == e || a2 == a1) a2 = (a2 + 1) % pool;
    return {e, a1, a2};
  }

  std::vector<TokenId> bio_prompt(std::uint32_t e) const {
    return {vocab.word("bio"), vocab.word("of"), vocab.entity_token(e),
            vocab.word(":")};
  }

  /// Question tokens for (entity, qa relation): mentions subject then its
  /// two associates, consecutively.
  std::vector<TokenId> question_tokens(std::uint32_t e, std::uint32_t rel) const {
    const auto triple = mention_triple(e);
    return {vocab.word("Q"),   vocab.word(":"),
            vocab.word("about"), vocab.entity_token(triple[0]),
            vocab.word("with"),  vocab.entity_token(triple[1]),
            vocab.word("and"),   vocab.entity_token(triple[2]),
            vocab.word(","),     vocab.relation_token(rel),
            vocab.word("?"),     vocab.word("A"),
            vocab.word(":")};
  }

  /// Declarative answer statement: "<entity> <relation> is <value> ."
  std::vector<TokenId> answer_tokens(std::uint32_t e, std::uint32_t rel,
                                     std::uint32_t value_index) const {
    return {vocab.entity_token(e), vocab.relation_token(rel), vocab.word("is"),
            vocab.value_token(rel, value_index), Vocabulary::kPeriod};
  }

  /// Few-shot prefix plus the question segment; the fixed template QA
  /// answers run through.
  std::vector<TokenId> qa_prompt(const QaEntry& entry) const {
    std::vector<TokenId> prompt;
    for (std::size_t i = 0; i < config.fewshot_examples; ++i) {
      const std::uint32_t demo = static_cast<std::uint32_t>(i % n_known());
      const std::uint32_t rel = static_cast<std::uint32_t>(i % kb.n_qa_relations);
      const auto q = question_tokens(demo, rel);
      prompt.insert(prompt.end(), q.begin(), q.end());
      const auto a = answer_tokens(demo, rel, kb.facts[demo][rel]);
      prompt.insert(prompt.end(), a.begin(), a.end());
    }
    prompt.insert(prompt.end(), entry.question.begin(), entry.question.end());
    return prompt;
  }

  /// Corpus mention count per entity.
  std::vector<std::uint64_t> mention_counts() const {
    std::vector<std::uint64_t> counts(config.n_entities, 0);
    for (const auto& doc : corpus.docs)
      for (const auto& m : doc.mentions) counts[m.entity]++;
    return counts;
  }
};

// ============================================================================
// Generation
// ============================================================================

namespace detail {

/// Cumulative Zipf weights over ranks 0..n-1.
inline std::vector<double> zipf_cdf(std::size_t n, double s) {
  std::vector<double> cdf(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), s);
    cdf[i] = total;
  }
  for (double& v : cdf) v /= total;
  return cdf;
}

inline std::uint32_t sample_cdf(const std::vector<double>& cdf, double u) {
  const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  const std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
  return static_cast<std::uint32_t>(std::min(idx, cdf.size() - 1));
}

}  // namespace detail

/// Build the whole world deterministically from (config, params, seed).
inline World gen_world(const WorldConfig& config, const FactLmParams& params,
                       std::uint64_t seed) {
  config.validate();
  params.validate(config);
  World w;
  w.config = config;
  w.params = params;
  w.seed = seed;
  w.vocab = Vocabulary(config);

  const std::size_t n_rel = config.qa_relations.size() + config.bio_relations.size();
  w.kb.relations = config.qa_relations;
  w.kb.relations.insert(w.kb.relations.end(), config.bio_relations.begin(),
                        config.bio_relations.end());
  w.kb.n_qa_relations = config.qa_relations.size();
  w.kb.facts.assign(config.n_entities, std::vector<std::uint32_t>(n_rel, 0));
  for (std::uint32_t e = 0; e < config.n_entities; ++e)
    for (std::size_t r = 0; r < n_rel; ++r)
      w.kb.facts[e][r] = static_cast<std::uint32_t>(
          hash_key(seed, 0x46414354ULL, e, r) % config.values_per_relation);

  // --- corpus ---------------------------------------------------------
  const std::size_t n_known = w.n_known();
  const auto subject_cdf = detail::zipf_cdf(n_known, config.zipf_exponent);
  w.corpus.docs.reserve(config.n_docs);
  const TokenId t_about = w.vocab.word("about");
  const TokenId t_with = w.vocab.word("with");
  const TokenId t_and = w.vocab.word("and");
  for (std::size_t d = 0; d < config.n_docs; ++d) {
    const std::uint32_t subj = detail::sample_cdf(
        subject_cdf, hash_unit(seed, 0x444f4353ULL, d));
    Doc doc;
    const auto triple = w.mention_triple(subj);
    auto mention = [&](std::uint32_t e) {
      doc.mentions.push_back({doc.tokens.size(), e});
      doc.tokens.push_back(w.vocab.entity_token(e));
    };
    doc.tokens.push_back(t_about);
    mention(triple[0]);
    doc.tokens.push_back(t_with);
    mention(triple[1]);
    doc.tokens.push_back(t_and);
    mention(triple[2]);
    doc.tokens.push_back(Vocabulary::kPeriod);
    for (std::size_t s = 0; s < config.noise_sentences; ++s) {
      doc.tokens.push_back(t_about);
      for (std::size_t m = 0; m < config.noise_mentions_per_sentence; ++m) {
        const std::uint32_t noise = detail::sample_cdf(
            subject_cdf, hash_unit(seed, 0x4e4f4953ULL, d, s, m));
        if (m > 0) doc.tokens.push_back(t_and);
        mention(noise);
      }
      doc.tokens.push_back(Vocabulary::kPeriod);
    }
    w.corpus.docs.push_back(std::move(doc));
  }

  // --- QA sets: all entities x qa relations, null golds sprinkled ------
  for (std::uint32_t e = 0; e < config.n_entities; ++e) {
    for (std::uint32_t r = 0; r < w.kb.n_qa_relations; ++r) {
      QaEntry entry;
      entry.id = "qa-" + std::to_string(e) + "-" + w.kb.relations[r];
      entry.source = (r % 2 == 0) ? "alpha" : "beta";
      entry.entity = e;
      entry.relation = r;
      entry.question = w.question_tokens(e, r);
      const auto triple = w.mention_triple(e);
      entry.mentions.assign(triple.begin(), triple.end());
      // a small slice of source beta mimics entries whose gold answer is
      // missing; the labeler drops them
      const bool null_gold =
          entry.source == "beta" && hash_key(seed, 0x4e554c4cULL, e, r) % 40 == 0;
      if (!null_gold)
        entry.gold = {Vocabulary::value_surface(r, w.kb.facts[e][r])};
      const bool dev = hash_unit(seed, 0x51444556ULL, e) < config.qa_dev_fraction;
      (dev ? w.qa_dev : w.qa_train).push_back(std::move(entry));
    }
  }

  // --- benchmarks: popularity spectrum plus an unknown slice -----------
  auto build_benchmark = [&](std::size_t n_subjects, std::uint64_t salt) {
    std::vector<BenchmarkEntry> bench;
    const std::size_t n_unknown_pool = config.n_entities - n_known;
    std::size_t n_unknown = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_subjects) *
                     config.benchmark_unknown_fraction));
    n_unknown = std::min(n_unknown, n_unknown_pool);
    const std::size_t n_from_known = n_subjects - n_unknown;
    std::vector<std::uint32_t> subjects;
    for (std::size_t i = 0; i < n_from_known; ++i) {
      const double frac = n_from_known == 1
                              ? 0.0
                              : static_cast<double>(i) /
                                    static_cast<double>(n_from_known - 1);
      auto e = static_cast<std::uint32_t>(frac * static_cast<double>(n_known - 1));
      subjects.push_back(e);
    }
    for (std::size_t i = 0; i < n_unknown; ++i) {
      const std::size_t offset = hash_key(seed, salt, i) % n_unknown_pool;
      subjects.push_back(static_cast<std::uint32_t>(n_known + offset));
    }
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    // top up after dedup, preferring untouched ids
    std::uint32_t cursor = 0;
    while (subjects.size() < n_subjects &&
           cursor < static_cast<std::uint32_t>(config.n_entities)) {
      if (!std::binary_search(subjects.begin(), subjects.end(), cursor)) {
        subjects.push_back(cursor);
        std::sort(subjects.begin(), subjects.end());
      }
      ++cursor;
    }
    for (std::uint32_t e : subjects) {
      BenchmarkEntry b;
      b.id = "bio-" + std::to_string(e);
      b.entity = e;
      b.prompt = w.bio_prompt(e);
      bench.push_back(std::move(b));
    }
    return bench;
  };
  w.benchmark = build_benchmark(config.benchmark_subjects, 0x42454e43ULL);
  w.benchmark_dev = build_benchmark(config.benchmark_dev_subjects, 0x42444556ULL);

  return w;
}

// ============================================================================
// Serialization (directory of UTF-8 JSONL files plus a config snapshot)
// ============================================================================

inline void to_json(io::json& j, const WorldConfig& c) {
  j = io::json{{"n_entities", c.n_entities},
               {"qa_relations", c.qa_relations},
               {"bio_relations", c.bio_relations},
               {"values_per_relation", c.values_per_relation},
               {"zipf_exponent", c.zipf_exponent},
               {"n_docs", c.n_docs},
               {"noise_sentences", c.noise_sentences},
               {"noise_mentions_per_sentence", c.noise_mentions_per_sentence},
               {"hub_entities", c.hub_entities},
               {"unknown_fraction", c.unknown_fraction},
               {"qa_dev_fraction", c.qa_dev_fraction},
               {"benchmark_subjects", c.benchmark_subjects},
               {"benchmark_dev_subjects", c.benchmark_dev_subjects},
               {"benchmark_unknown_fraction", c.benchmark_unknown_fraction},
               {"fewshot_examples", c.fewshot_examples}};
}

inline void from_json(const io::json& j, WorldConfig& c) {
  WorldConfig d;
  c.n_entities = j.value("n_entities", d.n_entities);
  c.qa_relations = j.value("qa_relations", d.qa_relations);
  c.bio_relations = j.value("bio_relations", d.bio_relations);
  c.values_per_relation = j.value("values_per_relation", d.values_per_relation);
  c.zipf_exponent = j.value("zipf_exponent", d.zipf_exponent);
  c.n_docs = j.value("n_docs", d.n_docs);
  c.noise_sentences = j.value("noise_sentences", d.noise_sentences);
  c.noise_mentions_per_sentence =
      j.value("noise_mentions_per_sentence", d.noise_mentions_per_sentence);
  c.hub_entities = j.value("hub_entities", d.hub_entities);
  c.unknown_fraction = j.value("unknown_fraction", d.unknown_fraction);
  c.qa_dev_fraction = j.value("qa_dev_fraction", d.qa_dev_fraction);
  c.benchmark_subjects = j.value("benchmark_subjects", d.benchmark_subjects);
  c.benchmark_dev_subjects =
      j.value("benchmark_dev_subjects", d.benchmark_dev_subjects);
  c.benchmark_unknown_fraction =
      j.value("benchmark_unknown_fraction", d.benchmark_unknown_fraction);
  c.fewshot_examples = j.value("fewshot_examples", d.fewshot_examples);
}

inline void to_json(io::json& j, const FactLmParams& p) {
  j = io::json{{"hidden_dim", p.hidden_dim},
               {"noise_sigma", p.noise_sigma},
               {"distractor_count", p.distractor_count},
               {"familiarity_floor", p.familiarity_floor},
               {"logit_noise", p.logit_noise},
               {"seed", p.seed}};
}

inline void from_json(const io::json& j, FactLmParams& p) {
  FactLmParams d;
  p.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  p.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  p.distractor_count = j.value("distractor_count", d.distractor_count);
  p.familiarity_floor = j.value("familiarity_floor", d.familiarity_floor);
  p.logit_noise = j.value("logit_noise", d.logit_noise);
  p.seed = j.value("seed", d.seed);
}

namespace detail {

inline io::json tokens_to_json(const Vocabulary& v, std::span<const TokenId> toks) {
  io::json arr = io::json::array();
  for (TokenId t : toks) arr.push_back(v.text(t));
  return arr;
}

inline std::vector<TokenId> tokens_from_json(const Vocabulary& v, const io::json& arr) {
  std::vector<TokenId> out;
  out.reserve(arr.size());
  for (const auto& s : arr) out.push_back(v.lookup(s.get<std::string>()));
  return out;
}

inline void write_qa(const std::filesystem::path& path, const World& w,
                     const std::vector<QaEntry>& entries) {
  io::JsonlWriter out(path);
  for (const auto& e : entries) {
    io::json j{{"id", e.id},
               {"source", e.source},
               {"entity", w.vocab.text(w.vocab.entity_token(e.entity))},
               {"relation", w.kb.relations[e.relation]},
               {"question", tokens_to_json(w.vocab, e.question)},
               {"gold", e.gold}};
    io::json mentions = io::json::array();
    for (auto m : e.mentions) mentions.push_back(w.vocab.text(w.vocab.entity_token(m)));
    j["mentions"] = mentions;
    out.write(j);
  }
}

inline std::vector<QaEntry> read_qa(const std::filesystem::path& path, const World& w) {
  std::vector<QaEntry> entries;
  io::for_each_jsonl(path, [&](const io::json& j) {
    QaEntry e;
    e.id = j.at("id").get<std::string>();
    e.source = j.at("source").get<std::string>();
    e.entity = w.vocab.entity_of(w.vocab.lookup(j.at("entity").get<std::string>()));
    const std::string rel = j.at("relation").get<std::string>();
    const auto it = std::find(w.kb.relations.begin(), w.kb.relations.end(), rel);
    if (it == w.kb.relations.end()) throw IoError("unknown relation: " + rel);
    e.relation = static_cast<std::uint32_t>(it - w.kb.relations.begin());
    e.question = tokens_from_json(w.vocab, j.at("question"));
    e.gold = j.at("gold").get<std::vector<std::string>>();
    for (const auto& m : j.at("mentions"))
      e.mentions.push_back(w.vocab.entity_of(w.vocab.lookup(m.get<std::string>())));
    entries.push_back(std::move(e));
  });
  return entries;
}

}  // namespace detail

inline void save_world(const World& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::json meta{{"seed", w.seed}, {"world", w.config}, {"factlm", w.params}};
  io::write_file(dir / "world_meta.json", meta.dump(2) + "\n");

  {
    io::JsonlWriter out(dir / "kb.jsonl");
    for (std::uint32_t e = 0; e < w.kb.facts.size(); ++e)
      for (std::size_t r = 0; r < w.kb.n_relations(); ++r)
        out.write(io::json{
            {"entity", w.vocab.text(w.vocab.entity_token(e))},
            {"relation", w.kb.relations[r]},
            {"value", Vocabulary::value_surface(r, w.kb.facts[e][r])}});
  }
  {
    io::JsonlWriter out(dir / "corpus.jsonl");
    for (const auto& doc : w.corpus.docs) {
      io::json mentions = io::json::array();
      for (const auto& m : doc.mentions)
        mentions.push_back(io::json{
            {"pos", m.pos}, {"entity", w.vocab.text(w.vocab.entity_token(m.entity))}});
      out.write(io::json{{"tokens", detail::tokens_to_json(w.vocab, doc.tokens)},
                         {"mentions", mentions}});
    }
  }
  {
    io::JsonlWriter out(dir / "benchmark.jsonl");
    for (const auto& b : w.benchmark)
      out.write(io::json{{"id", b.id},
                         {"entity", w.vocab.text(w.vocab.entity_token(b.entity))},
                         {"prompt", detail::tokens_to_json(w.vocab, b.prompt)},
                         {"split", "test"}});
    for (const auto& b : w.benchmark_dev)
      out.write(io::json{{"id", b.id},
                         {"entity", w.vocab.text(w.vocab.entity_token(b.entity))},
                         {"prompt", detail::tokens_to_json(w.vocab, b.prompt)},
                         {"split", "dev"}});
  }
  detail::write_qa(dir / "qa_train.jsonl", w, w.qa_train);
  detail::write_qa(dir / "qa_dev.jsonl", w, w.qa_dev);
}

inline World load_world(const std::filesystem::path& dir) {
  const auto meta = io::json::parse(io::read_file(dir / "world_meta.json"));
  World w;
  w.seed = meta.at("seed").get<std::uint64_t>();
  w.config = meta.at("world").get<WorldConfig>();
  w.params = meta.at("factlm").get<FactLmParams>();
  w.config.validate();
  w.params.validate(w.config);
  w.vocab = Vocabulary(w.config);

  const std::size_t n_rel = w.config.qa_relations.size() + w.config.bio_relations.size();
  w.kb.relations = w.config.qa_relations;
  w.kb.relations.insert(w.kb.relations.end(), w.config.bio_relations.begin(),
                        w.config.bio_relations.end());
  w.kb.n_qa_relations = w.config.qa_relations.size();
  w.kb.facts.assign(w.config.n_entities, std::vector<std::uint32_t>(n_rel, 0));
  io::for_each_jsonl(dir / "kb.jsonl", [&](const io::json& j) {
    const auto e = w.vocab.entity_of(w.vocab.lookup(j.at("entity").get<std::string>()));
    const std::string rel = j.at("relation").get<std::string>();
    const auto it = std::find(w.kb.relations.begin(), w.kb.relations.end(), rel);
    if (it == w.kb.relations.end()) throw IoError("kb.jsonl: unknown relation " + rel);
    const std::size_t r = static_cast<std::size_t>(it - w.kb.relations.begin());
    const TokenId vt = w.vocab.lookup(j.at("value").get<std::string>());
    if (!w.vocab.is_value(vt)) throw IoError("kb.jsonl: not a value token");
    w.kb.facts[e][r] = static_cast<std::uint32_t>(w.vocab.value_of(vt).second);
  });

  io::for_each_jsonl(dir / "corpus.jsonl", [&](const io::json& j) {
    Doc doc;
    doc.tokens = detail::tokens_from_json(w.vocab, j.at("tokens"));
    for (const auto& m : j.at("mentions"))
      doc.mentions.push_back(
          {m.at("pos").get<std::size_t>(),
           w.vocab.entity_of(w.vocab.lookup(m.at("entity").get<std::string>()))});
    w.corpus.docs.push_back(std::move(doc));
  });

  io::for_each_jsonl(dir / "benchmark.jsonl", [&](const io::json& j) {
    BenchmarkEntry b;
    b.id = j.at("id").get<std::string>();
    b.entity = w.vocab.entity_of(w.vocab.lookup(j.at("entity").get<std::string>()));
    b.prompt = detail::tokens_from_json(w.vocab, j.at("prompt"));
    if (j.value("split", "test") == "dev")
      w.benchmark_dev.push_back(std::move(b));
    else
      w.benchmark.push_back(std::move(b));
  });

  w.qa_train = detail::read_qa(dir / "qa_train.jsonl", w);
  w.qa_dev = detail::read_qa(dir / "qa_dev.jsonl", w);
  return w;
}

}  // namespace hallucana::world
