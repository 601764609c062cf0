#pragma once

/**
 * Training-label machinery: string-match accuracy labels from greedy QA
 * answers, and corpus context-familiarity labels from consecutive
 * entity-span frequencies (geometric mean, log-capped into [0,1]).
 */

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallucana/common.hpp"
#include "hallucana/io.hpp"
#include "hallucana/lm.hpp"

namespace hallucana::labeler {

// ============================================================================
// String-match accuracy
// ============================================================================

/// Lowercase, trim whitespace, strip leading/trailing punctuation.
inline std::string normalize(std::string_view s) {
  std::size_t b = 0, e = s.size();
  auto strippable = [&](char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isspace(u) || std::ispunct(u);
  };
  while (b < e && strippable(s[b])) ++b;
  while (e > b && strippable(s[e - 1])) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i)
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
  return out;
}

/// True when the normalized strings are equal or either is a prefix or a
/// postfix of the other. Symmetric; empty-after-normalization never matches.
inline bool string_match(std::string_view predicted, std::string_view gold) {
  const std::string a = normalize(predicted);
  const std::string b = normalize(gold);
  if (a.empty() || b.empty()) return false;
  if (a == b) return true;
  const auto& shorter = a.size() <= b.size() ? a : b;
  const auto& longer = a.size() <= b.size() ? b : a;
  return longer.compare(0, shorter.size(), shorter) == 0 ||
         longer.compare(longer.size() - shorter.size(), shorter.size(),
                        shorter) == 0;
}

/// Concept for models that can answer a QA prompt and expose the answer text.
template <typename M>
concept AnsweringModel = lm::LanguageModel<M> && requires(const M& m) {
  { m.extract_answer(std::span<const lm::TokenId>{}) }
      -> std::convertible_to<std::string>;
};

/**
 * Binary accuracy label: greedy-decode an answer for the prompt and match
 * it against the gold aliases. Returns the label and the decoded answer.
 */
template <AnsweringModel M>
std::pair<int, std::string> acc_label(const M& model,
                                      std::span<const lm::TokenId> prompt,
                                      std::span<const std::string> gold,
                                      std::size_t max_answer_tokens = 16) {
  auto [state, hidden] = model.encode(prompt);
  auto result = lm::greedy_decode(model, std::move(state), max_answer_tokens,
                                  [&](lm::TokenId t) { return model.is_sentence_end(t); });
  const std::string predicted = model.extract_answer(result.tokens);
  for (const auto& alias : gold)
    if (string_match(predicted, alias)) return {1, predicted};
  return {0, predicted};
}

// ============================================================================
// Entity spans
// ============================================================================

enum class SpanMode { sentence_2gram, consecutive_2gram, consecutive_3gram };

inline std::string to_string(SpanMode m) {
  switch (m) {
    case SpanMode::sentence_2gram: return "sentence-2gram";
    case SpanMode::consecutive_2gram: return "consecutive-2gram";
    case SpanMode::consecutive_3gram: return "consecutive-3gram";
  }
  throw ConfigError("unknown span mode");
}

inline SpanMode span_mode_from_string(std::string_view s) {
  if (s == "sentence-2gram") return SpanMode::sentence_2gram;
  if (s == "consecutive-2gram") return SpanMode::consecutive_2gram;
  if (s == "consecutive-3gram") return SpanMode::consecutive_3gram;
  throw ConfigError("unknown span mode: " + std::string(s));
}

/**
 * Unordered span of co-mentioned entities, stored ascending. Pairs are
 * padded by repeating the larger id, which cannot collide with a triple
 * because triples are required to be distinct.
 */
struct EntitySpanKey {
  std::array<std::uint64_t, 3> ids{};

  auto operator<=>(const EntitySpanKey&) const = default;

  static EntitySpanKey triple(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    EntitySpanKey k{{a, b, c}};
    std::sort(k.ids.begin(), k.ids.end());
    if (k.ids[0] == k.ids[1] || k.ids[1] == k.ids[2])
      throw ConfigError("entity span: triple ids must be distinct");
    return k;
  }

  static EntitySpanKey pair(std::uint64_t a, std::uint64_t b) {
    if (a == b) throw ConfigError("entity span: pair ids must be distinct");
    if (a > b) std::swap(a, b);
    return EntitySpanKey{{a, b, b}};
  }
};

/**
 * Sliding-window spans over a document-order mention stream. Windows whose
 * entities are not all distinct are skipped. In sentence mode the window
 * must not cross a sentence boundary.
 */
inline std::vector<EntitySpanKey> extract_spans(
    std::span<const std::uint32_t> mentions, SpanMode mode,
    std::span<const std::uint32_t> sentence_ids = {}) {
  if (!sentence_ids.empty() && sentence_ids.size() != mentions.size())
    throw ConfigError("extract_spans: sentence ids must parallel mentions");
  std::vector<EntitySpanKey> out;
  const std::size_t width = mode == SpanMode::consecutive_3gram ? 3 : 2;
  if (mentions.size() < width) return out;
  for (std::size_t i = 0; i + width <= mentions.size(); ++i) {
    if (mode == SpanMode::sentence_2gram && !sentence_ids.empty() &&
        sentence_ids[i] != sentence_ids[i + 1])
      continue;
    if (width == 2) {
      if (mentions[i] == mentions[i + 1]) continue;
      out.push_back(EntitySpanKey::pair(mentions[i], mentions[i + 1]));
    } else {
      const std::uint32_t a = mentions[i], b = mentions[i + 1], c = mentions[i + 2];
      if (a == b || b == c || a == c) continue;
      out.push_back(EntitySpanKey::triple(a, b, c));
    }
  }
  return out;
}

// ============================================================================
// Span index
// ============================================================================

struct SpanIndex {
  std::map<EntitySpanKey, std::uint64_t> counts;
  std::uint64_t docs_indexed = 0;

  void add(const EntitySpanKey& key, std::uint64_t n = 1) { counts[key] += n; }

  std::uint64_t lookup(const EntitySpanKey& key) const {
    const auto it = counts.find(key);
    return it == counts.end() ? 0 : it->second;
  }

  /// Merge another shard in; associative and commutative.
  void merge(const SpanIndex& other) {
    for (const auto& [k, n] : other.counts) counts[k] += n;
    docs_indexed += other.docs_indexed;
  }

  bool operator==(const SpanIndex&) const = default;
};

/// A document as the indexer sees it: mentions in order, with the sentence
/// each one belongs to.
struct DocMentions {
  std::vector<std::uint32_t> entities;
  std::vector<std::uint32_t> sentences;
};

inline SpanIndex index_shard(std::span<const DocMentions> docs, SpanMode mode) {
  SpanIndex idx;
  for (const auto& doc : docs) {
    for (const auto& key : extract_spans(doc.entities, mode, doc.sentences))
      idx.add(key);
    idx.docs_indexed++;
  }
  return idx;
}

/// Count spans over the whole corpus, sharded and merged. The merge result
/// is identical to a single pass regardless of shard count.
inline SpanIndex build_index(std::span<const DocMentions> docs, SpanMode mode,
                             std::size_t n_shards = 1) {
  if (n_shards <= 1 || docs.size() < 2) return index_shard(docs, mode);
  n_shards = std::min(n_shards, docs.size());
  std::vector<std::future<SpanIndex>> futures;
  const std::size_t chunk = (docs.size() + n_shards - 1) / n_shards;
  for (std::size_t s = 0; s < n_shards; ++s) {
    const std::size_t lo = s * chunk;
    if (lo >= docs.size()) break;
    const std::size_t hi = std::min(lo + chunk, docs.size());
    futures.push_back(std::async(std::launch::async, [=, &docs] {
      return index_shard(docs.subspan(lo, hi - lo), mode);
    }));
  }
  SpanIndex total;
  for (auto& f : futures) total.merge(f.get());
  return total;
}

// ============================================================================
// Corpus familiarity label
// ============================================================================

/**
 * Geometric mean of the span frequencies of a QA entry's mention stream,
 * squashed into [0,1] by ln(1+g)/ln(1+cap). Entries without any span get no
 * label; a single unseen span forces the label to 0.
 */
inline std::optional<double> corpus_label(std::span<const std::uint32_t> mentions,
                                          const SpanIndex& index, double cap,
                                          SpanMode mode = SpanMode::consecutive_3gram) {
  if (cap <= 0) throw ConfigError("corpus_label: cap must be positive");
  const auto spans = extract_spans(mentions, mode);
  if (spans.empty()) return std::nullopt;
  double log_sum = 0.0;
  for (const auto& key : spans) {
    const std::uint64_t count = index.lookup(key);
    if (count == 0) return 0.0;  // strict geometric mean
    log_sum += std::log(static_cast<double>(count));
  }
  const double g = std::exp(log_sum / static_cast<double>(spans.size()));
  return std::min(1.0, std::log1p(g) / std::log1p(cap));
}

// ============================================================================
// Index persistence: "HCIDX1", sorted (id,id,id,count) u64le records
// ============================================================================

inline constexpr char kIndexMagic[6] = {'H', 'C', 'I', 'D', 'X', '1'};

inline void save_index(const SpanIndex& index, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kIndexMagic, sizeof(kIndexMagic));
  for (const auto& [key, count] : index.counts) {  // std::map iterates sorted
    io::put_u64le(buf, key.ids[0]);
    io::put_u64le(buf, key.ids[1]);
    io::put_u64le(buf, key.ids[2]);
    io::put_u64le(buf, count);
  }
  io::write_file(path, buf);
}

inline SpanIndex load_index(const std::filesystem::path& path) {
  const std::string buf = io::read_file(path);
  if (buf.size() < sizeof(kIndexMagic) ||
      std::memcmp(buf.data(), kIndexMagic, sizeof(kIndexMagic)) != 0)
    throw IoError("span index has bad magic: " + path.string());
  if ((buf.size() - sizeof(kIndexMagic)) % 32 != 0)
    throw IoError("span index truncated: " + path.string());
  SpanIndex idx;
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (std::size_t off = sizeof(kIndexMagic); off < buf.size(); off += 32) {
    EntitySpanKey key{{io::get_u64le(p + off), io::get_u64le(p + off + 8),
                       io::get_u64le(p + off + 16)}};
    const std::uint64_t count = io::get_u64le(p + off + 24);
    if (count == 0) throw IoError("span index contains a zero count");
    idx.counts[key] = count;
  }
  return idx;
}

// ============================================================================
// Labeled examples
// ============================================================================

/// One probe-training row: a hidden state plus at least one label.
struct LabeledExample {
  std::string id;
  std::string split;  // train2 | dev2 | dev
  std::vector<double> hidden;
  std::optional<double> lbl_acc;
  std::optional<double> lbl_corpus;

  void validate() const {
    if (!lbl_acc && !lbl_corpus)
      throw ConfigError("labeled example " + id + " carries no label");
    if (lbl_corpus && (*lbl_corpus < 0.0 || *lbl_corpus > 1.0))
      throw ConfigError("labeled example " + id + ": lbl_corpus outside [0,1]");
  }
};

inline void save_examples(std::span<const LabeledExample> examples,
                          const std::filesystem::path& path) {
  io::JsonlWriter out(path);
  for (const auto& ex : examples) {
    io::json j{{"id", ex.id}, {"split", ex.split}, {"hidden", ex.hidden}};
    if (ex.lbl_acc) j["lbl_acc"] = static_cast<int>(*ex.lbl_acc);
    if (ex.lbl_corpus) j["lbl_corpus"] = *ex.lbl_corpus;
    out.write(j);
  }
}

/// Reads both the native float-array form and the base64 float32 form used
/// by externally exported hidden-state datasets.
inline std::vector<LabeledExample> load_examples(const std::filesystem::path& path) {
  std::vector<LabeledExample> out;
  io::for_each_jsonl(path, [&](const io::json& j) {
    LabeledExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.split = j.at("split").get<std::string>();
    const auto& hidden = j.at("hidden");
    if (hidden.is_string())
      ex.hidden = io::decode_f32le_base64(hidden.get<std::string>());
    else
      ex.hidden = hidden.get<std::vector<double>>();
    if (j.contains("lbl_acc")) ex.lbl_acc = j.at("lbl_acc").get<double>();
    if (j.contains("lbl_corpus")) ex.lbl_corpus = j.at("lbl_corpus").get<double>();
    ex.validate();
    out.push_back(std::move(ex));
  });
  return out;
}

}  // namespace hallucana::labeler
