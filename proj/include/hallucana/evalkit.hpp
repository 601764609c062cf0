#pragma once

/**
 * Evaluation machinery: rejection curves over graded factuality scores,
 * normalized area-under-curve, the generation quality index, the
 * tokens-per-fact compute metric, F-beta threshold selection and rank
 * correlation. All operations are pure functions over immutable records.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallucana/common.hpp"

namespace hallucana::evalkit {

/// Per-response evaluation record.
struct ResponseRecord {
  std::string id;
  double fs = 0.0;            // meaningful iff n_facts > 0 and not abstained
  std::size_t n_facts = 0;
  bool abstained = false;
  std::size_t enc_tokens = 0;
  std::size_t dec_tokens = 0;
  std::map<std::string, double> scores;  // per-scorer faithfulness scores
};

struct CurvePoint {
  double rejection_rate = 0.0;  // m/|D| for m rejected
  double mean_fs = 0.0;         // mean FS of the retained responses
};

// ============================================================================
// Abstention
// ============================================================================

inline std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

/// A response counts as abstained when it opens with "sorry" (any case),
/// falls below the word-count floor, or was already rejected pre-hoc.
inline bool abstention_detect(std::string_view text, bool prehoc_abstained,
                              std::size_t min_words = 16) {
  if (prehoc_abstained) return true;
  std::string_view trimmed = text;
  while (!trimmed.empty() &&
         std::isspace(static_cast<unsigned char>(trimmed.front())))
    trimmed.remove_prefix(1);
  static constexpr std::string_view kPrefix = "sorry";
  if (trimmed.size() >= kPrefix.size()) {
    bool match = true;
    for (std::size_t i = 0; i < kPrefix.size(); ++i)
      if (std::tolower(static_cast<unsigned char>(trimmed[i])) != kPrefix[i]) {
        match = false;
        break;
      }
    if (match) return true;
  }
  return count_words(text) < min_words;
}

// ============================================================================
// FS-rejection curves
// ============================================================================

/**
 * Iteratively reject the lowest-scored responses (ties by index) and record
 * the mean FS of what remains. Grid: m/|D| for m = 0 .. |D|-1, so at least
 * one response is always retained.
 */
inline std::vector<CurvePoint> fs_rejection_curve(std::span<const double> scores,
                                                  std::span<const double> fs) {
  if (scores.size() != fs.size())
    throw ConfigError("fs_rejection_curve: parallel lists differ in length");
  const std::size_t n = fs.size();
  if (n < 2)
    throw MetricUndefinedError("fs_rejection_curve needs at least 2 responses");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // mean FS of the suffix that survives after rejecting the first m
  std::vector<double> suffix_sum(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;)
    suffix_sum[i] = suffix_sum[i + 1] + fs[order[i]];
  std::vector<CurvePoint> curve(n);
  for (std::size_t m = 0; m < n; ++m) {
    curve[m].rejection_rate = static_cast<double>(m) / static_cast<double>(n);
    curve[m].mean_fs = suffix_sum[m] / static_cast<double>(n - m);
  }
  return curve;
}

inline double curve_auc(std::span<const CurvePoint> curve) {
  if (curve.size() < 2) throw MetricUndefinedError("curve has fewer than 2 points");
  double auc = 0.0;
  for (std::size_t i = 0; i + 1 < curve.size(); ++i)
    auc += 0.5 * (curve[i].mean_fs + curve[i + 1].mean_fs) *
           (curve[i + 1].rejection_rate - curve[i].rejection_rate);
  return auc;
}

/**
 * Area under the classifier's FS-rejection curve, normalized so a random
 * ranking scores 0 and the perfect ranking scores 1.
 */
inline double auc_fr_norm(std::span<const CurvePoint> classifier_curve,
                          std::span<const double> fs) {
  const std::size_t n = fs.size();
  if (classifier_curve.size() != n)
    throw ConfigError("auc_fr_norm: curve and fs sizes differ");
  if (n < 2) throw MetricUndefinedError("auc_fr_norm needs at least 2 responses");
  const double mean = std::accumulate(fs.begin(), fs.end(), 0.0) /
                      static_cast<double>(n);
  const double span = static_cast<double>(n - 1) / static_cast<double>(n);
  const double auc_rand = mean * span;
  // Perfect ranking rejects ascending FS: score each response by its own FS.
  const auto perfect = fs_rejection_curve(fs, fs);
  const double auc_pft = curve_auc(perfect);
  if (auc_pft == auc_rand)
    throw MetricUndefinedError("auc_fr_norm undefined: all FS values equal");
  return (curve_auc(classifier_curve) - auc_rand) / (auc_pft - auc_rand);
}

/// Convenience: curve + normalization in one call.
inline double auc_fr_norm_scores(std::span<const double> scores,
                                 std::span<const double> fs) {
  const auto curve = fs_rejection_curve(scores, fs);
  return auc_fr_norm(curve, fs);
}

// ============================================================================
// Generation quality index
// ============================================================================

/**
 * GQI: per-response (FS - gamma) * facts, summed over answered responses,
 * divided by |D| * sqrt(response rate). Responses below gamma count against.
 */
inline double gqi(std::span<const ResponseRecord> records, double gamma = 0.2) {
  if (records.empty()) throw MetricUndefinedError("gqi of an empty record set");
  double numerator = 0.0;
  std::size_t responded = 0;
  for (const auto& r : records) {
    if (r.abstained) continue;
    ++responded;
    if (r.n_facts > 0)
      numerator += (r.fs - gamma) * static_cast<double>(r.n_facts);
  }
  if (responded == 0)
    throw MetricUndefinedError("gqi undefined: response rate is zero");
  const double rate =
      static_cast<double>(responded) / static_cast<double>(records.size());
  return numerator / (static_cast<double>(records.size()) * std::sqrt(rate));
}

// ============================================================================
// Tokens per fact
// ============================================================================

/// Compute footprint: (lambda * encoded + decoded) tokens per atomic fact,
/// aggregated over all records. Abstained responses keep their token costs.
inline double tpf(std::span<const ResponseRecord> records, double lambda = 0.5) {
  double tokens = 0.0;
  std::size_t facts = 0;
  for (const auto& r : records) {
    tokens += lambda * static_cast<double>(r.enc_tokens) +
              static_cast<double>(r.dec_tokens);
    facts += r.abstained ? 0 : r.n_facts;
  }
  if (facts == 0) throw MetricUndefinedError("tpf undefined: zero facts produced");
  return tokens / static_cast<double>(facts);
}

// ============================================================================
// F-beta threshold selection
// ============================================================================

/**
 * Pick the decision threshold maximizing F-beta on a dev set. Ground truth
 * binarizes FS at gamma_bin; a response is predicted positive when its
 * score is at or above the threshold. Candidate thresholds are the observed
 * scores plus +inf; ties prefer the larger threshold.
 */
inline double select_threshold_fbeta(std::span<const double> scores,
                                     std::span<const double> fs, double beta,
                                     double gamma_bin = 0.5) {
  if (scores.size() != fs.size())
    throw ConfigError("select_threshold_fbeta: parallel lists differ in length");
  if (scores.size() < 2)
    throw MetricUndefinedError("select_threshold_fbeta needs at least 2 responses");
  std::size_t positives = 0;
  for (double v : fs) positives += v >= gamma_bin ? 1 : 0;
  if (positives == 0)
    throw MetricUndefinedError("select_threshold_fbeta: no positive ground truth");

  std::vector<double> candidates(scores.begin(), scores.end());
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  const double b2 = beta * beta;
  double best_f = -1.0, best_tau = candidates.front();
  for (double tau : candidates) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= tau) {
        if (fs[i] >= gamma_bin) ++tp;
        else ++fp;
      }
    }
    double f = 0.0;
    if (tp > 0) {
      const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double r = static_cast<double>(tp) / static_cast<double>(positives);
      f = (1.0 + b2) * p * r / (b2 * p + r);
    }
    if (f >= best_f) {  // ties prefer the larger threshold; candidates ascend
      best_f = f;
      best_tau = tau;
    }
  }
  return best_tau;
}

// ============================================================================
// Rank correlation
// ============================================================================

namespace detail {

inline std::vector<double> average_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("spearman: length mismatch");
  if (xs.size() < 3) throw ConfigError("spearman needs at least 3 pairs");
  const auto rx = detail::average_ranks(xs);
  const auto ry = detail::average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw MetricUndefinedError("spearman undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace hallucana::evalkit
