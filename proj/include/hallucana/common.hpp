#pragma once

/**
 * Shared error types and deterministic hashing / RNG primitives.
 *
 * Everything random in this library is derived from explicit 64-bit seeds
 * through counter-based hashing, so that any value is a pure function of
 * (seed, identifiers) and never of call order. This is what makes worlds,
 * probes and decode traces reproducible byte-for-byte across runs.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hallucana {

// ============================================================================
// Errors
// ============================================================================

/// Invalid parameter values or inconsistent configuration. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Missing, truncated or corrupt files; schema/version mismatch. CLI exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A metric whose value is mathematically undefined for the given input. Exit code 3.
class MetricUndefinedError : public std::runtime_error {
 public:
  explicit MetricUndefinedError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Token id outside the model vocabulary, or an empty prompt.
class VocabularyError : public std::runtime_error {
 public:
  explicit VocabularyError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Stepping a decoder state that has already emitted end-of-sequence.
class SequenceEndedError : public std::runtime_error {
 public:
  SequenceEndedError() : std::runtime_error("sequence already ended") {}
};

/// Token stream that does not follow the expected grammar or schema.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension mismatch between a tensor-like value and its consumer.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// ============================================================================
// Deterministic hashing
// ============================================================================

/// splitmix64 finalizer; good avalanche, stable across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

/// Hash an arbitrary list of 64-bit parts into one key.
template <typename... Parts>
std::uint64_t hash_key(std::uint64_t seed, Parts... parts) {
  std::uint64_t h = mix64(seed);
  ((h = hash_combine(h, static_cast<std::uint64_t>(parts))), ...);
  return h;
}

/// Uniform double in [0, 1) derived from a hash key.
inline double unit_from_hash(std::uint64_t key) {
  // 53 mantissa bits
  return static_cast<double>(key >> 11) * 0x1.0p-53;
}

template <typename... Parts>
double hash_unit(std::uint64_t seed, Parts... parts) {
  return unit_from_hash(hash_key(seed, parts...));
}

/// Standard normal via Box-Muller on two hashed uniforms.
template <typename... Parts>
double hash_gauss(std::uint64_t seed, Parts... parts) {
  const std::uint64_t k = hash_key(seed, parts...);
  double u1 = unit_from_hash(k);
  double u2 = unit_from_hash(mix64(k ^ 0xa5a5a5a5a5a5a5a5ULL));
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Unit-norm embedding of an integer id. Deterministic per (salt, id, dim).
inline std::vector<double> hash_embedding(std::uint64_t salt, std::uint64_t id,
                                          std::size_t dim) {
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    v[i] = hash_gauss(salt, id, static_cast<std::uint64_t>(i));
    norm2 += v[i] * v[i];
  }
  const double inv = norm2 > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (double& x : v) x *= inv;
  return v;
}

// ============================================================================
// Sequential RNG
// ============================================================================

/// Minimal counter RNG for places that want a stream (shuffles, init schemes).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform in [0, 1).
  double next_unit() { return unit_from_hash(next_u64()); }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace hallucana
