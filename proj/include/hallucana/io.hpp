#pragma once

/**
 * File and encoding helpers: CRC32, base64, little-endian packing,
 * whole-file reads and JSONL iteration.
 */

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hallucana/common.hpp"

namespace hallucana::io {

using json = nlohmann::json;

// ============================================================================
// CRC32 (IEEE, reflected)
// ============================================================================

inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t seed = 0) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t c = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i)
    c = crc32_table()[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

// ============================================================================
// Little-endian packing
// ============================================================================

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(out, bits);
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline double get_f64le(const unsigned char* p) {
  const std::uint64_t bits = get_u64le(p);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

// ============================================================================
// Base64 (standard alphabet, '=' padding)
// ============================================================================

inline std::string base64_encode(const void* data, std::size_t len) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  const auto* p = static_cast<const unsigned char*>(data);
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(p[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<std::uint32_t>(p[i + 1]) << 8;
    if (i + 2 < len) chunk |= p[i + 2];
    out.push_back(alphabet[(chunk >> 18) & 0x3f]);
    out.push_back(alphabet[(chunk >> 12) & 0x3f]);
    out.push_back(i + 1 < len ? alphabet[(chunk >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < len ? alphabet[chunk & 0x3f] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value_of(c);
    if (v < 0) throw IoError("base64: invalid character");
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

/// Pack doubles as little-endian float32 and base64-encode, the wire form
/// used for externally exported hidden-state datasets.
inline std::string base64_f32le(const std::vector<double>& values) {
  std::string raw;
  raw.reserve(values.size() * 4);
  for (double d : values) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(raw, bits);
  }
  return base64_encode(raw.data(), raw.size());
}

inline std::vector<double> decode_f32le_base64(std::string_view text) {
  const auto raw = base64_decode(text);
  if (raw.size() % 4 != 0) throw IoError("base64 float32 payload not a multiple of 4 bytes");
  std::vector<double> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = get_u32le(raw.data() + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

// ============================================================================
// Files
// ============================================================================

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to " + path.string());
}

/// Call fn on every non-empty line parsed as JSON.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    fn(j);
  }
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
    if (!out_) throw IoError("cannot write " + path_);
  }

  void write(const json& j) {
    out_ << j.dump() << '\n';
    if (!out_) throw IoError("short write to " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

}  // namespace hallucana::io
