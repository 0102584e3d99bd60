#pragma once

#include <compare>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>

#include "mdetect/rng.hpp"

namespace mdetect {

inline constexpr std::size_t kBinaryHashHexLength = 16;

// Process identity within one experiment: a pid alone is reused by the OS, so
// the command line and the executable's content hash are part of the key.
struct UniqueProcessId {
  int pid = 0;
  std::string command;
  std::string binary_hash;  // 16 lowercase hex digits

  friend auto operator<=>(const UniqueProcessId&, const UniqueProcessId&) = default;
  friend bool operator==(const UniqueProcessId&, const UniqueProcessId&) = default;
};

inline std::string hex64(std::uint64_t v) {
  char buf[kBinaryHashHexLength + 1];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string binary_hash_of(std::string_view content) { return hex64(fnv1a64(content)); }

inline bool is_valid_binary_hash(std::string_view h) {
  if (h.size() != kBinaryHashHexLength) return false;
  for (char c : h) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

}  // namespace mdetect

template <>
struct std::hash<mdetect::UniqueProcessId> {
  std::size_t operator()(const mdetect::UniqueProcessId& id) const noexcept {
    std::uint64_t h = mdetect::fnv1a64(id.command);
    h = mdetect::fnv1a64(id.binary_hash, h);
    return static_cast<std::size_t>(mdetect::mix_seed(h, static_cast<std::uint64_t>(id.pid)));
  }
};
