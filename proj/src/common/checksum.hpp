#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace cactus {

/// CRC-32 (zlib polynomial), chainable through `seed`.
std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t seed = 0);

inline std::uint32_t crc32(std::string_view text, std::uint32_t seed = 0) {
  return crc32(std::as_bytes(std::span(text.data(), text.size())), seed);
}

template <typename T>
std::uint32_t crc32_of(std::span<const T> values, std::uint32_t seed = 0) {
  return crc32(std::as_bytes(values), seed);
}

}  // namespace cactus
