#include "common/checksum.hpp"

#include <zlib.h>

namespace cactus {

std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t seed) {
  uLong crc = seed;
  const auto* data = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  // zlib takes uInt lengths; feed large buffers in slices.
  while (remaining > 0) {
    const uInt slice = remaining > (1u << 30) ? (1u << 30) : static_cast<uInt>(remaining);
    crc = ::crc32(crc, data, slice);
    data += slice;
    remaining -= slice;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace cactus
