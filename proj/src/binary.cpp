#include "scrl/binary.hpp"

#include <zlib.h>

namespace scrl {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks so >4 GiB buffers stay correct.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::span<const std::uint8_t> ByteReader::verify_crc(std::span<const std::uint8_t> bytes,
                                                     const std::string& context) {
  if (bytes.size() < 4) throw FormatError(context + ": missing CRC32", bytes.size());
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (stored != crc32_of(body)) throw FormatError(context + ": CRC32 mismatch", body.size());
  return body;
}

}  // namespace scrl
