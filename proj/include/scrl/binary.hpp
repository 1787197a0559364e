#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scrl/errors.hpp"

namespace scrl {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written with host byte order == little endian");

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void text(std::string_view s) {
    out_.insert(out_.end(), s.begin(), s.end());
  }
  template <typename T>
  void pod(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }
  template <typename T>
  void array(std::span<const T> values) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
    out_.insert(out_.end(), raw, raw + values.size_bytes());
  }
  // Appends CRC32 of everything written so far.
  void seal() { pod<std::uint32_t>(crc32_of(out_)); }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

// Bounds-checked little-endian cursor; every failure reports its byte offset.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(context_ + ": truncated " + what, pos_);
  }
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> array(std::size_t count, const char* what) {
    if (count > remaining() / sizeof(T)) {
      throw FormatError(context_ + ": truncated " + what, pos_);
    }
    std::vector<T> v(count);
    std::memcpy(v.data(), bytes_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return v;
  }
  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw FormatError(context_ + ": " + what, at);
  }

  // Splits off the trailing CRC32 and verifies it over all preceding bytes.
  static std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> bytes,
                                                  const std::string& context);

 private:
  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace scrl
