#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace scrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes in a file or buffer. Carries the byte offset when known.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what,
                       std::optional<std::size_t> offset = std::nullopt)
      : Error(offset ? what + " (at byte " + std::to_string(*offset) + ")"
                     : what),
        offset_(offset) {}

  std::optional<std::size_t> offset() const { return offset_; }

 private:
  std::optional<std::size_t> offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A configuration key or value that cannot be used.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace scrl
