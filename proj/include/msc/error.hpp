#pragma once

#include <stdexcept>
#include <string>

namespace msc {

/// Base class of every error raised by the codec library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are not conformable for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments or unreadable user input.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A value that must be finite was NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training loss blew up or became NaN.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Base class for malformed or damaged byte streams.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedStreamError : public FormatError {
 public:
  using FormatError::FormatError;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  ChecksumError(std::string section, const std::string& what)
      : FormatError(what), section_(std::move(section)) {}

  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

}  // namespace msc
