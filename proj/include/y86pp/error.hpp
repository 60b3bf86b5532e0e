#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace y86pp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad layout, params file, or CLI configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation was called outside its precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Source-level assembler error with a 1-based position.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class AssemblyError : public Error {
 public:
  using Error::Error;
};

// Undecodable bytes in an image; offset is relative to the image base.
class DecodeError : public Error {
 public:
  DecodeError(std::size_t offset, const std::string& what)
      : Error("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace y86pp
