#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dgppu {

// Error categories. The CLI maps each category onto a distinct exit code.
enum class ErrorKind {
  InvalidInput,
  InvalidConfig,
  EmptyInput,
  InsufficientPoints,
  Domain,
  Parse,
  Schema,
  Validation,
  WrongFrame,
  Corruption,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse errors carry the 1-based line (or record) number that failed.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace dgppu
