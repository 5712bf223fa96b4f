#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fsl {

// Bad or inconsistent experiment configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller handed an operation arguments outside its contract.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Broken internal invariant (stale cache, zero trust reaching aggregation).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Text or binary format errors. `line` is 1-based for text formats, 0 otherwise.
class ParseError : public std::runtime_error {
 public:
  enum class Kind {
    kUnexpectedMagic,
    kTruncated,
    kCountMismatch,
    kUnreadable,
    kSyntax,
    kUnknownKey,
    kDuplicateKey,
    kMissingKey,
    kType,
    kInvalidValue,
  };

  ParseError(Kind kind, const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), kind_(kind), line_(line) {}

  Kind kind() const noexcept { return kind_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

}  // namespace fsl
