#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nesy {

// Base of every error raised by the library. `code()` is a stable machine
// token used by the HTTP layer and the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  ShapeError(std::size_t node, std::string op, std::string expected, std::string actual)
      : Error("shape_mismatch", "node " + std::to_string(node) + " (" + op + "): expected " +
                                    expected + ", got " + actual),
        node_(node),
        op_(std::move(op)),
        expected_(std::move(expected)),
        actual_(std::move(actual)) {}

  std::size_t node() const noexcept { return node_; }
  const std::string& op() const noexcept { return op_; }
  const std::string& expected() const noexcept { return expected_; }
  const std::string& actual() const noexcept { return actual_; }

 private:
  std::size_t node_;
  std::string op_;
  std::string expected_;
  std::string actual_;
};

// Out-of-range argument (truth value outside [0,1], empty quantifier domain, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain_error", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("non_finite", message) {}
};

class NotFound : public Error {
 public:
  explicit NotFound(const std::string& message) : Error("not_found", message) {}
};

// Operation refused because of current state (duplicate name, training in
// progress, stale plan, ...).
class Conflict : public Error {
 public:
  Conflict(std::string code, const std::string& message) : Error(std::move(code), message) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error("malformed_file", message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A persisted session that cannot be loaded.
class CorruptSession : public Error {
 public:
  explicit CorruptSession(const std::string& message) : Error("session_corrupt", message) {}
};

struct SourceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool operator==(const SourceSpan&) const = default;
};

class ParseError : public Error {
 public:
  ParseError(SourceSpan span, const std::string& message, std::vector<std::string> expected)
      : Error("parse_error", message), span_(span), expected_(std::move(expected)) {}

  SourceSpan span() const noexcept { return span_; }
  const std::vector<std::string>& expected() const noexcept { return expected_; }

 private:
  SourceSpan span_;
  std::vector<std::string> expected_;
};

struct Diagnostic {
  SourceSpan span;
  std::string message;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Diagnostic> diagnostics)
      : Error("invalid_formula", join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string join(const std::vector<Diagnostic>& ds) {
    std::string out;
    for (const auto& d : ds) {
      if (!out.empty()) out += "; ";
      out += d.message;
    }
    return out;
  }

  std::vector<Diagnostic> diagnostics_;
};

}  // namespace nesy
