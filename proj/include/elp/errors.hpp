#pragma once

#include <stdexcept>
#include <string>

namespace elp {

/// Dimensions of two operands (or an operand and a contract) do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on values (positivity, non-emptiness, ...) was violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Some pixel is never exposed by any mask, so per-pixel normalization is undefined.
class DegenerateMaskError : public std::runtime_error {
 public:
  DegenerateMaskError(long row, long col)
      : std::runtime_error("degenerate mask: pixel (" + std::to_string(row) + ", " +
                           std::to_string(col) + ") is never exposed"),
        row_(row),
        col_(col) {}

  long row() const { return row_; }
  long col() const { return col_; }

 private:
  long row_;
  long col_;
};

/// Reverse pass reached a tape node that has no backward rule.
class UnsupportedOpError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace elp
