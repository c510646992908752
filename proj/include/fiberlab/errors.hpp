#pragma once

#include <stdexcept>
#include <string>

namespace fiberlab {

// Precondition on an argument value failed (bad range, bad shape, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. running backward on a tape that was never recorded.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Expression glyphs do not fit the canvas.
class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input is well-formed but carries no usable signal (single group, zero variance, ...).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fiberlab
