#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mefa {

/// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input for which the operation is mathematically undefined (e.g. zero-norm vectors).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller supplied an argument outside the operation's precondition.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Gradient checker hit a non-finite function value at a probe point.
class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace mefa
