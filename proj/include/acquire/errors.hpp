#pragma once

#include <stdexcept>
#include <string>

namespace acquire {

/// Array or image sizes that do not agree.
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quantity left the domain where the model is defined (non-finite or
/// non-positive denominators in the KL term, for instance).
class NumericalDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Backtracking ran out of halvings.
class LineSearchFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": size " + std::to_string(a) +
                            " does not match " + std::to_string(b));
  }
}

}  // namespace detail
}  // namespace acquire
