#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Invalid input, bad configuration or a violated precondition. The CLI maps
// this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failure while doing valid work (I/O, numerical blow-up). Exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace detail
}  // namespace fedsim
