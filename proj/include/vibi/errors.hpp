#pragma once

#include <stdexcept>
#include <string>

namespace vibi {

// Caller passed something outside an operation's domain (shape, range, config).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A node, parameter, or key that should exist does not.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed or truncated input files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values during training or evaluation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vibi

#define VIBI_REQUIRE(cond, msg)             \
  do {                                      \
    if (!(cond)) {                          \
      throw ::vibi::InvalidArgument(msg);   \
    }                                       \
  } while (false)
