#pragma once

#include <stdexcept>
#include <string>

namespace audit {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit status 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input that could not be parsed at all.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input parsed but violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Missing files, bad flags and other usage problems.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Numerical failure in the statistics engine (rank deficiency, singular
// matrices, degenerate responses).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace audit
