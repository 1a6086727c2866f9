#pragma once

#include <stdexcept>
#include <string>

namespace lcm {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf detected, or a computation left its numerically valid domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the gradient tape (non-scalar loss, replaying a consumed tape).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Invalid schedule parameters, or a schedule too degenerate to invert.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Out-of-range argument or unknown identifier.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Configuration document rejected by strict parsing.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint content does not match its manifest.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

// An adapter was paired with a base network of a different architecture.
class IncompatibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace lcm
