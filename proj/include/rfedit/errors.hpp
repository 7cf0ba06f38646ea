#ifndef RFEDIT_ERRORS_HPP
#define RFEDIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rfedit {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotSpd : public Error {
 public:
  using Error::Error;
};

class InvalidSchedule : public Error {
 public:
  using Error::Error;
};

class DegenerateStep : public Error {
 public:
  using Error::Error;
};

class ScheduleMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class UnknownCondition : public Error {
 public:
  using Error::Error;
};

class DimMismatch : public Error {
 public:
  using Error::Error;
};

/// Malformed input text (JSON config, curve CSV). Carries the location.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A config that parsed but violates one or more invariants. The message
/// lists every violation, one per line.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfedit

#endif  // RFEDIT_ERRORS_HPP
