#pragma once

#include <stdexcept>
#include <string>

namespace coxq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of an operation
/// (MGF evaluated at or beyond its boundary, a <= rho(t), mu <= 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A time or index argument lies outside the simulated/recorded range.
class RangeError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// The expected amount of simulation work exceeds the configured budget.
class ResourceError : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// The query belongs to a different large-deviations regime than the
/// operation that was called.
class RegimeError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFamily : public Error {
 public:
  using Error::Error;
};

/// Rare-event estimation was requested for an event that is not rare.
class DegenerateQuery : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace coxq
