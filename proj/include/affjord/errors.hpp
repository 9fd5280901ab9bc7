#pragma once

#include <stdexcept>
#include <string>

namespace affjord {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or size mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite input or output where finite values are required.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar argument (zero probe count, non-positive step, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent model / run configuration.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Adaptive integration exhausted its step budget.
class StiffnessError : public Error {
 public:
  StiffnessError(const std::string& what, double t_reached, std::size_t accepted,
                 std::size_t rejected, std::size_t nfe)
      : Error(what),
        t_reached(t_reached),
        accepted(accepted),
        rejected(rejected),
        nfe(nfe) {}

  double t_reached;
  std::size_t accepted;
  std::size_t rejected;
  std::size_t nfe;
};

/// Requested computation exceeds a configured memory guard.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent multiscale bookkeeping (missing stored levels, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset description (empty glyph bitmap, bad parameters).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Config-file or flag parse failure. Carries the offending key and line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string key, int line)
      : Error(what), key(std::move(key)), line(line) {}

  std::string key;
  int line;  // 0 when the error came from a command-line flag
};

}  // namespace affjord
