#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gcpo {

/// Input with the wrong shape or an out-of-domain argument.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation invoked in a state that does not permit it (missing forward tape,
/// stepping a terminated environment, ...).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A gradient or loss component was NaN/inf. The update that saw it was not applied.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (component " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Policy produced a non-finite mean action.
class PolicyDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Run configuration could not be parsed or validated. `line` is 0 when the
/// problem is not tied to a specific line (e.g. a missing key).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gcpo
