#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gridsim {

// Base of every recoverable error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RouteError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class NoMatchError : public Error {
 public:
  using Error::Error;
};

class ConstraintError : public Error {
 public:
  using Error::Error;
};

class ReservationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

// Raised when an event handler fails; carries the offending event.
class SimulationError : public Error {
 public:
  SimulationError(std::string event_description, const std::string& cause)
      : Error("event " + event_description + ": " + cause),
        event_(std::move(event_description)) {}

  const std::string& event() const noexcept { return event_; }

 private:
  std::string event_;
};

// Collects every problem found while validating a scenario.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out = "scenario validation failed:";
    for (const auto& p : items) {
      out += "\n  ";
      out += p;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace gridsim
