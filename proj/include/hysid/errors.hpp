#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hysid {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions, layouts or options detected while building objects.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// The integrator could not advance (non-finite values, step underflow).
class IntegrationError : public Error {
  public:
    IntegrationError(const std::string &what, double t, double dt)
        : Error(what + " (t=" + std::to_string(t) + ", dt=" + std::to_string(dt) + ")"), t_(t),
          dt_(dt) {}

    double time() const noexcept { return t_; }
    double step() const noexcept { return dt_; }

  private:
    double t_;
    double dt_;
};

/// Step count exceeded max_steps.
class BudgetError : public Error {
  public:
    using Error::Error;
};

class RangeError : public Error {
  public:
    using Error::Error;
};

/// Event localization precondition or guard evaluation failed.
class EventError : public Error {
  public:
    using Error::Error;
};

/// A reset map produced a non-finite state.
class ResetError : public Error {
  public:
    ResetError(const std::string &what, std::size_t guard, double t)
        : Error(what + " (guard " + std::to_string(guard) + ", t=" + std::to_string(t) + ")"),
          guard_(guard), t_(t) {}

    std::size_t guard() const noexcept { return guard_; }
    double time() const noexcept { return t_; }

  private:
    std::size_t guard_;
    double t_;
};

/// Event-time derivative requested at a crossing with vanishing ġ.
class GrazingEventError : public Error {
  public:
    using Error::Error;
};

/// A tape-tracked value was used outside the tape that created it.
class InstrumentationError : public Error {
  public:
    using Error::Error;
};

/// Tape growth would exceed the configured memory budget.
class ResourceError : public Error {
  public:
    ResourceError(const std::string &what, std::size_t required_bytes)
        : Error(what + " (" + std::to_string(required_bytes) + " bytes required)"),
          required_(required_bytes) {}

    std::size_t required_bytes() const noexcept { return required_; }

  private:
    std::size_t required_;
};

/// Optimizer received a non-finite gradient.
class OptimizerError : public Error {
  public:
    using Error::Error;
};

class DesignError : public Error {
  public:
    using Error::Error;
};

/// Degenerate input data (e.g. zero drag energy in a relative error).
class DataError : public Error {
  public:
    using Error::Error;
};

} // namespace hysid
