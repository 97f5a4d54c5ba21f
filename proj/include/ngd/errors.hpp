#pragma once

#include <stdexcept>
#include <string>

namespace ngd {

/// Raised when a precondition on an argument is violated.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A function evaluation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, double node)
      : std::runtime_error(what + " (at x = " + std::to_string(node) + ")"), node_(node) {}

  double node() const noexcept { return node_; }

 private:
  double node_;
};

/// The Gramian of a generating system vanished, or a kernel has too small a rank.
class DegenerateSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conditioned sampling exhausted its attempt budget.
class StabilityUnreachable : public std::runtime_error {
 public:
  StabilityUnreachable(const std::string& what, int attempts)
      : std::runtime_error(what), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// The loss became non-finite or exceeded the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No admissible step size above the floor was found.
class StepStall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ngd
