#ifndef VIBENCH_ERRORS_HPP
#define VIBENCH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace vibench {

/// Thrown when a configuration or specification cannot produce a valid object
/// (for example, a covariance that is not positive definite).
class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation is requested that the object does not support,
/// such as a score-function gradient for a flow without a tractable inverse.
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when a computation produces non-finite values.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, long index = -1)
      : std::runtime_error(what), index_(index) {}

  /// Offending draw or coordinate, or -1 when not applicable.
  long index() const { return index_; }

 private:
  long index_;
};

}  // namespace vibench

#endif
