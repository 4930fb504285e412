#pragma once

#include <stdexcept>
#include <string>

namespace covsteer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix shapes do not agree with the declared system dimensions.
class DimensionError : public Error {
 public:
  DimensionError(std::string matrix, const std::string& what)
      : Error(matrix + ": " + what), matrix_(std::move(matrix)) {}
  const std::string& matrix() const noexcept { return matrix_; }

 private:
  std::string matrix_;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// An ODE integration produced non-finite values.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double time)
      : Error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Finite-time escape of the backward control Riccati equation. The
/// terminal value that produced it is outside the domain of the shooting map.
class RiccatiEscape : public Error {
 public:
  explicit RiccatiEscape(double time)
      : Error("control Riccati solution escapes at t = " + std::to_string(time)),
        time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double best_residual, int iterations)
      : Error(what + " (best residual " + std::to_string(best_residual) + " after " +
              std::to_string(iterations) + " iterations)"),
        best_residual_(best_residual),
        iterations_(iterations) {}
  double best_residual() const noexcept { return best_residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double best_residual_;
  int iterations_;
};

}  // namespace covsteer
