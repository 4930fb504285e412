#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "covsteer/errors.hpp"

namespace covsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Linear time-invariant plant
///
///   dx = A x dt + B u dt + B1 dw
///   dy = C x dt + D dv
///
/// with w, v independent standard Wiener processes. Construction checks that
/// the five matrices agree on (n, m, m1, p); the structural assumptions
/// (controllability, observability, invertible D) are checked separately by
/// validate_system() so that they can be reported rather than thrown.
class LinearGaussianSystem {
 public:
  LinearGaussianSystem(Matrix A, Matrix B, Matrix B1, Matrix C, Matrix D);

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& B1() const { return B1_; }
  const Matrix& C() const { return C_; }
  const Matrix& D() const { return D_; }

  Eigen::Index n() const { return A_.rows(); }
  Eigen::Index m() const { return B_.cols(); }
  Eigen::Index m1() const { return B1_.cols(); }
  Eigen::Index p() const { return C_.rows(); }

  /// B1 B1'
  const Matrix& process_noise() const { return process_noise_; }
  /// D D'
  const Matrix& measurement_noise() const { return measurement_noise_; }
  /// (D D')^{-1}; throws PreconditionError if D is singular.
  const Matrix& measurement_precision() const;
  /// C' (D D')^{-1} C
  const Matrix& information_rate() const;

 private:
  Matrix A_, B_, B1_, C_, D_;
  Matrix process_noise_;
  Matrix measurement_noise_;
  Matrix measurement_precision_;
  Matrix information_rate_;
  bool d_invertible_ = false;
};

/// Zero-mean Gaussian law described by its covariance.
class GaussianSpec {
 public:
  /// Covariances asymmetric by less than 1e-9 (relative) are symmetrized;
  /// anything else, or a covariance that is not positive definite, is rejected.
  explicit GaussianSpec(const Matrix& covariance);
  /// Only the zero mean is supported; a nonzero mean is rejected.
  GaussianSpec(const Vector& mean, const Matrix& covariance);

  const Matrix& covariance() const { return covariance_; }
  Vector mean() const { return Vector::Zero(covariance_.rows()); }
  Eigen::Index dim() const { return covariance_.rows(); }

 private:
  Matrix covariance_;
};

/// Steer N(0, initial) at t = 0 to N(0, target) at t = horizon.
struct FiniteHorizonProblem {
  FiniteHorizonProblem(LinearGaussianSystem system, GaussianSpec initial,
                       GaussianSpec target, double horizon);

  LinearGaussianSystem system;
  GaussianSpec initial;
  GaussianSpec target;
  double horizon;
};

/// Keep the state at the stationary law N(0, target).
struct StationaryProblem {
  StationaryProblem(LinearGaussianSystem system, GaussianSpec target);

  LinearGaussianSystem system;
  GaussianSpec target;
};

struct Finding {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct ValidationReport {
  int controllability_rank = 0;
  int observability_rank = 0;
  double d_min_singular_value = 0.0;
  std::vector<Finding> findings;

  bool passed() const;
  std::string summary() const;
};

/// Rank of [B, AB, ..., A^{n-1}B] with singular-value threshold n*eps*sigma_max.
int controllability_rank(const Matrix& A, const Matrix& B);
/// Rank of the observability matrix of (A, C); dual of controllability_rank.
int observability_rank(const Matrix& A, const Matrix& C);

ValidationReport validate_system(const LinearGaussianSystem& system);

/// Throws PreconditionError carrying the report summary unless the system
/// passes every structural check.
void require_valid(const LinearGaussianSystem& system);

/// Numerical rank from singular values, threshold max(rows, cols)*eps*sigma_max.
int numerical_rank(const Matrix& M);

}  // namespace covsteer
