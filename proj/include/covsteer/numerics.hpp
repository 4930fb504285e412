#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "covsteer/model.hpp"

namespace covsteer {

/// Uniform grid t_k = t0 + k (t1 - t0) / steps, k = 0..steps.
class TimeGrid {
 public:
  TimeGrid(double t0, double t1, int steps);

  double t0() const { return t0_; }
  double t1() const { return t1_; }
  int steps() const { return steps_; }
  int size() const { return steps_ + 1; }
  double step() const { return (t1_ - t0_) / steps_; }
  double node(int k) const;

  /// Index k of the interval [t_k, t_{k+1}] containing t (clamped to the grid).
  int interval(double t) const;

  bool operator==(const TimeGrid& other) const = default;

 private:
  double t0_;
  double t1_;
  int steps_;
};

/// Symmetric matrices on the nodes of a TimeGrid, optionally with their time
/// derivatives. With derivatives, at() interpolates by cubic Hermite; without,
/// linearly.
class CovariancePath {
 public:
  CovariancePath(TimeGrid grid, std::vector<Matrix> values,
                 std::vector<Matrix> derivatives = {});

  const TimeGrid& grid() const { return grid_; }
  const std::vector<Matrix>& values() const { return values_; }
  const std::vector<Matrix>& derivatives() const { return derivatives_; }
  bool has_derivatives() const { return !derivatives_.empty(); }

  const Matrix& operator[](int k) const { return values_[static_cast<std::size_t>(k)]; }
  const Matrix& front() const { return values_.front(); }
  const Matrix& back() const { return values_.back(); }
  int size() const { return static_cast<int>(values_.size()); }

  Matrix at(double t) const;

 private:
  TimeGrid grid_;
  std::vector<Matrix> values_;
  std::vector<Matrix> derivatives_;
};

using MatrixField = std::function<Matrix(double)>;

/// Piecewise-linear field through node samples on grid.
MatrixField linear_interpolant(const TimeGrid& grid, std::vector<Matrix> nodes);

Matrix symmetrize(const Matrix& M);

/// Kalman error covariance: P' = AP + PA' + B1B1' - PC'(DD')^{-1}CP, P(t0) = P0.
/// Classical RK4, re-symmetrized after every step. Stores node derivatives.
CovariancePath integrate_riccati_forward(const LinearGaussianSystem& system,
                                         const Matrix& P0, const TimeGrid& grid);

/// S' = A(t) S + S A(t)' + Q(t), S(t0) = S0, by RK4 with re-symmetrization.
CovariancePath integrate_lyapunov_forward(const MatrixField& A_of_t,
                                          const MatrixField& Q_of_t, const Matrix& S0,
                                          const TimeGrid& grid);
CovariancePath integrate_lyapunov_forward(const Matrix& A, const Matrix& Q,
                                          const Matrix& S0, const TimeGrid& grid);
/// Node-sampled coefficients, linearly interpolated between nodes.
CovariancePath integrate_lyapunov_forward(const std::vector<Matrix>& A_nodes,
                                          const std::vector<Matrix>& Q_nodes,
                                          const Matrix& S0, const TimeGrid& grid);

/// Control Riccati Pi' = -A'Pi - Pi A + Pi B B' Pi integrated backward from
/// Pi(t1) = Pi_T. Pi_T need not be semidefinite. Throws RiccatiEscape when
/// the solution leaves every bounded set before reaching t0.
CovariancePath integrate_control_riccati_backward(const LinearGaussianSystem& system,
                                                  const Matrix& Pi_T, const TimeGrid& grid);

/// Stabilizing solution of AP + PA' + B1B1' - PC'(DD')^{-1}CP = 0.
Matrix solve_care(const LinearGaussianSystem& system);

/// Residual AP + PA' + B1B1' - PC'(DD')^{-1}CP.
Matrix care_residual(const LinearGaussianSystem& system, const Matrix& P);

/// Solver for A X + X A' + Q = 0 with a fixed coefficient A (Bartels-Stewart on
/// the complex Schur form). Requires lambda_i + conj(lambda_j) != 0.
class LyapunovSolver {
 public:
  explicit LyapunovSolver(const Matrix& A);
  Matrix solve(const Matrix& Q) const;

 private:
  Eigen::MatrixXcd back_substitute(const Matrix& Q) const;

  Matrix A_;
  Eigen::MatrixXcd U_;
  Eigen::MatrixXcd T_;
};

/// S with A S + S A' + Q = 0; A must be Hurwitz.
Matrix solve_algebraic_lyapunov(const Matrix& A, const Matrix& Q);

/// e^{M t}
Matrix expm(const Matrix& M, double t);

struct HurwitzTest {
  bool hurwitz = false;
  double spectral_abscissa = 0.0;
};

inline constexpr double kHurwitzTolerance = 1e-10;

/// Hurwitz iff the spectral abscissa is below -1e-10.
HurwitzTest is_hurwitz(const Matrix& M);

struct DefinitenessTest {
  bool positive_definite = false;
  double min_eigenvalue = 0.0;
};

/// Cholesky-based test; the smallest eigenvalue is reported either way.
DefinitenessTest is_positive_definite(const Matrix& M);

double min_eigenvalue(const Matrix& symmetric);
double max_eigenvalue(const Matrix& symmetric);

/// Trapezoid rule over the grid nodes.
double trapezoid(const TimeGrid& grid, const std::vector<double>& values);

}  // namespace covsteer
