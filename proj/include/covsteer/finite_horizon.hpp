#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "covsteer/kalman.hpp"
#include "covsteer/model.hpp"
#include "covsteer/numerics.hpp"

namespace covsteer {

inline constexpr double kFeasibilityTolerance = 1e-9;

/// Terminal covariance test: feasible iff lambda_min(Sigma_T - P(T)) > tolerance.
struct FeasibilityCertificate {
  Matrix P_T;
  double gap = 0.0;
  bool feasible = false;
  double tolerance = kFeasibilityTolerance;
};

FeasibilityCertificate check_feasibility(const FiniteHorizonProblem& problem,
                                         const TimeGrid& grid,
                                         double tolerance = kFeasibilityTolerance);

/// Output-feedback controller u = -K(t) xhat(t) together with the filter that
/// produces xhat and the predicted covariance of xhat.
struct GainSchedule {
  TimeGrid grid;
  std::vector<Matrix> K_path;
  FilterSchedule filter;
  CovariancePath sigma_hat;
  double expected_cost = 0.0;

  /// Gain at time t, linear between grid nodes.
  Matrix gain_at(double t) const;
};

/// Trapezoid quadrature of trace(K Sigma_hat K') over the schedule grid.
double evaluate_expected_cost(const GainSchedule& schedule);

/// Columns: t, K_ij, L_ij, SigmaHat_ij (row-major, 1-based).
void write_gain_schedule_csv(std::ostream& out, const GainSchedule& schedule);

struct SigmaHatSweep {
  CovariancePath Pi_path;
  CovariancePath Sigma_hat_path;
};

/// Backward control Riccati from Pi_T, then the forward covariance of the
/// filter state under u = -B'Pi xhat starting from zero. Propagates
/// RiccatiEscape when Pi_T is outside the domain of the map.
SigmaHatSweep sigma_hat_from_pi(const FiniteHorizonProblem& problem,
                                const FilterSchedule& filter, const Matrix& Pi_T);
SigmaHatSweep sigma_hat_from_pi(const FiniteHorizonProblem& problem, const Matrix& Pi_T,
                                const TimeGrid& grid);

struct ShootingOptions {
  int max_iter = 50;
  /// Frobenius tolerance on Sigma_hat(T) - (Sigma_T - P(T)); <= 0 selects 1e-8 * n.
  double tol_res = 0.0;
  /// Initial bound on the Newton step in the symmetric parameterization.
  double trust_radius = 10.0;
  /// Central-difference step is fd_step * (1 + |Pi_T|).
  double fd_step = 1e-6;
  /// Starting terminal value; empty means zero.
  Matrix initial_Pi_T;
};

struct ShootingResult {
  Matrix Pi_T;
  CovariancePath Pi_path;
  CovariancePath Sigma_hat_path;
  double residual = 0.0;
  int iterations = 0;
  /// Residual after each accepted step, starting with the initial guess.
  std::vector<double> residual_history;
};

struct ShootingOutcome {
  ShootingResult result;
  GainSchedule schedule;
};

/// Damped Newton on Pi_T -> Sigma_hat(T). Throws PreconditionError if the
/// target is not feasible and ConvergenceError when the iteration budget runs
/// out or every trial step escapes.
ShootingOutcome shoot(const FiniteHorizonProblem& problem, const TimeGrid& grid,
                      const ShootingOptions& options = {});

struct ConvexOptions {
  int max_outer = 40;
  int max_inner = 400;
  int lbfgs_memory = 20;
  double initial_penalty = 1e3;
  /// Frobenius tolerance on the terminal boundary condition.
  double boundary_tol = 1e-7;
  /// Stop the inner solve when the scaled gradient norm drops below this.
  double gradient_tol = 1e-9;
};

struct ConvexReport {
  double objective = 0.0;
  double dynamics_residual = 0.0;
  double boundary_mismatch = 0.0;
  double min_sigma_hat_eigenvalue = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
  bool certified = false;
};

struct ConvexOutcome {
  GainSchedule schedule;
  ConvexReport report;
};

/// Raised when the convex fallback runs out of budget; the partial result is
/// still available (suboptimal, uncertified).
class ConvexFallbackError : public ConvergenceError {
 public:
  ConvexFallbackError(std::shared_ptr<const ConvexOutcome> outcome);
  const ConvexOutcome& outcome() const { return *outcome_; }

 private:
  std::shared_ptr<const ConvexOutcome> outcome_;
};

/// Time-discretized convex program over (U_k, Sigma_hat_k, Y_k) with
/// trapezoidal dynamics, Sigma_hat_0 = 0, Sigma_hat_N = Sigma_T - P(T) and
/// [[Y_k, U_k'], [U_k, Sigma_hat_k]] >= 0, minimizing the trapezoid sum of
/// trace(Y_k). The gain is recovered as K_k = -U_k' Sigma_hat_k^{-1}, with
/// K_0 = K_1 because Sigma_hat_0 = 0.
ConvexOutcome solve_convex_fallback(const FiniteHorizonProblem& problem,
                                    const TimeGrid& grid, const ConvexOptions& options = {});

/// Trapezoidal-collocation residual of the Sigma_hat dynamics with
/// U_k = -Sigma_hat_k K_k', maximum Frobenius norm over the steps.
double trapezoid_dynamics_residual(const LinearGaussianSystem& system,
                                   const GainSchedule& schedule);

/// Symmetric parameterization with sqrt(2)-weighted off-diagonals, so the
/// Euclidean norm of svec(M) is the Frobenius norm of M.
Vector svec(const Matrix& M);
Matrix smat(const Vector& v, Eigen::Index n);

}  // namespace covsteer
