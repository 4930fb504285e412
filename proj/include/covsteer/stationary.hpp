#pragma once

#include "covsteer/kalman.hpp"
#include "covsteer/model.hpp"

namespace covsteer {

inline constexpr double kAssignabilityTolerance = 1e-9;

/// Whether Sigma can be held as the stationary state covariance.
///
/// Sigma is assignable iff A Sigma + Sigma A' + B1B1' + BX' + XB' = 0 has a
/// solution X (rank_ok, tested by least-squares residual) and Sigma - P > 0
/// where P is the stationary Kalman error covariance.
struct StationaryCertificate {
  Matrix P;
  double gap = 0.0;
  /// Minimum-norm least-squares solution; always present.
  Matrix X;
  /// Frobenius residual of the Lyapunov solvability condition at X.
  double lyapunov_residual = 0.0;
  double residual_tolerance = 0.0;
  bool rank_ok = false;
  bool assignable = false;
};

StationaryCertificate certify_stationary(const StationaryProblem& problem);

/// A Sigma + Sigma A' + B1B1'
Matrix lyapunov_forcing(const LinearGaussianSystem& system, const Matrix& Sigma);

struct StationaryController {
  Matrix K;
  StationaryFilter filter;
  bool hurwitz = false;
  double spectral_abscissa = 0.0;
  /// Zero when no regularization was applied.
  double epsilon = 0.0;
  Matrix Sigma_achieved;
  /// trace(K (Sigma_achieved - P) K')
  double power = 0.0;
  /// Sigma_target - Sigma_achieved (zero unless regularized).
  Matrix deviation;
};

/// K = -X'(Sigma - P)^{-1}. When A - BK is Hurwitz the target is achieved
/// exactly; otherwise hurwitz is false and regularize_epsilon() applies.
StationaryController synthesize_gain(const StationaryCertificate& certificate,
                                     const StationaryProblem& problem);

/// K_eps = K + (eps/2) B' (Sigma - P)^{-1}; the achieved covariance solves the
/// closed-loop Lyapunov equation and lies below the target by O(eps).
StationaryController regularize_epsilon(const StationaryController& controller,
                                        const StationaryProblem& problem, double epsilon);

enum class PowerWeighting {
  /// trace(X' (Sigma - P)^{-1} X), the input power E{u'u}.
  kFilterCovariance,
  /// trace(X' Sigma^{-1} X).
  kStateCovariance,
};

struct MinPowerOptions {
  PowerWeighting weighting = PowerWeighting::kFilterCovariance;
  /// Starting epsilon if the optimal gain is not stabilizing.
  double epsilon = 1e-2;
};

/// Minimizes the weighted trace over the affine solution set of the Lyapunov
/// solvability condition (null-space KKT solve), then recovers K.
StationaryController solve_min_power(const StationaryProblem& problem,
                                     const MinPowerOptions& options = {});

/// Minimizer X of the weighted trace; exposed for testing.
Matrix min_power_X(const StationaryProblem& problem, const Matrix& P,
                   PowerWeighting weighting);

struct Proposition1Report {
  Matrix Pi;
  double factorization_residual = 0.0;
  bool hurwitz = false;
  double spectral_abscissa = 0.0;
  double lyapunov_residual = 0.0;
  bool passed = false;
};

/// Checks whether K = B'Pi for a symmetric Pi with A - BB'Pi Hurwitz and the
/// closed-loop Lyapunov equation satisfied by Sigma_achieved - P. Passing
/// certifies minimum power; failing is inconclusive.
Proposition1Report verify_proposition1(const StationaryController& controller,
                                       const StationaryProblem& problem);

}  // namespace covsteer
