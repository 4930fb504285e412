#pragma once

#include <iosfwd>
#include <vector>

#include "covsteer/model.hpp"
#include "covsteer/numerics.hpp"

namespace covsteer {

/// Time-varying Kalman filter on a grid: error covariance P(t) and gain
/// L(t) = P(t) C' (DD')^{-1}.
struct FilterSchedule {
  TimeGrid grid;
  CovariancePath P_path;
  std::vector<Matrix> L_path;

  /// Gain at time t, linear between grid nodes.
  Matrix gain_at(double t) const;
};

struct StationaryFilter {
  Matrix P;
  Matrix L;
};

/// Kalman gain P C' (DD')^{-1}.
Matrix kalman_gain(const LinearGaussianSystem& system, const Matrix& P);

/// Integrates the filter Riccati equation from P(t0) = Sigma0.
FilterSchedule build_filter_schedule(const LinearGaussianSystem& system,
                                     const Matrix& Sigma0, const TimeGrid& grid);

/// Throws ConvergenceError if A - LC is not Hurwitz.
StationaryFilter build_stationary_filter(const LinearGaussianSystem& system);

/// Columns: t, P_ij (row-major), L_ij (row-major).
void write_filter_csv(std::ostream& out, const FilterSchedule& filter);

}  // namespace covsteer
