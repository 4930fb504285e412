#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "covsteer/finite_horizon.hpp"
#include "covsteer/io.hpp"
#include "covsteer/stationary.hpp"

namespace covsteer {

struct SimConfig {
  int n_particles = 20000;
  double dt = 1e-3;
  std::uint64_t seed = 42;
  /// Record every record_stride-th step (the last step is always recorded).
  int record_stride = 10;
  /// Test hooks: switch off the w or v increments.
  bool process_noise = true;
  bool measurement_noise = true;
  /// Start every particle at this state instead of sampling it.
  std::optional<Vector> x0;
  /// Trajectories of particles with id < export_particles are kept.
  int export_particles = 0;
};

struct TrajectoryRow {
  double t = 0.0;
  int particle = 0;
  Vector x;
  Vector xhat;
  Vector u;
};

/// Sample statistics at the recorded nodes. Covariances use the 1/(N-1)
/// normalization around the sample mean (zero for N = 1); the cross term is
/// the raw second moment E[xhat xtilde'] with divisor N.
struct EnsembleStats {
  std::vector<double> times;
  std::vector<Vector> mean_x;
  std::vector<Vector> mean_xhat;
  std::vector<Matrix> cov_x;
  std::vector<Matrix> cov_xhat;
  std::vector<Matrix> cov_xtilde;
  std::vector<Matrix> cross_xhat_xtilde;
  int n_particles = 0;
  int n_diverged = 0;
  std::uint64_t seed = 0;
  std::vector<TrajectoryRow> trajectories;

  /// Index of the recorded node closest to t.
  std::size_t nearest(double t) const;
};

/// Closed loop on [0, T] under u = -K(t) xhat with the time-varying filter;
/// x(0) ~ N(0, Sigma0) and xhat(0) = 0.
EnsembleStats simulate_finite(const FiniteHorizonProblem& problem, const GainSchedule& schedule,
                              const SimConfig& config);

/// Constant K and L on [0, t_end]. Starts from xhat ~ N(0, Sigma - P) and an
/// independent error xtilde ~ N(0, P), so x(0) ~ N(0, Sigma).
EnsembleStats simulate_stationary(const StationaryProblem& problem,
                                  const StationaryController& controller,
                                  const SimConfig& config, double t_end);

/// Finite-horizon schedule on [0, T], then the stationary controller and
/// filter up to t_total.
EnsembleStats chain_finite_then_stationary(const FiniteHorizonProblem& problem,
                                           const GainSchedule& schedule,
                                           const StationaryController& controller,
                                           const SimConfig& config, double t_total);

/// Columns: t, particle_id, x_i, xhat_i, u_i.
void write_trajectory_csv(std::ostream& out, const EnsembleStats& stats);

/// One object per recorded node.
Json stats_to_json(const EnsembleStats& stats);

/// Worker count: COVSTEER_THREADS if set and positive, else hardware threads.
int simulation_threads();

}  // namespace covsteer
