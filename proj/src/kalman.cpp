#include "covsteer/kalman.hpp"

#include <ostream>

#include "covsteer/io.hpp"

namespace covsteer {

Matrix FilterSchedule::gain_at(double t) const {
  const int k = grid.interval(t);
  const double s = (t - grid.node(k)) / grid.step();
  return (1.0 - s) * L_path[static_cast<std::size_t>(k)] +
         s * L_path[static_cast<std::size_t>(k + 1)];
}

Matrix kalman_gain(const LinearGaussianSystem& system, const Matrix& P) {
  return P * system.C().transpose() * system.measurement_precision();
}

FilterSchedule build_filter_schedule(const LinearGaussianSystem& system,
                                     const Matrix& Sigma0, const TimeGrid& grid) {
  if (min_eigenvalue(Sigma0) < -1e-12 * (1.0 + Sigma0.norm()))
    throw PreconditionError("Sigma0 must be positive semidefinite");
  auto P_path = integrate_riccati_forward(system, Sigma0, grid);
  std::vector<Matrix> L_path;
  L_path.reserve(static_cast<std::size_t>(grid.size()));
  for (const auto& P : P_path.values()) L_path.push_back(kalman_gain(system, P));
  return FilterSchedule{grid, std::move(P_path), std::move(L_path)};
}

StationaryFilter build_stationary_filter(const LinearGaussianSystem& system) {
  Matrix P = solve_care(system);
  Matrix L = kalman_gain(system, P);
  const auto test = is_hurwitz(system.A() - L * system.C());
  if (!test.hurwitz) {
    throw ConvergenceError("stationary filter is not stable (A - LC abscissa " +
                               std::to_string(test.spectral_abscissa) + ")",
                           care_residual(system, P).norm(), 0);
  }
  return {std::move(P), std::move(L)};
}

void write_filter_csv(std::ostream& out, const FilterSchedule& filter) {
  const auto& P0 = filter.P_path.front();
  const auto& L0 = filter.L_path.front();
  out << "t";
  write_matrix_header(out, "P", P0.rows(), P0.cols());
  write_matrix_header(out, "L", L0.rows(), L0.cols());
  out << '\n';
  for (int k = 0; k < filter.grid.size(); ++k) {
    out << format_number(filter.grid.node(k));
    write_matrix_row(out, filter.P_path[k]);
    write_matrix_row(out, filter.L_path[static_cast<std::size_t>(k)]);
    out << '\n';
  }
}

}  // namespace covsteer
