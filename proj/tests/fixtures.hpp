#pragma once

#include <random>

#include "covsteer/model.hpp"

namespace covsteer::testing {

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix M(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) M(i, j++) = v;
    ++i;
  }
  return M;
}

/// Position/velocity particle with noisy position readout.
inline LinearGaussianSystem double_integrator() {
  return LinearGaussianSystem(mat({{0, 1}, {0, 0}}), mat({{0}, {1}}), mat({{0}, {1}}),
                              mat({{1, 0}}), mat({{0.1}}));
}

inline LinearGaussianSystem scalar_system(double a, double b, double b1, double c, double d) {
  return LinearGaussianSystem(mat({{a}}), mat({{b}}), mat({{b1}}), mat({{c}}), mat({{d}}));
}

inline Matrix eye(Eigen::Index n) { return Matrix::Identity(n, n); }

inline FiniteHorizonProblem steering_problem(double target_scale = 0.5) {
  return FiniteHorizonProblem(double_integrator(), GaussianSpec(eye(2)),
                              GaussianSpec(target_scale * eye(2)), 1.0);
}

inline StationaryProblem holding_problem() {
  return StationaryProblem(double_integrator(), GaussianSpec(0.5 * eye(2)));
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                            double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = normal(rng);
  return M;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double floor = 0.1) {
  const Matrix G = random_matrix(rng, n, n);
  return G * G.transpose() + floor * eye(n);
}

/// Random plant that passes validate_system (retries until it does).
LinearGaussianSystem random_valid_system(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m,
                                         Eigen::Index p);

}  // namespace covsteer::testing
