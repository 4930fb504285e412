#include "covsteer/finite_horizon.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "covsteer/io.hpp"

namespace covsteer {
namespace {

GainSchedule make_schedule(FilterSchedule filter, std::vector<Matrix> K_path,
                           CovariancePath sigma_hat) {
  const TimeGrid grid = filter.grid;
  GainSchedule schedule{grid, std::move(K_path), std::move(filter), std::move(sigma_hat), 0.0};
  schedule.expected_cost = evaluate_expected_cost(schedule);
  return schedule;
}

}  // namespace

Vector svec(const Matrix& M) {
  const Eigen::Index n = M.rows();
  Vector v(n * (n + 1) / 2);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      v(idx++) = i == j ? M(i, i) : std::sqrt(2.0) * 0.5 * (M(i, j) + M(j, i));
    }
  }
  return v;
}

Matrix smat(const Vector& v, Eigen::Index n) {
  if (v.size() != n * (n + 1) / 2) throw DimensionError("svec", "length must be n(n+1)/2");
  Matrix M(n, n);
  Eigen::Index idx = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double x = v(idx++);
      if (i == j) {
        M(i, i) = x;
      } else {
        M(i, j) = M(j, i) = x / std::sqrt(2.0);
      }
    }
  }
  return M;
}

FeasibilityCertificate check_feasibility(const FiniteHorizonProblem& problem,
                                         const TimeGrid& grid, double tolerance) {
  const auto P_path = integrate_riccati_forward(problem.system, problem.initial.covariance(), grid);
  FeasibilityCertificate cert;
  cert.P_T = P_path.back();
  cert.tolerance = tolerance;
  const auto test = is_positive_definite(problem.target.covariance() - cert.P_T);
  cert.gap = test.min_eigenvalue;
  cert.feasible = test.positive_definite && cert.gap > tolerance;
  return cert;
}

Matrix GainSchedule::gain_at(double t) const {
  const int k = grid.interval(t);
  const double s = (t - grid.node(k)) / grid.step();
  return (1.0 - s) * K_path[static_cast<std::size_t>(k)] +
         s * K_path[static_cast<std::size_t>(k + 1)];
}

double evaluate_expected_cost(const GainSchedule& schedule) {
  std::vector<double> integrand;
  integrand.reserve(schedule.K_path.size());
  for (int k = 0; k < schedule.grid.size(); ++k) {
    const Matrix& K = schedule.K_path[static_cast<std::size_t>(k)];
    integrand.push_back((K * schedule.sigma_hat[k] * K.transpose()).trace());
  }
  return trapezoid(schedule.grid, integrand);
}

void write_gain_schedule_csv(std::ostream& out, const GainSchedule& schedule) {
  const auto& K0 = schedule.K_path.front();
  const auto& L0 = schedule.filter.L_path.front();
  const auto& S0 = schedule.sigma_hat.front();
  out << "t";
  write_matrix_header(out, "K", K0.rows(), K0.cols());
  write_matrix_header(out, "L", L0.rows(), L0.cols());
  write_matrix_header(out, "SigmaHat", S0.rows(), S0.cols());
  out << '\n';
  for (int k = 0; k < schedule.grid.size(); ++k) {
    out << format_number(schedule.grid.node(k));
    write_matrix_row(out, schedule.K_path[static_cast<std::size_t>(k)]);
    write_matrix_row(out, schedule.filter.L_path[static_cast<std::size_t>(k)]);
    write_matrix_row(out, schedule.sigma_hat[k]);
    out << '\n';
  }
}

SigmaHatSweep sigma_hat_from_pi(const FiniteHorizonProblem& problem,
                                const FilterSchedule& filter, const Matrix& Pi_T) {
  const auto& sys = problem.system;
  const TimeGrid& grid = filter.grid;
  auto Pi_path = integrate_control_riccati_backward(sys, Pi_T, grid);

  const Matrix& A = sys.A();
  const Matrix BBt = sys.B() * sys.B().transpose();
  const Matrix& S = sys.information_rate();
  const CovariancePath& P_path = filter.P_path;

  // Both coefficient paths carry derivatives, so the RK4 midpoints see
  // Hermite-interpolated values rather than linear ones.
  auto closed_loop = [&](double t) -> Matrix { return A - BBt * Pi_path.at(t); };
  auto forcing = [&](double t) -> Matrix {
    const Matrix P = P_path.at(t);
    return P * S * P;
  };
  const Eigen::Index n = sys.n();
  auto Sigma_hat = integrate_lyapunov_forward(closed_loop, forcing, Matrix::Zero(n, n), grid);
  return {std::move(Pi_path), std::move(Sigma_hat)};
}

SigmaHatSweep sigma_hat_from_pi(const FiniteHorizonProblem& problem, const Matrix& Pi_T,
                                const TimeGrid& grid) {
  const auto filter =
      build_filter_schedule(problem.system, problem.initial.covariance(), grid);
  return sigma_hat_from_pi(problem, filter, Pi_T);
}

ShootingOutcome shoot(const FiniteHorizonProblem& problem, const TimeGrid& grid,
                      const ShootingOptions& options) {
  const auto& sys = problem.system;
  const Eigen::Index n = sys.n();
  const auto filter = build_filter_schedule(sys, problem.initial.covariance(), grid);
  const Matrix& P_T = filter.P_path.back();
  const Matrix target = problem.target.covariance() - P_T;
  if (!(min_eigenvalue(target) > kFeasibilityTolerance)) {
    throw PreconditionError("terminal covariance is not feasible: Sigma_T - P(T) has smallest "
                            "eigenvalue " + std::to_string(min_eigenvalue(target)));
  }
  const double tol = options.tol_res > 0.0 ? options.tol_res : 1e-8 * static_cast<double>(n);

  // Residual map in the symmetric parameterization; escape propagates.
  auto residual_of = [&](const Vector& theta) -> Vector {
    const auto sweep = sigma_hat_from_pi(problem, filter, smat(theta, n));
    return svec(sweep.Sigma_hat_path.back() - target);
  };

  Vector theta = options.initial_Pi_T.size() > 0 ? svec(options.initial_Pi_T)
                                                 : Vector::Zero(n * (n + 1) / 2);
  Vector r = residual_of(theta);
  double res = r.norm();
  const Eigen::Index d = theta.size();
  double radius = options.trust_radius;
  std::vector<double> history{res};
  int iterations = 0;

  while (res > tol) {
    if (iterations >= options.max_iter) {
      throw ConvergenceError("shooting exceeded its iteration budget", res, iterations);
    }
    ++iterations;

    const double h = options.fd_step * (1.0 + theta.norm());
    Matrix J(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      Vector plus = theta, minus = theta;
      plus(i) += h;
      minus(i) -= h;
      Vector rp, rm;
      bool have_plus = true, have_minus = true;
      try { rp = residual_of(plus); } catch (const RiccatiEscape&) { have_plus = false; }
      try { rm = residual_of(minus); } catch (const RiccatiEscape&) { have_minus = false; }
      if (have_plus && have_minus) {
        J.col(i) = (rp - rm) / (2.0 * h);
      } else if (have_plus) {
        J.col(i) = (rp - r) / h;
      } else if (have_minus) {
        J.col(i) = (r - rm) / h;
      } else {
        throw ConvergenceError("Riccati escape on both sides of the Jacobian stencil", res,
                               iterations);
      }
    }

    Vector step = J.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) step = J.completeOrthogonalDecomposition().solve(-r);
    const double full = step.norm();
    if (full > radius) step *= radius / full;

    double alpha = 1.0;
    bool accepted = false;
    int escapes = 0;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      const Vector trial = theta + alpha * step;
      Vector r_trial;
      try {
        r_trial = residual_of(trial);
      } catch (const RiccatiEscape&) {
        ++escapes;
        continue;
      }
      const double res_trial = r_trial.norm();
      if (res_trial < res) {
        theta = trial;
        r = std::move(r_trial);
        res = res_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (escapes > 0) {
        throw ConvergenceError("shooting step blocked by repeated Riccati escape", res,
                               iterations);
      }
      throw ConvergenceError("shooting line search failed to reduce the residual", res,
                             iterations);
    }
    history.push_back(res);
    const double taken = alpha * step.norm();
    if (alpha == 1.0 && full >= radius) {
      radius *= 2.0;
    } else if (alpha < 1.0) {
      radius = std::max(taken, 1e-8);
    }
  }

  const Matrix Pi_T = smat(theta, n);
  auto sweep = sigma_hat_from_pi(problem, filter, Pi_T);
  std::vector<Matrix> K_path;
  K_path.reserve(static_cast<std::size_t>(grid.size()));
  for (const auto& Pi : sweep.Pi_path.values()) K_path.push_back(sys.B().transpose() * Pi);
  auto schedule = make_schedule(filter, std::move(K_path), sweep.Sigma_hat_path);
  return ShootingOutcome{ShootingResult{Pi_T, std::move(sweep.Pi_path),
                                        std::move(sweep.Sigma_hat_path), res, iterations,
                                        std::move(history)},
                         std::move(schedule)};
}

}  // namespace covsteer
