#include "covsteer/stationary.hpp"

#include <cmath>

#include "covsteer/finite_horizon.hpp"
#include "covsteer/numerics.hpp"

namespace covsteer {
namespace {

// svec(B X' + X B') as a matrix acting on column-major vec(X).
Matrix symmetric_input_map(const Matrix& B) {
  const Eigen::Index n = B.rows(), m = B.cols();
  Matrix M(n * (n + 1) / 2, n * m);
  for (Eigen::Index c = 0; c < n * m; ++c) {
    Matrix E = Matrix::Zero(n, m);
    E(c % n, c / n) = 1.0;
    M.col(c) = svec(B * E.transpose() + E * B.transpose());
  }
  return M;
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

double residual_tolerance(const Matrix& Sigma) { return 1e-9 * (1.0 + Sigma.norm()); }

StationaryController make_controller(const LinearGaussianSystem& sys, Matrix K,
                                     StationaryFilter filter, double epsilon,
                                     Matrix Sigma_achieved, const Matrix& Sigma_target) {
  StationaryController c;
  const auto test = is_hurwitz(sys.A() - sys.B() * K);
  c.hurwitz = test.hurwitz;
  c.spectral_abscissa = test.spectral_abscissa;
  c.epsilon = epsilon;
  const Matrix Sigma_hat = Sigma_achieved - filter.P;
  c.power = (K * Sigma_hat * K.transpose()).trace();
  c.deviation = Sigma_target - Sigma_achieved;
  c.K = std::move(K);
  c.filter = std::move(filter);
  c.Sigma_achieved = std::move(Sigma_achieved);
  return c;
}

}  // namespace

Matrix lyapunov_forcing(const LinearGaussianSystem& system, const Matrix& Sigma) {
  return system.A() * Sigma + Sigma * system.A().transpose() + system.process_noise();
}

StationaryCertificate certify_stationary(const StationaryProblem& problem) {
  const auto& sys = problem.system;
  const Matrix& Sigma = problem.target.covariance();
  StationaryCertificate cert;
  cert.P = solve_care(sys);
  cert.gap = min_eigenvalue(Sigma - cert.P);

  const Matrix W = lyapunov_forcing(sys, Sigma);
  const Matrix M = symmetric_input_map(sys.B());
  const Vector x = M.completeOrthogonalDecomposition().solve(-svec(W));
  cert.X = unvec(x, sys.n(), sys.m());
  cert.lyapunov_residual =
      (W + sys.B() * cert.X.transpose() + cert.X * sys.B().transpose()).norm();
  cert.residual_tolerance = residual_tolerance(Sigma);
  cert.rank_ok = cert.lyapunov_residual <= cert.residual_tolerance;
  cert.assignable = cert.rank_ok && cert.gap > kAssignabilityTolerance;
  return cert;
}

StationaryController synthesize_gain(const StationaryCertificate& certificate,
                                     const StationaryProblem& problem) {
  if (!certificate.assignable)
    throw PreconditionError("target covariance is not assignable as a stationary covariance");
  const auto& sys = problem.system;
  const Matrix& Sigma = problem.target.covariance();
  const Matrix Sigma_hat = Sigma - certificate.P;
  const Matrix K = -Sigma_hat.llt().solve(certificate.X).transpose();

  StationaryFilter filter{certificate.P, kalman_gain(sys, certificate.P)};
  auto c = make_controller(sys, K, std::move(filter), 0.0, Sigma, Sigma);

  // A Sigma + Sigma A' + B1B1' - BK(Sigma-P) - (Sigma-P)K'B' = 0
  const Matrix BKS = sys.B() * K * Sigma_hat;
  const double linear_residual =
      (lyapunov_forcing(sys, Sigma) - BKS - BKS.transpose()).norm();
  if (linear_residual > 1e-8 * (1.0 + Sigma.norm())) {
    throw ConvergenceError("recovered gain does not satisfy the stationary covariance equation",
                           linear_residual, 0);
  }
  return c;
}

StationaryController regularize_epsilon(const StationaryController& controller,
                                        const StationaryProblem& problem, double epsilon) {
  if (!(epsilon >= 0.0)) throw PreconditionError("epsilon must be non-negative");
  const auto& sys = problem.system;
  const Matrix& Sigma = problem.target.covariance();
  const Matrix& P = controller.filter.P;
  const Matrix Sigma_hat = Sigma - P;
  Eigen::LLT<Matrix> llt(Sigma_hat);
  if (llt.info() != Eigen::Success)
    throw PreconditionError("Sigma - P must be positive definite");

  const Matrix K_eps =
      controller.K + 0.5 * epsilon * llt.solve(sys.B()).transpose();
  const Matrix A_eps = sys.A() - sys.B() * K_eps;
  const Matrix& L = controller.filter.L;
  const Matrix forcing = L * sys.measurement_noise() * L.transpose();
  const Matrix Sigma_eps = P + solve_algebraic_lyapunov(A_eps, forcing);
  return make_controller(sys, K_eps, controller.filter, epsilon, Sigma_eps, Sigma);
}

Matrix min_power_X(const StationaryProblem& problem, const Matrix& P,
                   PowerWeighting weighting) {
  const auto& sys = problem.system;
  const Eigen::Index n = sys.n(), m = sys.m();
  const Matrix& Sigma = problem.target.covariance();
  const Matrix weight_of = weighting == PowerWeighting::kFilterCovariance ? Matrix(Sigma - P)
                                                                          : Sigma;
  Eigen::LLT<Matrix> wllt(weight_of);
  if (wllt.info() != Eigen::Success)
    throw PreconditionError("power weighting matrix must be positive definite");
  const Matrix W = wllt.solve(Matrix::Identity(n, n));

  const Matrix M = symmetric_input_map(sys.B());
  const Vector b = -svec(lyapunov_forcing(sys, Sigma));
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector x_p = svd.solve(b);
  const int rank = numerical_rank(M);
  const Eigen::Index free = n * m - rank;
  if (free == 0) return unvec(x_p, n, m);

  // x = x_p + Z z over the null space of M; objective vec(X)'(I (x) W)vec(X).
  const Matrix Z = svd.matrixV().rightCols(free);
  Matrix H = Matrix::Zero(n * m, n * m);
  for (Eigen::Index j = 0; j < m; ++j) H.block(j * n, j * n, n, n) = W;
  const Matrix reduced = Z.transpose() * H * Z;
  Eigen::LLT<Matrix> rllt(reduced);
  if (rllt.info() != Eigen::Success)
    throw ConvergenceError("singular KKT system in minimum-power problem", NAN, 0);
  const Vector z = rllt.solve(-Z.transpose() * H * x_p);
  return unvec(x_p + Z * z, n, m);
}

StationaryController solve_min_power(const StationaryProblem& problem,
                                     const MinPowerOptions& options) {
  auto cert = certify_stationary(problem);
  if (!cert.assignable)
    throw PreconditionError("target covariance is not assignable as a stationary covariance");
  cert.X = min_power_X(problem, cert.P, options.weighting);
  auto controller = synthesize_gain(cert, problem);
  if (controller.hurwitz) return controller;

  // Closed loop is marginal: move eps up until the stability margin is usable.
  double epsilon = options.epsilon > 0.0 ? options.epsilon : 1e-2;
  for (int attempt = 0; attempt < 40; ++attempt, epsilon *= 2.0) {
    auto regularized = regularize_epsilon(controller, problem, epsilon);
    if (regularized.spectral_abscissa <= -1e-6) return regularized;
  }
  throw ConvergenceError("epsilon regularization did not produce a stabilizing gain",
                         controller.spectral_abscissa, 40);
}

Proposition1Report verify_proposition1(const StationaryController& controller,
                                       const StationaryProblem& problem) {
  const auto& sys = problem.system;
  const Eigen::Index n = sys.n(), m = sys.m();
  const Eigen::Index d = n * (n + 1) / 2;

  // Least squares for vec(B' Pi) = vec(K) over symmetric Pi.
  Matrix F(m * n, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Matrix basis = smat(Vector::Unit(d, i), n);
    const Matrix image = sys.B().transpose() * basis;
    F.col(i) = Eigen::Map<const Vector>(image.data(), image.size());
  }
  const Vector k = Eigen::Map<const Vector>(controller.K.data(), controller.K.size());
  const Vector pi = F.completeOrthogonalDecomposition().solve(k);

  Proposition1Report report;
  report.Pi = smat(pi, n);
  report.factorization_residual = (sys.B().transpose() * report.Pi - controller.K).norm();
  const Matrix A_cl = sys.A() - sys.B() * sys.B().transpose() * report.Pi;
  const auto test = is_hurwitz(A_cl);
  report.hurwitz = test.hurwitz;
  report.spectral_abscissa = test.spectral_abscissa;
  const Matrix Sigma_hat = controller.Sigma_achieved - controller.filter.P;
  const Matrix& L = controller.filter.L;
  report.lyapunov_residual = (A_cl * Sigma_hat + Sigma_hat * A_cl.transpose() +
                              L * sys.measurement_noise() * L.transpose())
                                 .norm();
  report.passed = report.factorization_residual <= 1e-8 * (1.0 + controller.K.norm()) &&
                  report.hurwitz &&
                  report.lyapunov_residual <= 1e-8 * (1.0 + Sigma_hat.norm());
  return report;
}

}  // namespace covsteer
