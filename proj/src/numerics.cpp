#include "covsteer/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include <unsupported/Eigen/MatrixFunctions>

namespace covsteer {
namespace {

using Rhs = std::function<Matrix(double, const Matrix&)>;

enum class Direction { kForward, kBackward };

// Escape threshold for the backward control Riccati sweep, relative to 1+|Pi_T|.
constexpr double kEscapeBound = 1e8;

struct Sweep {
  std::vector<Matrix> values;
  std::vector<Matrix> derivatives;
};

// Classical RK4 over the grid. Every node is re-symmetrized, so the stored
// values are exactly symmetric. `check` runs after each step and may throw.
template <typename Check>
Sweep rk4_sweep(const Rhs& f, const Matrix& start, const TimeGrid& grid, Direction dir,
                bool keep_derivatives, Check&& check) {
  const int N = grid.steps();
  const double h = dir == Direction::kForward ? grid.step() : -grid.step();
  Sweep out;
  out.values.resize(static_cast<std::size_t>(N + 1));
  if (keep_derivatives) out.derivatives.resize(static_cast<std::size_t>(N + 1));

  int k = dir == Direction::kForward ? 0 : N;
  const int dk = dir == Direction::kForward ? 1 : -1;
  Matrix S = symmetrize(start);
  out.values[static_cast<std::size_t>(k)] = S;

  for (int i = 0; i < N; ++i, k += dk) {
    const double t = grid.node(k);
    const Matrix k1 = f(t, S);
    if (keep_derivatives) out.derivatives[static_cast<std::size_t>(k)] = symmetrize(k1);
    const Matrix k2 = f(t + 0.5 * h, S + 0.5 * h * k1);
    const Matrix k3 = f(t + 0.5 * h, S + 0.5 * h * k2);
    const Matrix k4 = f(t + h, S + h * k3);
    S = symmetrize(S + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    check(grid.node(k + dk), S);
    out.values[static_cast<std::size_t>(k + dk)] = S;
  }
  if (keep_derivatives) {
    out.derivatives[static_cast<std::size_t>(k)] = symmetrize(f(grid.node(k), S));
  }
  return out;
}

void require_finite(double t, const Matrix& S) {
  if (!S.allFinite()) throw IntegrationError("non-finite value in matrix ODE", t);
}

}  // namespace

TimeGrid::TimeGrid(double t0, double t1, int steps) : t0_(t0), t1_(t1), steps_(steps) {
  if (!(t1 > t0) || !std::isfinite(t0) || !std::isfinite(t1))
    throw PreconditionError("time grid requires finite t1 > t0");
  if (steps < 1) throw PreconditionError("time grid requires at least one step");
}

double TimeGrid::node(int k) const {
  if (k == steps_) return t1_;
  return t0_ + k * step();
}

int TimeGrid::interval(double t) const {
  const double s = (t - t0_) / step();
  int k = static_cast<int>(std::floor(s));
  return std::clamp(k, 0, steps_ - 1);
}

CovariancePath::CovariancePath(TimeGrid grid, std::vector<Matrix> values,
                               std::vector<Matrix> derivatives)
    : grid_(grid), values_(std::move(values)), derivatives_(std::move(derivatives)) {
  if (static_cast<int>(values_.size()) != grid_.size())
    throw DimensionError("path", "one value per grid node required");
  if (!derivatives_.empty() && derivatives_.size() != values_.size())
    throw DimensionError("path", "one derivative per grid node required");
}

Matrix CovariancePath::at(double t) const {
  const int k = grid_.interval(t);
  const double h = grid_.step();
  const double s = (t - grid_.node(k)) / h;
  const auto& a = values_[static_cast<std::size_t>(k)];
  const auto& b = values_[static_cast<std::size_t>(k + 1)];
  if (!has_derivatives()) return (1.0 - s) * a + s * b;
  const auto& da = derivatives_[static_cast<std::size_t>(k)];
  const auto& db = derivatives_[static_cast<std::size_t>(k + 1)];
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * a + (s3 - 2 * s2 + s) * h * da + (-2 * s3 + 3 * s2) * b +
         (s3 - s2) * h * db;
}

MatrixField linear_interpolant(const TimeGrid& grid, std::vector<Matrix> nodes) {
  if (static_cast<int>(nodes.size()) != grid.size())
    throw DimensionError("node samples", "one matrix per grid node required");
  return [grid, nodes = std::move(nodes)](double t) -> Matrix {
    const int k = grid.interval(t);
    const double s = (t - grid.node(k)) / grid.step();
    return (1.0 - s) * nodes[static_cast<std::size_t>(k)] +
           s * nodes[static_cast<std::size_t>(k + 1)];
  };
}

Matrix symmetrize(const Matrix& M) { return 0.5 * (M + M.transpose()); }

CovariancePath integrate_riccati_forward(const LinearGaussianSystem& system,
                                         const Matrix& P0, const TimeGrid& grid) {
  const Eigen::Index n = system.n();
  if (P0.rows() != n || P0.cols() != n) throw DimensionError("P0", "must be n x n");
  const Matrix& A = system.A();
  const Matrix& Q = system.process_noise();
  const Matrix& S = system.information_rate();
  Rhs f = [&](double, const Matrix& P) -> Matrix {
    return A * P + P * A.transpose() + Q - P * S * P;
  };
  auto sweep = rk4_sweep(f, P0, grid, Direction::kForward, true, require_finite);
  return CovariancePath(grid, std::move(sweep.values), std::move(sweep.derivatives));
}

CovariancePath integrate_lyapunov_forward(const MatrixField& A_of_t,
                                          const MatrixField& Q_of_t, const Matrix& S0,
                                          const TimeGrid& grid) {
  if (S0.rows() != S0.cols()) throw DimensionError("S0", "must be square");
  Rhs f = [&](double t, const Matrix& S) -> Matrix {
    const Matrix A = A_of_t(t);
    return A * S + S * A.transpose() + Q_of_t(t);
  };
  auto sweep = rk4_sweep(f, S0, grid, Direction::kForward, true, require_finite);
  return CovariancePath(grid, std::move(sweep.values), std::move(sweep.derivatives));
}

CovariancePath integrate_lyapunov_forward(const Matrix& A, const Matrix& Q,
                                          const Matrix& S0, const TimeGrid& grid) {
  if (A.rows() != S0.rows() || Q.rows() != S0.rows())
    throw DimensionError("A/Q", "must match S0");
  return integrate_lyapunov_forward([&](double) { return A; }, [&](double) { return Q; },
                                    S0, grid);
}

CovariancePath integrate_lyapunov_forward(const std::vector<Matrix>& A_nodes,
                                          const std::vector<Matrix>& Q_nodes,
                                          const Matrix& S0, const TimeGrid& grid) {
  return integrate_lyapunov_forward(linear_interpolant(grid, A_nodes),
                                    linear_interpolant(grid, Q_nodes), S0, grid);
}

CovariancePath integrate_control_riccati_backward(const LinearGaussianSystem& system,
                                                  const Matrix& Pi_T, const TimeGrid& grid) {
  const Eigen::Index n = system.n();
  if (Pi_T.rows() != n || Pi_T.cols() != n) throw DimensionError("Pi_T", "must be n x n");
  if (!Pi_T.allFinite()) throw PreconditionError("Pi_T must be finite");
  const Matrix& A = system.A();
  const Matrix BBt = system.B() * system.B().transpose();
  Rhs f = [&](double, const Matrix& Pi) -> Matrix {
    return -A.transpose() * Pi - Pi * A + Pi * BBt * Pi;
  };
  const double bound = kEscapeBound * (1.0 + Pi_T.norm());
  auto check = [bound](double t, const Matrix& Pi) {
    if (!Pi.allFinite() || Pi.norm() > bound) throw RiccatiEscape(t);
  };
  auto sweep = rk4_sweep(f, Pi_T, grid, Direction::kBackward, true, check);
  return CovariancePath(grid, std::move(sweep.values), std::move(sweep.derivatives));
}

Matrix care_residual(const LinearGaussianSystem& system, const Matrix& P) {
  const Matrix& A = system.A();
  return A * P + P * A.transpose() + system.process_noise() -
         P * system.information_rate() * P;
}

Matrix solve_care(const LinearGaussianSystem& system) {
  const Matrix& A = system.A();
  const Matrix& C = system.C();
  const Matrix& Q = system.process_noise();
  const Matrix& R = system.measurement_noise();
  const Matrix CtRinv = C.transpose() * system.measurement_precision();
  const Eigen::Index n = system.n();

  // Stabilizing starting gain for A - L C. Bass: with beta above every |Re(lambda)|,
  // Z solving (A'+bI)Z + Z(A'+bI)' = 2C'C gives A - Z^{-1}C'C Hurwitz.
  Matrix L = Matrix::Zero(n, system.p());
  if (!is_hurwitz(A).hurwitz) {
    const double beta = A.norm() + 1.0;
    const Matrix M = -(A.transpose() + beta * Matrix::Identity(n, n));
    const Matrix Z = solve_algebraic_lyapunov(M, 2.0 * C.transpose() * C);
    Eigen::LLT<Matrix> llt(Z);
    if (llt.info() != Eigen::Success)
      throw ConvergenceError("CARE initialization failed: (A, C) not observable", NAN, 0);
    L = llt.solve(C.transpose());
  }

  // Newton-Kleinman: each iterate solves a Lyapunov equation in the closed loop.
  Matrix P = Matrix::Zero(n, n);
  constexpr int kMaxIterations = 100;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const Matrix Acl = A - L * C;
    if (!is_hurwitz(Acl).hurwitz) {
      throw ConvergenceError("CARE Newton iterate lost stability", care_residual(system, P).norm(),
                             it);
    }
    const Matrix next = symmetrize(solve_algebraic_lyapunov(Acl, Q + L * R * L.transpose()));
    const double change = (next - P).norm();
    P = next;
    L = P * CtRinv;
    if (change <= 1e-14 * (1.0 + P.norm())) break;
  }

  const double residual = care_residual(system, P).norm();
  if (!(residual <= 1e-9 * (1.0 + P.norm()))) {
    throw ConvergenceError("CARE did not reach residual tolerance", residual, it);
  }
  return P;
}

LyapunovSolver::LyapunovSolver(const Matrix& A) : A_(A) {
  if (A.rows() != A.cols()) throw DimensionError("A", "must be square");
  Eigen::ComplexSchur<Matrix> schur(A);
  if (schur.info() != Eigen::Success) throw Error("Schur decomposition failed");
  U_ = schur.matrixU();
  T_ = schur.matrixT();
  const Eigen::Index n = A.rows();
  const double scale = std::max(1.0, T_.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(T_(i, i) + std::conj(T_(j, j))) <=
          64 * std::numeric_limits<double>::epsilon() * scale) {
        throw PreconditionError("Lyapunov operator is singular (eigenvalues sum to zero)");
      }
    }
  }
}

Eigen::MatrixXcd LyapunovSolver::back_substitute(const Matrix& Q) const {
  // T Y + Y T^H = -U^H Q U, one column at a time starting from the last.
  const Eigen::Index n = A_.rows();
  const Eigen::MatrixXcd F = -(U_.adjoint() * Q.cast<std::complex<double>>() * U_);
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index j = n - 1; j >= 0; --j) {
    Eigen::VectorXcd rhs = F.col(j);
    for (Eigen::Index k = j + 1; k < n; ++k) rhs -= std::conj(T_(j, k)) * Y.col(k);
    Eigen::MatrixXcd lhs = T_;
    lhs.diagonal().array() += std::conj(T_(j, j));
    Y.col(j) = lhs.triangularView<Eigen::Upper>().solve(rhs);
  }
  return U_ * Y * U_.adjoint();
}

Matrix LyapunovSolver::solve(const Matrix& Q) const {
  const Eigen::Index n = A_.rows();
  if (Q.rows() != n || Q.cols() != n) throw DimensionError("Q", "must match A");
  Matrix X = symmetrize(back_substitute(Q).real());
  // one step of iterative refinement
  const Matrix R = A_ * X + X * A_.transpose() + Q;
  return symmetrize(X + back_substitute(R).real());
}

Matrix solve_algebraic_lyapunov(const Matrix& A, const Matrix& Q) {
  const auto test = is_hurwitz(A);
  if (!test.hurwitz) {
    throw PreconditionError("Lyapunov coefficient is not Hurwitz (spectral abscissa " +
                            std::to_string(test.spectral_abscissa) + ")");
  }
  return LyapunovSolver(A).solve(Q);
}

Matrix expm(const Matrix& M, double t) {
  if (M.rows() != M.cols()) throw DimensionError("M", "must be square");
  const Matrix Mt = M * t;
  return Mt.exp();
}

HurwitzTest is_hurwitz(const Matrix& M) {
  if (M.rows() != M.cols()) throw DimensionError("M", "must be square");
  Eigen::EigenSolver<Matrix> es(M, false);
  const double abscissa = es.eigenvalues().real().maxCoeff();
  return {abscissa < -kHurwitzTolerance, abscissa};
}

DefinitenessTest is_positive_definite(const Matrix& M) {
  if (M.rows() != M.cols()) throw DimensionError("M", "must be square");
  const Matrix S = symmetrize(M);
  Eigen::LLT<Matrix> llt(S);
  const double lmin = min_eigenvalue(S);
  return {llt.info() == Eigen::Success && lmin > 0.0, lmin};
}

double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double max_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double trapezoid(const TimeGrid& grid, const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != grid.size())
    throw DimensionError("quadrature", "one value per grid node required");
  double sum = 0.5 * (values.front() + values.back());
  for (std::size_t k = 1; k + 1 < values.size(); ++k) sum += values[k];
  return sum * grid.step();
}

}  // namespace covsteer
