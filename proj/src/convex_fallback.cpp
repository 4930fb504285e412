// Discretized convex program for minimum-energy steering of the filter-state
// covariance. Sigma_hat is eliminated through the (linear) trapezoidal
// recursion and Y_k through its Schur-complement value U_k' Sigma_hat_k^{-1} U_k,
// leaving a convex objective in U under an affine terminal constraint. The
// constraint is handled by the method of multipliers; each inner problem is
// solved by L-BFGS preconditioned with the per-node curvature Sigma_hat_k.

#include <cmath>
#include <deque>
#include <limits>

#include <unsupported/Eigen/KroneckerProduct>

#include "covsteer/finite_horizon.hpp"

namespace covsteer {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector vec(const Matrix& M) { return Eigen::Map<const Vector>(M.data(), M.size()); }

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// Linear data of the trapezoidal recursion
///   s_{k+1} = T s_k + f_k + G (u_k + u_{k+1})
/// in column-major vec coordinates.
struct Recursion {
  Eigen::Index n = 0, m = 0;
  int N = 0;
  double h = 0.0;
  Matrix T;               // n^2 x n^2
  Matrix G;               // n^2 x nm
  std::vector<Vector> f;  // N entries
  Vector target;          // vec(Sigma_T - P(T))
};

Recursion build_recursion(const LinearGaussianSystem& sys, const FilterSchedule& filter,
                          const Matrix& target) {
  Recursion rec;
  rec.n = sys.n();
  rec.m = sys.m();
  rec.N = filter.grid.steps();
  rec.h = filter.grid.step();
  const Eigen::Index n = rec.n, m = rec.m, n2 = n * n;
  const Matrix I = Matrix::Identity(n, n);
  const Matrix& A = sys.A();

  Matrix lyap(n2, n2);  // vec(A S + S A')
  lyap = Eigen::kroneckerProduct(I, A) + Eigen::kroneckerProduct(A, I);
  const Matrix Id = Matrix::Identity(n2, n2);
  const Eigen::PartialPivLU<Matrix> lhs(Id - 0.5 * rec.h * lyap);
  rec.T = lhs.solve(Id + 0.5 * rec.h * lyap);

  Matrix Bop(n2, n * m);  // vec(B U' + U B')
  const Matrix& B = sys.B();
  for (Eigen::Index c = 0; c < n * m; ++c) {
    Matrix E = Matrix::Zero(n, m);
    E(c % n, c / n) = 1.0;
    Bop.col(c) = vec(B * E.transpose() + E * B.transpose());
  }
  rec.G = lhs.solve(0.5 * rec.h * Bop);

  const Matrix& S = sys.information_rate();
  std::vector<Vector> q;
  q.reserve(static_cast<std::size_t>(rec.N + 1));
  for (const auto& P : filter.P_path.values()) q.push_back(vec(P * S * P));
  rec.f.reserve(static_cast<std::size_t>(rec.N));
  for (int k = 0; k < rec.N; ++k) {
    rec.f.push_back(lhs.solve(0.5 * rec.h * (q[static_cast<std::size_t>(k)] +
                                              q[static_cast<std::size_t>(k + 1)])));
  }
  rec.target = vec(target);
  return rec;
}

double node_weight(int k, int N) { return k == N ? 0.5 : 1.0; }

/// Augmented Lagrangian of the terminal constraint. x stacks vec(U_1)..vec(U_N).
class Objective {
 public:
  explicit Objective(const Recursion& rec) : rec_(rec) {
    const auto N = static_cast<std::size_t>(rec.N + 1);
    s_.resize(N);
    chol_.resize(N);
    Sinv_U_.resize(N);
  }

  Eigen::Index dim() const { return rec_.N * rec_.n * rec_.m; }

  Vector multiplier;
  double penalty = 1.0;

  /// Fills the states; false if some Sigma_hat_k (k >= 1) is not positive definite.
  bool propagate(const Vector& x) {
    const Eigen::Index n = rec_.n, m = rec_.m, nm = n * m;
    s_[0] = Vector::Zero(n * n);
    Vector u_prev = Vector::Zero(nm);
    for (int k = 0; k < rec_.N; ++k) {
      const auto u_next = x.segment(static_cast<Eigen::Index>(k) * nm, nm);
      s_[static_cast<std::size_t>(k + 1)] =
          rec_.T * s_[static_cast<std::size_t>(k)] + rec_.f[static_cast<std::size_t>(k)] +
          rec_.G * (u_prev + u_next);
      u_prev = u_next;
    }
    for (int k = 1; k <= rec_.N; ++k) {
      const auto K = static_cast<std::size_t>(k);
      const Matrix S = symmetrize(unvec(s_[K], n, n));
      chol_[K].compute(S);
      if (chol_[K].info() != Eigen::Success) return false;
      // LLT can succeed on matrices whose smallest pivot is tiny but positive;
      // reject anything that is numerically singular as well.
      const Vector diag = chol_[K].matrixLLT().diagonal();
      if (!(diag.minCoeff() > 1e-150)) return false;
      Sinv_U_[K] = chol_[K].solve(unvec(x.segment(static_cast<Eigen::Index>(k - 1) * nm, nm), n, m));
    }
    return true;
  }

  double energy(const Vector& x) const {
    const Eigen::Index n = rec_.n, m = rec_.m, nm = n * m;
    double J = 0.0;
    for (int k = 1; k <= rec_.N; ++k) {
      const Matrix U = unvec(x.segment(static_cast<Eigen::Index>(k - 1) * nm, nm), n, m);
      J += node_weight(k, rec_.N) * rec_.h *
           (U.transpose() * Sinv_U_[static_cast<std::size_t>(k)]).trace();
    }
    return J;
  }

  Vector terminal_violation() const { return s_.back() - rec_.target; }

  /// Value at x, or +inf outside the domain.
  double value(const Vector& x) {
    if (!propagate(x)) return kInf;
    const Vector c = terminal_violation();
    return energy(x) + multiplier.dot(c) + 0.5 * penalty * c.squaredNorm();
  }

  /// Gradient at the point of the last successful value() call.
  Vector gradient(const Vector& x) const {
    const Eigen::Index n = rec_.n, m = rec_.m, nm = n * m;
    const int N = rec_.N;
    Vector g(dim());
    Vector lambda_next;  // adjoint of s_{k+1}
    for (int k = N; k >= 1; --k) {
      const auto K = static_cast<std::size_t>(k);
      const double w = node_weight(k, N) * rec_.h;
      const Matrix& SiU = Sinv_U_[K];
      // explicit d/dS_k of w tr(U' S^{-1} U) is -w S^{-1} U U' S^{-1}
      Vector lambda = -w * vec(SiU * SiU.transpose());
      if (k == N) {
        lambda += multiplier + penalty * terminal_violation();
      } else {
        lambda += rec_.T.transpose() * lambda_next;
      }
      Vector gk = 2.0 * w * vec(SiU) + rec_.G.transpose() * lambda;
      if (k < N) gk += rec_.G.transpose() * lambda_next;
      g.segment(static_cast<Eigen::Index>(k - 1) * nm, nm) = gk;
      lambda_next = std::move(lambda);
    }
    (void)x;
    return g;
  }

  /// Block preconditioner Sigma_hat_k / (2 w_k h) applied to each U_k column.
  Vector precondition(const std::vector<Matrix>& scale, const Vector& g) const {
    const Eigen::Index n = rec_.n, m = rec_.m, nm = n * m;
    Vector out(g.size());
    for (int k = 1; k <= rec_.N; ++k) {
      const auto seg = static_cast<Eigen::Index>(k - 1) * nm;
      out.segment(seg, nm) =
          vec(scale[static_cast<std::size_t>(k)] * unvec(g.segment(seg, nm), n, m));
    }
    return out;
  }

  std::vector<Matrix> current_preconditioner() const {
    std::vector<Matrix> scale(static_cast<std::size_t>(rec_.N + 1));
    for (int k = 1; k <= rec_.N; ++k) {
      const auto K = static_cast<std::size_t>(k);
      scale[K] = symmetrize(unvec(s_[K], rec_.n, rec_.n)) /
                 (2.0 * node_weight(k, rec_.N) * rec_.h);
    }
    return scale;
  }

  const std::vector<Vector>& states() const { return s_; }

 private:
  const Recursion& rec_;
  std::vector<Vector> s_;
  std::vector<Eigen::LLT<Matrix>> chol_;
  std::vector<Matrix> Sinv_U_;
};

struct InnerResult {
  int iterations = 0;
  bool stationary = false;
};

InnerResult minimize_lbfgs(Objective& obj, Vector& x, const ConvexOptions& opt) {
  InnerResult result;
  double fx = obj.value(x);
  if (!std::isfinite(fx)) throw Error("convex fallback: starting point outside the domain");
  Vector g = obj.gradient(x);
  const auto scale = obj.current_preconditioner();
  std::deque<std::pair<Vector, Vector>> memory;
  int stalls = 0;

  for (int it = 0; it < opt.max_inner; ++it) {
    result.iterations = it + 1;
    const Vector Dg = obj.precondition(scale, g);
    const double gnorm = std::sqrt(std::max(0.0, g.dot(Dg)));
    if (gnorm <= opt.gradient_tol * (1.0 + std::abs(fx))) {
      result.stationary = true;
      break;
    }

    // two-loop recursion with H0 = gamma * D
    Vector q = g;
    std::vector<double> alphas(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
      const auto& [s, y] = memory[i];
      alphas[i] = s.dot(q) / y.dot(s);
      q -= alphas[i] * y;
    }
    double gamma = 1.0;
    if (!memory.empty()) {
      const auto& [s, y] = memory.back();
      gamma = s.dot(y) / y.dot(obj.precondition(scale, y));
    }
    Vector r = gamma * obj.precondition(scale, q);
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const auto& [s, y] = memory[i];
      const double beta = y.dot(r) / y.dot(s);
      r += (alphas[i] - beta) * s;
    }
    Vector dir = -r;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      memory.clear();
      dir = -Dg;
      slope = -gnorm * gnorm;
    }

    double step = 1.0;
    double f_new = kInf;
    Vector x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      x_new = x + step * dir;
      f_new = obj.value(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // no decrease available at working precision
      obj.value(x);
      result.stationary = true;
      break;
    }
    const Vector g_new = obj.gradient(x_new);
    Vector s = x_new - x;
    Vector y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(memory.size()) > opt.lbfgs_memory) memory.pop_front();
    }
    const double decrease = fx - f_new;
    x = std::move(x_new);
    g = g_new;
    fx = f_new;
    if (decrease <= 1e-15 * (1.0 + std::abs(fx))) {
      if (++stalls >= 5) {
        result.stationary = true;
        break;
      }
    } else {
      stalls = 0;
    }
  }
  obj.value(x);
  return result;
}

}  // namespace

ConvexFallbackError::ConvexFallbackError(std::shared_ptr<const ConvexOutcome> outcome)
    : ConvergenceError("convex fallback did not certify within its budget (boundary mismatch " +
                           std::to_string(outcome->report.boundary_mismatch) + ", dynamics " +
                           std::to_string(outcome->report.dynamics_residual) + ")",
                       outcome->report.boundary_mismatch, outcome->report.outer_iterations),
      outcome_(std::move(outcome)) {}

double trapezoid_dynamics_residual(const LinearGaussianSystem& system,
                                   const GainSchedule& schedule) {
  const Matrix& A = system.A();
  const Matrix& B = system.B();
  const Matrix& S = system.information_rate();
  const double h = schedule.grid.step();
  auto rate = [&](int k) -> Matrix {
    const auto K = static_cast<std::size_t>(k);
    const Matrix& Sh = schedule.sigma_hat[k];
    const Matrix& P = schedule.filter.P_path[k];
    const Matrix U = k == 0 ? Matrix::Zero(Sh.rows(), B.cols())
                            : Matrix(-Sh * schedule.K_path[K].transpose());
    return A * Sh + Sh * A.transpose() + P * S * P + B * U.transpose() + U * B.transpose();
  };
  double worst = 0.0;
  Matrix prev_rate = rate(0);
  for (int k = 0; k < schedule.grid.steps(); ++k) {
    const Matrix next_rate = rate(k + 1);
    const Matrix r = schedule.sigma_hat[k + 1] - schedule.sigma_hat[k] -
                     0.5 * h * (prev_rate + next_rate);
    worst = std::max(worst, r.norm());
    prev_rate = next_rate;
  }
  return worst;
}

ConvexOutcome solve_convex_fallback(const FiniteHorizonProblem& problem, const TimeGrid& grid,
                                    const ConvexOptions& options) {
  const auto& sys = problem.system;
  const Eigen::Index n = sys.n(), m = sys.m();
  auto filter = build_filter_schedule(sys, problem.initial.covariance(), grid);
  const Matrix target = problem.target.covariance() - filter.P_path.back();
  if (!(min_eigenvalue(target) > kFeasibilityTolerance)) {
    throw PreconditionError("terminal covariance is not feasible: Sigma_T - P(T) has smallest "
                            "eigenvalue " + std::to_string(min_eigenvalue(target)));
  }

  const Recursion rec = build_recursion(sys, filter, target);
  Objective obj(rec);
  obj.multiplier = Vector::Zero(n * n);
  obj.penalty = options.initial_penalty;
  Vector x = Vector::Zero(obj.dim());

  ConvexReport report;
  double previous = kInf;
  bool stationary = false;
  for (int outer = 0; outer < options.max_outer; ++outer) {
    const auto inner = minimize_lbfgs(obj, x, options);
    report.inner_iterations += inner.iterations;
    report.outer_iterations = outer + 1;
    stationary = inner.stationary;
    const Vector c = obj.terminal_violation();
    const double violation = unvec(c, n, n).norm();
    obj.multiplier += obj.penalty * c;
    if (violation <= options.boundary_tol && stationary) break;
    if (violation > 0.25 * previous) obj.penalty *= 10.0;
    previous = violation;
  }

  obj.value(x);
  const auto& s = obj.states();
  const Eigen::Index nm = n * m;
  std::vector<Matrix> sigma_hat(static_cast<std::size_t>(rec.N + 1));
  std::vector<Matrix> K_path(static_cast<std::size_t>(rec.N + 1));
  double min_eig = kInf;
  for (int k = 0; k <= rec.N; ++k) {
    const auto K = static_cast<std::size_t>(k);
    sigma_hat[K] = symmetrize(unvec(s[K], n, n));
    if (k == 0) continue;
    const Matrix U = unvec(x.segment(static_cast<Eigen::Index>(k - 1) * nm, nm), n, m);
    K_path[K] = -sigma_hat[K].llt().solve(U).transpose();
    min_eig = std::min(min_eig, min_eigenvalue(sigma_hat[K]));
  }
  K_path[0] = K_path[1];

  GainSchedule schedule{grid, std::move(K_path), std::move(filter),
                        CovariancePath(grid, std::move(sigma_hat)), 0.0};
  schedule.expected_cost = evaluate_expected_cost(schedule);

  report.objective = schedule.expected_cost;
  report.boundary_mismatch = (schedule.sigma_hat.back() - target).norm();
  report.dynamics_residual = trapezoid_dynamics_residual(sys, schedule);
  report.min_sigma_hat_eigenvalue = min_eig;
  report.certified = stationary && report.boundary_mismatch <= 1e-5 &&
                     report.dynamics_residual <= 1e-6;

  auto outcome = std::make_shared<const ConvexOutcome>(ConvexOutcome{schedule, report});
  if (!report.certified) throw ConvexFallbackError(outcome);
  return *outcome;
}

}  // namespace covsteer
