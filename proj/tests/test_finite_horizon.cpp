#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "covsteer/finite_horizon.hpp"
#include "fixtures.hpp"

using namespace covsteer;
using namespace covsteer::testing;

namespace {

const ShootingOutcome& example_shooting() {
  static const ShootingOutcome out = shoot(steering_problem(), TimeGrid(0, 1, 1000));
  return out;
}

// Joint covariance of [x; x - xhat] under u = -K(t) xhat; returns the x block at T.
Matrix joint_state_covariance(const FiniteHorizonProblem& problem, const ShootingOutcome& out,
                              const TimeGrid& grid) {
  const auto& sys = problem.system;
  const Eigen::Index n = sys.n();
  const auto& Pi = out.result.Pi_path;
  const auto& P = out.schedule.filter.P_path;
  const Matrix Ct_Rinv = sys.C().transpose() * sys.measurement_precision();
  auto gains = [&](double t) {
    return std::pair<Matrix, Matrix>{sys.B().transpose() * Pi.at(t), P.at(t) * Ct_Rinv};
  };
  auto A_of_t = [&](double t) -> Matrix {
    const auto [K, L] = gains(t);
    Matrix F = Matrix::Zero(2 * n, 2 * n);
    F.topLeftCorner(n, n) = sys.A() - sys.B() * K;
    F.topRightCorner(n, n) = sys.B() * K;
    F.bottomRightCorner(n, n) = sys.A() - L * sys.C();
    return F;
  };
  auto Q_of_t = [&](double t) -> Matrix {
    const Matrix L = gains(t).second;
    const Matrix& W = sys.process_noise();
    Matrix Q(2 * n, 2 * n);
    Q << W, W, W, W + L * sys.measurement_noise() * L.transpose();
    return Q;
  };
  const Matrix& S0 = problem.initial.covariance();
  Matrix Z0(2 * n, 2 * n);
  Z0 << S0, S0, S0, S0;
  const auto Z = integrate_lyapunov_forward(A_of_t, Q_of_t, Z0, grid);
  return Z.back().topLeftCorner(n, n);
}

}  // namespace

TEST(Feasibility, ExampleTargetIsFeasible) {
  const auto cert = check_feasibility(steering_problem(), TimeGrid(0, 1, 1000));
  EXPECT_TRUE(cert.feasible);
  EXPECT_NEAR(cert.gap, 0.5 - 0.4839, 2e-3);
  EXPECT_EQ(cert.tolerance, kFeasibilityTolerance);
}

TEST(Feasibility, TightTargetIsRejected) {
  const auto cert = check_feasibility(steering_problem(0.4), TimeGrid(0, 1, 1000));
  EXPECT_FALSE(cert.feasible);
  EXPECT_LT(cert.gap, 0.0);
}

TEST(Feasibility, BoundaryIsRejected) {
  const TimeGrid grid(0, 1, 1000);
  const auto P = integrate_riccati_forward(double_integrator(), eye(2), grid);
  const FiniteHorizonProblem problem(double_integrator(), GaussianSpec(eye(2)),
                                     GaussianSpec(P.back()), 1.0);
  const auto cert = check_feasibility(problem, grid);
  EXPECT_FALSE(cert.feasible);
  EXPECT_NEAR(cert.gap, 0.0, 1e-12);
}

TEST(Feasibility, MonotoneInTarget) {
  const TimeGrid grid(0, 1, 500);
  const double base = check_feasibility(steering_problem(0.4), grid).gap;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> alpha(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = alpha(rng);
    const auto cert = check_feasibility(steering_problem(0.4 + a), grid);
    EXPECT_NEAR(cert.gap, base + a, 1e-12);
    EXPECT_EQ(cert.feasible, base + a > kFeasibilityTolerance);
  }
}

TEST(SigmaHatSweep, ZeroTerminalValueGivesOpenLoopGap) {
  const auto problem = steering_problem();
  const auto& sys = problem.system;
  const TimeGrid grid(0, 1, 1000);
  const auto sweep = sigma_hat_from_pi(problem, Matrix::Zero(2, 2), grid);
  for (const auto& Pi : sweep.Pi_path.values()) EXPECT_TRUE(Pi.isZero(0.0));
  const auto open_loop = integrate_lyapunov_forward(sys.A(), sys.process_noise(), eye(2), grid);
  const auto P = integrate_riccati_forward(sys, eye(2), grid);
  for (int k : {0, 100, 500, 1000}) {
    EXPECT_LE((sweep.Sigma_hat_path[k] - (open_loop[k] - P[k])).norm(), 1e-6) << "k = " << k;
  }
}

TEST(SigmaHatSweep, ScalarQuadrature) {
  // P = 1 and L = 1 throughout, so Sigma_hat(T) = T.
  const FiniteHorizonProblem problem(scalar_system(0, 1, 1, 1, 1), GaussianSpec(mat({{1}})),
                                     GaussianSpec(mat({{2}})), 1.0);
  const auto sweep = sigma_hat_from_pi(problem, mat({{0}}), TimeGrid(0, 1, 100));
  EXPECT_NEAR(sweep.Sigma_hat_path.back()(0, 0), 1.0, 1e-12);
}

TEST(Shooting, ManufacturedTargetFromZeroTerminalValue) {
  const auto sys = double_integrator();
  const TimeGrid grid(0, 1, 400);
  const FiniteHorizonProblem probe(sys, GaussianSpec(eye(2)), GaussianSpec(eye(2)), 1.0);
  const auto sweep = sigma_hat_from_pi(probe, Matrix::Zero(2, 2), grid);
  const auto P = integrate_riccati_forward(sys, eye(2), grid);
  const FiniteHorizonProblem problem(sys, GaussianSpec(eye(2)),
                                     GaussianSpec(P.back() + sweep.Sigma_hat_path.back()), 1.0);

  const auto from_zero = shoot(problem, grid);
  EXPECT_LE(from_zero.result.residual, 1e-10);
  EXPECT_LE(from_zero.result.Pi_T.norm(), 1e-10);

  ShootingOptions options;
  options.initial_Pi_T = mat({{0.3, 0.1}, {0.1, 0.2}});
  options.tol_res = 1e-10;
  const auto from_offset = shoot(problem, grid, options);
  EXPECT_LE(from_offset.result.residual, 1e-10);
  EXPECT_LE(from_offset.result.Pi_T.norm(), 1e-6);
}

TEST(Shooting, ExampleProblemConverges) {
  const auto& out = example_shooting();
  EXPECT_LE(out.result.residual, 1e-8);
  EXPECT_LE(out.result.iterations, 50);
  const Matrix target = 0.5 * eye(2) - out.schedule.filter.P_path.back();
  EXPECT_LE((out.result.Sigma_hat_path.back() - target).norm(), 1e-6);
  EXPECT_EQ(out.result.Pi_T, out.result.Pi_T.transpose());
}

TEST(Shooting, ResidualDecreasesMonotonically) {
  const auto& h = example_shooting().result.residual_history;
  ASSERT_GE(h.size(), 2u);
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(h[i], h[i - 1]);
}

TEST(Shooting, GainIsBTransposePi) {
  const auto& out = example_shooting();
  const Matrix Bt = double_integrator().B().transpose();
  for (int k : {0, 250, 1000}) {
    EXPECT_LE((out.schedule.K_path[static_cast<std::size_t>(k)] - Bt * out.result.Pi_path[k])
                  .norm(),
              1e-14);
  }
  EXPECT_EQ(out.schedule.grid, out.schedule.filter.grid);
  EXPECT_NEAR(evaluate_expected_cost(out.schedule), out.schedule.expected_cost, 1e-12);
  EXPECT_GE(out.schedule.expected_cost, 0.0);
}

TEST(Shooting, JointCovarianceCrossCheck) {
  const auto problem = steering_problem();
  const auto& out = example_shooting();
  const Matrix Sigma_T = joint_state_covariance(problem, out, TimeGrid(0, 1, 1000));
  const Matrix split = out.result.Sigma_hat_path.back() + out.schedule.filter.P_path.back();
  EXPECT_LE((Sigma_T - split).norm(), 1e-6);
  EXPECT_LE((Sigma_T - 0.5 * eye(2)).norm(), 1e-6);
}

TEST(Shooting, GridRefinementChangesCostLittle) {
  const double coarse = example_shooting().schedule.expected_cost;
  const double fine = shoot(steering_problem(), TimeGrid(0, 1, 2000)).schedule.expected_cost;
  EXPECT_LT(std::abs(fine - coarse) / fine, 5e-3);
}

TEST(Shooting, ScalarMatchesFineResolution) {
  const FiniteHorizonProblem problem(scalar_system(0, 1, 1, 1, 1), GaussianSpec(mat({{1}})),
                                     GaussianSpec(mat({{1.2}})), 1.0);
  const auto out = shoot(problem, TimeGrid(0, 1, 100));
  EXPECT_LE(out.result.residual, 1e-8);
  const auto fine = sigma_hat_from_pi(problem, out.result.Pi_T, TimeGrid(0, 1, 1000));
  EXPECT_NEAR(fine.Sigma_hat_path.back()(0, 0), 0.2, 1e-6);
}

TEST(Shooting, InfeasibleTargetIsAPreconditionError) {
  EXPECT_THROW(shoot(steering_problem(0.4), TimeGrid(0, 1, 200)), PreconditionError);
}

TEST(Shooting, IterationBudgetCarriesBestResidual) {
  ShootingOptions options;
  options.max_iter = 1;
  try {
    shoot(steering_problem(), TimeGrid(0, 1, 200), options);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.best_residual(), 0.0);
    EXPECT_TRUE(std::isfinite(e.best_residual()));
  }
}

TEST(ExpectedCost, Examples) {
  const auto problem = steering_problem();
  const TimeGrid grid(0, 1, 100);
  const auto filter = build_filter_schedule(problem.system, eye(2), grid);
  std::vector<Matrix> zeros(101, Matrix::Zero(1, 2));
  std::vector<Matrix> sig(101, eye(2));
  GainSchedule zero{grid, zeros, filter, CovariancePath(grid, sig), 0.0};
  EXPECT_EQ(evaluate_expected_cost(zero), 0.0);

  const FiniteHorizonProblem scalar(scalar_system(0, 1, 1, 1, 1), GaussianSpec(mat({{1}})),
                                    GaussianSpec(mat({{2}})), 1.0);
  const auto sf = build_filter_schedule(scalar.system, mat({{1}}), grid);
  GainSchedule unit{grid, std::vector<Matrix>(101, mat({{1}})), sf,
                    CovariancePath(grid, std::vector<Matrix>(101, mat({{2}}))), 0.0};
  EXPECT_NEAR(evaluate_expected_cost(unit), 2.0, 1e-14);
}

TEST(GainScheduleCsv, Header) {
  std::ostringstream out;
  write_gain_schedule_csv(out, example_shooting().schedule);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "t,K_1_1,K_1_2,L_1_1,L_2_1,SigmaHat_1_1,SigmaHat_1_2,SigmaHat_2_1,SigmaHat_2_2");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1002);
}

TEST(Svec, RoundTripAndNorm) {
  std::mt19937_64 rng(2);
  for (int n = 1; n <= 4; ++n) {
    const Matrix S = random_spd(rng, n) - eye(n);
    const Vector v = svec(S);
    EXPECT_EQ(v.size(), n * (n + 1) / 2);
    EXPECT_NEAR(v.norm(), S.norm(), 1e-12);
    EXPECT_LE((smat(v, n) - S).norm(), 1e-14);
  }
  EXPECT_THROW(smat(Vector::Zero(2), 2), DimensionError);
}
