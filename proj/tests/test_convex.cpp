#include <gtest/gtest.h>

#include "covsteer/finite_horizon.hpp"
#include "fixtures.hpp"

using namespace covsteer;
using namespace covsteer::testing;

namespace {

struct ExampleRuns {
  ShootingOutcome shooting;
  ConvexOutcome convex;
};

const ExampleRuns& example_runs() {
  static const ExampleRuns runs{shoot(steering_problem(), TimeGrid(0, 1, 1000)),
                              solve_convex_fallback(steering_problem(), TimeGrid(0, 1, 1000))};
  return runs;
}

}  // namespace

TEST(ConvexFallback, ExampleProblemMatchesShooting) {
  const auto& runs = example_runs();
  const double shooting = runs.shooting.schedule.expected_cost;
  const double convex = runs.convex.report.objective;
  EXPECT_LE(std::abs(convex - shooting) / shooting, 0.02);
  EXPECT_GE(convex, shooting * 0.98);
  EXPECT_TRUE(runs.convex.report.certified);
}

TEST(ConvexFallback, ResidualsWithinContract) {
  const auto& report = example_runs().convex.report;
  EXPECT_LE(report.boundary_mismatch, 1e-5);
  EXPECT_LE(report.dynamics_residual, 1e-6);
  EXPECT_GT(report.min_sigma_hat_eigenvalue, 0.0);
}

TEST(ConvexFallback, ScheduleIsConsistent) {
  const auto& out = example_runs().convex;
  const auto sys = double_integrator();
  EXPECT_EQ(out.schedule.K_path[0], out.schedule.K_path[1]);
  EXPECT_TRUE(out.schedule.sigma_hat[0].isZero(0.0));
  EXPECT_NEAR(evaluate_expected_cost(out.schedule), out.report.objective, 1e-12);
  EXPECT_NEAR(trapezoid_dynamics_residual(sys, out.schedule), out.report.dynamics_residual, 1e-18);
  const Matrix target = 0.5 * eye(2) - out.schedule.filter.P_path.back();
  EXPECT_NEAR((out.schedule.sigma_hat.back() - target).norm(), out.report.boundary_mismatch,
              1e-15);
}

TEST(ConvexFallback, ScalarAgreesWithShooting) {
  const FiniteHorizonProblem problem(scalar_system(0, 1, 1, 1, 1), GaussianSpec(mat({{1}})),
                                     GaussianSpec(mat({{1.2}})), 1.0);
  const TimeGrid grid(0, 1, 200);
  const double shooting = shoot(problem, grid).schedule.expected_cost;
  const auto convex = solve_convex_fallback(problem, grid);
  EXPECT_LE(std::abs(convex.report.objective - shooting) / shooting, 0.02);
  EXPECT_LE(convex.report.boundary_mismatch, 1e-5);
}

TEST(ConvexFallback, ZeroGainReachableTargetCostsAlmostNothing) {
  const auto sys = scalar_system(0, 1, 1, 1, 1);
  const TimeGrid grid(0, 1, 200);
  // With P = 1 and K = 0 the filter-state variance reaches exactly T.
  const FiniteHorizonProblem problem(sys, GaussianSpec(mat({{1}})), GaussianSpec(mat({{2}})), 1.0);
  const auto out = solve_convex_fallback(problem, grid);
  EXPECT_LE(out.report.objective, 1e-8);
  EXPECT_LE(out.report.boundary_mismatch, 1e-5);
}

TEST(ConvexFallback, InfeasibleTargetRejectedUpstream) {
  EXPECT_THROW(solve_convex_fallback(steering_problem(0.4), TimeGrid(0, 1, 100)),
               PreconditionError);
}

TEST(ConvexFallback, BudgetExhaustionKeepsPartialResult) {
  ConvexOptions options;
  options.max_outer = 1;
  options.max_inner = 3;
  try {
    solve_convex_fallback(steering_problem(), TimeGrid(0, 1, 100), options);
    FAIL() << "expected ConvexFallbackError";
  } catch (const ConvexFallbackError& e) {
    EXPECT_FALSE(e.outcome().report.certified);
    EXPECT_EQ(e.outcome().schedule.K_path.size(), 101u);
    EXPECT_GT(e.best_residual(), 0.0);
  }
}
