#include <cmath>

#include <gtest/gtest.h>

#include "covsteer/numerics.hpp"
#include "fixtures.hpp"

using namespace covsteer;
using namespace covsteer::testing;

namespace {

double max_abs(const Matrix& M) { return M.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(TimeGrid, Nodes) {
  TimeGrid g(0.0, 1.0, 4);
  EXPECT_EQ(g.size(), 5);
  EXPECT_DOUBLE_EQ(g.node(0), 0.0);
  EXPECT_DOUBLE_EQ(g.node(4), 1.0);
  EXPECT_DOUBLE_EQ(g.step(), 0.25);
  EXPECT_EQ(g.interval(0.3), 1);
  EXPECT_EQ(g.interval(1.0), 3);
  EXPECT_THROW(TimeGrid(1.0, 1.0, 3), PreconditionError);
  EXPECT_THROW(TimeGrid(0.0, 1.0, 0), PreconditionError);
}

TEST(RiccatiForward, ExampleTerminalCovariance) {
  const auto P = integrate_riccati_forward(double_integrator(), eye(2), TimeGrid(0, 1, 1000));
  const Matrix expected = mat({{0.0471, 0.1049}, {0.1049, 0.4587}});
  EXPECT_LE(max_abs(P.back() - expected), 1e-3);
}

TEST(RiccatiForward, ScalarFixedPoint) {
  const auto P = integrate_riccati_forward(scalar_system(0, 1, 1, 1, 1), mat({{1}}),
                                           TimeGrid(0, 2, 100));
  for (const auto& Pk : P.values()) EXPECT_NEAR(Pk(0, 0), 1.0, 1e-14);
}

TEST(RiccatiForward, ZeroStaysZero) {
  const auto P = integrate_riccati_forward(scalar_system(0, 1, 0, 1, 1), mat({{0}}),
                                           TimeGrid(0, 1, 50));
  for (const auto& Pk : P.values()) EXPECT_EQ(Pk(0, 0), 0.0);
}

TEST(RiccatiForward, NonFiniteInitialValueFails) {
  EXPECT_THROW(integrate_riccati_forward(scalar_system(0, 1, 1, 1, 1), mat({{NAN}}),
                                         TimeGrid(0, 1, 10)),
               IntegrationError);
}

TEST(RiccatiForward, FourthOrderConvergence) {
  // p' = 1 - p^2, p(0) = 0 has p(t) = tanh(t).
  const auto sys = scalar_system(0, 1, 1, 1, 1);
  const double T = 2.0;
  double previous = 0.0;
  for (int N : {10, 20, 40}) {
    const auto P = integrate_riccati_forward(sys, mat({{0}}), TimeGrid(0, T, N));
    const double err = std::abs(P.back()(0, 0) - std::tanh(T));
    if (previous > 0.0) EXPECT_GE(previous / err, 8.0) << "N = " << N;
    previous = err;
  }
}

TEST(RiccatiForward, ExactSymmetryAtEveryNode) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = random_valid_system(rng, 3, 1, 2);
    const auto P = integrate_riccati_forward(sys, random_spd(rng, 3), TimeGrid(0, 1, 200));
    for (const auto& Pk : P.values()) {
      ASSERT_TRUE((Pk.array() == Pk.transpose().array()).all());
      EXPECT_GE(min_eigenvalue(Pk), -1e-12);
    }
  }
}

TEST(RiccatiForward, StationaryFixedPointStaysPut) {
  const auto sys = double_integrator();
  const Matrix P_inf = solve_care(sys);
  const auto P = integrate_riccati_forward(sys, P_inf, TimeGrid(0, 10, 10000));
  for (const auto& Pk : P.values()) EXPECT_LE((Pk - P_inf).norm(), 1e-6);
}

TEST(LyapunovForward, ConvergesToFixedPoint) {
  const auto S = integrate_lyapunov_forward(Matrix(-eye(2)), Matrix(2 * eye(2)),
                                            Matrix::Zero(2, 2), TimeGrid(0, 20, 2000));
  EXPECT_LE(max_abs(S.back() - eye(2)), 1e-6);
}

TEST(LyapunovForward, ZeroForcingZeroStart) {
  std::mt19937_64 rng(5);
  const auto S = integrate_lyapunov_forward(random_matrix(rng, 3, 3), Matrix::Zero(3, 3),
                                            Matrix::Zero(3, 3), TimeGrid(0, 1, 10));
  for (const auto& Sk : S.values()) EXPECT_TRUE(Sk.isZero(0.0));
}

TEST(LyapunovForward, MatchesClosedForm) {
  // e^{A} e^{A'} + int_0^1 [tau; 1][tau, 1] dtau
  const auto sys = double_integrator();
  const auto S =
      integrate_lyapunov_forward(sys.A(), sys.process_noise(), eye(2), TimeGrid(0, 1, 1000));
  const Matrix E = expm(sys.A(), 1.0);
  const Matrix expected = E * E.transpose() + mat({{1.0 / 3, 0.5}, {0.5, 1.0}});
  EXPECT_LE(max_abs(S.back() - expected), 1e-8);
}

TEST(LyapunovForward, NodeSampledCoefficients) {
  const TimeGrid grid(0, 1, 100);
  std::vector<Matrix> A_nodes, Q_nodes;
  for (int k = 0; k < grid.size(); ++k) {
    A_nodes.push_back(mat({{-1.0}}));
    Q_nodes.push_back(mat({{2.0 * grid.node(k)}}));
  }
  // s' = -2 s + 2t, s(0) = 0: s = t - 1/2 + e^{-2t}/2
  const auto S = integrate_lyapunov_forward(A_nodes, Q_nodes, mat({{0}}), grid);
  EXPECT_NEAR(S.back()(0, 0), 0.5 + 0.5 * std::exp(-2.0), 1e-9);
}

TEST(ControlRiccatiBackward, ZeroIsFixed) {
  const auto Pi =
      integrate_control_riccati_backward(double_integrator(), Matrix::Zero(2, 2), TimeGrid(0, 1, 100));
  for (const auto& Pk : Pi.values()) EXPECT_TRUE(Pk.isZero(0.0));
}

TEST(ControlRiccatiBackward, ScalarClosedForm) {
  const auto sys = scalar_system(0, 1, 1, 1, 1);
  const TimeGrid grid(0, 1, 200);
  for (double pi_T : {2.0, 0.5, -0.5}) {
    const auto Pi = integrate_control_riccati_backward(sys, mat({{pi_T}}), grid);
    for (int k = 0; k < grid.size(); ++k) {
      const double tau = 1.0 - grid.node(k);
      EXPECT_NEAR(Pi[k](0, 0), pi_T / (1.0 + pi_T * tau), 1e-9) << "pi_T " << pi_T;
    }
  }
}

TEST(ControlRiccatiBackward, EscapeIsReported) {
  const auto sys = scalar_system(0, 1, 1, 1, 1);
  try {
    integrate_control_riccati_backward(sys, mat({{-2.0}}), TimeGrid(0, 1, 1000));
    FAIL() << "expected RiccatiEscape";
  } catch (const RiccatiEscape& e) {
    // Blow-up at T - t = 1/2.
    EXPECT_NEAR(e.time(), 0.5, 0.05);
  }
}

TEST(Care, ExampleStationaryCovariance) {
  const Matrix P = solve_care(double_integrator());
  const Matrix expected =
      mat({{std::sqrt(0.002), 0.1}, {0.1, std::sqrt(0.2)}});
  EXPECT_LE(max_abs(P - expected), 1e-12);
  EXPECT_LE(max_abs(P - mat({{0.0447, 0.1}, {0.1, 0.4472}})), 5e-4);
}

TEST(Care, ScalarCases) {
  EXPECT_NEAR(solve_care(scalar_system(0, 1, 1, 1, 1))(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(solve_care(scalar_system(-1, 1, 0, 1, 1))(0, 0), 0.0, 1e-14);
}

TEST(Care, ResidualAndStabilityOnRandomSystems) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const auto sys = random_valid_system(rng, 1 + trial % 4, 1, 1 + trial % 2);
    const Matrix P = solve_care(sys);
    EXPECT_LE(care_residual(sys, P).norm(), 1e-9 * (1.0 + P.norm())) << "trial " << trial;
    EXPECT_GE(min_eigenvalue(P), -1e-10);
    const Matrix L = P * sys.C().transpose() * sys.measurement_precision();
    EXPECT_TRUE(is_hurwitz(sys.A() - L * sys.C()).hurwitz) << "trial " << trial;
  }
}

TEST(AlgebraicLyapunov, Examples) {
  EXPECT_LE(max_abs(solve_algebraic_lyapunov(-eye(2), 2 * eye(2)) - eye(2)), 1e-14);
  const Matrix A = mat({{0, 1}, {-1, -1}});
  const Matrix S = solve_algebraic_lyapunov(A, eye(2));
  EXPECT_LE((A * S + S * A.transpose() + eye(2)).norm(), 1e-10 * (1.0 + S.norm()));
  EXPECT_THROW(solve_algebraic_lyapunov(mat({{0, 1}, {0, 0}}), eye(2)), PreconditionError);
}

TEST(AlgebraicLyapunov, RandomStableResiduals) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 2 + trial % 5;
    Matrix A = random_matrix(rng, n, n);
    A -= (is_hurwitz(A).spectral_abscissa + 0.5) * eye(n);
    const Matrix Q = random_spd(rng, n);
    const Matrix S = solve_algebraic_lyapunov(A, Q);
    EXPECT_LE((A * S + S * A.transpose() + Q).norm(), 1e-10 * (1.0 + S.norm()));
    EXPECT_GT(min_eigenvalue(S), 0.0);
  }
}

TEST(Expm, Examples) {
  std::mt19937_64 rng(1);
  const Matrix M = random_matrix(rng, 3, 3);
  EXPECT_LE(max_abs(expm(M, 0.0) - eye(3)), 1e-15);
  const Matrix E = expm(mat({{0.3, 0}, {0, -2}}), 1.0);
  EXPECT_NEAR(E(0, 0), std::exp(0.3), 1e-14);
  EXPECT_NEAR(E(1, 1), std::exp(-2.0), 1e-15);
  EXPECT_EQ(E(0, 1), 0.0);
  EXPECT_LE(max_abs(expm(mat({{0, 1}, {0, 0}}), 2.5) - mat({{1, 2.5}, {0, 1}})), 1e-14);
}

TEST(Expm, InverseProperty) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> t_dist(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix M = random_matrix(rng, 4, 4);
    M *= 2.0 / M.norm();
    const double t = t_dist(rng);
    EXPECT_LE(max_abs(expm(M, t) * expm(M, -t) - eye(4)), 1e-10);
  }
}

TEST(Hurwitz, Examples) {
  const auto closed = is_hurwitz(mat({{0, 1}, {-5.4440, -19.7854}}));
  EXPECT_TRUE(closed.hurwitz);
  EXPECT_FALSE(is_hurwitz(Matrix::Zero(2, 2)).hurwitz);
  const auto neg = is_hurwitz(-eye(3));
  EXPECT_TRUE(neg.hurwitz);
  EXPECT_NEAR(neg.spectral_abscissa, -1.0, 1e-14);
}

TEST(PositiveDefinite, Examples) {
  const auto P1 = integrate_riccati_forward(double_integrator(), eye(2), TimeGrid(0, 1, 1000));
  EXPECT_TRUE(is_positive_definite(0.5 * eye(2) - P1.back()).positive_definite);
  EXPECT_FALSE(is_positive_definite(Matrix::Zero(2, 2)).positive_definite);
  const auto edge = is_positive_definite(mat({{1, 0}, {0, -1e-12}}));
  EXPECT_FALSE(edge.positive_definite);
  EXPECT_NEAR(edge.min_eigenvalue, -1e-12, 1e-20);
}

TEST(Positivity, StateCovarianceDominatesErrorCovariance) {
  // Open-loop Sigma(t) and filter P(t) from the same Sigma0 = I.
  const auto sys = double_integrator();
  const TimeGrid grid(0, 1, 1000);
  const auto Sigma = integrate_lyapunov_forward(sys.A(), sys.process_noise(), eye(2), grid);
  const auto P = integrate_riccati_forward(sys, eye(2), grid);
  EXPECT_LE((Sigma[0] - P[0]).norm(), 1e-15);
  for (int k = 1; k < grid.size(); ++k) {
    EXPECT_TRUE(is_positive_definite(Sigma[k] - P[k]).positive_definite) << "t = " << grid.node(k);
  }
}

TEST(CovariancePath, HermiteInterpolationIsAccurate) {
  const auto sys = scalar_system(0, 1, 1, 1, 1);
  const auto P = integrate_riccati_forward(sys, mat({{0}}), TimeGrid(0, 1, 20));
  for (double t : {0.013, 0.37, 0.5, 0.999}) EXPECT_NEAR(P.at(t)(0, 0), std::tanh(t), 1e-6);
}

TEST(Trapezoid, Linear) {
  const TimeGrid grid(0, 2, 4);
  std::vector<double> v;
  for (int k = 0; k < grid.size(); ++k) v.push_back(3.0 * grid.node(k));
  EXPECT_NEAR(trapezoid(grid, v), 6.0, 1e-14);
}
