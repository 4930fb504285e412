#include "covsteer/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace covsteer {
namespace {

void require_shape(const Matrix& M, Eigen::Index rows, Eigen::Index cols,
                   const std::string& name) {
  if (M.rows() != rows || M.cols() != cols) {
    std::ostringstream os;
    os << "expected " << rows << "x" << cols << ", got " << M.rows() << "x"
       << M.cols();
    throw DimensionError(name, os.str());
  }
}

double singular_threshold(const Eigen::VectorXd& sv, Eigen::Index dim) {
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  return static_cast<double>(dim) * std::numeric_limits<double>::epsilon() * smax;
}

}  // namespace

LinearGaussianSystem::LinearGaussianSystem(Matrix A, Matrix B, Matrix B1,
                                           Matrix C, Matrix D)
    : A_(std::move(A)),
      B_(std::move(B)),
      B1_(std::move(B1)),
      C_(std::move(C)),
      D_(std::move(D)) {
  const Eigen::Index n = A_.rows();
  if (n == 0) throw DimensionError("A", "state dimension must be positive");
  require_shape(A_, n, n, "A");
  if (B_.rows() != n || B_.cols() == 0)
    throw DimensionError("B", "expected n rows and at least one column");
  if (B1_.rows() != n || B1_.cols() == 0)
    throw DimensionError("B1", "expected n rows and at least one column");
  if (C_.cols() != n || C_.rows() == 0)
    throw DimensionError("C", "expected n columns and at least one row");
  require_shape(D_, C_.rows(), C_.rows(), "D");
  for (const auto* M : {&A_, &B_, &B1_, &C_, &D_}) {
    if (!M->allFinite()) throw PreconditionError("system matrices must be finite");
  }

  process_noise_ = B1_ * B1_.transpose();
  measurement_noise_ = D_ * D_.transpose();

  Eigen::JacobiSVD<Matrix> svd(D_);
  const auto& sv = svd.singularValues();
  d_invertible_ = sv(sv.size() - 1) > singular_threshold(sv, D_.rows()) &&
                  sv(sv.size() - 1) > 0.0;
  if (d_invertible_) {
    Eigen::LLT<Matrix> llt(measurement_noise_);
    measurement_precision_ = llt.solve(Matrix::Identity(p(), p()));
    measurement_precision_ =
        0.5 * (measurement_precision_ + measurement_precision_.transpose());
    information_rate_ = C_.transpose() * measurement_precision_ * C_;
  }
}

const Matrix& LinearGaussianSystem::measurement_precision() const {
  if (!d_invertible_) throw PreconditionError("D is singular");
  return measurement_precision_;
}

const Matrix& LinearGaussianSystem::information_rate() const {
  if (!d_invertible_) throw PreconditionError("D is singular");
  return information_rate_;
}

GaussianSpec::GaussianSpec(const Matrix& covariance) {
  if (covariance.rows() != covariance.cols() || covariance.rows() == 0)
    throw DimensionError("covariance", "must be square and non-empty");
  if (!covariance.allFinite()) throw PreconditionError("covariance must be finite");
  const double scale = covariance.norm();
  const double asym = (covariance - covariance.transpose()).norm();
  if (asym > 1e-9 * scale) {
    throw PreconditionError("covariance is not symmetric (relative asymmetry " +
                            std::to_string(asym / scale) + ")");
  }
  covariance_ = 0.5 * (covariance + covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(covariance_, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) <= 0.0) {
    throw PreconditionError("covariance is not positive definite (smallest eigenvalue " +
                            std::to_string(es.eigenvalues()(0)) + ")");
  }
}

GaussianSpec::GaussianSpec(const Vector& mean, const Matrix& covariance)
    : GaussianSpec(covariance) {
  if (mean.size() != covariance_.rows())
    throw DimensionError("mean", "length must match covariance");
  if (!mean.isZero(0.0)) throw PreconditionError("only zero-mean laws are supported");
}

FiniteHorizonProblem::FiniteHorizonProblem(LinearGaussianSystem sys, GaussianSpec init,
                                           GaussianSpec tgt, double T)
    : system(std::move(sys)), initial(std::move(init)), target(std::move(tgt)), horizon(T) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw PreconditionError("horizon must be a positive finite time");
  if (initial.dim() != system.n()) throw DimensionError("Sigma0", "must be n x n");
  if (target.dim() != system.n()) throw DimensionError("SigmaT", "must be n x n");
}

StationaryProblem::StationaryProblem(LinearGaussianSystem sys, GaussianSpec tgt)
    : system(std::move(sys)), target(std::move(tgt)) {
  if (target.dim() != system.n()) throw DimensionError("Sigma", "must be n x n");
}

int numerical_rank(const Matrix& M) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& sv = svd.singularValues();
  const double tol = singular_threshold(sv, std::max(M.rows(), M.cols()));
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol && sv(i) > 0.0) ++rank;
  }
  return rank;
}

int controllability_rank(const Matrix& A, const Matrix& B) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n) throw DimensionError("A", "must be square");
  if (B.rows() != n) throw DimensionError("B", "row count must match A");
  Matrix ctrb(n, n * B.cols());
  Matrix block = B;
  for (Eigen::Index k = 0; k < n; ++k) {
    ctrb.middleCols(k * B.cols(), B.cols()) = block;
    block = A * block;
  }
  return numerical_rank(ctrb);
}

int observability_rank(const Matrix& A, const Matrix& C) {
  if (C.cols() != A.rows()) throw DimensionError("C", "column count must match A");
  return controllability_rank(A.transpose(), C.transpose());
}

bool ValidationReport::passed() const {
  for (const auto& f : findings) {
    if (!f.passed) return false;
  }
  return !findings.empty();
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "system valid" : "system invalid") << ":";
  for (const auto& f : findings) {
    os << " " << f.name << "=" << (f.passed ? "pass" : "FAIL") << " (" << f.detail << ")";
  }
  return os.str();
}

ValidationReport validate_system(const LinearGaussianSystem& system) {
  ValidationReport report;
  const auto n = static_cast<int>(system.n());

  report.controllability_rank = controllability_rank(system.A(), system.B());
  report.findings.push_back({"controllability", report.controllability_rank == n,
                             static_cast<double>(report.controllability_rank),
                             static_cast<double>(n),
                             "rank " + std::to_string(report.controllability_rank) + " of " +
                                 std::to_string(n)});

  report.observability_rank = observability_rank(system.A(), system.C());
  report.findings.push_back({"observability", report.observability_rank == n,
                             static_cast<double>(report.observability_rank),
                             static_cast<double>(n),
                             "rank " + std::to_string(report.observability_rank) + " of " +
                                 std::to_string(n)});

  Eigen::JacobiSVD<Matrix> svd(system.D());
  const auto& sv = svd.singularValues();
  report.d_min_singular_value = sv(sv.size() - 1);
  const double tol = singular_threshold(sv, system.D().rows());
  report.findings.push_back({"measurement_noise_invertible",
                             report.d_min_singular_value > tol &&
                                 report.d_min_singular_value > 0.0,
                             report.d_min_singular_value, tol,
                             "sigma_min(D) = " + std::to_string(report.d_min_singular_value)});
  return report;
}

void require_valid(const LinearGaussianSystem& system) {
  const auto report = validate_system(system);
  if (!report.passed()) throw PreconditionError(report.summary());
}

}  // namespace covsteer
