#include "covsteer/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <random>
#include <string>
#include <thread>

namespace covsteer {
namespace {

constexpr int kBlockSize = 64;
constexpr double kDivergenceFraction = 1e-3;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 particle_rng(std::uint64_t seed, int index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index))));
}

// Symmetric square root factor F with F F' = S; tolerates PSD input.
Matrix covariance_factor(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(S));
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

// Joint update z' = M z + N xi for z = [x; xhat], xi = sqrt(dt) [w; v] increments.
struct StepMaps {
  Matrix M;
  Matrix N;
  Matrix K;
};

StepMaps step_maps(const LinearGaussianSystem& sys, const Matrix& K, const Matrix& L, double dt,
                   const SimConfig& config) {
  const Eigen::Index n = sys.n(), m1 = sys.m1(), p = sys.p();
  const Matrix BK = sys.B() * K;
  const Matrix LC = L * sys.C();
  StepMaps s;
  s.M = Matrix::Identity(2 * n, 2 * n);
  s.M.topLeftCorner(n, n) += dt * sys.A();
  s.M.topRightCorner(n, n) -= dt * BK;
  s.M.bottomLeftCorner(n, n) += dt * LC;
  s.M.bottomRightCorner(n, n) += dt * (sys.A() - BK - LC);
  s.N = Matrix::Zero(2 * n, m1 + p);
  if (config.process_noise) s.N.topLeftCorner(n, m1) = sys.B1();
  if (config.measurement_noise) s.N.bottomRightCorner(n, p) = L * sys.D();
  s.K = K;
  return s;
}

struct InitialLaw {
  Matrix xhat_factor;
  Matrix xtilde_factor;
};

struct Plan {
  double dt = 0.0;
  int steps = 0;
  // maps[j] advances from node j to j + 1; maps[steps] only supplies K at the end.
  std::vector<StepMaps> maps;
  std::vector<int> record;
};

// Running mean and centred second moment (Welford, merged pairwise per Chan).
struct Moments {
  Vector mean;
  Matrix m2;

  explicit Moments(Eigen::Index n) : mean(Vector::Zero(n)), m2(Matrix::Zero(n, n)) {}

  void add(const Vector& v, int count_before) {
    const Vector delta = v - mean;
    mean += delta / (count_before + 1);
    m2.noalias() += delta * (v - mean).transpose();
  }

  void merge(const Moments& o, int na, int nb) {
    if (nb == 0) return;
    const double total = static_cast<double>(na) + nb;
    const Vector delta = o.mean - mean;
    m2 += o.m2 + (static_cast<double>(na) * nb / total) * delta * delta.transpose();
    mean += (nb / total) * delta;
  }
};

struct Accumulator {
  std::vector<Moments> x, xh, xt;
  std::vector<Matrix> sxhxt;
  int count = 0;
  int diverged = 0;
  std::vector<TrajectoryRow> rows;

  Accumulator(std::size_t nodes, Eigen::Index n)
      : x(nodes, Moments(n)),
        xh(nodes, Moments(n)),
        xt(nodes, Moments(n)),
        sxhxt(nodes, Matrix::Zero(n, n)) {}

  void merge(const Accumulator& o) {
    for (std::size_t k = 0; k < x.size(); ++k) {
      x[k].merge(o.x[k], count, o.count);
      xh[k].merge(o.xh[k], count, o.count);
      xt[k].merge(o.xt[k], count, o.count);
      sxhxt[k] += o.sxhxt[k];
    }
    count += o.count;
    diverged += o.diverged;
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
  }
};

Plan make_plan(double t_end, const SimConfig& config) {
  if (config.n_particles < 1) throw PreconditionError("n_particles must be at least 1");
  if (!(config.dt > 0.0)) throw PreconditionError("dt must be positive");
  if (config.record_stride < 1) throw PreconditionError("record_stride must be at least 1");
  if (!(t_end > 0.0)) throw PreconditionError("simulation end time must be positive");
  const double ratio = t_end / config.dt;
  Plan plan;
  plan.dt = config.dt;
  plan.steps = static_cast<int>(std::lround(ratio));
  if (plan.steps < 1 || std::abs(ratio - plan.steps) > 1e-6 * ratio)
    throw PreconditionError("dt must divide the simulated time span");
  for (int j = 0; j <= plan.steps; ++j) {
    if (j % config.record_stride == 0 || j == plan.steps) plan.record.push_back(j);
  }
  return plan;
}

void require_divides_grid(const TimeGrid& grid, double dt) {
  const double ratio = grid.step() / dt;
  if (ratio < 1.0 - 1e-9 || std::abs(ratio - std::round(ratio)) > 1e-6 * ratio)
    throw PreconditionError("dt must divide the synthesis grid step");
}

void run_particle(const LinearGaussianSystem& sys, const Plan& plan, const InitialLaw& law,
                  const SimConfig& config, int index, Accumulator& acc,
                  std::vector<Vector>& buffer) {
  const Eigen::Index n = sys.n();
  const Eigen::Index q = sys.m1() + sys.p();
  auto rng = particle_rng(config.seed, index);
  std::normal_distribution<double> normal;
  auto draw = [&](Eigen::Index size) {
    Vector v(size);
    for (Eigen::Index i = 0; i < size; ++i) v(i) = normal(rng);
    return v;
  };

  Vector z(2 * n);
  const Vector e_hat = draw(law.xhat_factor.cols());
  const Vector e_tilde = draw(law.xtilde_factor.cols());
  if (config.x0) {
    z.head(n) = *config.x0;
    z.tail(n).setZero();
  } else {
    const Vector xhat = law.xhat_factor * e_hat;
    z.head(n) = xhat + law.xtilde_factor * e_tilde;
    z.tail(n) = xhat;
  }

  const double sqrt_dt = std::sqrt(plan.dt);
  Vector xi(q), next(2 * n);
  std::size_t r = 0;
  bool finite = true;
  for (int j = 0; j <= plan.steps; ++j) {
    if (r < plan.record.size() && plan.record[r] == j) {
      if (!z.allFinite()) {
        finite = false;
        break;
      }
      buffer[r++] = z;
    }
    if (j == plan.steps) break;
    for (Eigen::Index i = 0; i < q; ++i) xi(i) = sqrt_dt * normal(rng);
    const StepMaps& s = plan.maps[static_cast<std::size_t>(j)];
    next.noalias() = s.M * z;
    next.noalias() += s.N * xi;
    z.swap(next);
  }
  if (!finite) {
    ++acc.diverged;
    return;
  }

  for (std::size_t k = 0; k < plan.record.size(); ++k) {
    const Vector& zk = buffer[k];
    const Vector x = zk.head(n);
    const Vector xh = zk.tail(n);
    const Vector xt = x - xh;
    acc.x[k].add(x, acc.count);
    acc.xh[k].add(xh, acc.count);
    acc.xt[k].add(xt, acc.count);
    acc.sxhxt[k].noalias() += xh * xt.transpose();
    if (index < config.export_particles) {
      const int j = plan.record[k];
      const Matrix& K = plan.maps[static_cast<std::size_t>(j)].K;
      acc.rows.push_back(TrajectoryRow{j * plan.dt, index, x, xh, -K * xh});
    }
  }
  ++acc.count;
}

Matrix sample_covariance(const Moments& m, int count) {
  if (count < 2) return Matrix::Zero(m.m2.rows(), m.m2.cols());
  return symmetrize(m.m2 / (count - 1));
}

EnsembleStats run(const LinearGaussianSystem& sys, const Plan& plan, const InitialLaw& law,
                  const SimConfig& config) {
  const Eigen::Index n = sys.n();
  const std::size_t nodes = plan.record.size();
  const int blocks = (config.n_particles + kBlockSize - 1) / kBlockSize;
  std::vector<Accumulator> partial(static_cast<std::size_t>(blocks), Accumulator(nodes, n));

  std::atomic<int> next_block{0};
  auto worker = [&]() {
    std::vector<Vector> buffer(nodes, Vector(2 * n));
    for (int b = next_block++; b < blocks; b = next_block++) {
      const int first = b * kBlockSize;
      const int last = std::min(config.n_particles, first + kBlockSize);
      for (int i = first; i < last; ++i) {
        run_particle(sys, plan, law, config, i, partial[static_cast<std::size_t>(b)], buffer);
      }
    }
  };
  const int workers = std::max(1, std::min(simulation_threads(), blocks));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  Accumulator total(nodes, n);
  for (const auto& a : partial) total.merge(a);
  if (total.diverged > kDivergenceFraction * config.n_particles) {
    throw IntegrationError(std::to_string(total.diverged) + " of " +
                               std::to_string(config.n_particles) + " particles diverged",
                           plan.steps * plan.dt);
  }

  EnsembleStats stats;
  stats.n_particles = total.count;
  stats.n_diverged = total.diverged;
  stats.seed = config.seed;
  const int N = std::max(total.count, 1);
  for (std::size_t k = 0; k < nodes; ++k) {
    stats.times.push_back(plan.record[k] * plan.dt);
    stats.mean_x.push_back(total.x[k].mean);
    stats.mean_xhat.push_back(total.xh[k].mean);
    stats.cov_x.push_back(sample_covariance(total.x[k], total.count));
    stats.cov_xhat.push_back(sample_covariance(total.xh[k], total.count));
    stats.cov_xtilde.push_back(sample_covariance(total.xt[k], total.count));
    stats.cross_xhat_xtilde.push_back(total.sxhxt[k] / N);
  }
  stats.trajectories = std::move(total.rows);
  return stats;
}

void append_finite_maps(const FiniteHorizonProblem& problem, const GainSchedule& schedule,
                        const SimConfig& config, int steps, Plan& plan) {
  for (int j = 0; j < steps; ++j) {
    const double t = j * plan.dt;
    plan.maps.push_back(step_maps(problem.system, schedule.gain_at(t), schedule.filter.gain_at(t),
                                  plan.dt, config));
  }
}

InitialLaw finite_law(const FiniteHorizonProblem& problem) {
  const Eigen::Index n = problem.system.n();
  return {Matrix::Zero(n, n), covariance_factor(problem.initial.covariance())};
}

void check_schedule(const FiniteHorizonProblem& problem, const GainSchedule& schedule,
                    const SimConfig& config) {
  if (std::abs(schedule.grid.t0()) > 1e-12 ||
      std::abs(schedule.grid.t1() - problem.horizon) > 1e-9 * problem.horizon)
    throw PreconditionError("gain schedule must cover [0, T]");
  require_divides_grid(schedule.grid, config.dt);
}

}  // namespace

std::size_t EnsembleStats::nearest(double t) const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (std::abs(times[k] - t) < std::abs(times[best] - t)) best = k;
  }
  return best;
}

int simulation_threads() {
  if (const char* env = std::getenv("COVSTEER_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EnsembleStats simulate_finite(const FiniteHorizonProblem& problem, const GainSchedule& schedule,
                              const SimConfig& config) {
  check_schedule(problem, schedule, config);
  Plan plan = make_plan(problem.horizon, config);
  append_finite_maps(problem, schedule, config, plan.steps, plan);
  plan.maps.push_back(step_maps(problem.system, schedule.K_path.back(),
                                schedule.filter.L_path.back(), plan.dt, config));
  return run(problem.system, plan, finite_law(problem), config);
}

EnsembleStats simulate_stationary(const StationaryProblem& problem,
                                  const StationaryController& controller,
                                  const SimConfig& config, double t_end) {
  if (!controller.hurwitz) throw PreconditionError("stationary controller is not stabilizing");
  Plan plan = make_plan(t_end, config);
  const auto maps = step_maps(problem.system, controller.K, controller.filter.L, plan.dt, config);
  plan.maps.assign(static_cast<std::size_t>(plan.steps) + 1, maps);
  const Matrix& P = controller.filter.P;
  InitialLaw law{covariance_factor(problem.target.covariance() - P), covariance_factor(P)};
  return run(problem.system, plan, law, config);
}

EnsembleStats chain_finite_then_stationary(const FiniteHorizonProblem& problem,
                                           const GainSchedule& schedule,
                                           const StationaryController& controller,
                                           const SimConfig& config, double t_total) {
  check_schedule(problem, schedule, config);
  if (t_total < problem.horizon - 1e-12)
    throw PreconditionError("t_total must not precede the finite horizon");
  if (t_total <= problem.horizon + 1e-12) return simulate_finite(problem, schedule, config);
  if (!controller.hurwitz) throw PreconditionError("stationary controller is not stabilizing");

  Plan plan = make_plan(t_total, config);
  const int finite_steps = static_cast<int>(std::lround(problem.horizon / plan.dt));
  append_finite_maps(problem, schedule, config, finite_steps, plan);
  const auto maps = step_maps(problem.system, controller.K, controller.filter.L, plan.dt, config);
  plan.maps.resize(static_cast<std::size_t>(plan.steps) + 1, maps);
  return run(problem.system, plan, finite_law(problem), config);
}

void write_trajectory_csv(std::ostream& out, const EnsembleStats& stats) {
  out << "t,particle_id";
  if (!stats.trajectories.empty()) {
    const auto& r0 = stats.trajectories.front();
    for (Eigen::Index i = 1; i <= r0.x.size(); ++i) out << ",x_" << i;
    for (Eigen::Index i = 1; i <= r0.xhat.size(); ++i) out << ",xhat_" << i;
    for (Eigen::Index i = 1; i <= r0.u.size(); ++i) out << ",u_" << i;
  }
  out << '\n';
  for (const auto& r : stats.trajectories) {
    out << format_number(r.t) << ',' << r.particle;
    write_matrix_row(out, r.x);
    write_matrix_row(out, r.xhat);
    write_matrix_row(out, r.u);
    out << '\n';
  }
}

Json stats_to_json(const EnsembleStats& stats) {
  auto vec = [](const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(round_significant(v(i)));
    return a;
  };
  Json nodes = Json::array();
  for (std::size_t k = 0; k < stats.times.size(); ++k) {
    nodes.push_back({{"t", round_significant(stats.times[k])},
                     {"mean_x", vec(stats.mean_x[k])},
                     {"mean_xhat", vec(stats.mean_xhat[k])},
                     {"cov_x", matrix_to_json(stats.cov_x[k])},
                     {"cov_xhat", matrix_to_json(stats.cov_xhat[k])},
                     {"cov_xtilde", matrix_to_json(stats.cov_xtilde[k])},
                     {"cross_xhat_xtilde", matrix_to_json(stats.cross_xhat_xtilde[k])}});
  }
  return {{"seed", stats.seed},
          {"n_particles", stats.n_particles},
          {"n_diverged", stats.n_diverged},
          {"nodes", std::move(nodes)}};
}

}  // namespace covsteer
