// covsteer: feasibility checks, controller synthesis and Monte Carlo runs.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "config.hpp"
#include "covsteer/finite_horizon.hpp"
#include "covsteer/montecarlo.hpp"
#include "covsteer/stationary.hpp"

namespace fs = std::filesystem;
using namespace covsteer;
using namespace covsteer::cli;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitRejected = 2;
constexpr const char* kVersion = "1.0.0";

struct Options {
  std::string config_path;
  std::string out_dir = "covsteer_out";
  std::string solver;
  std::optional<std::uint64_t> seed;
  std::optional<int> particles;
  std::optional<double> dt;
  std::optional<int> grid_steps;
  std::optional<double> epsilon;
};

double num(double x) { return round_significant(x); }

class Run {
 public:
  Run(std::string subcommand, const Options& options)
      : subcommand_(std::move(subcommand)),
        options_(options),
        start_(std::chrono::steady_clock::now()) {
    fs::create_directories(options_.out_dir);
  }

  fs::path path(const std::string& name) const { return fs::path(options_.out_dir) / name; }

  void write_json(const std::string& name, const Json& j) {
    std::ofstream out(path(name));
    out << j.dump(2) << '\n';
    outputs_.push_back(name);
  }

  std::ofstream open(const std::string& name) {
    outputs_.push_back(name);
    return std::ofstream(path(name));
  }

  void set_input(const std::string& bytes) { input_hash_ = fnv1a(bytes); }
  Json& resolved() { return resolved_; }

  void write_manifest(int exit_code) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ostringstream hash;
    hash << std::hex << input_hash_;
    Json manifest = {
        {"subcommand", subcommand_},
        {"config", options_.config_path.empty() ? "builtin preset" : options_.config_path},
        {"resolved_options", resolved_},
        {"input_hash", "fnv1a64:" + hash.str()},
        {"outputs", outputs_},
        {"versions",
         {{"covsteer", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}}},
        {"exit_code", exit_code},
        {"wall_clock_seconds", num(seconds)},
    };
    std::ofstream out(path("manifest.json"));
    out << manifest.dump(2) << '\n';
  }

 private:
  std::string subcommand_;
  Options options_;
  std::chrono::steady_clock::time_point start_;
  std::uint64_t input_hash_ = 0;
  std::vector<std::string> outputs_;
  Json resolved_ = Json::object();
};

Config resolve_config(const Options& options, Run& run, bool preset) {
  Config config;
  if (preset && options.config_path.empty()) {
    const Json j = example_preset();
    run.set_input(j.dump());
    config = parse_config(j);
  } else {
    if (options.config_path.empty()) throw ConfigError("--config is required");
    std::string bytes;
    config = load_config(options.config_path, &bytes);
    run.set_input(bytes);
  }
  if (!options.solver.empty()) config.solver = options.solver;
  if (config.solver != "shooting" && config.solver != "convex")
    throw ConfigError("solver must be 'shooting' or 'convex'");
  if (options.grid_steps && config.finite) config.finite->grid_steps = *options.grid_steps;
  if (options.epsilon && config.stationary) config.stationary->epsilon = *options.epsilon;
  auto& sim = config.simulation;
  if (options.seed) sim.sim.seed = *options.seed;
  if (options.particles) sim.sim.n_particles = *options.particles;
  if (options.dt) sim.sim.dt = *options.dt;
  sim.sim.export_particles =
      sim.export_particles >= 0 ? sim.export_particles : std::min(sim.sim.n_particles, 20);

  Json& r = run.resolved();
  r["solver"] = config.solver;
  if (config.finite) {
    r["T"] = num(config.finite->T);
    r["grid_steps"] = config.finite->grid_steps;
  }
  if (config.stationary) r["epsilon"] = num(config.stationary->epsilon);
  r["simulation"] = {{"mode", mode_name(sim.mode)},
                     {"particles", sim.sim.n_particles},
                     {"dt", num(sim.sim.dt)},
                     {"seed", sim.sim.seed},
                     {"record_stride", sim.sim.record_stride},
                     {"export_particles", sim.sim.export_particles},
                     {"t_end", num(sim.t_end)}};
  return config;
}

FiniteHorizonProblem finite_problem(const Config& c) {
  if (!c.finite) throw ConfigError("missing key 'finite'");
  return FiniteHorizonProblem(*c.system, GaussianSpec(c.finite->Sigma0),
                              GaussianSpec(c.finite->SigmaT), c.finite->T);
}

StationaryProblem stationary_problem(const Config& c) {
  if (!c.stationary) throw ConfigError("missing key 'stationary'");
  return StationaryProblem{*c.system, GaussianSpec(c.stationary->Sigma)};
}

TimeGrid finite_grid(const Config& c) { return TimeGrid(0.0, c.finite->T, c.finite->grid_steps); }

Json feasibility_json(const FeasibilityCertificate& cert) {
  return {{"feasible", cert.feasible},
          {"gap", num(cert.gap)},
          {"tolerance", cert.tolerance},
          {"P_T", matrix_to_json(cert.P_T)}};
}

Json certificate_json(const StationaryCertificate& cert) {
  return {{"assignable", cert.assignable},
          {"rank_ok", cert.rank_ok},
          {"gap", num(cert.gap)},
          {"P", matrix_to_json(cert.P)},
          {"X", matrix_to_json(cert.X)},
          {"lyapunov_residual", num(cert.lyapunov_residual)},
          {"residual_tolerance", num(cert.residual_tolerance)}};
}

std::string diagnose(const StationaryCertificate& cert) {
  std::ostringstream s;
  s << "not assignable:";
  if (!cert.rank_ok) {
    s << " solvability residual " << format_number(cert.lyapunov_residual) << " exceeds "
      << format_number(cert.residual_tolerance) << " (rank condition fails);";
  }
  if (!(cert.gap > kAssignabilityTolerance)) {
    s << " lambda_min(Sigma - P) = " << format_number(cert.gap) << " is not positive;";
  }
  return s.str();
}

struct SteerResult {
  GainSchedule schedule;
  Json summary;
};

SteerResult synthesize_schedule(const Config& config) {
  const auto problem = finite_problem(config);
  const auto grid = finite_grid(config);
  Json summary = {{"solver", config.solver}};
  if (config.solver == "shooting") {
    try {
      auto out = shoot(problem, grid);
      summary["solver_used"] = "shooting";
      summary["residual"] = num(out.result.residual);
      summary["iterations"] = out.result.iterations;
      Json history = Json::array();
      for (double r : out.result.residual_history) history.push_back(num(r));
      summary["residual_history"] = history;
      summary["Pi_T"] = matrix_to_json(out.result.Pi_T);
      summary["expected_cost"] = num(out.schedule.expected_cost);
      return {std::move(out.schedule), std::move(summary)};
    } catch (const ConvergenceError& e) {
      std::cerr << "shooting failed (" << e.what() << "); using the convex fallback\n";
      summary["shooting_failure"] = e.what();
    }
  }
  auto out = solve_convex_fallback(problem, grid);
  summary["solver_used"] = "convex";
  summary["expected_cost"] = num(out.schedule.expected_cost);
  summary["objective"] = num(out.report.objective);
  summary["boundary_mismatch"] = num(out.report.boundary_mismatch);
  summary["dynamics_residual"] = num(out.report.dynamics_residual);
  summary["min_sigma_hat_eigenvalue"] = num(out.report.min_sigma_hat_eigenvalue);
  summary["outer_iterations"] = out.report.outer_iterations;
  summary["inner_iterations"] = out.report.inner_iterations;
  summary["certified"] = out.report.certified;
  return {std::move(out.schedule), std::move(summary)};
}

struct StationaryResult {
  StationaryCertificate certificate;
  std::optional<StationaryController> controller;
  Json summary;
};

StationaryResult synthesize_stationary(const Config& config) {
  const auto problem = stationary_problem(config);
  StationaryResult r;
  r.certificate = certify_stationary(problem);
  r.summary = certificate_json(r.certificate);
  if (!r.certificate.assignable) {
    r.summary["diagnosis"] = diagnose(r.certificate);
    return r;
  }
  MinPowerOptions options;
  options.weighting = config.stationary->weighting;
  options.epsilon = config.stationary->epsilon;
  auto controller = solve_min_power(problem, options);
  const auto prop = verify_proposition1(controller, problem);
  r.summary["X"] = matrix_to_json(min_power_X(problem, r.certificate.P, options.weighting));
  r.summary["K"] = matrix_to_json(controller.K);
  r.summary["L"] = matrix_to_json(controller.filter.L);
  r.summary["power"] = num(controller.power);
  r.summary["hurwitz"] = controller.hurwitz;
  r.summary["spectral_abscissa"] = num(controller.spectral_abscissa);
  r.summary["epsilon"] = num(controller.epsilon);
  r.summary["Sigma_achieved"] = matrix_to_json(controller.Sigma_achieved);
  r.summary["weighting"] =
      options.weighting == PowerWeighting::kFilterCovariance ? "filter" : "state";
  r.summary["optimality_certificate"] = {
      {"passed", prop.passed},
      {"Pi", matrix_to_json(prop.Pi)},
      {"factorization_residual", num(prop.factorization_residual)},
      {"hurwitz", prop.hurwitz},
      {"lyapunov_residual", num(prop.lyapunov_residual)}};
  r.controller = std::move(controller);
  return r;
}

int cmd_check(const Options& options) {
  Run run("check", options);
  const auto config = resolve_config(options, run, false);
  if (!config.finite && !config.stationary)
    throw ConfigError("missing key 'finite' or 'stationary'");
  Json result = Json::object();
  bool ok = true;
  if (config.finite) {
    const auto cert = check_feasibility(finite_problem(config), finite_grid(config));
    result["finite"] = feasibility_json(cert);
    ok = ok && cert.feasible;
    std::cout << "finite horizon: " << (cert.feasible ? "feasible" : "infeasible")
              << ", gap " << format_number(cert.gap) << '\n';
  }
  if (config.stationary) {
    const auto cert = certify_stationary(stationary_problem(config));
    result["stationary"] = certificate_json(cert);
    ok = ok && cert.assignable;
    std::cout << "stationary: " << (cert.assignable ? "assignable" : diagnose(cert)) << '\n';
  }
  run.write_json("check.json", result);
  const int code = ok ? kExitOk : kExitRejected;
  run.write_manifest(code);
  return code;
}

int cmd_steer(const Options& options) {
  Run run("steer", options);
  const auto config = resolve_config(options, run, false);
  const auto cert = check_feasibility(finite_problem(config), finite_grid(config));
  if (!cert.feasible) {
    run.write_json("steer.json", {{"feasibility", feasibility_json(cert)}});
    std::cerr << "terminal covariance is infeasible: gap " << format_number(cert.gap) << '\n';
    run.write_manifest(kExitRejected);
    return kExitRejected;
  }
  auto steer = synthesize_schedule(config);
  steer.summary["feasibility"] = feasibility_json(cert);
  {
    auto csv = run.open("gain_schedule.csv");
    write_gain_schedule_csv(csv, steer.schedule);
  }
  run.write_json("steer.json", steer.summary);
  std::cout << "solver " << steer.summary["solver_used"].get<std::string>() << ", expected cost "
            << format_number(steer.schedule.expected_cost) << '\n';
  run.write_manifest(kExitOk);
  return kExitOk;
}

int cmd_stationary(const Options& options) {
  Run run("stationary", options);
  const auto config = resolve_config(options, run, false);
  auto result = synthesize_stationary(config);
  run.write_json("stationary.json", result.summary);
  if (!result.controller) {
    std::cerr << diagnose(result.certificate) << '\n';
    run.write_manifest(kExitRejected);
    return kExitRejected;
  }
  std::cout << "K = " << result.controller->K << "\npower " << format_number(result.controller->power)
            << (result.controller->hurwitz ? ", closed loop Hurwitz" : ", closed loop not Hurwitz")
            << '\n';
  run.write_manifest(kExitOk);
  return kExitOk;
}

struct SimulationResult {
  EnsembleStats stats;
  Matrix target;
};

// Returns nullopt (after writing diagnostics) when a gate rejects the problem.
std::optional<SimulationResult> simulate(const Config& config, Run& run, Json& summary) {
  const auto& s = config.simulation;
  const bool need_finite = s.mode != SimulationMode::kStationary;
  const bool need_stationary = s.mode != SimulationMode::kFinite;

  std::optional<SteerResult> steer;
  if (need_finite) {
    const auto cert = check_feasibility(finite_problem(config), finite_grid(config));
    summary["feasibility"] = feasibility_json(cert);
    if (!cert.feasible) {
      std::cerr << "terminal covariance is infeasible: gap " << format_number(cert.gap) << '\n';
      return std::nullopt;
    }
    steer = synthesize_schedule(config);
    summary["steer"] = steer->summary;
    auto csv = run.open("gain_schedule.csv");
    write_gain_schedule_csv(csv, steer->schedule);
  }
  std::optional<StationaryResult> stationary;
  if (need_stationary) {
    stationary = synthesize_stationary(config);
    summary["stationary"] = stationary->summary;
    if (!stationary->controller) {
      std::cerr << diagnose(stationary->certificate) << '\n';
      return std::nullopt;
    }
  }

  SimulationResult r;
  switch (s.mode) {
    case SimulationMode::kFinite:
      r.stats = simulate_finite(finite_problem(config), steer->schedule, s.sim);
      r.target = config.finite->SigmaT;
      break;
    case SimulationMode::kStationary:
      r.stats = simulate_stationary(stationary_problem(config), *stationary->controller, s.sim,
                                    s.t_end);
      r.target = stationary->controller->Sigma_achieved;
      break;
    case SimulationMode::kChained:
      r.stats = chain_finite_then_stationary(finite_problem(config), steer->schedule,
                                             *stationary->controller, s.sim, s.t_end);
      r.target = stationary->controller->Sigma_achieved;
      break;
  }
  {
    auto csv = run.open("trajectories.csv");
    write_trajectory_csv(csv, r.stats);
  }
  return r;
}

double relative_error(const Matrix& cov, const Matrix& target) {
  return (cov - target).norm() / target.norm();
}

int cmd_simulate(const Options& options) {
  Run run("simulate", options);
  const auto config = resolve_config(options, run, false);
  Json summary = Json::object();
  auto result = simulate(config, run, summary);
  if (!result) {
    run.write_json("simulate.json", summary);
    run.write_manifest(kExitRejected);
    return kExitRejected;
  }
  const Matrix& terminal = result->stats.cov_x.back();
  const double rel = relative_error(terminal, result->target);
  Json stats = stats_to_json(result->stats);
  stats["target"] = matrix_to_json(result->target);
  stats["terminal_relative_error"] = num(rel);
  run.write_json("stats.json", stats);
  run.write_json("simulate.json", summary);
  std::cout << "terminal covariance at t = " << format_number(result->stats.times.back()) << ":\n"
            << terminal << "\nrelative Frobenius deviation from target " << format_number(rel)
            << '\n';
  run.write_manifest(kExitOk);
  return kExitOk;
}

Json compare(const std::string& name, const Matrix& computed, const Matrix& reference,
             double tolerance) {
  const double err = (computed - reference).cwiseAbs().maxCoeff();
  return {{"name", name},
          {"computed", matrix_to_json(computed)},
          {"reference", matrix_to_json(reference)},
          {"tolerance", tolerance},
          {"max_abs_error", num(err)},
          {"pass", err <= tolerance}};
}

int cmd_reproduce(const Options& options) {
  Run run("reproduce-paper", options);
  const auto config = resolve_config(options, run, true);
  Json summary = Json::object();
  auto sim = simulate(config, run, summary);
  if (!sim) {
    run.write_json("report.json", summary);
    run.write_manifest(kExitRejected);
    return kExitRejected;
  }
  run.write_json("steer.json", summary["steer"]);
  run.write_json("stationary.json", summary["stationary"]);
  Json stats = stats_to_json(sim->stats);
  stats["target"] = matrix_to_json(sim->target);
  run.write_json("stats.json", stats);

  Json checks = Json::array();
  Matrix P1(2, 2), P(2, 2), X(2, 1), K(1, 2);
  P1 << 0.0471, 0.1049, 0.1049, 0.4587;
  P << 0.0447, 0.1000, 0.1000, 0.4472;
  X << -0.5, -0.5;
  K << 5.4440, 19.7854;
  checks.push_back(compare("P(1)", matrix_from_json(summary["feasibility"]["P_T"], "P_T"), P1,
                           1e-3));
  checks.push_back(compare("P", matrix_from_json(summary["stationary"]["P"], "P"), P, 5e-4));
  checks.push_back(compare("X", matrix_from_json(summary["stationary"]["X"], "X"), X, 1e-10));
  checks.push_back(compare("K", matrix_from_json(summary["stationary"]["K"], "K"), K, 1e-3));

  const int N = sim->stats.n_particles;
  const double widen = std::max(1.0, std::sqrt(20000.0 / std::max(N, 1)));
  const double tol = 0.05 * widen;
  Json mc = Json::array();
  bool mc_pass = true;
  for (double t : {1.0, 2.0, 3.0}) {
    const auto k = sim->stats.nearest(t);
    const double rel = relative_error(sim->stats.cov_x[k], sim->target);
    mc.push_back({{"t", num(sim->stats.times[k])}, {"relative_error", num(rel)}});
    mc_pass = mc_pass && rel <= tol;
  }
  const double cross = sim->stats.cross_xhat_xtilde[sim->stats.nearest(1.0)].norm();
  mc_pass = mc_pass && cross <= tol;
  Json mc_check = {{"name", "monte_carlo_covariance"},
                   {"particles", N},
                   {"tolerance", num(tol)},
                   {"nodes", mc},
                   {"cross_covariance_norm_t1", num(cross)},
                   {"pass", mc_pass}};
  if (widen > 1.0) mc_check["note"] = "low-N, widened tolerance";
  checks.push_back(mc_check);

  bool all = true;
  for (const auto& c : checks) {
    all = all && c["pass"].get<bool>();
    std::cout << (c["pass"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>()
              << '\n';
  }
  run.write_json("report.json", {{"checks", checks}, {"all_passed", all}});
  const int code = all ? kExitOk : kExitError;
  run.write_manifest(code);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance steering by output feedback"};
  app.require_subcommand(1);
  app.fallthrough();
  Options options;
  app.add_option("--config", options.config_path, "Problem config (JSON)");
  app.add_option("--out", options.out_dir, "Output directory")->capture_default_str();
  app.add_option("--solver", options.solver, "Finite-horizon solver")
      ->check(CLI::IsMember({"shooting", "convex"}));
  app.add_option("--seed", options.seed, "Simulation seed");
  app.add_option("--particles", options.particles, "Number of particles")
      ->check(CLI::PositiveNumber);
  app.add_option("--dt", options.dt, "Simulation step")->check(CLI::PositiveNumber);
  app.add_option("--grid-steps", options.grid_steps, "Synthesis grid steps")
      ->check(CLI::PositiveNumber);
  app.add_option("--epsilon", options.epsilon, "Stationary regularization")
      ->check(CLI::NonNegativeNumber);

  auto* check = app.add_subcommand("check", "Terminal feasibility and stationary assignability");
  auto* steer = app.add_subcommand("steer", "Finite-horizon gain schedule");
  auto* stationary = app.add_subcommand("stationary", "Minimum-power stationary controller");
  auto* sim = app.add_subcommand("simulate", "Closed-loop Monte Carlo");
  auto* reproduce = app.add_subcommand("reproduce-paper", "Double-integrator example end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (check->parsed()) return cmd_check(options);
    if (steer->parsed()) return cmd_steer(options);
    if (stationary->parsed()) return cmd_stationary(options);
    if (sim->parsed()) return cmd_simulate(options);
    if (reproduce->parsed()) return cmd_reproduce(options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
