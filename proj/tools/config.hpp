#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "covsteer/io.hpp"
#include "covsteer/montecarlo.hpp"

namespace covsteer::cli {

/// Raised for malformed configs; the message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct FiniteSection {
  Matrix Sigma0;
  Matrix SigmaT;
  double T = 1.0;
  int grid_steps = 1000;
};

struct StationarySection {
  Matrix Sigma;
  double epsilon = 1e-2;
  PowerWeighting weighting = PowerWeighting::kFilterCovariance;
};

enum class SimulationMode { kFinite, kStationary, kChained };

struct SimulationSection {
  SimulationMode mode = SimulationMode::kChained;
  SimConfig sim;
  double t_end = 3.0;
  /// Negative selects min(particles, 20).
  int export_particles = -1;
};

struct Config {
  std::optional<LinearGaussianSystem> system;
  std::optional<FiniteSection> finite;
  std::optional<StationarySection> stationary;
  SimulationSection simulation;
  std::string solver = "shooting";
};

Config parse_config(const Json& j);
Config load_config(const std::string& path, std::string* bytes = nullptr);

/// The double-integrator example: Sigma0 = I to 0.5 I on [0, 1], then held.
Json example_preset();

/// 64-bit FNV-1a of the raw config bytes.
std::uint64_t fnv1a(const std::string& bytes);

std::string mode_name(SimulationMode mode);

}  // namespace covsteer::cli
