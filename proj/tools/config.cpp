#include "config.hpp"

#include <fstream>
#include <sstream>

namespace covsteer::cli {
namespace {

const Json& require(const Json& parent, const std::string& section, const std::string& key) {
  if (!parent.is_object() || !parent.contains(key))
    throw ConfigError("missing key '" + (section.empty() ? key : section + "." + key) + "'");
  return parent.at(key);
}

Matrix read_matrix(const Json& parent, const std::string& section, const std::string& key) {
  return matrix_from_json(require(parent, section, key), section + "." + key);
}

template <class T>
T read_or(const Json& parent, const std::string& section, const std::string& key, T fallback) {
  if (!parent.contains(key)) return fallback;
  try {
    return parent.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("key '" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace

std::string mode_name(SimulationMode mode) {
  switch (mode) {
    case SimulationMode::kFinite: return "finite";
    case SimulationMode::kStationary: return "stationary";
    case SimulationMode::kChained: return "chained";
  }
  return "chained";
}

Config parse_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  Config c;
  const Json& sys = require(j, "", "system");
  c.system.emplace(read_matrix(sys, "system", "A"), read_matrix(sys, "system", "B"),
                   read_matrix(sys, "system", "B1"), read_matrix(sys, "system", "C"),
                   read_matrix(sys, "system", "D"));

  if (j.contains("finite")) {
    const Json& f = j.at("finite");
    FiniteSection s;
    s.Sigma0 = read_matrix(f, "finite", "Sigma0");
    s.SigmaT = read_matrix(f, "finite", "SigmaT");
    s.T = read_or(f, "finite", "T", 1.0);
    s.grid_steps = read_or(f, "finite", "grid_steps", 1000);
    c.finite = std::move(s);
  }
  if (j.contains("stationary")) {
    const Json& st = j.at("stationary");
    StationarySection s;
    s.Sigma = read_matrix(st, "stationary", "Sigma");
    s.epsilon = read_or(st, "stationary", "epsilon", 1e-2);
    const auto w = read_or<std::string>(st, "stationary", "weighting", "filter");
    if (w == "filter") {
      s.weighting = PowerWeighting::kFilterCovariance;
    } else if (w == "state") {
      s.weighting = PowerWeighting::kStateCovariance;
    } else {
      throw ConfigError("key 'stationary.weighting' must be \"filter\" or \"state\"");
    }
    c.stationary = std::move(s);
  }
  if (j.contains("simulation")) {
    const Json& sm = j.at("simulation");
    auto& s = c.simulation;
    const auto mode = read_or<std::string>(sm, "simulation", "mode", "chained");
    if (mode == "finite") {
      s.mode = SimulationMode::kFinite;
    } else if (mode == "stationary") {
      s.mode = SimulationMode::kStationary;
    } else if (mode == "chained") {
      s.mode = SimulationMode::kChained;
    } else {
      throw ConfigError("key 'simulation.mode' must be finite, stationary or chained");
    }
    s.sim.n_particles = read_or(sm, "simulation", "particles", s.sim.n_particles);
    s.sim.dt = read_or(sm, "simulation", "dt", s.sim.dt);
    s.sim.seed = read_or<std::uint64_t>(sm, "simulation", "seed", s.sim.seed);
    s.sim.record_stride = read_or(sm, "simulation", "record_stride", s.sim.record_stride);
    s.export_particles = read_or(sm, "simulation", "export_particles", -1);
    s.t_end = read_or(sm, "simulation", "t_end", s.t_end);
  }
  c.solver = read_or<std::string>(j, "", "solver", c.solver);
  return c;
}

Config load_config(const std::string& path, std::string* bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (bytes) *bytes = text;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

Json example_preset() {
  const Json I = {{1.0, 0.0}, {0.0, 1.0}};
  const Json half = {{0.5, 0.0}, {0.0, 0.5}};
  return {
      {"system",
       {{"A", {{0.0, 1.0}, {0.0, 0.0}}},
        {"B", {{0.0}, {1.0}}},
        {"B1", {{0.0}, {1.0}}},
        {"C", {{1.0, 0.0}}},
        {"D", {{0.1}}}}},
      {"finite", {{"Sigma0", I}, {"SigmaT", half}, {"T", 1.0}, {"grid_steps", 1000}}},
      {"stationary", {{"Sigma", half}}},
      {"simulation",
       {{"mode", "chained"},
        {"particles", 20000},
        {"dt", 1e-3},
        {"seed", 42},
        {"record_stride", 10},
        {"export_particles", 20},
        {"t_end", 3.0}}},
  };
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace covsteer::cli
