#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shellopt/elastic.hpp"
#include "shellopt/follower.hpp"
#include "shellopt/leader.hpp"
#include "shellopt/mesh.hpp"
#include "shellopt/roof.hpp"

namespace shellopt {

struct ForceConfig {
  double max_horizontal = 0.0015;
  double max_vertical = 0.003;
  double barrier_weight = 1e-4;
};

struct RiskConfig {
  std::vector<double> cvar_betas{0.5, 0.9, 0.95};
  std::optional<double> excess_target;  // unset: the sample mean
  double excess_order = 1.0;
  double semideviation_order = 1.0;
};

struct ToyConfig {
  double u_lo = 0.5;
  double u_hi = 1.5;
  int points = 201;
  double eta = 0.05;
  int eta_resolution = 201;
  std::vector<int> gap_k{10, 100, 1000};
  int gap_points = 10000;
};

struct RunConfig {
  std::optional<std::string> mesh_path;  // unset: procedural roof
  RoofShape roof;
  DirichletSelector dirichlet = GroundPlaneDirichlet{1e-9};
  TrackingSelector tracking = PlateauTracking{};
  ElasticParams elastic;
  ForceConfig force;
  NoiseModel noise;
  LeaderConfig leader;  // also holds the material bounds and their barrier weights
  std::optional<double> initial_thickness;  // unset: default_initial_thickness
  NewtonOptions follower;
  RiskConfig risk;
  ToyConfig toy;
  std::string output_directory = "out";
  int checkpoint_interval = 10;  // iterations between thickness checkpoints, 0: exit only
};

/// Parses a JSON configuration. Every key is optional; unknown keys, wrong
/// types and out-of-range values throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Range checks that do not need the mesh. Throws ConfigError.
void validate(const RunConfig& config);

/// Fully materialized configuration as JSON text.
std::string to_json(const RunConfig& config, int indent = 2);

/// Everything derived from the configuration and the mesh.
struct Problem {
  ShellMesh mesh;
  ReferenceQuantities ref;
  ElasticComponents components;
  ForceModel model;
  std::vector<char> tracked;
  Eigen::VectorXd chi_weights;
};

/// Loads or generates the mesh and assembles the problem. Mesh and selection
/// problems throw InputError.
Problem build_problem(const RunConfig& config);

/// Initial design from the config; throws ConfigError naming the violated
/// constraint if it is not strictly feasible.
Eigen::VectorXd initial_thickness(const RunConfig& config, const Problem& problem);

/// Throws ConfigError naming the violated constraint (lower bound, upper
/// bound or volume) if u is not strictly feasible.
void check_feasible(const Eigen::VectorXd& u, const Problem& problem, const LeaderConfig& leader);

/// Two-column CSV `face_index,thickness`. Throws InputError on malformed rows,
/// duplicate or missing faces, or non-positive values.
Eigen::VectorXd read_thickness(const std::filesystem::path& path, int num_faces);
void write_thickness(const std::filesystem::path& path, const Eigen::VectorXd& u);

}  // namespace shellopt
