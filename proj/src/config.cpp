#include "shellopt/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shellopt/errors.hpp"

namespace shellopt {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void expect_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError("'" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ConfigError("unknown key '" + join(path, key) + "'");
  }
}

void read(const json& obj, const std::string& path, const char* key, double& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError("'" + join(path, key) + "' must be a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ConfigError("'" + join(path, key) + "' must be finite");
}

void read(const json& obj, const std::string& path, const char* key, int& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError("'" + join(path, key) + "' must be an integer");
  const auto value = v.get<std::int64_t>();
  if (value < INT32_MIN || value > INT32_MAX) throw ConfigError("'" + join(path, key) + "' is out of range");
  out = static_cast<int>(value);
}

void read(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) throw ConfigError("'" + join(path, key) + "' must be a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read(const json& obj, const std::string& path, const char* key, bool& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError("'" + join(path, key) + "' must be a boolean");
  out = v.get<bool>();
}

void read(const json& obj, const std::string& path, const char* key, std::string& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError("'" + join(path, key) + "' must be a string");
  out = v.get<std::string>();
}

// null clears the value.
template <class T>
void read(const json& obj, const std::string& path, const char* key, std::optional<T>& out) {
  if (!obj.contains(key)) return;
  if (obj.at(key).is_null()) {
    out.reset();
    return;
  }
  T value{};
  read(obj, path, key, value);
  out = value;
}

template <class T>
void read(const json& obj, const std::string& path, const char* key, std::vector<T>& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string name = join(path, key);
  if (!v.is_array()) throw ConfigError("'" + name + "' must be an array");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    json wrapper = json::object({{"item", v[i]}});
    T value{};
    read(wrapper, name + "[" + std::to_string(i) + "]", "item", value);
    out.push_back(value);
  }
}

const json* section(const json& root, const char* key) {
  if (!root.contains(key)) return nullptr;
  return &root.at(key);
}

void parse_mesh(const json& j, RunConfig& c) {
  expect_keys(j, "mesh", {"path", "roof"});
  read(j, "mesh", "path", c.mesh_path);
  if (j.contains("roof")) {
    const json& r = j.at("roof");
    expect_keys(r, "mesh.roof", {"subdivisions", "half_width", "height", "foot_fraction"});
    read(r, "mesh.roof", "subdivisions", c.roof.subdivisions);
    read(r, "mesh.roof", "half_width", c.roof.half_width);
    read(r, "mesh.roof", "height", c.roof.height);
    read(r, "mesh.roof", "foot_fraction", c.roof.foot_fraction);
  }
}

void parse_dirichlet(const json& j, RunConfig& c) {
  expect_keys(j, "dirichlet", {"type", "tolerance", "vertices"});
  std::string type = "ground";
  read(j, "dirichlet", "type", type);
  if (type == "ground") {
    if (j.contains("vertices")) throw ConfigError("'dirichlet.vertices' requires type 'explicit'");
    GroundPlaneDirichlet sel{1e-9};
    read(j, "dirichlet", "tolerance", sel.tolerance);
    c.dirichlet = sel;
  } else if (type == "explicit") {
    if (j.contains("tolerance")) throw ConfigError("'dirichlet.tolerance' requires type 'ground'");
    ExplicitDirichlet sel;
    read(j, "dirichlet", "vertices", sel.indices);
    c.dirichlet = sel;
  } else {
    throw ConfigError("'dirichlet.type' must be 'ground' or 'explicit'");
  }
}

void parse_tracking(const json& j, RunConfig& c) {
  expect_keys(j, "tracking", {"type", "fraction", "vertices"});
  std::string type = "plateau";
  read(j, "tracking", "type", type);
  auto reject = [&](const char* key, const char* needs) {
    if (j.contains(key)) throw ConfigError(std::string("'tracking.") + key + "' requires type '" + needs + "'");
  };
  if (type == "plateau") {
    reject("vertices", "explicit");
    PlateauTracking sel;
    read(j, "tracking", "fraction", sel.fraction);
    c.tracking = sel;
  } else if (type == "full") {
    reject("vertices", "explicit");
    reject("fraction", "plateau");
    c.tracking = FullTracking{};
  } else if (type == "explicit") {
    reject("fraction", "plateau");
    ExplicitTracking sel;
    read(j, "tracking", "vertices", sel.vertices);
    c.tracking = sel;
  } else {
    throw ConfigError("'tracking.type' must be 'plateau', 'full' or 'explicit'");
  }
}

void parse_leader(const json& j, RunConfig& c) {
  expect_keys(j, "leader", {"samples", "iterations", "tau0", "tau_half", "probe_levels", "max_backtracks",
                            "hypergradient", "allow_sample_failure"});
  LeaderConfig& l = c.leader;
  read(j, "leader", "samples", l.samples);
  read(j, "leader", "iterations", l.iterations);
  read(j, "leader", "tau0", l.tau0);
  read(j, "leader", "tau_half", l.tau_half);
  read(j, "leader", "probe_levels", l.probe_levels);
  read(j, "leader", "max_backtracks", l.max_backtracks);
  read(j, "leader", "allow_sample_failure", l.allow_sample_failure);
  std::string mode = l.mode == HypergradientMode::kFull ? "full" : "frozen";
  read(j, "leader", "hypergradient", mode);
  if (mode == "full") {
    l.mode = HypergradientMode::kFull;
  } else if (mode == "frozen") {
    l.mode = HypergradientMode::kFrozen;
  } else {
    throw ConfigError("'leader.hypergradient' must be 'full' or 'frozen'");
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  expect_keys(root, "", {"mesh", "dirichlet", "tracking", "material", "force", "elastic", "barrier", "noise",
                         "leader", "follower", "risk", "toy", "output"});

  RunConfig c;
  if (auto* j = section(root, "mesh")) parse_mesh(*j, c);
  if (auto* j = section(root, "dirichlet")) parse_dirichlet(*j, c);
  if (auto* j = section(root, "tracking")) parse_tracking(*j, c);
  if (auto* j = section(root, "material")) {
    expect_keys(*j, "material", {"u_min", "u_max", "volume_max", "initial"});
    read(*j, "material", "u_min", c.leader.u_min);
    read(*j, "material", "u_max", c.leader.u_max);
    read(*j, "material", "volume_max", c.leader.volume_max);
    read(*j, "material", "initial", c.initial_thickness);
  }
  if (auto* j = section(root, "force")) {
    expect_keys(*j, "force", {"max_horizontal", "max_vertical"});
    read(*j, "force", "max_horizontal", c.force.max_horizontal);
    read(*j, "force", "max_vertical", c.force.max_vertical);
  }
  if (auto* j = section(root, "elastic")) {
    expect_keys(*j, "elastic", {"mu", "lambda", "gamma"});
    read(*j, "elastic", "mu", c.elastic.mu);
    read(*j, "elastic", "lambda", c.elastic.lambda);
    read(*j, "elastic", "gamma", c.elastic.gamma);
  }
  if (auto* j = section(root, "barrier")) {
    expect_keys(*j, "barrier", {"force", "thickness", "volume"});
    read(*j, "barrier", "force", c.force.barrier_weight);
    read(*j, "barrier", "thickness", c.leader.alpha_u);
    read(*j, "barrier", "volume", c.leader.alpha_volume);
  }
  if (auto* j = section(root, "noise")) {
    expect_keys(*j, "noise", {"sigma", "lower", "upper", "seed"});
    read(*j, "noise", "sigma", c.noise.sigma);
    read(*j, "noise", "lower", c.noise.lower);
    read(*j, "noise", "upper", c.noise.upper);
    read(*j, "noise", "seed", c.noise.seed);
  }
  if (auto* j = section(root, "leader")) parse_leader(*j, c);
  if (auto* j = section(root, "follower")) {
    expect_keys(*j, "follower", {"max_iter", "grad_tol", "armijo_c", "backtrack", "max_halvings"});
    read(*j, "follower", "max_iter", c.follower.max_iter);
    read(*j, "follower", "grad_tol", c.follower.grad_tol);
    read(*j, "follower", "armijo_c", c.follower.armijo_c);
    read(*j, "follower", "backtrack", c.follower.backtrack);
    read(*j, "follower", "max_halvings", c.follower.max_halvings);
  }
  if (auto* j = section(root, "risk")) {
    expect_keys(*j, "risk", {"cvar_betas", "excess_target", "excess_order", "semideviation_order"});
    read(*j, "risk", "cvar_betas", c.risk.cvar_betas);
    read(*j, "risk", "excess_target", c.risk.excess_target);
    read(*j, "risk", "excess_order", c.risk.excess_order);
    read(*j, "risk", "semideviation_order", c.risk.semideviation_order);
  }
  if (auto* j = section(root, "toy")) {
    expect_keys(*j, "toy", {"u_lo", "u_hi", "points", "eta", "eta_resolution", "gap_k", "gap_points"});
    read(*j, "toy", "u_lo", c.toy.u_lo);
    read(*j, "toy", "u_hi", c.toy.u_hi);
    read(*j, "toy", "points", c.toy.points);
    read(*j, "toy", "eta", c.toy.eta);
    read(*j, "toy", "eta_resolution", c.toy.eta_resolution);
    read(*j, "toy", "gap_k", c.toy.gap_k);
    read(*j, "toy", "gap_points", c.toy.gap_points);
  }
  if (auto* j = section(root, "output")) {
    expect_keys(*j, "output", {"directory", "checkpoint_interval"});
    read(*j, "output", "directory", c.output_directory);
    read(*j, "output", "checkpoint_interval", c.checkpoint_interval);
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig c = parse_config(buffer.str());
  // Relative paths are relative to the config file.
  const auto base = path.parent_path();
  if (c.mesh_path && std::filesystem::path(*c.mesh_path).is_relative()) {
    c.mesh_path = (base / *c.mesh_path).lexically_normal().string();
  }
  return c;
}

void validate(const RunConfig& c) {
  require(c.roof.subdivisions >= 2, "mesh.roof.subdivisions must be at least 2");
  require(c.roof.half_width > 0 && c.roof.height > 0, "mesh.roof dimensions must be positive");
  require(c.roof.foot_fraction > 0 && c.roof.foot_fraction < 1, "mesh.roof.foot_fraction must lie in (0, 1)");
  if (auto* g = std::get_if<GroundPlaneDirichlet>(&c.dirichlet)) {
    require(g->tolerance >= 0, "dirichlet.tolerance must be non-negative");
  }
  if (auto* p = std::get_if<PlateauTracking>(&c.tracking)) {
    require(p->fraction > 0 && p->fraction <= 1, "tracking.fraction must lie in (0, 1]");
  }
  require(c.elastic.mu > 0 && c.elastic.lambda >= 0 && c.elastic.gamma > 0,
          "elastic constants must satisfy mu > 0, lambda >= 0, gamma > 0");
  require(c.force.max_horizontal > 0 && c.force.max_vertical > 0, "force bounds must be positive");
  require(c.force.barrier_weight > 0, "barrier.force must be positive");
  require(c.leader.alpha_u > 0, "barrier.thickness must be positive");
  require(c.leader.alpha_volume > 0, "barrier.volume must be positive");
  require(c.leader.u_min > 0, "material.u_min must be positive");
  require(c.leader.u_min < c.leader.u_max, "material.u_min must be below material.u_max");
  require(c.leader.volume_max > 0, "material.volume_max must be positive");
  // Bounded support of the perturbation.
  require(c.noise.sigma >= 0, "noise.sigma must be non-negative");
  require(c.noise.lower > 0, "noise.lower must be positive");
  require(c.noise.lower < 1 && 1 < c.noise.upper, "noise truncation must satisfy lower < 1 < upper");
  require(c.leader.samples >= 1, "leader.samples must be at least 1");
  require(c.leader.iterations >= 0, "leader.iterations must be non-negative");
  require(c.leader.tau0 >= 0, "leader.tau0 must be non-negative (0 selects the probe)");
  require(c.leader.tau_half > 0, "leader.tau_half must be positive");
  require(c.leader.probe_levels >= 1, "leader.probe_levels must be at least 1");
  require(c.leader.max_backtracks >= 0, "leader.max_backtracks must be non-negative");
  require(c.follower.max_iter >= 1, "follower.max_iter must be at least 1");
  require(c.follower.grad_tol > 0, "follower.grad_tol must be positive");
  require(c.follower.armijo_c > 0 && c.follower.armijo_c < 0.5, "follower.armijo_c must lie in (0, 0.5)");
  require(c.follower.backtrack > 0 && c.follower.backtrack < 1, "follower.backtrack must lie in (0, 1)");
  require(c.follower.max_halvings >= 1, "follower.max_halvings must be at least 1");
  for (double beta : c.risk.cvar_betas) require(beta >= 0 && beta < 1, "risk.cvar_betas must lie in [0, 1)");
  require(c.risk.excess_order >= 1, "risk.excess_order must be at least 1");
  require(c.risk.semideviation_order >= 1, "risk.semideviation_order must be at least 1");
  require(c.toy.u_lo > 0 && c.toy.u_lo < c.toy.u_hi, "toy range must satisfy 0 < u_lo < u_hi");
  require(c.toy.points >= 2, "toy.points must be at least 2");
  require(c.toy.eta > 0, "toy.eta must be positive");
  require(c.toy.eta_resolution >= 2, "toy.eta_resolution must be at least 2");
  require(c.toy.gap_points >= 2, "toy.gap_points must be at least 2");
  for (int k : c.toy.gap_k) require(k >= 2, "toy.gap_k entries must be at least 2");
  require(!c.output_directory.empty(), "output.directory must not be empty");
  require(c.checkpoint_interval >= 0, "output.checkpoint_interval must be non-negative");
  if (c.initial_thickness) require(*c.initial_thickness > 0, "material.initial must be positive");
}

std::string to_json(const RunConfig& c, int indent) {
  json j;
  j["mesh"]["path"] = c.mesh_path ? json(*c.mesh_path) : json(nullptr);
  j["mesh"]["roof"] = {{"subdivisions", c.roof.subdivisions},
                       {"half_width", c.roof.half_width},
                       {"height", c.roof.height},
                       {"foot_fraction", c.roof.foot_fraction}};
  if (auto* g = std::get_if<GroundPlaneDirichlet>(&c.dirichlet)) {
    j["dirichlet"] = {{"type", "ground"}, {"tolerance", g->tolerance}};
  } else {
    j["dirichlet"] = {{"type", "explicit"}, {"vertices", std::get<ExplicitDirichlet>(c.dirichlet).indices}};
  }
  if (auto* p = std::get_if<PlateauTracking>(&c.tracking)) {
    j["tracking"] = {{"type", "plateau"}, {"fraction", p->fraction}};
  } else if (std::holds_alternative<FullTracking>(c.tracking)) {
    j["tracking"] = {{"type", "full"}};
  } else {
    j["tracking"] = {{"type", "explicit"}, {"vertices", std::get<ExplicitTracking>(c.tracking).vertices}};
  }
  j["material"] = {{"u_min", c.leader.u_min},
                   {"u_max", c.leader.u_max},
                   {"volume_max", c.leader.volume_max},
                   {"initial", c.initial_thickness ? json(*c.initial_thickness) : json(nullptr)}};
  j["force"] = {{"max_horizontal", c.force.max_horizontal}, {"max_vertical", c.force.max_vertical}};
  j["elastic"] = {{"mu", c.elastic.mu}, {"lambda", c.elastic.lambda}, {"gamma", c.elastic.gamma}};
  j["barrier"] = {{"force", c.force.barrier_weight},
                  {"thickness", c.leader.alpha_u},
                  {"volume", c.leader.alpha_volume}};
  j["noise"] = {{"sigma", c.noise.sigma}, {"lower", c.noise.lower}, {"upper", c.noise.upper}, {"seed", c.noise.seed}};
  j["leader"] = {{"samples", c.leader.samples},
                 {"iterations", c.leader.iterations},
                 {"tau0", c.leader.tau0},
                 {"tau_half", c.leader.tau_half},
                 {"probe_levels", c.leader.probe_levels},
                 {"max_backtracks", c.leader.max_backtracks},
                 {"hypergradient", c.leader.mode == HypergradientMode::kFull ? "full" : "frozen"},
                 {"allow_sample_failure", c.leader.allow_sample_failure}};
  j["follower"] = {{"max_iter", c.follower.max_iter},
                   {"grad_tol", c.follower.grad_tol},
                   {"armijo_c", c.follower.armijo_c},
                   {"backtrack", c.follower.backtrack},
                   {"max_halvings", c.follower.max_halvings}};
  j["risk"] = {{"cvar_betas", c.risk.cvar_betas},
               {"excess_target", c.risk.excess_target ? json(*c.risk.excess_target) : json(nullptr)},
               {"excess_order", c.risk.excess_order},
               {"semideviation_order", c.risk.semideviation_order}};
  j["toy"] = {{"u_lo", c.toy.u_lo},
              {"u_hi", c.toy.u_hi},
              {"points", c.toy.points},
              {"eta", c.toy.eta},
              {"eta_resolution", c.toy.eta_resolution},
              {"gap_k", c.toy.gap_k},
              {"gap_points", c.toy.gap_points}};
  j["output"] = {{"directory", c.output_directory}, {"checkpoint_interval", c.checkpoint_interval}};
  return j.dump(indent);
}

Problem build_problem(const RunConfig& config) {
  Problem p;
  ShellMesh mesh = config.mesh_path ? load_obj(*config.mesh_path) : make_roof_mesh(config.roof);
  p.mesh = select_dirichlet(build_topology(std::move(mesh)), config.dirichlet);
  p.ref = reference_quantities(p.mesh);
  p.components = assemble_components(p.mesh, p.ref, config.elastic);
  p.model = build_force_basis(p.mesh, vertex_normals(p.mesh), config.force.max_horizontal,
                              config.force.max_vertical, config.force.barrier_weight);
  p.tracked = tracking_indicator(p.mesh, config.tracking);
  p.chi_weights = tracking_weights(p.components, p.tracked);
  return p;
}

void check_feasible(const Eigen::VectorXd& u, const Problem& problem, const LeaderConfig& leader) {
  const auto& frozen = problem.mesh.frozen_face;
  for (int t = 0; t < u.size(); ++t) {
    if (!(u[t] > 0)) throw ConfigError("initial thickness of face " + std::to_string(t) + " is not positive");
    if (frozen[t]) continue;
    if (!(u[t] > leader.u_min)) {
      throw ConfigError("initial thickness violates material.u_min on face " + std::to_string(t));
    }
    if (!(u[t] < leader.u_max)) {
      throw ConfigError("initial thickness violates material.u_max on face " + std::to_string(t));
    }
  }
  const double v = volume(u, problem.ref.face_areas);
  if (!(v < leader.volume_max)) {
    std::ostringstream msg;
    msg << "initial thickness violates material.volume_max (volume " << v << " >= " << leader.volume_max << ")";
    throw ConfigError(msg.str());
  }
}

Eigen::VectorXd initial_thickness(const RunConfig& config, const Problem& problem) {
  Eigen::VectorXd u = config.initial_thickness
                          ? Eigen::VectorXd::Constant(problem.mesh.num_faces(), *config.initial_thickness)
                          : default_initial_thickness(problem.ref.face_areas, config.leader);
  check_feasible(u, problem, config.leader);
  return u;
}

Eigen::VectorXd read_thickness(const std::filesystem::path& path, int num_faces) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open thickness file " + path.string());
  Eigen::VectorXd u = Eigen::VectorXd::Constant(num_faces, NAN);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.rfind("face_index", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected 'face_index,thickness'");
    std::size_t used = 0;
    long face = 0;
    double value = 0.0;
    try {
      const std::string a = line.substr(0, comma);
      face = std::stol(a, &used);
      if (used != a.size()) fail("malformed face index");
      const std::string b = line.substr(comma + 1);
      value = std::stod(b, &used);
      if (used != b.size()) fail("malformed thickness");
    } catch (const std::logic_error&) {
      fail("malformed row");
    }
    if (face < 0 || face >= num_faces) fail("face index out of range");
    if (!std::isnan(u[face])) fail("duplicate face index");
    if (!(value > 0) || !std::isfinite(value)) fail("thickness must be positive and finite");
    u[face] = value;
  }
  for (int t = 0; t < num_faces; ++t) {
    if (std::isnan(u[t])) throw InputError(path.string() + ": missing thickness for face " + std::to_string(t));
  }
  return u;
}

void write_thickness(const std::filesystem::path& path, const Eigen::VectorXd& u) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  out << "face_index,thickness\n";
  for (int t = 0; t < u.size(); ++t) out << t << ',' << u[t] << '\n';
}

}  // namespace shellopt
