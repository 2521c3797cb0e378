#include "shellopt/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "shellopt/bilevel.hpp"
#include "shellopt/errors.hpp"
#include "shellopt/risk.hpp"

namespace shellopt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  return out;
}

fs::path prepare_directory(const RunConfig& config) {
  fs::path dir(config.output_directory);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void apply_options(RunConfig& config, const CommandOptions& options) {
  if (options.seed) config.noise.seed = *options.seed;
}

Eigen::VectorXd design(const RunConfig& config, const Problem& problem, const CommandOptions& options) {
  if (!options.thickness) return initial_thickness(config, problem);
  Eigen::VectorXd u = read_thickness(*options.thickness, problem.mesh.num_faces());
  check_feasible(u, problem, config.leader);
  return u;
}

json mesh_summary(const Problem& p) {
  int tracked = 0;
  for (char c : p.tracked) tracked += c != 0;
  return {{"vertices", p.mesh.num_vertices()},
          {"faces", p.mesh.num_faces()},
          {"edges", p.mesh.num_edges()},
          {"frozen_faces", p.mesh.num_frozen_faces()},
          {"dirichlet_vertices", static_cast<int>(p.mesh.dirichlet.size())},
          {"tracked_vertices", tracked},
          {"free_dofs", p.components.num_free_dofs},
          {"total_area", p.ref.total_area()}};
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json follower_summary(const FollowerResult& r, const ForceModel& model) {
  json j = {{"F", to_vector(r.F)},
            {"compliance", r.compliance},
            {"smoothed_objective", r.smoothed_value},
            {"gradient_norm", r.gradient_norm},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"seed_index", r.seed_index}};
  if (r.F.size() == 3) {
    const double radius = std::hypot(r.F[0], r.F[1]);
    j["horizontal_magnitude"] = radius;
    j["horizontal_direction_deg"] = std::atan2(r.F[1], r.F[0]) * 180.0 / M_PI;
    j["vertical_fraction"] = r.F[2] / model.max_vertical;
    j["rim_gap_relative"] = 1.0 - radius * radius / (model.max_horizontal * model.max_horizontal);
  }
  return j;
}

/// Solves the follower at u without perturbation and writes the deformed mesh,
/// per-vertex displacements and the Newton trace.
FollowerResult write_worst_case(const fs::path& dir, const Problem& p, const Eigen::VectorXd& u,
                                const NewtonOptions& newton) {
  const ComplianceState state = prepare_compliance(p.components, u, p.model);
  FollowerResult r = solve_follower(state, p.model, default_seeds(p.model), newton);
  if (!r.converged) throw SolverError("follower did not converge on the final design");

  const Eigen::VectorXd y = p.components.extend_to_full(state.response * r.F);
  std::vector<Vec3> deformed(p.mesh.vertices);
  for (int v = 0; v < p.mesh.num_vertices(); ++v) deformed[v] += y.segment<3>(3 * v);
  write_obj(dir / "deformed.obj", p.mesh, deformed);

  auto disp = open_output(dir / "displacement.csv");
  disp << "vertex_index,dx,dy,dz,magnitude\n";
  for (int v = 0; v < p.mesh.num_vertices(); ++v) {
    const Vec3 d = y.segment<3>(3 * v);
    disp << v << ',' << d.x() << ',' << d.y() << ',' << d.z() << ',' << d.norm() << '\n';
  }

  auto trace = open_output(dir / "follower_trace.csv");
  trace << "iteration,smoothed_objective,compliance\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    trace << i << ',' << r.trace[i] << ',' << r.compliance_trace[i] << '\n';
  }
  return r;
}

void write_summary(const fs::path& dir, const json& summary) {
  auto out = open_output(dir / "summary.json");
  out << summary.dump(2) << '\n';
}

json base_summary(const char* command, const RunConfig& config, const CommandOptions& options) {
  json j;
  j["command"] = command;
  j["config"] = json::parse(to_json(config));
  j["workers"] = options.workers;
  j["thickness_file"] = options.thickness ? json(options.thickness->string()) : json(nullptr);
  return j;
}

}  // namespace

int run_solve(RunConfig config, const CommandOptions& options) {
  apply_options(config, options);
  validate(config);
  const Problem p = build_problem(config);
  const Eigen::VectorXd u0 = design(config, p, options);
  const fs::path dir = prepare_directory(config);

  auto conv = open_output(dir / "convergence.csv");
  conv << "iteration,empirical_risk,relative_cost,barrier,volume,step_size,gradient_norm,degenerate_samples,"
          "failed_samples\n";
  SgdCallbacks callbacks;
  callbacks.on_iteration = [&](const IterationLog& l) {
    conv << l.iteration << ',' << l.empirical_risk << ',' << l.relative_cost << ',' << l.barrier << ','
         << l.volume << ',' << l.step_size << ',' << l.gradient_norm << ',' << l.degenerate_samples << ','
         << l.failed_samples << '\n';
    conv.flush();
    if (options.log) {
      *options.log << "iter " << l.iteration << "  J/J0 " << l.relative_cost << "  volume " << l.volume
                   << "  step " << l.step_size << '\n';
    }
  };
  callbacks.on_iterate = [&](int iteration, const Eigen::VectorXd& u) {
    if (config.checkpoint_interval > 0 && iteration > 0 && iteration % config.checkpoint_interval == 0)
      write_thickness(dir / "thickness.csv", u);
  };

  const auto start = std::chrono::steady_clock::now();
  const SgdResult result =
      sgd(p.components, p.model, config.noise, p.chi_weights, config.leader, u0, options.workers,
          config.follower, callbacks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  write_thickness(dir / "thickness.csv", result.u);
  const FollowerResult worst = write_worst_case(dir, p, result.u, config.follower);

  json summary = base_summary("solve", config, options);
  summary["mesh"] = mesh_summary(p);
  summary["status"] = result.aborted ? "aborted" : "completed";
  summary["message"] = result.message;
  summary["tau0"] = result.tau0;
  summary["iterations_completed"] = result.history.empty() ? 0 : static_cast<int>(result.history.size()) - 1;
  if (!result.history.empty()) {
    const auto& h = result.history;
    summary["initial_empirical_risk"] = h.front().empirical_risk;
    summary["final_empirical_risk"] = h.back().empirical_risk;
    summary["final_relative_cost"] = h.back().relative_cost;
    const std::size_t window = std::min<std::size_t>(50, h.size());
    double avg = 0.0;
    for (std::size_t i = h.size() - window; i < h.size(); ++i) avg += h[i].relative_cost;
    summary["relative_cost_moving_average"] = avg / window;
    summary["moving_average_window"] = window;
  }
  summary["volume"] = volume(result.u, p.ref.face_areas);
  summary["thickness_min"] = result.u.minCoeff();
  summary["thickness_max"] = result.u.maxCoeff();
  summary["thickness_spatial_variance"] = spatial_variance(result.u, p.ref.face_areas, p.mesh.frozen_face);
  summary["worst_case_follower"] = follower_summary(worst, p.model);
  summary["wall_seconds"] = seconds;
  write_summary(dir, summary);

  if (result.aborted) {
    if (options.log) *options.log << "aborted: " << result.message << '\n';
    return kExitSolverAbort;
  }
  return kExitSuccess;
}

int run_follower(RunConfig config, const CommandOptions& options) {
  validate(config);
  const Problem p = build_problem(config);
  const Eigen::VectorXd u = design(config, p, options);
  const fs::path dir = prepare_directory(config);
  const FollowerResult r = write_worst_case(dir, p, u, config.follower);

  json summary = base_summary("follower", config, options);
  summary["mesh"] = mesh_summary(p);
  summary["follower"] = follower_summary(r, p.model);
  write_summary(dir, summary);
  if (options.log) {
    *options.log << "F* = " << r.F.transpose() << "  compliance " << r.compliance << "  iterations "
                 << r.iterations << '\n';
  }
  return kExitSuccess;
}

int run_simulate(RunConfig config, const CommandOptions& options) {
  apply_options(config, options);
  validate(config);
  const Problem p = build_problem(config);
  const Eigen::VectorXd u = design(config, p, options);
  const fs::path dir = prepare_directory(config);

  const RiskEstimate est = empirical_risk(p.components, u, p.model, config.noise, p.chi_weights,
                                          config.leader.samples, kSimulateStream, options.workers,
                                          config.follower);

  auto dist = open_output(dir / "distribution.csv");
  dist << "sample,tracking_cost";
  const int d = p.model.dimension();
  for (int k = 0; k < d; ++k) dist << ",F" << k + 1;
  dist << '\n';
  for (std::size_t i = 0; i < est.samples.size(); ++i) {
    dist << i << ',' << est.samples[i];
    for (int k = 0; k < d; ++k) dist << ',' << est.forces[i][k];
    dist << '\n';
  }

  const double mean = risk::expectation(est.samples);
  const double target = config.risk.excess_target.value_or(mean);
  json measures = json::array();
  auto rk = open_output(dir / "risk.csv");
  rk << "measure,parameter,value\n";
  auto emit = [&](const std::string& name, const std::string& param, double value) {
    rk << name << ',' << param << ',' << value << '\n';
    measures.push_back({{"measure", name}, {"parameter", param}, {"value", value}});
  };
  emit("expectation", "", mean);
  for (double beta : config.risk.cvar_betas) {
    std::ostringstream param;
    param << "beta=" << beta;
    emit("cvar", param.str(), risk::cvar(est.samples, beta));
  }
  {
    std::ostringstream param;
    param << "target=" << target << ";order=" << config.risk.excess_order;
    emit("expected_excess", param.str(), risk::expected_excess(est.samples, target, config.risk.excess_order));
  }
  {
    std::ostringstream param;
    param << "order=" << config.risk.semideviation_order;
    emit("mean_upper_semideviation", param.str(),
         risk::mean_upper_semideviation(est.samples, config.risk.semideviation_order));
  }

  json summary = base_summary("simulate", config, options);
  summary["mesh"] = mesh_summary(p);
  summary["samples"] = config.leader.samples;
  summary["stream"] = kSimulateStream;
  summary["standard_error"] = est.standard_error;
  summary["risk"] = measures;
  summary["volume"] = volume(u, p.ref.face_areas);
  write_summary(dir, summary);
  if (options.log) *options.log << "expectation " << mean << " +- " << est.standard_error << '\n';
  return kExitSuccess;
}

int run_toy(RunConfig config, const CommandOptions& options) {
  validate(config);
  const fs::path dir = prepare_directory(config);
  const auto toy = bilevel::make_toy_instance();
  const ToyConfig& t = config.toy;

  auto out = open_output(dir / "toy.csv");
  out << "u,psi,phi,phi_eta\n";
  for (int i = 0; i < t.points; ++i) {
    const double u = t.u_lo + (t.u_hi - t.u_lo) * i / (t.points - 1);
    const bilevel::Vector uv = bilevel::Vector::Constant(1, u);
    out << u << ',' << bilevel::psi(toy, uv) << ',' << bilevel::phi(toy, uv) << ','
        << bilevel::phi_eta(toy, uv, t.eta, t.eta_resolution) << '\n';
  }

  json gaps = json::array();
  auto gap = open_output(dir / "toy_gap.csv");
  gap << "k,u_k,linf,l1,linf_reference\n";
  for (int k : t.gap_k) {
    const double uk = 1.0 - 1.0 / k;
    const auto g = bilevel::toy_gap(toy, uk, t.gap_points);
    gap << k << ',' << uk << ',' << g.linf << ',' << g.l1 << ',' << 1.0 + 1.0 / uk << '\n';
    gaps.push_back({{"k", k}, {"u_k", uk}, {"linf", g.linf}, {"l1", g.l1}, {"linf_reference", 1.0 + 1.0 / uk}});
  }

  json summary = base_summary("toy", config, options);
  summary["gaps"] = gaps;
  write_summary(dir, summary);
  return kExitSuccess;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfigError;
  if (dynamic_cast<const InputError*>(&e)) return kExitInputError;
  return kExitSolverAbort;
}

}  // namespace shellopt
