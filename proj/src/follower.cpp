#include "shellopt/follower.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "shellopt/errors.hpp"

namespace shellopt {

double QuadraticConstraint::value(const Eigen::VectorXd& F) const {
  return offset + linear.dot(F) + 0.5 * F.dot(quadratic * F);
}

Eigen::VectorXd QuadraticConstraint::gradient(const Eigen::VectorXd& F) const {
  return linear + quadratic * F;
}

bool ForceModel::strictly_feasible(const Eigen::VectorXd& F) const {
  return std::all_of(constraints.begin(), constraints.end(),
                     [&](const QuadraticConstraint& q) { return q.value(F) > 0.0; });
}

std::vector<QuadraticConstraint> cylinder_constraints(double max_horizontal, double max_vertical) {
  if (!(max_horizontal > 0.0) || !(max_vertical > 0.0)) {
    throw ConfigError("force cylinder needs positive radius and height");
  }
  std::vector<QuadraticConstraint> q(3);
  q[0].offset = max_horizontal * max_horizontal;
  q[0].linear = Eigen::Vector3d::Zero();
  q[0].quadratic = Eigen::Vector3d(-2.0, -2.0, 0.0).asDiagonal();
  q[1].linear = Eigen::Vector3d(0.0, 0.0, 1.0);
  q[1].quadratic = Eigen::Matrix3d::Zero();
  q[2].offset = max_vertical;
  q[2].linear = Eigen::Vector3d(0.0, 0.0, -1.0);
  q[2].quadratic = Eigen::Matrix3d::Zero();
  return q;
}

std::vector<QuadraticConstraint> box_constraints(const Eigen::VectorXd& lower,
                                                 const Eigen::VectorXd& upper) {
  const int d = static_cast<int>(lower.size());
  std::vector<QuadraticConstraint> q;
  for (int i = 0; i < d; ++i) {
    QuadraticConstraint lo;
    lo.offset = -lower[i];
    lo.linear = Eigen::VectorXd::Unit(d, i);
    lo.quadratic = Eigen::MatrixXd::Zero(d, d);
    QuadraticConstraint hi;
    hi.offset = upper[i];
    hi.linear = -Eigen::VectorXd::Unit(d, i);
    hi.quadratic = Eigen::MatrixXd::Zero(d, d);
    q.push_back(lo);
    q.push_back(hi);
  }
  return q;
}

ForceModel build_force_basis(const ShellMesh& mesh, const std::vector<Vec3>& normals,
                             double max_horizontal, double max_vertical, double barrier_weight) {
  ForceModel model;
  const int nv = mesh.num_vertices();
  model.basis = Eigen::MatrixXd::Zero(3 * nv, 3);
  for (int v = 0; v < nv; ++v) {
    if (!mesh.is_dirichlet.empty() && mesh.is_dirichlet[v]) continue;
    const Vec3& n = normals[v];
    model.basis(3 * v + 0, 0) = std::abs(n.x());
    model.basis(3 * v + 1, 1) = std::abs(n.y());
    model.basis(3 * v + 2, 2) = -std::abs(n.z());
  }
  model.constraints = cylinder_constraints(max_horizontal, max_vertical);
  model.barrier_weight = barrier_weight;
  model.max_horizontal = max_horizontal;
  model.max_vertical = max_vertical;
  model.cylindrical = true;
  return model;
}

Eigen::MatrixXd reduce_compliance(const StiffnessFactorization& H, const Eigen::VectorXd& mass,
                                  const Eigen::MatrixXd& basis) {
  const Eigen::MatrixXd MB = mass.asDiagonal() * basis;
  const Eigen::MatrixXd W = H.solve(MB);
  Eigen::MatrixXd S = MB.transpose() * W;
  return 0.5 * (S + S.transpose());
}

ComplianceState prepare_compliance(const ElasticComponents& c, const Eigen::VectorXd& u,
                                   const ForceModel& model) {
  ComplianceState state;
  state.H = assemble_H(c, u);
  state.factorization = std::make_unique<StiffnessFactorization>(state.H);
  state.basis_reduced.resize(c.num_free_dofs, model.dimension());
  for (int j = 0; j < model.dimension(); ++j) {
    state.basis_reduced.col(j) = c.restrict_to_free(model.basis.col(j));
  }
  const Eigen::MatrixXd MB = c.mass_reduced.asDiagonal() * state.basis_reduced;
  state.response = state.factorization->solve(MB);
  const Eigen::MatrixXd S = MB.transpose() * state.response;
  state.S = 0.5 * (S + S.transpose());
  return state;
}

SmoothedValue smoothed_objective(const Eigen::VectorXd& F, const Eigen::MatrixXd& S,
                                 const ForceModel& model) {
  const int d = static_cast<int>(F.size());
  SmoothedValue out;
  const Eigen::VectorXd SF = S * F;
  out.value = F.dot(SF);
  out.gradient = 2.0 * SF;
  out.hessian = 2.0 * S;
  const double alpha = model.barrier_weight;
  for (const auto& q : model.constraints) {
    const double Q = q.value(F);
    if (!(Q > 0.0)) throw DomainError("force coefficients outside the admissible set");
    const Eigen::VectorXd dQ = q.gradient(F);
    out.value += alpha * std::log(Q);
    out.gradient += alpha * dQ / Q;
    out.hessian += alpha * (q.quadratic.topLeftCorner(d, d) / Q - dQ * dQ.transpose() / (Q * Q));
  }
  return out;
}

namespace {

// Magnitude of the individual gradient terms, used to make the stopping test
// independent of the force scale.
double gradient_scale(const Eigen::VectorXd& F, const Eigen::MatrixXd& S, const ForceModel& model) {
  double scale = 2.0 * (S * F).norm();
  for (const auto& q : model.constraints) scale += model.barrier_weight * q.gradient(F).norm() / q.value(F);
  return std::max(scale, 1.0);
}

Eigen::VectorXd ascent_direction(const SmoothedValue& obj) {
  const int d = static_cast<int>(obj.gradient.size());
  // Newton step for a maximizer: H p = -g.
  Eigen::VectorXd p = obj.hessian.ldlt().solve(-obj.gradient);
  if (p.allFinite() && obj.gradient.dot(p) > 0.0) return p;

  // Make the Hessian negative definite direction by direction: positive
  // curvature is flipped, near-zero curvature floored.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(obj.hessian);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double floor = std::max(1e-14 * lambda.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv(d);
  for (int i = 0; i < d; ++i) inv[i] = 1.0 / std::max(std::abs(lambda[i]), floor);
  p = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * obj.gradient;
  if (p.allFinite() && obj.gradient.dot(p) > 0.0) return p;
  return obj.gradient;
}

// Below this fraction of the cylinder radius the polar chart degenerates.
constexpr double kPolarThreshold = 1e-2;

// Objective in the chart (rho, phi, F3) with F1 = rho cos(phi), F2 = rho sin(phi).
SmoothedValue to_polar(const SmoothedValue& obj, const Eigen::Vector3d& xi) {
  const double c = std::cos(xi[1]), s = std::sin(xi[1]), rho = xi[0];
  Eigen::Matrix3d J;
  J << c, -rho * s, 0.0, s, rho * c, 0.0, 0.0, 0.0, 1.0;
  SmoothedValue out;
  out.value = obj.value;
  out.gradient = J.transpose() * obj.gradient;
  out.hessian = J.transpose() * obj.hessian * J;
  const double g1 = obj.gradient[0], g2 = obj.gradient[1];
  out.hessian(0, 1) += -s * g1 + c * g2;
  out.hessian(1, 0) += -s * g1 + c * g2;
  out.hessian(1, 1) += -rho * (c * g1 + s * g2);
  return out;
}

Eigen::Vector3d polar(const Eigen::VectorXd& F) {
  return {std::hypot(F[0], F[1]), std::atan2(F[1], F[0]), F[2]};
}

Eigen::VectorXd cartesian(const Eigen::Vector3d& xi) {
  return Eigen::Vector3d(xi[0] * std::cos(xi[1]), xi[0] * std::sin(xi[1]), xi[2]);
}

// f(F + delta) - f(F) without cancellation against the value of f: the
// quadratic part is expanded and every barrier term uses log1p of the exact
// change of Q. Returns nullopt if F + delta leaves the admissible set.
std::optional<double> objective_increment(const Eigen::VectorXd& F, const Eigen::VectorXd& delta,
                                          const Eigen::MatrixXd& S, const ForceModel& model) {
  double inc = delta.dot(S * (2.0 * F + delta));
  for (const auto& q : model.constraints) {
    const double Q = q.value(F);
    const double dQ = q.gradient(F).dot(delta) + 0.5 * delta.dot(q.quadratic * delta);
    if (!(Q + dQ > 0.0)) return std::nullopt;
    inc += model.barrier_weight * std::log1p(dQ / Q);
  }
  return inc;
}

}  // namespace

FollowerResult newton_ascent(const Eigen::MatrixXd& S, const ForceModel& model,
                             const Eigen::VectorXd& F0, const NewtonOptions& options) {
  if (!model.strictly_feasible(F0)) throw SolverError("newton_ascent: infeasible starting point");
  FollowerResult r;
  r.F = F0;
  SmoothedValue obj = smoothed_objective(r.F, S, model);
  // Accumulated from increments, so the trace is exactly monotone.
  double value = obj.value;
  r.trace.push_back(value);
  r.compliance_trace.push_back(r.F.dot(S * r.F));

  for (r.iterations = 0;; ++r.iterations) {
    r.gradient_norm = obj.gradient.norm();
    if (r.gradient_norm <= options.grad_tol * gradient_scale(r.F, S, model)) {
      r.converged = true;
      break;
    }
    if (r.iterations >= options.max_iter) break;

    const bool use_polar = model.cylindrical && r.F.size() == 3 &&
                           std::hypot(r.F[0], r.F[1]) > kPolarThreshold * model.max_horizontal;
    const Eigen::Vector3d xi = use_polar ? polar(r.F) : Eigen::Vector3d::Zero();
    const SmoothedValue local = use_polar ? to_polar(obj, xi) : obj;
    const Eigen::VectorXd p = ascent_direction(local);
    const double slope = local.gradient.dot(p);
    double tau = 1.0;
    bool accepted = false;
    for (int k = 0; k <= options.max_halvings; ++k, tau *= options.backtrack) {
      const Eigen::VectorXd trial = use_polar ? cartesian(xi + tau * p) : Eigen::VectorXd(r.F + tau * p);
      if (!model.strictly_feasible(trial)) continue;
      const std::optional<double> inc = objective_increment(r.F, trial - r.F, S, model);
      if (!inc) continue;
      const double margin = *inc - options.armijo_c * tau * slope;
      if (margin >= 0.0) {
        if ((trial - r.F).norm() <= 4.0 * std::numeric_limits<double>::epsilon() * r.F.norm()) {
          break;  // the step no longer changes F
        }
        r.armijo_margin.push_back(margin);
        r.F = trial;
        obj = smoothed_objective(r.F, S, model);
        value += *inc;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No representable increase left along the direction.
      r.converged = r.gradient_norm <= std::sqrt(options.grad_tol) * gradient_scale(r.F, S, model);
      break;
    }
    r.trace.push_back(value);
    r.compliance_trace.push_back(r.F.dot(S * r.F));
  }
  r.smoothed_value = value;
  r.compliance = r.F.dot(S * r.F);
  return r;
}

std::vector<Eigen::VectorXd> default_seeds(const ForceModel& model) {
  const double r = 0.9 * model.max_horizontal;
  const double h = model.max_vertical;
  std::vector<Eigen::VectorXd> seeds;
  const double dirs[4][2] = {{r, 0.0}, {-r, 0.0}, {0.0, r}, {0.0, -r}};
  for (const auto& dir : dirs) {
    for (double frac : {0.1, 0.9}) seeds.push_back(Eigen::Vector3d(dir[0], dir[1], frac * h));
  }
  seeds.push_back(Eigen::Vector3d(0.0, 0.0, 0.5 * h));
  return seeds;
}

FollowerResult solve_follower(const ComplianceState& state, const ForceModel& model,
                              const std::vector<Eigen::VectorXd>& seeds, const NewtonOptions& options) {
  if (seeds.empty()) throw SolverError("solve_follower: no seeds");
  FollowerResult best;
  best.smoothed_value = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < seeds.size(); ++i) {
    FollowerResult r = newton_ascent(state.S, model, seeds[i], options);
    if (r.smoothed_value > best.smoothed_value) {
      best = std::move(r);
      best.seed_index = static_cast<int>(i);
    }
  }
  best.force = model.basis * best.F;
  return best;
}

FollowerResult solve_follower(const ElasticComponents& c, const Eigen::VectorXd& u,
                              const ForceModel& model, const std::vector<Eigen::VectorXd>& seeds,
                              const NewtonOptions& options) {
  const ComplianceState state = prepare_compliance(c, u, model);
  return solve_follower(state, model, seeds, options);
}

}  // namespace shellopt
