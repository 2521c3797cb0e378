#include "shellopt/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "shellopt/errors.hpp"

namespace shellopt::bilevel {

QuadraticLowerLevel make_spd_lower_level(std::function<Eigen::MatrixXd(const Vector&)> stiffness,
                                         Vector mass_diagonal, std::vector<Vector> extreme_points,
                                         std::function<double(const Vector&, const Vector&)> cost,
                                         std::optional<Box> hull) {
  if (extreme_points.empty()) throw SolverError("lower level needs at least one extreme point");
  QuadraticLowerLevel lower;
  lower.quadratic = [stiffness = std::move(stiffness), m = std::move(mass_diagonal)](
                        const Vector& u, const Vector& f) {
    const Eigen::MatrixXd H = stiffness(u);
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw SolverError("H[u] is not SPD");
    const Vector mf = m.cwiseProduct(f);
    return mf.dot(llt.solve(mf));
  };
  lower.cost = std::move(cost);
  lower.extreme_points = std::move(extreme_points);
  lower.hull = std::move(hull);
  return lower;
}

namespace {

std::vector<Vector> toy_corners() {
  return {Vector{{-1.0, 0.0}}, Vector{{1.0, 0.0}}, Vector{{1.0, 1.0}}, Vector{{-1.0, 1.0}}};
}

double toy_cost(const Vector& u, const Vector& f) { return u[0] * f[0]; }

}  // namespace

QuadraticLowerLevel make_toy_instance(ToyRoute route) {
  const Box hull{Vector{{-1.0, 0.0}}, Vector{{1.0, 1.0}}};
  if (route == ToyRoute::kGenericSolve) {
    auto stiffness = [](const Vector& u) {
      Eigen::Matrix2d inv;
      inv << 1.0, u[0] - 1.0, u[0] - 1.0, 1.0;
      return Eigen::MatrixXd(inv.inverse());
    };
    return make_spd_lower_level(stiffness, Vector::Ones(2), toy_corners(), toy_cost, hull);
  }
  QuadraticLowerLevel lower;
  lower.quadratic = [](const Vector& u, const Vector& f) {
    return f[0] * f[0] + f[1] * f[1] + 2.0 * (u[0] - 1.0) * f[0] * f[1];
  };
  lower.cost = toy_cost;
  lower.extreme_points = toy_corners();
  lower.hull = hull;
  return lower;
}

double toy_psi_closed_form(double u) { return 2.0 + 2.0 * std::abs(u - 1.0); }

double toy_phi_closed_form(double u) { return u >= 1.0 ? u : -u; }

double quad_value(const QuadraticLowerLevel& lower, const Vector& u, const Vector& f) {
  return lower.quadratic(u, f);
}

double psi(const QuadraticLowerLevel& lower, const Vector& u) {
  if (lower.extreme_points.empty()) throw SolverError("psi: no extreme points");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : lower.extreme_points) best = std::max(best, lower.quadratic(u, p));
  return best;
}

std::vector<Vector> big_psi(const QuadraticLowerLevel& lower, const Vector& u, double rel_tol) {
  std::vector<double> q;
  q.reserve(lower.extreme_points.size());
  for (const auto& p : lower.extreme_points) q.push_back(lower.quadratic(u, p));
  const double top = *std::max_element(q.begin(), q.end());
  const double tol = rel_tol * std::max(1.0, std::abs(top));
  std::vector<Vector> out;
  for (size_t i = 0; i < q.size(); ++i) {
    if (top - q[i] <= tol) out.push_back(lower.extreme_points[i]);
  }
  return out;
}

double phi(const QuadraticLowerLevel& lower, const Vector& u, double rel_tol) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& f : big_psi(lower, u, rel_tol)) best = std::max(best, lower.cost(u, f));
  return best;
}

double phi_eta(const QuadraticLowerLevel& lower, const Vector& u, double eta, int resolution) {
  if (!(eta > 0.0)) throw SolverError("phi_eta: eta must be positive");
  if (!lower.hull) throw SolverError("phi_eta: lower level has no box hull to grid");
  if (resolution < 2) throw SolverError("phi_eta: resolution must be at least 2");
  const Box& box = *lower.hull;
  const int dim = static_cast<int>(box.lower.size());
  if (dim < 1 || dim > 3) throw SolverError("phi_eta: gridding supports 1 to 3 dimensions");

  const double top = psi(lower, u);
  const double threshold = eta - 1e-12;
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;

  long total = 1;
  for (int k = 0; k < dim; ++k) total *= resolution;
  Vector f(dim);
  for (long idx = 0; idx < total; ++idx) {
    long rest = idx;
    for (int k = 0; k < dim; ++k) {
      const int i = static_cast<int>(rest % resolution);
      rest /= resolution;
      f[k] = box.lower[k] + (box.upper[k] - box.lower[k]) * i / (resolution - 1);
    }
    if (top - lower.quadratic(u, f) < threshold) {
      any = true;
      best = std::max(best, lower.cost(u, f));
    }
  }
  if (!any) {
    throw SolverError("phi_eta: no eta-optimal grid point at resolution " + std::to_string(resolution) +
                      "; refine the grid");
  }
  return best;
}

GapDiagnostics toy_gap(const QuadraticLowerLevel& toy, double u, int grid_points, double omega_lo,
                       double omega_hi) {
  if (grid_points < 2) throw SolverError("toy_gap: need at least 2 grid points");
  GapDiagnostics out;
  for (int i = 0; i < grid_points; ++i) {
    const double v = omega_lo + (omega_hi - omega_lo) * i / (grid_points - 1);
    const double diff = std::abs(phi(toy, Vector::Constant(1, u * v)) - phi(toy, Vector::Constant(1, v)));
    out.linf = std::max(out.linf, diff);
    out.l1 += diff;
  }
  out.l1 /= grid_points;
  return out;
}

}  // namespace shellopt::bilevel
