#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace shellopt::bilevel {

using Vector = Eigen::VectorXd;

/// Axis-aligned box used to grid the admissible force set.
struct Box {
  Vector lower;
  Vector upper;
};

/// Lower level with objective q(u, f) = f^T M H[u]^{-1} M f maximized over a
/// polytope given by its extreme points, and an upper-level cost J(u, f).
struct QuadraticLowerLevel {
  std::function<double(const Vector& u, const Vector& f)> quadratic;
  std::function<double(const Vector& u, const Vector& f)> cost;
  std::vector<Vector> extreme_points;
  std::optional<Box> hull;
};

/// Builds q from a dense SPD provider u -> H[u] and a diagonal M by one
/// Cholesky solve per evaluation. Throws SolverError if H[u] is not SPD.
QuadraticLowerLevel make_spd_lower_level(std::function<Eigen::MatrixXd(const Vector&)> stiffness,
                                         Vector mass_diagonal, std::vector<Vector> extreme_points,
                                         std::function<double(const Vector&, const Vector&)> cost,
                                         std::optional<Box> hull = std::nullopt);

enum class ToyRoute {
  kClosedForm,    // uses H[u]^{-1} = [[1, u-1], [u-1, 1]] directly
  kGenericSolve,  // inverts the stated H[u] numerically
};

/// n = 1, N = 2, M = Id, H[u] = [[1, u-1], [u-1, 1]]^{-1},
/// F = [-1, 1] x [0, 1], J[u, f] = u f_1.
QuadraticLowerLevel make_toy_instance(ToyRoute route = ToyRoute::kClosedForm);

double toy_psi_closed_form(double u);
double toy_phi_closed_form(double u);

inline constexpr double kDefaultTieTolerance = 1e-9;

double quad_value(const QuadraticLowerLevel& lower, const Vector& u, const Vector& f);

/// psi[u] = max over the extreme points of q(u, f).
double psi(const QuadraticLowerLevel& lower, const Vector& u);

/// Extreme points attaining psi[u] up to rel_tol * max(1, psi[u]).
std::vector<Vector> big_psi(const QuadraticLowerLevel& lower, const Vector& u,
                            double rel_tol = kDefaultTieTolerance);

/// Pessimistic upper-level value: max of J over big_psi.
double phi(const QuadraticLowerLevel& lower, const Vector& u, double rel_tol = kDefaultTieTolerance);

/// Sup of J over {f in F : psi[u] - q(u, f) < eta}, approximated on a uniform
/// grid with `resolution` points per dimension over the box hull (d <= 3).
/// Throws SolverError when no grid point is eta-optimal.
double phi_eta(const QuadraticLowerLevel& lower, const Vector& u, double eta,
               int resolution = 201);

struct GapDiagnostics {
  double linf = 0.0;  // max over the grid
  double l1 = 0.0;    // grid average
};

/// Distance between v -> Phi[u v] and v -> Phi[v] on a uniform grid over
/// [omega_lo, omega_hi] for the scalar toy instance.
GapDiagnostics toy_gap(const QuadraticLowerLevel& toy, double u, int grid_points,
                       double omega_lo = 0.9, double omega_hi = 1.1);

}  // namespace shellopt::bilevel
