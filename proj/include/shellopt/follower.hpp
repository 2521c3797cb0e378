#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "shellopt/elastic.hpp"
#include "shellopt/mesh.hpp"

namespace shellopt {

/// Q(F) = offset + linear^T F + 1/2 F^T quadratic F. Every force constraint
/// in use (cylinder, boxes) has this form.
struct QuadraticConstraint {
  double offset = 0.0;
  Eigen::VectorXd linear;
  Eigen::MatrixXd quadratic;

  double value(const Eigen::VectorXd& F) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& F) const;
};

struct ForceModel {
  Eigen::MatrixXd basis;  // 3|V| x d, zero rows on Dirichlet vertices
  std::vector<QuadraticConstraint> constraints;
  double barrier_weight = 1e-4;  // alpha^F
  double max_horizontal = 0.0015;
  double max_vertical = 0.003;
  // (F1, F2) range over a disc; newton_ascent then steps in polar
  // coordinates away from the axis so that it can slide along the rim.
  bool cylindrical = false;

  int dimension() const { return static_cast<int>(basis.cols()); }
  bool strictly_feasible(const Eigen::VectorXd& F) const;
};

/// Cylinder of radius max_horizontal and height max_vertical in (F1, F2, F3):
/// Q1 = r^2 - F1^2 - F2^2, Q2 = F3, Q3 = h - F3.
std::vector<QuadraticConstraint> cylinder_constraints(double max_horizontal, double max_vertical);

/// Box lower <= F <= upper as 2d linear constraints.
std::vector<QuadraticConstraint> box_constraints(const Eigen::VectorXd& lower,
                                                 const Eigen::VectorXd& upper);

/// Wind along +X and +Y and a downward overlay load, each scaled per vertex by
/// |n_v . axis|.
ForceModel build_force_basis(const ShellMesh& mesh, const std::vector<Vec3>& normals,
                             double max_horizontal, double max_vertical, double barrier_weight);

/// Everything derived from one factorization of H[u]: the response
/// W = H^{-1} M B on the free DOFs and the reduced compliance S = B^T M W.
struct ComplianceState {
  SparseMatrix H;
  std::unique_ptr<StiffnessFactorization> factorization;
  Eigen::MatrixXd basis_reduced;
  Eigen::MatrixXd response;
  Eigen::MatrixXd S;
};

ComplianceState prepare_compliance(const ElasticComponents& c, const Eigen::VectorXd& u,
                                   const ForceModel& model);

/// S = B^T M H^{-1} M B, symmetrized.
Eigen::MatrixXd reduce_compliance(const StiffnessFactorization& H, const Eigen::VectorXd& mass,
                                  const Eigen::MatrixXd& basis);

struct SmoothedValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// F^T S F + alpha^F sum_k log Q_k(F). Throws DomainError if some Q_k <= 0.
SmoothedValue smoothed_objective(const Eigen::VectorXd& F, const Eigen::MatrixXd& S,
                                 const ForceModel& model);

struct NewtonOptions {
  int max_iter = 100;
  double grad_tol = 1e-9;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  int max_halvings = 40;
};

struct FollowerResult {
  Eigen::VectorXd F;
  Eigen::VectorXd force;  // B F on all 3|V| DOFs (empty for bare ascents)
  double smoothed_value = 0.0;
  double compliance = 0.0;  // F^T S F = y^T H y
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  int seed_index = -1;
  std::vector<double> trace;  // smoothed objective per iterate, starting at F0
  std::vector<double> compliance_trace;
  // f(F + tau p) - f(F) - c tau g^T p for every accepted step; never negative.
  std::vector<double> armijo_margin;
};

FollowerResult newton_ascent(const Eigen::MatrixXd& S, const ForceModel& model,
                             const Eigen::VectorXd& F0, const NewtonOptions& options = {});

/// Eight rim-adjacent starts plus the cylinder center.
std::vector<Eigen::VectorXd> default_seeds(const ForceModel& model);

/// Runs newton_ascent from every seed on a prepared state and keeps the result
/// with the largest smoothed objective (first index wins ties).
FollowerResult solve_follower(const ComplianceState& state, const ForceModel& model,
                              const std::vector<Eigen::VectorXd>& seeds,
                              const NewtonOptions& options = {});

FollowerResult solve_follower(const ElasticComponents& c, const Eigen::VectorXd& u,
                              const ForceModel& model, const std::vector<Eigen::VectorXd>& seeds,
                              const NewtonOptions& options = {});

}  // namespace shellopt
