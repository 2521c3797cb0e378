#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "shellopt/mesh.hpp"

namespace shellopt {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct ElasticParams {
  double mu = 1.0;
  double lambda = 1.0;
  double gamma = 1.0;
};

// ---------------------------------------------------------------------------
// Nonlinear discrete-shell energy. Displacements are full vectors of length
// 3|V| with (x, y, z) interleaved per vertex.

/// G = (Dx)^T Dx for the affine map from the unit reference triangle.
Eigen::Matrix2d face_metric(std::span<const Vec3> positions, const std::array<int, 3>& face);

/// G[x̂_t]^{-1} G[(x̂ + y)_t]. Throws DomainError on a non-positive determinant.
Eigen::Matrix2d cauchy_green(const ShellMesh& mesh, const Eigen::VectorXd& y, int face);

/// Neo-Hookean membrane density with the log coefficient (mu/2 + lambda/4),
/// which makes the identity a stress-free state.
double membrane_density(const Eigen::Matrix2d& A, double mu, double lambda);
Eigen::Matrix2d membrane_density_gradient(const Eigen::Matrix2d& A, double mu, double lambda);

double membrane_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                       const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                       const ElasticParams& params);
double bending_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                      const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                      const ElasticParams& params);
double total_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                    const ElasticParams& params);
/// W[u, y] - f^T M y with the lumped vertex-area mass matrix.
double free_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                   const Eigen::VectorXd& u, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& y, const ElasticParams& params);

/// Analytic gradient of total_energy with respect to the full displacement.
Eigen::VectorXd energy_gradient(const ShellMesh& mesh, const ReferenceQuantities& ref,
                                const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                                const ElasticParams& params);

// ---------------------------------------------------------------------------
// Linearized model.

using MembraneBlock = Eigen::Matrix<double, 9, 9>;
using BendingBlock = Eigen::Matrix<double, 12, 12>;

/// Thickness-independent stiffness blocks of the Hessian of W at y = 0,
///   H[u] = sum_t u_t K_t^mem + gamma sum_e u_e^3 K_e^bend,
/// together with the Dirichlet-reduced DOF numbering.
struct ElasticComponents {
  ElasticParams params;
  int num_vertices = 0;
  int num_faces = 0;

  std::vector<std::array<int, 3>> faces;
  std::vector<MembraneBlock> membrane;

  // Interior edges only, stencil ordered (v0, v1, opposite0, opposite1).
  std::vector<std::array<int, 4>> hinge_vertices;
  std::vector<std::array<int, 2>> hinge_faces;
  std::vector<BendingBlock> bending;
  std::vector<std::vector<int>> face_hinges;

  std::vector<char> frozen_face;
  std::vector<double> face_areas;

  // Full DOF (3 v + c) -> reduced index, or -1 on Dirichlet vertices.
  std::vector<int> dof_map;
  std::vector<int> free_dofs;
  int num_free_dofs = 0;

  Eigen::VectorXd mass_full;     // a_v repeated per coordinate
  Eigen::VectorXd mass_reduced;  // restricted to free DOFs

  // Sparsity of the reduced H and, per block entry, its slot in valuePtr().
  SparseMatrix pattern;
  std::vector<std::vector<int>> membrane_slots;
  std::vector<std::vector<int>> bending_slots;

  Eigen::VectorXd restrict_to_free(const Eigen::VectorXd& full) const;
  Eigen::VectorXd extend_to_full(const Eigen::VectorXd& reduced) const;
};

/// Diagonal of the 3|V| x 3|V| lumped mass matrix.
Eigen::VectorXd assemble_mass(const ShellMesh& mesh, const ReferenceQuantities& ref);

/// Exact membrane Hessian of a single face at y = 0 for unit thickness.
MembraneBlock membrane_block(const ShellMesh& mesh, const ReferenceQuantities& ref, int face,
                             double mu, double lambda);

/// Exact bending Hessian of a single interior edge at y = 0 for unit thickness
/// and gamma = 1. Since the angle change vanishes at y = 0, this is the
/// rank-one matrix 2 l_e^2 / a_e * grad(theta) grad(theta)^T.
BendingBlock bending_block(const ShellMesh& mesh, const ReferenceQuantities& ref, int edge);

ElasticComponents assemble_components(const ShellMesh& mesh, const ReferenceQuantities& ref,
                                      const ElasticParams& params);

enum class HessianPart { kFull, kMembrane, kBending };

/// Reduced stiffness matrix H[u] on the free DOFs.
SparseMatrix assemble_H(const ElasticComponents& c, const Eigen::VectorXd& u,
                        HessianPart part = HessianPart::kFull);

/// Sparse LDL^T factorization of H[u]; refuses non-positive pivots.
class StiffnessFactorization {
 public:
  explicit StiffnessFactorization(const SparseMatrix& H);

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  int size() const { return size_; }

 private:
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  int size_ = 0;
};

/// y = H^{-1} M f on the reduced DOFs; f and y are reduced vectors.
Eigen::VectorXd solve_state(const StiffnessFactorization& H, const Eigen::VectorXd& mass,
                            const Eigen::VectorXd& f);

/// dH/du_t as a sparse matrix on the reduced DOFs. Throws on frozen faces.
SparseMatrix dH_du(const ElasticComponents& c, const Eigen::VectorXd& u, int face);

/// Per-face contraction a^T (dH/du_t) b for reduced vectors a, b; zero on
/// frozen faces.
Eigen::VectorXd contract_dH_du(const ElasticComponents& c, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace shellopt
