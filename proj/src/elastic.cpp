#include "shellopt/elastic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shellopt/errors.hpp"

namespace shellopt {

namespace {

std::vector<Vec3> deformed_positions(const ShellMesh& mesh, const Eigen::VectorXd& y) {
  std::vector<Vec3> x(mesh.vertices);
  for (int v = 0; v < mesh.num_vertices(); ++v) x[v] += y.segment<3>(3 * v);
  return x;
}

Eigen::Matrix<double, 3, 2> edge_frame(std::span<const Vec3> x, const std::array<int, 3>& f) {
  Eigen::Matrix<double, 3, 2> D;
  D.col(0) = x[f[1]] - x[f[0]];
  D.col(1) = x[f[2]] - x[f[0]];
  return D;
}

double log_coefficient(double mu, double lambda) { return 0.5 * mu + 0.25 * lambda; }

}  // namespace

Eigen::Matrix2d face_metric(std::span<const Vec3> positions, const std::array<int, 3>& face) {
  const auto D = edge_frame(positions, face);
  Eigen::Matrix2d G = D.transpose() * D;
  if (!(G.determinant() > 4.0 * kDegenerateArea * kDegenerateArea)) {
    throw DomainError("singular metric on degenerate face");
  }
  return G;
}

Eigen::Matrix2d cauchy_green(const ShellMesh& mesh, const Eigen::VectorXd& y, int face) {
  const auto x = deformed_positions(mesh, y);
  const Eigen::Matrix2d G0 = face_metric(mesh.vertices, mesh.faces[face]);
  const Eigen::Matrix2d G = face_metric(x, mesh.faces[face]);
  Eigen::Matrix2d A = G0.inverse() * G;
  if (!(A.determinant() > 0.0)) throw DomainError("inverted element " + std::to_string(face));
  return A;
}

double membrane_density(const Eigen::Matrix2d& A, double mu, double lambda) {
  const double det = A.determinant();
  if (!(det > 0.0)) throw DomainError("membrane density: det A <= 0");
  return 0.5 * mu * A.trace() + 0.25 * lambda * det - log_coefficient(mu, lambda) * std::log(det) -
         mu - 0.25 * lambda;
}

Eigen::Matrix2d membrane_density_gradient(const Eigen::Matrix2d& A, double mu, double lambda) {
  const double det = A.determinant();
  if (!(det > 0.0)) throw DomainError("membrane density: det A <= 0");
  const Eigen::Matrix2d invT = A.inverse().transpose();
  return 0.5 * mu * Eigen::Matrix2d::Identity() + 0.25 * lambda * det * invT -
         log_coefficient(mu, lambda) * invT;
}

double membrane_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                       const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                       const ElasticParams& params) {
  const auto x = deformed_positions(mesh, y);
  double sum = 0.0;
  for (int t = 0; t < mesh.num_faces(); ++t) {
    const Eigen::Matrix2d G0 = face_metric(mesh.vertices, mesh.faces[t]);
    const Eigen::Matrix2d A = G0.inverse() * face_metric(x, mesh.faces[t]);
    sum += ref.face_areas[t] * u[t] * membrane_density(A, params.mu, params.lambda);
  }
  return sum;
}

double bending_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                      const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                      const ElasticParams& params) {
  const auto x = deformed_positions(mesh, y);
  double sum = 0.0;
  for (int i = 0; i < mesh.num_edges(); ++i) {
    const Edge& e = mesh.edges[i];
    if (!e.interior()) continue;
    const double ue = 0.5 * (u[e.face0] + u[e.face1]);
    const double dtheta = dihedral_angle(x, e) - dihedral_angle(mesh.vertices, e);
    const double l = ref.edge_lengths[i];
    sum += ue * ue * ue * dtheta * dtheta / ref.edge_areas[i] * l * l;
  }
  return params.gamma * sum;
}

double total_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                    const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                    const ElasticParams& params) {
  return membrane_energy(mesh, ref, u, y, params) + bending_energy(mesh, ref, u, y, params);
}

double free_energy(const ShellMesh& mesh, const ReferenceQuantities& ref,
                   const Eigen::VectorXd& u, const Eigen::VectorXd& f,
                   const Eigen::VectorXd& y, const ElasticParams& params) {
  const Eigen::VectorXd m = assemble_mass(mesh, ref);
  return total_energy(mesh, ref, u, y, params) - f.dot(m.cwiseProduct(y));
}

Eigen::VectorXd energy_gradient(const ShellMesh& mesh, const ReferenceQuantities& ref,
                                const Eigen::VectorXd& u, const Eigen::VectorXd& y,
                                const ElasticParams& params) {
  const auto x = deformed_positions(mesh, y);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3 * mesh.num_vertices());

  for (int t = 0; t < mesh.num_faces(); ++t) {
    const auto& f = mesh.faces[t];
    const Eigen::Matrix2d G0inv = face_metric(mesh.vertices, f).inverse();
    const auto D = edge_frame(x, f);
    const Eigen::Matrix2d A = G0inv * (D.transpose() * D);
    const Eigen::Matrix2d P = membrane_density_gradient(A, params.mu, params.lambda);
    // dW = tr(P^T G0^{-1} dG) with dG = dD^T D + D^T dD.
    const Eigen::Matrix<double, 3, 2> dD =
        ref.face_areas[t] * u[t] * D * (P.transpose() * G0inv + G0inv * P);
    g.segment<3>(3 * f[1]) += dD.col(0);
    g.segment<3>(3 * f[2]) += dD.col(1);
    g.segment<3>(3 * f[0]) -= dD.col(0) + dD.col(1);
  }

  for (int i = 0; i < mesh.num_edges(); ++i) {
    const Edge& e = mesh.edges[i];
    if (!e.interior()) continue;
    const double ue = 0.5 * (u[e.face0] + u[e.face1]);
    const double dtheta = dihedral_angle(x, e) - dihedral_angle(mesh.vertices, e);
    const double l = ref.edge_lengths[i];
    const double coeff = params.gamma * 2.0 * ue * ue * ue * dtheta * l * l / ref.edge_areas[i];
    const auto grad = dihedral_angle_gradient(x, e);
    const std::array<int, 4> stencil{e.v0, e.v1, e.opposite0, e.opposite1};
    for (int k = 0; k < 4; ++k) g.segment<3>(3 * stencil[k]) += coeff * grad.segment<3>(3 * k);
  }
  return g;
}

Eigen::VectorXd assemble_mass(const ShellMesh& mesh, const ReferenceQuantities& ref) {
  Eigen::VectorXd m(3 * mesh.num_vertices());
  for (int v = 0; v < mesh.num_vertices(); ++v) m.segment<3>(3 * v).setConstant(ref.vertex_areas[v]);
  return m;
}

MembraneBlock membrane_block(const ShellMesh& mesh, const ReferenceQuantities& ref, int face,
                             double mu, double lambda) {
  const auto& f = mesh.faces[face];
  const auto D = edge_frame(mesh.vertices, f);
  const Eigen::Matrix2d G0inv = face_metric(mesh.vertices, f).inverse();

  // Linearized strain E_i = G0^{-1}(D^T dD_i + dD_i^T D) for each unit DOF.
  std::array<Eigen::Matrix2d, 9> E;
  for (int j = 0; j < 3; ++j) {
    for (int c = 0; c < 3; ++c) {
      Eigen::Matrix<double, 3, 2> dD = Eigen::Matrix<double, 3, 2>::Zero();
      if (j == 0) {
        dD(c, 0) = -1.0;
        dD(c, 1) = -1.0;
      } else {
        dD(c, j - 1) = 1.0;
      }
      const Eigen::Matrix2d S = D.transpose() * dD;
      E[3 * j + c] = G0inv * (S + S.transpose());
    }
  }
  // Second-order expansion of the density around the identity:
  //   W(I + E) = lambda/8 tr(E)^2 + mu/4 tr(E^2) + O(|E|^3).
  MembraneBlock K;
  for (int i = 0; i < 9; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double v = ref.face_areas[face] *
                       (0.25 * lambda * E[i].trace() * E[j].trace() + 0.5 * mu * (E[i] * E[j]).trace());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

BendingBlock bending_block(const ShellMesh& mesh, const ReferenceQuantities& ref, int edge) {
  const Edge& e = mesh.edges[edge];
  const auto grad = dihedral_angle_gradient(mesh.vertices, e);
  const double l = ref.edge_lengths[edge];
  BendingBlock K = (2.0 * l * l / ref.edge_areas[edge]) * grad * grad.transpose();
  return 0.5 * (K + K.transpose());
}

Eigen::VectorXd ElasticComponents::restrict_to_free(const Eigen::VectorXd& full) const {
  Eigen::VectorXd r(num_free_dofs);
  for (int i = 0; i < num_free_dofs; ++i) r[i] = full[free_dofs[i]];
  return r;
}

Eigen::VectorXd ElasticComponents::extend_to_full(const Eigen::VectorXd& reduced) const {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(3 * num_vertices);
  for (int i = 0; i < num_free_dofs; ++i) full[free_dofs[i]] = reduced[i];
  return full;
}

namespace {

template <int N>
std::vector<int> block_slots(const SparseMatrix& pattern, const std::vector<int>& dof_map,
                             const std::array<int, N / 3>& verts) {
  std::vector<int> slots(N * N, -1);
  for (int a = 0; a < N; ++a) {
    const int ra = dof_map[3 * verts[a / 3] + a % 3];
    if (ra < 0) continue;
    for (int b = 0; b < N; ++b) {
      const int rb = dof_map[3 * verts[b / 3] + b % 3];
      if (rb < 0) continue;
      // Column-major: column rb, row ra.
      const auto* begin = pattern.innerIndexPtr() + pattern.outerIndexPtr()[rb];
      const auto* end = pattern.innerIndexPtr() + pattern.outerIndexPtr()[rb + 1];
      const auto* it = std::lower_bound(begin, end, ra);
      slots[a * N + b] = static_cast<int>(it - pattern.innerIndexPtr());
    }
  }
  return slots;
}

}  // namespace

ElasticComponents assemble_components(const ShellMesh& mesh, const ReferenceQuantities& ref,
                                      const ElasticParams& params) {
  if (!mesh.has_topology) throw InputError("assemble_components: topology not built");
  ElasticComponents c;
  c.params = params;
  c.num_vertices = mesh.num_vertices();
  c.num_faces = mesh.num_faces();
  c.faces = mesh.faces;
  c.frozen_face = mesh.frozen_face;
  c.face_areas = ref.face_areas;

  c.membrane.reserve(mesh.faces.size());
  for (int t = 0; t < mesh.num_faces(); ++t) {
    c.membrane.push_back(membrane_block(mesh, ref, t, params.mu, params.lambda));
  }

  c.face_hinges.assign(mesh.faces.size(), {});
  for (int i = 0; i < mesh.num_edges(); ++i) {
    const Edge& e = mesh.edges[i];
    if (!e.interior()) continue;
    const int h = static_cast<int>(c.bending.size());
    c.hinge_vertices.push_back({e.v0, e.v1, e.opposite0, e.opposite1});
    c.hinge_faces.push_back({e.face0, e.face1});
    c.bending.push_back(bending_block(mesh, ref, i));
    c.face_hinges[e.face0].push_back(h);
    c.face_hinges[e.face1].push_back(h);
  }

  c.dof_map.assign(3 * c.num_vertices, -1);
  for (int v = 0; v < c.num_vertices; ++v) {
    if (!mesh.is_dirichlet.empty() && mesh.is_dirichlet[v]) continue;
    for (int k = 0; k < 3; ++k) {
      c.dof_map[3 * v + k] = c.num_free_dofs++;
      c.free_dofs.push_back(3 * v + k);
    }
  }
  c.mass_full = assemble_mass(mesh, ref);
  c.mass_reduced = c.restrict_to_free(c.mass_full);

  std::vector<Eigen::Triplet<double>> trip;
  auto add_pattern = [&](std::span<const int> verts) {
    for (int a : verts) {
      for (int b : verts) {
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            const int ra = c.dof_map[3 * a + i];
            const int rb = c.dof_map[3 * b + j];
            if (ra >= 0 && rb >= 0) trip.emplace_back(ra, rb, 0.0);
          }
        }
      }
    }
  };
  for (const auto& f : c.faces) add_pattern(f);
  for (const auto& h : c.hinge_vertices) add_pattern(h);
  c.pattern.resize(c.num_free_dofs, c.num_free_dofs);
  c.pattern.setFromTriplets(trip.begin(), trip.end());
  c.pattern.makeCompressed();

  for (const auto& f : c.faces) c.membrane_slots.push_back(block_slots<9>(c.pattern, c.dof_map, f));
  for (const auto& h : c.hinge_vertices) {
    c.bending_slots.push_back(block_slots<12>(c.pattern, c.dof_map, h));
  }
  return c;
}

SparseMatrix assemble_H(const ElasticComponents& c, const Eigen::VectorXd& u, HessianPart part) {
  if (u.size() != c.num_faces) throw SolverError("assemble_H: thickness vector has wrong size");
  SparseMatrix H = c.pattern;
  double* values = H.valuePtr();
  std::fill(values, values + H.nonZeros(), 0.0);

  if (part != HessianPart::kBending) {
    for (int t = 0; t < c.num_faces; ++t) {
      const auto& slots = c.membrane_slots[t];
      const double* block = c.membrane[t].data();
      for (int k = 0; k < 81; ++k) {
        // Blocks are symmetric, so row/column-major indexing agree.
        if (slots[k] >= 0) values[slots[k]] += u[t] * block[k];
      }
    }
  }
  if (part != HessianPart::kMembrane) {
    for (size_t h = 0; h < c.bending.size(); ++h) {
      const double ue = 0.5 * (u[c.hinge_faces[h][0]] + u[c.hinge_faces[h][1]]);
      const double w = c.params.gamma * ue * ue * ue;
      const auto& slots = c.bending_slots[h];
      const double* block = c.bending[h].data();
      for (int k = 0; k < 144; ++k) {
        if (slots[k] >= 0) values[slots[k]] += w * block[k];
      }
    }
  }
  return H;
}

StiffnessFactorization::StiffnessFactorization(const SparseMatrix& H) : size_(static_cast<int>(H.rows())) {
  ldlt_.compute(H);
  if (ldlt_.info() != Eigen::Success) throw SolverError("stiffness factorization failed");
  const Eigen::VectorXd& d = ldlt_.vectorD();
  const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
  for (int i = 0; i < d.size(); ++i) {
    if (!(d[i] > 1e-13 * scale)) {
      // Map the pivot position back to the unpermuted DOF numbering.
      const auto& perm = ldlt_.permutationP().indices();
      int dof = i;
      for (int j = 0; j < perm.size(); ++j) {
        if (perm[j] == i) dof = j;
      }
      throw SolverError("stiffness matrix is not positive definite: pivot " + std::to_string(d[i]) +
                        " at reduced DOF " + std::to_string(dof));
    }
  }
}

Eigen::VectorXd StiffnessFactorization::solve(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd x = ldlt_.solve(rhs);
  return x;
}

Eigen::MatrixXd StiffnessFactorization::solve(const Eigen::MatrixXd& rhs) const {
  Eigen::MatrixXd x = ldlt_.solve(rhs);
  return x;
}

Eigen::VectorXd solve_state(const StiffnessFactorization& H, const Eigen::VectorXd& mass,
                            const Eigen::VectorXd& f) {
  if (f.size() != H.size() || mass.size() != H.size()) {
    throw SolverError("solve_state: dimension mismatch");
  }
  if (f.isZero(0.0)) return Eigen::VectorXd::Zero(f.size());
  return H.solve(Eigen::VectorXd(mass.cwiseProduct(f)));
}

SparseMatrix dH_du(const ElasticComponents& c, const Eigen::VectorXd& u, int face) {
  if (face < 0 || face >= c.num_faces) throw SolverError("dH_du: face index out of range");
  if (c.frozen_face[face]) throw SolverError("dH_du: face " + std::to_string(face) + " is frozen");
  SparseMatrix D = c.pattern;
  double* values = D.valuePtr();
  std::fill(values, values + D.nonZeros(), 0.0);
  for (int k = 0; k < 81; ++k) {
    const int s = c.membrane_slots[face][k];
    if (s >= 0) values[s] += c.membrane[face].data()[k];
  }
  for (int h : c.face_hinges[face]) {
    const double ue = 0.5 * (u[c.hinge_faces[h][0]] + u[c.hinge_faces[h][1]]);
    const double w = c.params.gamma * 1.5 * ue * ue;
    for (int k = 0; k < 144; ++k) {
      const int s = c.bending_slots[h][k];
      if (s >= 0) values[s] += w * c.bending[h].data()[k];
    }
  }
  D.prune(0.0);
  return D;
}

namespace {

template <int N>
Eigen::Matrix<double, N, 1> gather(const ElasticComponents& c, const Eigen::VectorXd& reduced,
                                   std::span<const int> verts) {
  Eigen::Matrix<double, N, 1> local;
  for (int a = 0; a < N; ++a) {
    const int r = c.dof_map[3 * verts[a / 3] + a % 3];
    local[a] = r >= 0 ? reduced[r] : 0.0;
  }
  return local;
}

}  // namespace

Eigen::VectorXd contract_dH_du(const ElasticComponents& c, const Eigen::VectorXd& u,
                               const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(c.num_faces);
  for (int t = 0; t < c.num_faces; ++t) {
    if (c.frozen_face[t]) continue;
    const auto la = gather<9>(c, a, c.faces[t]);
    const auto lb = gather<9>(c, b, c.faces[t]);
    out[t] = la.dot(c.membrane[t] * lb);
  }
  for (size_t h = 0; h < c.bending.size(); ++h) {
    const auto la = gather<12>(c, a, c.hinge_vertices[h]);
    const auto lb = gather<12>(c, b, c.hinge_vertices[h]);
    const double q = la.dot(c.bending[h] * lb);
    const double ue = 0.5 * (u[c.hinge_faces[h][0]] + u[c.hinge_faces[h][1]]);
    // d(u_e^3)/du_t = 3 u_e^2 / 2 for each of the two adjacent faces.
    const double w = c.params.gamma * 1.5 * ue * ue * q;
    for (int t : c.hinge_faces[h]) {
      if (!c.frozen_face[t]) out[t] += w;
    }
  }
  return out;
}

}  // namespace shellopt
