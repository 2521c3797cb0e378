#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace shellopt {

using Vec3 = Eigen::Vector3d;

/// Undirected mesh edge with up to two incident faces. For each incident face
/// the vertex opposite to the edge is recorded, which gives the four-vertex
/// hinge stencil (v0, v1, opposite0, opposite1) used by the bending energy.
struct Edge {
  int v0 = -1;
  int v1 = -1;
  int face0 = -1;
  int face1 = -1;
  int opposite0 = -1;
  int opposite1 = -1;

  bool interior() const { return face1 >= 0; }
};

/// Triangle mesh of a discrete shell in its reference configuration.
struct ShellMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  // Populated by build_topology().
  std::vector<Edge> edges;
  std::vector<std::vector<int>> vertex_faces;
  std::vector<std::vector<int>> face_edges;
  bool has_topology = false;

  // Populated by select_dirichlet().
  std::vector<int> dirichlet;
  std::vector<char> is_dirichlet;
  std::vector<char> frozen_face;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int num_interior_edges() const;
  int num_frozen_faces() const;

  /// Largest distance between two bounding-box corners.
  double diameter() const;
};

/// Reference-configuration measures. Edge areas are only meaningful on
/// interior edges and are zero elsewhere.
struct ReferenceQuantities {
  std::vector<double> edge_lengths;
  std::vector<double> face_areas;
  std::vector<double> edge_areas;
  std::vector<double> vertex_areas;

  double total_area() const;
};

/// Degenerate-face threshold on the triangle area, in mesh units.
inline constexpr double kDegenerateArea = 1e-12;

ShellMesh load_obj(const std::filesystem::path& path);
ShellMesh parse_obj(std::istream& in);
void write_obj(const std::filesystem::path& path, const ShellMesh& mesh,
               std::span<const Vec3> positions);

ShellMesh build_topology(ShellMesh mesh);

ReferenceQuantities reference_quantities(const ShellMesh& mesh);

struct ExplicitDirichlet {
  std::vector<int> indices;
};

/// Selects every vertex with z <= min_z + tolerance.
struct GroundPlaneDirichlet {
  double tolerance = 0.0;
};

using DirichletSelector = std::variant<ExplicitDirichlet, GroundPlaneDirichlet>;

/// Marks the Dirichlet vertices and freezes faces whose three vertices are all
/// Dirichlet. Throws InputError on fewer than three or collinear vertices.
ShellMesh select_dirichlet(ShellMesh mesh, const DirichletSelector& selector);

/// Unit normal per vertex from the average of the adjacent face normals.
std::vector<Vec3> vertex_normals(const ShellMesh& mesh);

Vec3 face_normal(std::span<const Vec3> positions, const std::array<int, 3>& face);

/// Signed dihedral angle across an interior edge. The magnitude equals
/// arccos(n0 . n1) of the unit normals of the two faces, both oriented
/// consistently with the edge direction v0 -> v1; zero for a flat hinge.
double dihedral_angle(std::span<const Vec3> positions, const Edge& edge);

/// Gradient of dihedral_angle with respect to the hinge stencil positions,
/// ordered (v0, v1, opposite0, opposite1).
Eigen::Matrix<double, 12, 1> dihedral_angle_gradient(
    std::span<const Vec3> positions, const Edge& edge);

}  // namespace shellopt
