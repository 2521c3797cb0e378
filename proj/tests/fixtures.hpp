#pragma once

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "shellopt/mesh.hpp"
#include "shellopt/roof.hpp"

namespace shellopt::testing {

inline ShellMesh mesh_from_obj(const std::string& text) {
  std::istringstream in(text);
  return build_topology(parse_obj(in));
}

inline ShellMesh single_triangle() {
  return mesh_from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
}

/// Unit square split along the diagonal (1,0)-(0,1).
inline ShellMesh two_triangles() {
  return mesh_from_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n");
}

inline ShellMesh tetrahedron() {
  return mesh_from_obj(
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
      "f 1 3 2\nf 1 2 4\nf 2 3 4\nf 3 1 4\n");
}

/// n x n grid over [0, size]^2 with height z = h(x, y); alternating diagonals
/// unless `uniform_diagonals`.
template <class Height>
ShellMesh grid_mesh(int n, double size, Height h, bool uniform_diagonals = false) {
  ShellMesh mesh;
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const double x = size * i / n;
      const double y = size * j / n;
      mesh.vertices.emplace_back(x, y, h(x, y));
    }
  }
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      if (uniform_diagonals || (i + j) % 2 == 0) {
        mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
        mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
      } else {
        mesh.faces.push_back({id(i, j), id(i + 1, j), id(i, j + 1)});
        mesh.faces.push_back({id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)});
      }
    }
  }
  return build_topology(std::move(mesh));
}

/// Gently curved patch so that bending and membrane terms are both active.
inline ShellMesh curved_patch(int n = 4) {
  return grid_mesh(n, 1.0, [](double x, double y) { return 0.3 * std::sin(2.0 * x) * std::cos(1.5 * y) + 0.2 * x * y; });
}

inline Eigen::VectorXd random_vector(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

inline Eigen::Matrix3d rotation(double a, double b, double c) {
  return (Eigen::AngleAxisd(a, Vec3::UnitZ()) * Eigen::AngleAxisd(b, Vec3::UnitY()) *
          Eigen::AngleAxisd(c, Vec3::UnitX()))
      .toRotationMatrix();
}

}  // namespace shellopt::testing
