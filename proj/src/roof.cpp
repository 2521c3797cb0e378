#include "shellopt/roof.hpp"

#include <algorithm>

#include "shellopt/errors.hpp"

namespace shellopt {

ShellMesh make_roof_mesh(const RoofShape& shape) {
  if (shape.subdivisions < 2) throw InputError("roof mesh needs at least 2 subdivisions");
  const int n = shape.subdivisions;
  ShellMesh mesh;
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const double s = -1.0 + 2.0 * i / n;
      const double t = -1.0 + 2.0 * j / n;
      const double z = shape.height * std::max(0.0, 1.0 - s * s * t * t / shape.foot_fraction);
      mesh.vertices.emplace_back(shape.half_width * s, shape.half_width * t, z);
    }
  }
  auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return mesh;
}

}  // namespace shellopt
