#pragma once

#include "shellopt/mesh.hpp"

namespace shellopt {

struct RoofShape {
  int subdivisions = 12;      // grid cells per side
  double half_width = 10.0;   // footprint [-w, w]^2
  double height = 10.0;       // crown height
  double foot_fraction = 0.6; // s^2 t^2 >= foot_fraction lies on the ground
};

/// Vaulted roof over a square footprint: a nearly flat crown in the middle,
/// four boundary arches, and four flat feet on the ground plane at the
/// corners. Height z = h * max(0, 1 - s^2 t^2 / foot_fraction) with s, t the
/// normalized footprint coordinates. All cell diagonals run the same way, so
/// the triangulation is not mirror symmetric.
ShellMesh make_roof_mesh(const RoofShape& shape = {});

}  // namespace shellopt
