#include "shellopt/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "shellopt/errors.hpp"

namespace shellopt {

int ShellMesh::num_interior_edges() const {
  return static_cast<int>(std::count_if(edges.begin(), edges.end(),
                                        [](const Edge& e) { return e.interior(); }));
}

int ShellMesh::num_frozen_faces() const {
  return static_cast<int>(std::count(frozen_face.begin(), frozen_face.end(), 1));
}

double ShellMesh::diameter() const {
  if (vertices.empty()) return 0.0;
  Vec3 lo = vertices.front();
  Vec3 hi = vertices.front();
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return (hi - lo).norm();
}

double ReferenceQuantities::total_area() const {
  double sum = 0.0;
  for (double a : face_areas) sum += a;
  return sum;
}

namespace {

// OBJ face tokens look like "7", "7/2", "7//3" or "7/2/3"; negative indices
// are relative to the current vertex count.
int parse_face_index(const std::string& token, int vertex_count, int line_no) {
  const std::string head = token.substr(0, token.find('/'));
  int idx = 0;
  try {
    size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    throw InputError("OBJ line " + std::to_string(line_no) + ": parse error in face token '" +
                     token + "'");
  }
  if (idx < 0) idx = vertex_count + idx + 1;
  if (idx < 1 || idx > vertex_count) {
    throw InputError("OBJ line " + std::to_string(line_no) + ": vertex index " +
                     std::to_string(idx) + " out of range");
  }
  return idx - 1;
}

}  // namespace

ShellMesh parse_obj(std::istream& in) {
  ShellMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) {
        throw InputError("OBJ line " + std::to_string(line_no) + ": parse error in vertex");
      }
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(parse_face_index(tok, mesh.num_vertices(), line_no));
      if (idx.size() != 3) {
        throw InputError("OBJ line " + std::to_string(line_no) + ": non-triangular face (" +
                         std::to_string(idx.size()) + " vertices)");
      }
      mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
    // vt, vn, g, o, s, usemtl, mtllib: ignored.
  }
  if (mesh.faces.empty()) throw InputError("OBJ contains no faces");
  return mesh;
}

ShellMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open mesh file " + path.string());
  return parse_obj(in);
}

void write_obj(const std::filesystem::path& path, const ShellMesh& mesh,
               std::span<const Vec3> positions) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  for (const auto& p : positions) out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

ShellMesh build_topology(ShellMesh mesh) {
  const int nv = mesh.num_vertices();
  mesh.edges.clear();
  mesh.vertex_faces.assign(nv, {});
  mesh.face_edges.assign(mesh.faces.size(), {});

  std::map<std::pair<int, int>, int> lookup;
  for (int t = 0; t < mesh.num_faces(); ++t) {
    const auto& f = mesh.faces[t];
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= nv) throw InputError("face " + std::to_string(t) + ": vertex index out of range");
      mesh.vertex_faces[f[k]].push_back(t);
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      throw InputError("face " + std::to_string(t) + " repeats a vertex");
    }
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      const int opp = f[(k + 2) % 3];
      const auto key = std::minmax(a, b);
      auto [it, inserted] = lookup.try_emplace(key, mesh.num_edges());
      if (inserted) {
        Edge e;
        // Orient the edge along the first face's winding.
        e.v0 = a;
        e.v1 = b;
        e.face0 = t;
        e.opposite0 = opp;
        mesh.edges.push_back(e);
      } else {
        Edge& e = mesh.edges[it->second];
        if (e.interior()) {
          throw InputError("non-manifold edge (" + std::to_string(key.first) + ", " +
                           std::to_string(key.second) + ") shared by more than two faces");
        }
        e.face1 = t;
        e.opposite1 = opp;
      }
      mesh.face_edges[t].push_back(it->second);
    }
  }
  mesh.has_topology = true;
  if (mesh.is_dirichlet.size() != static_cast<size_t>(nv)) mesh.is_dirichlet.assign(nv, 0);
  if (mesh.frozen_face.size() != mesh.faces.size()) mesh.frozen_face.assign(mesh.faces.size(), 0);
  return mesh;
}

ReferenceQuantities reference_quantities(const ShellMesh& mesh) {
  if (!mesh.has_topology) throw InputError("reference_quantities: topology not built");
  ReferenceQuantities q;
  q.face_areas.resize(mesh.faces.size());
  q.vertex_areas.assign(mesh.vertices.size(), 0.0);
  for (int t = 0; t < mesh.num_faces(); ++t) {
    const auto& f = mesh.faces[t];
    const Vec3& x0 = mesh.vertices[f[0]];
    const double area = 0.5 * (mesh.vertices[f[1]] - x0).cross(mesh.vertices[f[2]] - x0).norm();
    if (!(area >= kDegenerateArea)) {
      throw InputError("degenerate face " + std::to_string(t) + " (area " + std::to_string(area) + ")");
    }
    q.face_areas[t] = area;
    for (int v : f) q.vertex_areas[v] += area / 3.0;
  }
  q.edge_lengths.resize(mesh.edges.size());
  q.edge_areas.assign(mesh.edges.size(), 0.0);
  for (int i = 0; i < mesh.num_edges(); ++i) {
    const Edge& e = mesh.edges[i];
    q.edge_lengths[i] = (mesh.vertices[e.v1] - mesh.vertices[e.v0]).norm();
    if (e.interior()) q.edge_areas[i] = (q.face_areas[e.face0] + q.face_areas[e.face1]) / 3.0;
  }
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    if (!(q.vertex_areas[v] > 0.0)) {
      throw InputError("vertex " + std::to_string(v) + " is not referenced by any face");
    }
  }
  return q;
}

ShellMesh select_dirichlet(ShellMesh mesh, const DirichletSelector& selector) {
  const int nv = mesh.num_vertices();
  std::vector<int> chosen;
  if (const auto* ex = std::get_if<ExplicitDirichlet>(&selector)) {
    chosen = ex->indices;
    for (int v : chosen) {
      if (v < 0 || v >= nv) throw InputError("Dirichlet index " + std::to_string(v) + " out of range");
    }
  } else {
    const double tol = std::get<GroundPlaneDirichlet>(selector).tolerance;
    double zmin = mesh.vertices.front().z();
    for (const auto& p : mesh.vertices) zmin = std::min(zmin, p.z());
    for (int v = 0; v < nv; ++v) {
      if (mesh.vertices[v].z() <= zmin + tol) chosen.push_back(v);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
  if (chosen.size() < 3) {
    throw InputError("Dirichlet set needs at least 3 vertices, got " + std::to_string(chosen.size()));
  }

  // Non-collinearity: the largest triangle spanned from the first point and
  // its farthest partner must have non-negligible area.
  const Vec3& p0 = mesh.vertices[chosen[0]];
  int far = chosen[1];
  for (int v : chosen) {
    if ((mesh.vertices[v] - p0).squaredNorm() > (mesh.vertices[far] - p0).squaredNorm()) far = v;
  }
  const Vec3 axis = mesh.vertices[far] - p0;
  double best = 0.0;
  for (int v : chosen) best = std::max(best, axis.cross(mesh.vertices[v] - p0).norm());
  const double scale = std::max(axis.squaredNorm(), 1e-300);
  if (best <= 1e-10 * scale) throw InputError("Dirichlet vertices are collinear");

  mesh.dirichlet = std::move(chosen);
  mesh.is_dirichlet.assign(nv, 0);
  for (int v : mesh.dirichlet) mesh.is_dirichlet[v] = 1;
  mesh.frozen_face.assign(mesh.faces.size(), 0);
  for (int t = 0; t < mesh.num_faces(); ++t) {
    const auto& f = mesh.faces[t];
    mesh.frozen_face[t] = mesh.is_dirichlet[f[0]] && mesh.is_dirichlet[f[1]] && mesh.is_dirichlet[f[2]];
  }
  return mesh;
}

Vec3 face_normal(std::span<const Vec3> positions, const std::array<int, 3>& face) {
  const Vec3& x0 = positions[face[0]];
  const Vec3 n = (positions[face[1]] - x0).cross(positions[face[2]] - x0);
  const double len = n.norm();
  if (!(len >= 2.0 * kDegenerateArea)) throw DomainError("degenerate face in normal computation");
  return n / len;
}

std::vector<Vec3> vertex_normals(const ShellMesh& mesh) {
  if (!mesh.has_topology) throw InputError("vertex_normals: topology not built");
  std::vector<Vec3> fn(mesh.faces.size());
  for (int t = 0; t < mesh.num_faces(); ++t) fn[t] = face_normal(mesh.vertices, mesh.faces[t]);
  std::vector<Vec3> normals(mesh.vertices.size());
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    Vec3 sum = Vec3::Zero();
    for (int t : mesh.vertex_faces[v]) sum += fn[t];
    const double len = sum.norm();
    if (len <= 1e-12 * std::max<size_t>(1, mesh.vertex_faces[v].size())) {
      throw InputError("vertex " + std::to_string(v) + ": adjacent face normals cancel");
    }
    normals[v] = sum / len;
  }
  return normals;
}

namespace {

struct Hinge {
  Vec3 a, b, k, l;
};

Hinge hinge(std::span<const Vec3> x, const Edge& e) {
  if (!e.interior()) throw DomainError("dihedral angle requested on a boundary edge");
  return {x[e.v0], x[e.v1], x[e.opposite0], x[e.opposite1]};
}

}  // namespace

double dihedral_angle(std::span<const Vec3> positions, const Edge& edge) {
  const Hinge h = hinge(positions, edge);
  const Vec3 e = h.b - h.a;
  // Both normals point to the same side for a flat hinge regardless of the
  // winding of the second face.
  const Vec3 n0 = e.cross(h.k - h.a);
  const Vec3 n1 = (h.l - h.a).cross(e);
  const double len0 = n0.norm();
  const double len1 = n1.norm();
  const double elen = e.norm();
  if (len0 < 2.0 * kDegenerateArea || len1 < 2.0 * kDegenerateArea || elen == 0.0) {
    throw DomainError("degenerate face in dihedral angle");
  }
  const Vec3 m0 = n0 / len0;
  const Vec3 m1 = n1 / len1;
  const double c = std::clamp(m0.dot(m1), -1.0, 1.0);
  const double s = m0.cross(m1).dot(e / elen);
  // atan2 is smooth through the flat configuration; its magnitude matches
  // arccos(c) up to roundoff.
  return std::atan2(s, c);
}

Eigen::Matrix<double, 12, 1> dihedral_angle_gradient(std::span<const Vec3> positions,
                                                     const Edge& edge) {
  const Hinge h = hinge(positions, edge);
  const Vec3 e = h.b - h.a;
  const Vec3 n0 = e.cross(h.k - h.a);
  const Vec3 n1 = (h.l - h.a).cross(e);
  const double elen = e.norm();
  const double nn0 = n0.squaredNorm();
  const double nn1 = n1.squaredNorm();
  if (nn0 < 4.0 * kDegenerateArea * kDegenerateArea || nn1 < 4.0 * kDegenerateArea * kDegenerateArea ||
      elen == 0.0) {
    throw DomainError("degenerate face in dihedral angle gradient");
  }
  const Vec3 ehat = e / elen;
  const Vec3 w0 = n0 / nn0;
  const Vec3 w1 = n1 / nn1;

  const Vec3 gk = -elen * w0;
  const Vec3 gl = -elen * w1;
  const Vec3 ga = -(h.k - h.b).dot(ehat) * w0 - (h.l - h.b).dot(ehat) * w1;
  const Vec3 gb = (h.k - h.a).dot(ehat) * w0 + (h.l - h.a).dot(ehat) * w1;

  Eigen::Matrix<double, 12, 1> g;
  g << ga, gb, gk, gl;
  return g;
}

}  // namespace shellopt
