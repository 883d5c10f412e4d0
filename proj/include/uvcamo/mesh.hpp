#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "uvcamo/error.hpp"

namespace uvcamo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// Triangle mesh with a UV atlas. UVs are stored per face corner so seams
// never force vertex duplication.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2, 3>> uv;  // uv[f][k] belongs to faces[f][k]

  std::size_t vertex_count() const noexcept { return vertices.size(); }
  std::size_t face_count() const noexcept { return faces.size(); }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& v : vertices) c += v;
    return vertices.empty() ? c : Vec3(c / static_cast<double>(vertices.size()));
  }

  Vec3 face_normal(std::size_t f) const {
    const auto& t = faces[f];
    Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    const double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3::Zero();
  }

  // Throws InvariantViolation when any mesh invariant fails.
  void validate() const {
    if (vertices.size() < 3) throw InvariantViolation("mesh needs at least 3 vertices");
    if (faces.empty()) throw InvariantViolation("mesh needs at least 1 face");
    if (uv.size() != faces.size()) throw InvariantViolation("uv count does not match face count");
    const int n = static_cast<int>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (int k = 0; k < 3; ++k) {
        if (faces[f][k] < 0 || faces[f][k] >= n)
          throw InvariantViolation("face " + std::to_string(f) + " has invalid vertex index");
        const Vec2& t = uv[f][k];
        if (!(t.x() >= 0.0 && t.x() <= 1.0 && t.y() >= 0.0 && t.y() <= 1.0))
          throw InvariantViolation("face " + std::to_string(f) + " has uv outside [0,1]^2");
      }
    }
  }
};

namespace detail {

inline double wrap_uv(double t) {
  if (t >= 0.0 && t <= 1.0) return t;
  return t - std::floor(t);
}

// Resolves a 1-based (or negative, relative) OBJ index against count.
inline int obj_index(long raw, std::size_t count, const std::string& path, int line,
                     const char* kind) {
  long idx = raw > 0 ? raw - 1 : static_cast<long>(count) + raw;
  if (raw == 0 || idx < 0 || idx >= static_cast<long>(count))
    throw MalformedMesh(path, line, std::string("invalid ") + kind + " index " + std::to_string(raw));
  return static_cast<int>(idx);
}

}  // namespace detail

// Reads the v / vt / f subset of Wavefront OBJ. Polygons are fan
// triangulated; every face corner must carry a texture index.
inline Mesh parse_obj(std::istream& in, const std::string& path = "<obj>") {
  Mesh mesh;
  std::vector<Vec2> tex;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw MalformedMesh(path, line_no, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "vt") {
      double u, v;
      if (!(ls >> u >> v)) throw MalformedMesh(path, line_no, "texture coordinate needs 2 values");
      if (!std::isfinite(u) || !std::isfinite(v))
        throw MalformedMesh(path, line_no, "non-finite texture coordinate");
      tex.emplace_back(detail::wrap_uv(u), detail::wrap_uv(v));
    } else if (tag == "f") {
      std::vector<std::pair<int, int>> corners;
      std::string tok;
      while (ls >> tok) {
        const auto s1 = tok.find('/');
        if (s1 == std::string::npos)
          throw MalformedMesh(path, line_no, "face corner '" + tok + "' has no texture index");
        const auto s2 = tok.find('/', s1 + 1);
        const std::string vs = tok.substr(0, s1);
        const std::string ts = tok.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
        if (ts.empty())
          throw MalformedMesh(path, line_no, "face corner '" + tok + "' has no texture index");
        long vi = 0, ti = 0;
        try {
          std::size_t used = 0;
          vi = std::stol(vs, &used);
          if (used != vs.size()) throw std::invalid_argument(vs);
          ti = std::stol(ts, &used);
          if (used != ts.size()) throw std::invalid_argument(ts);
        } catch (const std::logic_error&) {
          throw MalformedMesh(path, line_no, "unparseable face corner '" + tok + "'");
        }
        corners.emplace_back(detail::obj_index(vi, mesh.vertices.size(), path, line_no, "vertex"),
                             detail::obj_index(ti, tex.size(), path, line_no, "texture"));
      }
      if (corners.size() < 3) throw MalformedMesh(path, line_no, "face needs at least 3 corners");
      for (std::size_t k = 1; k + 1 < corners.size(); ++k) {
        mesh.faces.push_back({corners[0].first, corners[k].first, corners[k + 1].first});
        mesh.uv.push_back({tex[corners[0].second], tex[corners[k].second], tex[corners[k + 1].second]});
      }
    }
    // vn, o, g, s, usemtl, mtllib and friends carry nothing we use.
  }
  if (mesh.vertices.size() < 3) throw MalformedMesh(path, line_no, "fewer than 3 vertices");
  if (mesh.faces.empty()) throw MalformedMesh(path, line_no, "no faces");
  mesh.validate();
  return mesh;
}

inline Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file " + path);
  return parse_obj(in, path);
}

inline void write_obj(const Mesh& mesh, std::ostream& out) {
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.uv)
    for (const auto& t : f) out << "vt " << t.x() << ' ' << t.y() << '\n';
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    out << 'f';
    for (int k = 0; k < 3; ++k) out << ' ' << mesh.faces[f][k] + 1 << '/' << 3 * f + k + 1;
    out << '\n';
  }
}

inline void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mesh file " + path);
  write_obj(mesh, out);
}

// Low-poly sedan: a body slab with a tapered cabin on top, front along +x,
// z up, wheels-on-ground at z = 0. Each visible face owns one rectangle of
// the UV atlas.
inline Mesh procedural_car() {
  Mesh m;
  auto add_quad = [&m](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                       double u0, double v0, double u1, double v1) {
    constexpr double inset = 0.01;
    u0 += inset; v0 += inset; u1 -= inset; v1 -= inset;
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), {a, b, c, d});
    const Vec2 ta(u0, v0), tb(u1, v0), tc(u1, v1), td(u0, v1);
    m.faces.push_back({base, base + 1, base + 2});
    m.uv.push_back({ta, tb, tc});
    m.faces.push_back({base, base + 2, base + 3});
    m.uv.push_back({ta, tc, td});
  };

  const double bx0 = -2.1, bx1 = 2.1, by = 0.9, bz0 = 0.3, bz1 = 1.2;
  const double cx0 = -1.1, cx1 = 1.0, tx0 = -0.8, tx1 = 0.5, cy = 0.75, ty = 0.68, cz1 = 1.8;

  // body sides (y = +by is left when looking along +x)
  add_quad({bx0, by, bz0}, {bx1, by, bz0}, {bx1, by, bz1}, {bx0, by, bz1}, 0.0, 0.8, 1.0, 1.0);
  add_quad({bx1, -by, bz0}, {bx0, -by, bz0}, {bx0, -by, bz1}, {bx1, -by, bz1}, 0.0, 0.6, 1.0, 0.8);
  // body top
  add_quad({bx0, -by, bz1}, {bx0, by, bz1}, {bx1, by, bz1}, {bx1, -by, bz1}, 0.0, 0.3, 0.6, 0.6);
  // body front / back
  add_quad({bx1, by, bz0}, {bx1, -by, bz0}, {bx1, -by, bz1}, {bx1, by, bz1}, 0.0, 0.0, 0.25, 0.15);
  add_quad({bx0, -by, bz0}, {bx0, by, bz0}, {bx0, by, bz1}, {bx0, -by, bz1}, 0.25, 0.0, 0.5, 0.15);
  // cabin roof
  add_quad({tx0, -ty, cz1}, {tx0, ty, cz1}, {tx1, ty, cz1}, {tx1, -ty, cz1}, 0.6, 0.3, 1.0, 0.6);
  // cabin sides
  add_quad({cx0, cy, bz1}, {cx1, cy, bz1}, {tx1, ty, cz1}, {tx0, ty, cz1}, 0.0, 0.15, 0.5, 0.3);
  add_quad({cx1, -cy, bz1}, {cx0, -cy, bz1}, {tx0, -ty, cz1}, {tx1, -ty, cz1}, 0.5, 0.15, 1.0, 0.3);
  // windshield / rear window
  add_quad({cx1, cy, bz1}, {cx1, -cy, bz1}, {tx1, -ty, cz1}, {tx1, ty, cz1}, 0.5, 0.0, 0.75, 0.15);
  add_quad({cx0, -cy, bz1}, {cx0, cy, bz1}, {tx0, ty, cz1}, {tx0, -ty, cz1}, 0.75, 0.0, 1.0, 0.15);
  return m;
}

}  // namespace uvcamo
