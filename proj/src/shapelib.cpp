#include "photoshape/shapelib.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Geometry>

#include "photoshape/error.hpp"

namespace photoshape::shapelib {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, int line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, "invalid number '" + std::string(tok) + "'");
  return v;
}

// Resolves a 1-based or negative (relative) OBJ index to 0-based.
int resolve_index(std::string_view tok, std::size_t count, int line, const char* what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, std::string("malformed ") + what + " index '" + std::string(tok) + "'");
  if (v == 0) throw ParseError(line, std::string(what) + " index 0 (OBJ indices are 1-based)");
  const long resolved = v > 0 ? v - 1 : static_cast<long>(count) + v;
  if (resolved < 0 || resolved >= static_cast<long>(count))
    throw ParseError(line, std::string(what) + " index " + std::to_string(v) + " out of range");
  return static_cast<int>(resolved);
}

bool is_freeform_statement(std::string_view kw) {
  static constexpr std::string_view kFreeform[] = {"curv", "curv2", "surf", "cstype", "deg", "bmat", "step",
                                                   "parm", "trim", "hole", "scrv", "sp", "end", "con"};
  return std::find(std::begin(kFreeform), std::end(kFreeform), kw) != std::end(kFreeform);
}

int intern(std::vector<std::string>& names, std::map<std::string, int, std::less<>>& ids, const std::string& name) {
  auto it = ids.find(name);
  if (it != ids.end()) return it->second;
  const int id = static_cast<int>(names.size());
  names.push_back(name);
  ids.emplace(name, id);
  return id;
}

}  // namespace

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

double triangle_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  const Vec2 u = b - a, v = c - a;
  return 0.5 * std::abs(u.x() * v.y() - u.y() * v.x());
}

std::vector<Vec3> vertex_normals(const std::vector<Vec3>& vertices, const std::vector<Face>& faces) {
  std::vector<Vec3> normals(vertices.size(), Vec3::Zero());
  for (const Face& f : faces) {
    // Unnormalized cross product weights by twice the area.
    const Vec3 n = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    for (int k = 0; k < 3; ++k) normals[f[k]] += n;
  }
  for (Vec3& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

SegmentedMesh load_obj(std::string_view text) {
  SegmentedMesh mesh;
  std::vector<Vec2> texcoords;
  std::size_t normal_count = 0;
  std::map<std::string, int, std::less<>> material_ids, object_ids;
  std::string current_material = "(none)";
  std::string current_group = "(default)";
  bool all_faces_have_uv = true;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::string_view kw = tok[0];

    if (kw == "v") {
      if (tok.size() < 4) throw ParseError(line_no, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_double(tok[1], line_no), parse_double(tok[2], line_no),
                                 parse_double(tok[3], line_no));
    } else if (kw == "vt") {
      if (tok.size() < 3) throw ParseError(line_no, "texture coordinate needs 2 values");
      texcoords.emplace_back(parse_double(tok[1], line_no), parse_double(tok[2], line_no));
    } else if (kw == "vn") {
      if (tok.size() < 4) throw ParseError(line_no, "normal needs 3 values");
      for (int k = 1; k <= 3; ++k) parse_double(tok[k], line_no);
      ++normal_count;
    } else if (kw == "f") {
      if (tok.size() < 4) throw ParseError(line_no, "face needs at least 3 vertices");
      std::vector<int> vi;
      std::vector<int> ti;
      bool face_has_uv = true;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const std::string_view corner = tok[k];
        const std::size_t s1 = corner.find('/');
        vi.push_back(resolve_index(corner.substr(0, s1), mesh.vertices.size(), line_no, "vertex"));
        if (s1 == std::string_view::npos) {
          face_has_uv = false;
          continue;
        }
        const std::size_t s2 = corner.find('/', s1 + 1);
        const std::string_view vt = corner.substr(s1 + 1, s2 == std::string_view::npos ? std::string_view::npos : s2 - s1 - 1);
        if (vt.empty()) {
          face_has_uv = false;
        } else {
          ti.push_back(resolve_index(vt, texcoords.size(), line_no, "texture"));
        }
        if (s2 != std::string_view::npos && s2 + 1 < corner.size())
          resolve_index(corner.substr(s2 + 1), normal_count, line_no, "normal");
      }
      all_faces_have_uv = all_faces_have_uv && face_has_uv;
      const int material = intern(mesh.material_part_names, material_ids, current_material);
      const int object = intern(mesh.object_part_names, object_ids, current_group);
      for (std::size_t k = 1; k + 1 < vi.size(); ++k) {
        mesh.faces.push_back({vi[0], vi[k], vi[k + 1]});
        mesh.face_material_part.push_back(material);
        mesh.face_object_part.push_back(object);
        FaceUv uv{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
        if (face_has_uv) uv = {texcoords[ti[0]], texcoords[ti[k]], texcoords[ti[k + 1]]};
        mesh.uv.push_back(uv);
      }
    } else if (kw == "usemtl") {
      if (tok.size() < 2) throw ParseError(line_no, "usemtl needs a material name");
      current_material = std::string(tok[1]);
    } else if (kw == "g") {
      std::string name;
      for (std::size_t k = 1; k < tok.size(); ++k) name += (k > 1 ? " " : "") + std::string(tok[k]);
      current_group = name.empty() ? "(default)" : name;
    } else if (is_freeform_statement(kw)) {
      throw ParseError(line_no, "free-form geometry ('" + std::string(kw) + "') is not supported");
    }
    // o, s, mtllib, l, p and unknown statements are ignored.
    if (end == text.size()) break;
  }

  if (!all_faces_have_uv || mesh.faces.empty()) {
    mesh.needs_uv = true;
    mesh.uv.clear();
  }
  mesh.normals = vertex_normals(mesh.vertices, mesh.faces);
  return mesh;
}

SegmentedMesh load_obj_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_obj(ss.str());
}

SegmentedMesh weld_vertices(const SegmentedMesh& mesh, double eps) {
  if (eps < 0.0) throw Error("weld eps must be non-negative");

  using Key = std::tuple<long long, long long, long long>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      const auto [a, b, c] = k;
      return std::hash<long long>()(a * 73856093LL ^ b * 19349663LL ^ c * 83492791LL);
    }
  };
  const double cell = eps > 0.0 ? eps : 1.0;
  auto key_of = [&](const Vec3& p) {
    if (eps == 0.0) {
      // Exact-position buckets: identical coordinates share a key.
      // Adding 0.0 folds -0.0 into +0.0.
      return Key{std::bit_cast<long long>(p.x() + 0.0), std::bit_cast<long long>(p.y() + 0.0),
                 std::bit_cast<long long>(p.z() + 0.0)};
    }
    return Key{static_cast<long long>(std::floor(p.x() / cell)), static_cast<long long>(std::floor(p.y() / cell)),
               static_cast<long long>(std::floor(p.z() / cell))};
  };

  std::unordered_map<Key, std::vector<int>, KeyHash> grid;
  std::vector<Vec3> reps;
  std::vector<int> remap(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const Key k = key_of(p);
    int found = -1;
    if (eps == 0.0) {
      if (auto it = grid.find(k); it != grid.end()) found = it->second.front();
    } else {
      const auto [kx, ky, kz] = k;
      for (long long dx = -1; dx <= 1 && found < 0; ++dx)
        for (long long dy = -1; dy <= 1 && found < 0; ++dy)
          for (long long dz = -1; dz <= 1 && found < 0; ++dz) {
            auto it = grid.find(Key{kx + dx, ky + dy, kz + dz});
            if (it == grid.end()) continue;
            for (int r : it->second)
              if ((reps[r] - p).norm() <= eps) {
                found = r;
                break;
              }
          }
    }
    if (found < 0) {
      found = static_cast<int>(reps.size());
      reps.push_back(p);
      grid[k].push_back(found);
    }
    remap[i] = found;
  }

  SegmentedMesh out;
  out.material_part_names = mesh.material_part_names;
  out.object_part_names = mesh.object_part_names;
  out.needs_uv = mesh.needs_uv;
  out.uv_generated = mesh.uv_generated;
  std::vector<int> compact(reps.size(), -1);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face face{remap[mesh.faces[f][0]], remap[mesh.faces[f][1]], remap[mesh.faces[f][2]]};
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) continue;
    const Vec3 &a = reps[face[0]], &b = reps[face[1]], &c = reps[face[2]];
    const double longest = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
    if (triangle_area(a, b, c) <= 1e-12 * longest) continue;
    Face kept{};
    for (int k = 0; k < 3; ++k) {
      if (compact[face[k]] < 0) {
        compact[face[k]] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(reps[face[k]]);
      }
      kept[k] = compact[face[k]];
    }
    out.faces.push_back(kept);
    out.face_material_part.push_back(mesh.face_material_part[f]);
    out.face_object_part.push_back(mesh.face_object_part[f]);
    if (mesh.has_uv()) out.uv.push_back(mesh.uv[f]);
  }
  out.normals = vertex_normals(out.vertices, out.faces);
  return out;
}

Aabb bounding_box(const SegmentedMesh& mesh) {
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const Vec3& v : mesh.vertices) {
    box.min = box.min.cwiseMin(v);
    box.max = box.max.cwiseMax(v);
  }
  return box;
}

double surface_area(const SegmentedMesh& mesh) {
  double total = 0.0;
  for (const Face& f : mesh.faces) total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
  return total;
}

SegmentedMesh normalize_to_unit_cube(const SegmentedMesh& mesh) {
  if (mesh.vertices.empty()) throw Error("cannot normalize an empty mesh");
  const Aabb box = bounding_box(mesh);
  const double longest = box.extent().maxCoeff();
  if (!(longest > 0.0)) throw Error("cannot normalize a zero-extent mesh");
  const Vec3 center = box.center();
  const double scale = 1.0 / longest;

  SegmentedMesh out = mesh;
  for (Vec3& v : out.vertices) v = (v - center) * scale + Vec3::Constant(0.5);
  return out;
}

PartSurfaceStats uv_density(const SegmentedMesh& mesh, int part_id) {
  if (part_id < 0 || part_id >= mesh.material_part_count())
    throw Error("material part " + std::to_string(part_id) + " does not exist");
  if (!mesh.has_uv()) throw Error("mesh has no UV coordinates");
  PartSurfaceStats stats;
  stats.part_id = part_id;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (mesh.face_material_part[f] != part_id) continue;
    const Face& face = mesh.faces[f];
    stats.area_world += triangle_area(mesh.vertices[face[0]], mesh.vertices[face[1]], mesh.vertices[face[2]]);
    stats.area_uv += triangle_area(mesh.uv[f][0], mesh.uv[f][1], mesh.uv[f][2]);
  }
  if (!(stats.area_world > 0.0))
    throw Error("material part " + std::to_string(part_id) + " has zero world area");
  stats.density = stats.area_uv / stats.area_world;
  return stats;
}

SegmentedMesh normalize_uv_scale(const SegmentedMesh& mesh) {
  SegmentedMesh out = mesh;
  for (int part = 0; part < mesh.material_part_count(); ++part) {
    if (std::find(mesh.face_material_part.begin(), mesh.face_material_part.end(), part) ==
        mesh.face_material_part.end())
      continue;
    const PartSurfaceStats stats = uv_density(mesh, part);
    if (!(stats.density > 0.0))
      throw Error("material part " + std::to_string(part) + " has a degenerate UV mapping");
    // Area density scales with the square of a linear UV factor.
    const double factor = 1.0 / std::sqrt(stats.density);
    for (std::size_t f = 0; f < out.faces.size(); ++f)
      if (out.face_material_part[f] == part)
        for (Vec2& t : out.uv[f]) t *= factor;
  }
  return out;
}

SegmentedMesh apply_material_uv_scale(const SegmentedMesh& mesh, int part_id, double material_scale) {
  if (!(material_scale > 1.0) || !std::isfinite(material_scale))
    throw Error("material scale must be a finite value > 1 (log factor would be <= 0)");
  if (part_id < 0 || part_id >= mesh.material_part_count())
    throw Error("material part " + std::to_string(part_id) + " does not exist");
  if (!mesh.has_uv()) throw Error("mesh has no UV coordinates");
  const double factor = std::log(material_scale);
  SegmentedMesh out = mesh;
  for (std::size_t f = 0; f < out.faces.size(); ++f)
    if (out.face_material_part[f] == part_id)
      for (Vec2& t : out.uv[f]) t *= factor;
  return out;
}

SegmentedMesh generate_planar_uvs(const SegmentedMesh& mesh) {
  SegmentedMesh out = mesh;
  std::vector<Vec3> axis_weight(mesh.material_part_count(), Vec3::Zero());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    const Vec3 n = 0.5 * (mesh.vertices[face[1]] - mesh.vertices[face[0]])
                             .cross(mesh.vertices[face[2]] - mesh.vertices[face[0]]);
    axis_weight[mesh.face_material_part[f]] += n.cwiseAbs();
  }
  out.uv.assign(mesh.faces.size(), FaceUv{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()});
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    int axis = 0;
    axis_weight[mesh.face_material_part[f]].maxCoeff(&axis);
    const int u_axis = axis == 0 ? 1 : 0;
    const int v_axis = axis == 2 ? 1 : 2;
    for (int k = 0; k < 3; ++k) {
      const Vec3& p = mesh.vertices[mesh.faces[f][k]];
      out.uv[f][k] = Vec2(p[u_axis], p[v_axis]);
    }
  }
  out.needs_uv = false;
  out.uv_generated = true;
  return out;
}

nlohmann::json to_json(const SegmentedMesh& mesh) {
  using nlohmann::json;
  json j;
  j["schema"] = "photoshape.mesh/1";
  json verts = json::array(), faces = json::array(), normals = json::array();
  for (const Vec3& v : mesh.vertices) verts.push_back({v.x(), v.y(), v.z()});
  for (const Face& f : mesh.faces) faces.push_back({f[0], f[1], f[2]});
  for (const Vec3& n : mesh.normals) normals.push_back({n.x(), n.y(), n.z()});
  j["vertices"] = std::move(verts);
  j["faces"] = std::move(faces);
  j["normals"] = std::move(normals);
  if (mesh.has_uv()) {
    json uv = json::array();
    for (const FaceUv& t : mesh.uv) uv.push_back({t[0].x(), t[0].y(), t[1].x(), t[1].y(), t[2].x(), t[2].y()});
    j["uv"] = std::move(uv);
  } else {
    j["uv"] = nullptr;
  }
  j["face_material_part"] = mesh.face_material_part;
  j["face_object_part"] = mesh.face_object_part;
  j["material_parts"] = mesh.material_part_names;
  j["object_parts"] = mesh.object_part_names;
  j["needs_uv"] = mesh.needs_uv;
  j["uv_generated"] = mesh.uv_generated;
  return j;
}

SegmentedMesh mesh_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "photoshape.mesh/1") throw Error("unsupported mesh schema");
  SegmentedMesh mesh;
  for (const auto& v : j.at("vertices")) mesh.vertices.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
  for (const auto& f : j.at("faces")) mesh.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
  mesh.face_material_part = j.at("face_material_part").get<std::vector<int>>();
  mesh.face_object_part = j.at("face_object_part").get<std::vector<int>>();
  mesh.material_part_names = j.at("material_parts").get<std::vector<std::string>>();
  mesh.object_part_names = j.at("object_parts").get<std::vector<std::string>>();
  mesh.needs_uv = j.at("needs_uv").get<bool>();
  mesh.uv_generated = j.value("uv_generated", false);
  if (!j.at("uv").is_null())
    for (const auto& t : j.at("uv"))
      mesh.uv.push_back({Vec2(t[0], t[1]), Vec2(t[2], t[3]), Vec2(t[4], t[5])});
  const auto nv = static_cast<int>(mesh.vertices.size());
  for (const Face& f : mesh.faces)
    for (int idx : f)
      if (idx < 0 || idx >= nv) throw Error("face index out of range in mesh JSON");
  if (mesh.face_material_part.size() != mesh.faces.size()) throw Error("face_material_part length mismatch");
  mesh.normals = vertex_normals(mesh.vertices, mesh.faces);
  return mesh;
}

}  // namespace photoshape::shapelib
