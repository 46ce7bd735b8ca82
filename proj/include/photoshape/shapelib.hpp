#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace photoshape::shapelib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;
using FaceUv = std::array<Vec2, 3>;

// Triangle mesh split into material parts (one material each) and object parts
// (author groups). UVs are stored per face corner.
struct SegmentedMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<FaceUv> uv;  // empty when needs_uv
  std::vector<int> face_material_part;
  std::vector<int> face_object_part;
  std::vector<Vec3> normals;  // per vertex, unit length (zero for isolated vertices)

  std::vector<std::string> material_part_names;
  std::vector<std::string> object_part_names;

  bool needs_uv = false;
  // Set when UVs came from planar projection instead of the source file.
  bool uv_generated = false;

  int material_part_count() const { return static_cast<int>(material_part_names.size()); }
  int object_part_count() const { return static_cast<int>(object_part_names.size()); }
  bool has_uv() const { return !needs_uv && uv.size() == faces.size(); }
};

struct PartSurfaceStats {
  int part_id = 0;
  double area_world = 0.0;
  double area_uv = 0.0;
  double density = 0.0;  // area_uv / area_world
};

// Parses the OBJ subset: v, vn, vt, f, usemtl, g. Material statements define
// material parts (ids in order of first use), group statements object parts.
// Polygons are fan-triangulated. Throws ParseError with the offending line.
SegmentedMesh load_obj(std::string_view text);
SegmentedMesh load_obj_file(const std::string& path);

// Merges vertices closer than eps (inclusive), re-indexes faces and drops
// faces that become degenerate or have zero area.
SegmentedMesh weld_vertices(const SegmentedMesh& mesh, double eps);

// Uniform scale + translation so the longest AABB axis spans [0,1] and the box
// is centred in the unit cube.
SegmentedMesh normalize_to_unit_cube(const SegmentedMesh& mesh);

PartSurfaceStats uv_density(const SegmentedMesh& mesh, int part_id);

// Scales each material part's UVs by 1/sqrt(D_i) so its area density becomes 1.
SegmentedMesh normalize_uv_scale(const SegmentedMesh& mesh);

// Multiplies the part's UVs by ln(material_scale); material_scale must exceed 1.
SegmentedMesh apply_material_uv_scale(const SegmentedMesh& mesh, int part_id, double material_scale);

// Per-part planar projection along the dominant normal axis. Used for meshes
// that ship without texture coordinates.
SegmentedMesh generate_planar_uvs(const SegmentedMesh& mesh);

// Area-weighted vertex normals.
std::vector<Vec3> vertex_normals(const std::vector<Vec3>& vertices, const std::vector<Face>& faces);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double triangle_area(const Vec2& a, const Vec2& b, const Vec2& c);
double surface_area(const SegmentedMesh& mesh);

struct Aabb {
  Vec3 min;
  Vec3 max;
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
};
Aabb bounding_box(const SegmentedMesh& mesh);

// Pipeline hand-off format (schema "photoshape.mesh/1").
nlohmann::json to_json(const SegmentedMesh& mesh);
SegmentedMesh mesh_from_json(const nlohmann::json& j);

}  // namespace photoshape::shapelib
