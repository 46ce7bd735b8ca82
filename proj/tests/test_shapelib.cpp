#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "photoshape/error.hpp"
#include "photoshape/shapelib.hpp"
#include "support.hpp"

using namespace photoshape;
using namespace photoshape::shapelib;

namespace {

std::string quad_obj(double world, double uv, const std::string& mtl = "m") {
  std::ostringstream o;
  o << "v 0 0 0\nv " << world << " 0 0\nv " << world << ' ' << world << " 0\nv 0 " << world << " 0\n";
  o << "vt 0 0\nvt " << uv << " 0\nvt " << uv << ' ' << uv << "\nvt 0 " << uv << "\n";
  o << "usemtl " << mtl << "\nf 1/1 2/2 3/3 4/4\n";
  return o.str();
}

// Independent area oracle: half the cross-product norm, summed.
double area3(const std::vector<std::array<double, 3>>& a, const std::vector<std::array<double, 3>>& b,
             const std::vector<std::array<double, 3>>& c) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ux = b[i][0] - a[i][0], uy = b[i][1] - a[i][1], uz = b[i][2] - a[i][2];
    const double vx = c[i][0] - a[i][0], vy = c[i][1] - a[i][1], vz = c[i][2] - a[i][2];
    const double cx = uy * vz - uz * vy, cy = uz * vx - ux * vz, cz = ux * vy - uy * vx;
    s += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
  }
  return s;
}

std::array<double, 6> aabb_oracle(const SegmentedMesh& m) {
  std::array<double, 6> r{1e300, 1e300, 1e300, -1e300, -1e300, -1e300};
  for (const auto& v : m.vertices)
    for (int k = 0; k < 3; ++k) {
      r[k] = std::min(r[k], v[k]);
      r[k + 3] = std::max(r[k + 3], v[k]);
    }
  return r;
}

}  // namespace

TEST_SUITE("shapelib") {
  TEST_CASE("single quad becomes two faces in one part") {
    const auto m = load_obj(quad_obj(1, 1));
    CHECK(m.faces.size() == 2);
    CHECK(m.material_part_count() == 1);
    CHECK(m.has_uv());
  }

  TEST_CASE("two usemtl blocks give contiguous part ids") {
    const std::string obj =
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nusemtl a\nf 1 2 3\nusemtl b\nf 2 4 3\nusemtl a\nf 1 2 4\n";
    const auto m = load_obj(obj);
    CHECK(m.material_part_count() == 2);
    CHECK(std::set<int>(m.face_material_part.begin(), m.face_material_part.end()) == std::set<int>{0, 1});
    CHECK(m.face_material_part == std::vector<int>{0, 1, 0});
  }

  TEST_CASE("groups define object parts") {
    const auto m = load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\ng seat\nf 1 2 3\ng back\nf 1 3 2\n");
    CHECK(m.object_part_names == std::vector<std::string>{"seat", "back"});
  }

  TEST_CASE("face index 0 is a parse error with the line number") {
    try {
      load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
    }
  }

  TEST_CASE("out of range and malformed indices are parse errors") {
    CHECK_THROWS_AS(load_obj("v 0 0 0\nf 1 2 3\n"), ParseError);
    CHECK_THROWS_AS(load_obj("v 0 0 x\n"), ParseError);
    CHECK_THROWS_AS(load_obj("curv 0 1 1 2\n"), ParseError);
  }

  TEST_CASE("negative indices are relative") {
    const auto m = load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
    CHECK(m.faces[0] == Face{0, 1, 2});
  }

  TEST_CASE("missing UVs flag the mesh instead of failing") {
    const auto m = load_obj(testing::box_obj(1, 1, 1));
    CHECK(m.needs_uv);
    CHECK_FALSE(m.has_uv());
    CHECK(m.faces.size() == 12);
  }

  TEST_CASE("coincident vertices weld") {
    SegmentedMesh m = load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 0 0\nv 1 1 0\nf 1 2 3\nf 4 5 3\n");
    const auto w = weld_vertices(m, 1e-6);
    CHECK(w.vertices.size() == 4);
    CHECK(w.faces[1][0] == w.faces[0][1]);
  }

  TEST_CASE("eps zero merges exact duplicates") {
    const auto w = weld_vertices(load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 0\nf 1 2 3\nf 4 2 3\n"), 0.0);
    CHECK(w.vertices.size() == 3);
  }

  TEST_CASE("cube with 24 duplicated corners welds to 8 vertices") {
    std::ostringstream o;
    const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
    int n = 1;
    for (const auto& q : quads) {
      for (int c : q) o << "v " << (c & 1) << ' ' << ((c >> 1) & 1) << ' ' << ((c >> 2) & 1) << "\n";
      o << "f " << n << ' ' << n + 1 << ' ' << n + 2 << ' ' << n + 3 << "\n";
      n += 4;
    }
    const auto m = load_obj(o.str());
    REQUIRE(m.vertices.size() == 24);
    std::set<std::array<double, 3>> unique;
    for (const auto& v : m.vertices) unique.insert({v.x(), v.y(), v.z()});
    const auto w = weld_vertices(m, 1e-9);
    CHECK(w.vertices.size() == unique.size());
    CHECK(w.vertices.size() == 8);
    CHECK(surface_area(w) == doctest::Approx(6.0).epsilon(1e-12));
  }

  TEST_CASE("welding drops faces that collapse") {
    const auto w = weld_vertices(load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1e-9\nf 1 2 3\nf 1 4 2\n"), 1e-6);
    CHECK(w.faces.size() == 1);
  }

  TEST_CASE("welding preserves area when eps is below vertex spacing") {
    const auto m = load_obj(testing::box_obj(1, 2, 3));
    CHECK(std::abs(surface_area(weld_vertices(m, 1e-3)) - surface_area(m)) < 1e-9);
  }

  TEST_CASE("normalize_to_unit_cube") {
    SUBCASE("[-2,2]^3 maps to [0,1]^3") {
      auto m = load_obj(testing::box_obj(4, 4, 4));
      for (auto& v : m.vertices) v -= Vec3(2, 2, 2);
      const auto b = aabb_oracle(normalize_to_unit_cube(m));
      for (int k = 0; k < 3; ++k) {
        CHECK(b[k] == doctest::Approx(0.0));
        CHECK(b[k + 3] == doctest::Approx(1.0));
      }
    }
    SUBCASE("[0,4]x[0,2]x[0,1] extents") {
      const auto n = normalize_to_unit_cube(load_obj(testing::box_obj(4, 2, 1)));
      const auto b = aabb_oracle(n);
      CHECK(b[3] - b[0] == doctest::Approx(1.0));
      CHECK(b[4] - b[1] == doctest::Approx(0.5));
      CHECK(b[5] - b[2] == doctest::Approx(0.25));
      for (int k = 0; k < 3; ++k) CHECK(0.5 * (b[k] + b[k + 3]) == doctest::Approx(0.5));
    }
    SUBCASE("idempotent") {
      const auto once = normalize_to_unit_cube(load_obj(testing::box_obj(3, 1, 2)));
      const auto twice = normalize_to_unit_cube(once);
      for (std::size_t i = 0; i < once.vertices.size(); ++i) CHECK((once.vertices[i] - twice.vertices[i]).norm() < 1e-9);
    }
    SUBCASE("zero extent is an error") {
      CHECK_THROWS_AS(normalize_to_unit_cube(load_obj("v 1 1 1\nv 1 1 1\nv 1 1 1\nf 1 2 3\n")), Error);
    }
  }

  TEST_CASE("uv_density") {
    CHECK(uv_density(load_obj(quad_obj(2, 1)), 0).density == doctest::Approx(0.25));
    CHECK(uv_density(load_obj(quad_obj(1, 1)), 0).density == doctest::Approx(1.0));
    CHECK_THROWS_AS(uv_density(load_obj(testing::box_obj(1, 1, 1)), 0), Error);
    CHECK_THROWS_AS(uv_density(load_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n"), 0),
                    Error);
  }

  TEST_CASE("uv_density of an irregular patch matches an independent area sum") {
    const std::string obj =
        "v 0 0 0\nv 1.3 0.1 0.2\nv 0.2 1.7 -0.3\nv 1.9 1.1 0.8\n"
        "vt 0 0\nvt 0.7 0.05\nvt 0.1 0.9\nvt 0.8 0.6\n"
        "f 1/1 2/2 3/3\nf 2/2 4/4 3/3\nf 1/1 4/4 3/3\n";
    const auto m = load_obj(obj);
    std::vector<std::array<double, 3>> a, b, c, ua, ub, uc;
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
      auto to3 = [](const Vec3& v) { return std::array<double, 3>{v.x(), v.y(), v.z()}; };
      a.push_back(to3(m.vertices[m.faces[f][0]]));
      b.push_back(to3(m.vertices[m.faces[f][1]]));
      c.push_back(to3(m.vertices[m.faces[f][2]]));
      ua.push_back({m.uv[f][0].x(), m.uv[f][0].y(), 0});
      ub.push_back({m.uv[f][1].x(), m.uv[f][1].y(), 0});
      uc.push_back({m.uv[f][2].x(), m.uv[f][2].y(), 0});
    }
    const auto s = uv_density(m, 0);
    CHECK(s.area_world == doctest::Approx(area3(a, b, c)).epsilon(1e-12));
    CHECK(s.area_uv == doctest::Approx(area3(ua, ub, uc)).epsilon(1e-12));
    CHECK(s.density == doctest::Approx(area3(ua, ub, uc) / area3(a, b, c)).epsilon(1e-12));
  }

  TEST_CASE("normalize_uv_scale brings every part to density 1") {
    SUBCASE("single part with D = 0.25") {
      CHECK(uv_density(normalize_uv_scale(load_obj(quad_obj(2, 1))), 0).density == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("D = 1 leaves UVs unchanged") {
      const auto m = load_obj(quad_obj(1, 1));
      const auto n = normalize_uv_scale(m);
      for (std::size_t f = 0; f < m.faces.size(); ++f)
        for (int k = 0; k < 3; ++k) CHECK((m.uv[f][k] - n.uv[f][k]).norm() < 1e-12);
    }
    SUBCASE("two parts with D = {4, 0.5}") {
      const std::string obj =
          "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
          "vt 0 0\nvt 2 0\nvt 2 2\nvt 0 2\nvt 0 0\nvt 0.70710678118654752 0\nvt 0.70710678118654752 0.70710678118654752\n"
          "vt 0 0.70710678118654752\nusemtl a\nf 1/1 2/2 3/3 4/4\nusemtl b\nf 5/5 6/6 7/7 8/8\n";
      const auto m = load_obj(obj);
      CHECK(uv_density(m, 0).density == doctest::Approx(4.0));
      CHECK(uv_density(m, 1).density == doctest::Approx(0.5));
      const auto n = normalize_uv_scale(m);
      CHECK(uv_density(n, 0).density == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(uv_density(n, 1).density == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(n.face_material_part == m.face_material_part);
    }
  }

  TEST_CASE("apply_material_uv_scale multiplies by ln s") {
    const auto m = load_obj(quad_obj(1, 1));
    const auto same = apply_material_uv_scale(m, 0, std::numbers::e);
    const auto doubled = apply_material_uv_scale(m, 0, std::exp(2.0));
    const auto ten = apply_material_uv_scale(m, 0, 10.0);
    for (std::size_t f = 0; f < m.faces.size(); ++f)
      for (int k = 0; k < 3; ++k) {
        CHECK((same.uv[f][k] - m.uv[f][k]).norm() < 1e-12);
        CHECK((doubled.uv[f][k] - 2.0 * m.uv[f][k]).norm() < 1e-12);
        CHECK((ten.uv[f][k] - 2.302585092994046 * m.uv[f][k]).norm() < 1e-12);
      }
    CHECK_THROWS_AS(apply_material_uv_scale(m, 0, 1.0), Error);
    CHECK_THROWS_AS(apply_material_uv_scale(m, 0, 0.5), Error);
  }

  TEST_CASE("planar UV generation is flagged and gives positive density") {
    const auto m = generate_planar_uvs(load_obj(testing::box_obj(1, 2, 3)));
    CHECK(m.uv_generated);
    CHECK(m.has_uv());
    CHECK(uv_density(m, 0).density > 0.0);
    CHECK(uv_density(normalize_uv_scale(m), 0).density == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("vertex normals are unit length") {
    const auto m = load_obj(testing::box_obj(1, 1, 1));
    for (const auto& n : m.normals) CHECK(n.norm() == doctest::Approx(1.0));
  }

  TEST_CASE("mesh JSON round trip") {
    const auto m = normalize_uv_scale(load_obj(quad_obj(2, 1, "wood")));
    const auto back = mesh_from_json(to_json(m));
    CHECK(back.faces == m.faces);
    CHECK(back.material_part_names == m.material_part_names);
    CHECK(to_json(back) == to_json(m));
  }
}
