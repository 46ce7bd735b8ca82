#include "photoshape/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "photoshape/rng.hpp"

namespace photoshape::fixtures {

using shapelib::Vec3;

std::string boxes_to_obj(const std::vector<Box>& boxes, const std::vector<std::string>& material_names) {
  std::ostringstream out;
  out.precision(9);
  out << "# procedural box assembly\n";
  // Corner (i, j, k) selects min/max per axis.
  auto corner = [](const Box& b, int i, int j, int k) {
    return Vec3(i ? b.max.x() : b.min.x(), j ? b.max.y() : b.min.y(), k ? b.max.z() : b.min.z());
  };
  // Quads listed counter-clockwise seen from outside, with their (u, v) axes.
  struct Quad {
    std::array<std::array<int, 3>, 4> c;
    int u_axis, v_axis;
  };
  static const std::array<Quad, 6> quads{{
      {{{{1, 0, 0}, {1, 1, 0}, {1, 1, 1}, {1, 0, 1}}}, 2, 1},  // +x
      {{{{0, 0, 0}, {0, 0, 1}, {0, 1, 1}, {0, 1, 0}}}, 2, 1},  // -x
      {{{{0, 1, 0}, {0, 1, 1}, {1, 1, 1}, {1, 1, 0}}}, 0, 2},  // +y
      {{{{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1}}}, 0, 2},  // -y
      {{{{0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}}, 0, 1},  // +z
      {{{{0, 0, 0}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}}}, 0, 1},  // -z
  }};
  int v_base = 1, t_base = 1;
  for (const auto& b : boxes) {
    out << "g " << b.object_part << "\nusemtl " << material_names.at(static_cast<std::size_t>(b.material_part)) << "\n";
    for (const auto& q : quads) {
      for (const auto& c : q.c) {
        const Vec3 p = corner(b, c[0], c[1], c[2]);
        out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << "\n";
      }
      for (const auto& c : q.c) {
        const Vec3 p = corner(b, c[0], c[1], c[2]);
        out << "vt " << p[q.u_axis] << ' ' << p[q.v_axis] << "\n";
      }
      out << "f";
      for (int i = 0; i < 4; ++i) out << ' ' << v_base + i << '/' << t_base + i;
      out << "\n";
      v_base += 4;
      t_base += 4;
    }
  }
  return out.str();
}

ProceduralShape asymmetric_shape(int index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };
  const double w = u(0.8, 1.3), d = u(0.7, 1.1), seat_h = u(0.8, 1.1), seat_t = u(0.1, 0.2);
  const double leg = u(0.08, 0.14), back_h = u(0.6, 1.2), back_t = u(0.08, 0.16);
  const double arm_h = u(0.2, 0.4), arm_w = u(0.1, 0.2);
  const double table = u(0.25, 0.45), table_h = u(0.4, 0.8);
  const bool arm_left = (index % 2) == 0;
  const int parts = 3 + (index % 2);  // frame, seat, back [, accent]

  std::vector<Box> boxes;
  boxes.push_back({{0, seat_h - seat_t, 0}, {w, seat_h, d}, 1, "seat"});
  for (int i = 0; i < 4; ++i) {
    const double x0 = (i & 1) ? w - leg : 0.0, z0 = (i & 2) ? d - leg : 0.0;
    boxes.push_back({{x0, 0, z0}, {x0 + leg, seat_h - seat_t, z0 + leg}, 0, "legs"});
  }
  boxes.push_back({{0, seat_h, 0}, {w, seat_h + back_h, back_t}, 2, "back"});
  const double ax0 = arm_left ? 0.0 : w - arm_w;
  boxes.push_back({{ax0, seat_h, back_t}, {ax0 + arm_w, seat_h + arm_h, d}, parts == 4 ? 3 : 0, "arm"});
  const double tx0 = arm_left ? w : -table;
  boxes.push_back({{tx0, 0, d - table}, {tx0 + table, table_h, d}, parts == 4 ? 3 : 2, "table"});

  ProceduralShape s;
  char id[32];
  std::snprintf(id, sizeof id, "shape_%02d", index);
  s.id = id;
  s.material_parts = {"frame", "seat", "back"};
  if (parts == 4) s.material_parts.push_back("accent");
  s.obj = boxes_to_obj(boxes, s.material_parts);
  return s;
}

std::vector<raster::Rgb> hue_swatches(int n) {
  std::vector<raster::Rgb> out;
  for (int i = 0; i < n; ++i) {
    const double h = 6.0 * i / n, x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    std::array<double, 3> c{};
    switch (static_cast<int>(h)) {
      case 0: c = {1, x, 0}; break;
      case 1: c = {x, 1, 0}; break;
      case 2: c = {0, 1, x}; break;
      case 3: c = {0, x, 1}; break;
      case 4: c = {x, 0, 1}; break;
      default: c = {1, 0, x}; break;
    }
    out.push_back({static_cast<std::uint8_t>(std::lround(30 + 200 * c[0])),
                   static_cast<std::uint8_t>(std::lround(30 + 200 * c[1])),
                   static_cast<std::uint8_t>(std::lround(30 + 200 * c[2]))});
  }
  return out;
}

namespace {

// UV sphere, so a headlight render spans the full shading ramp.
shapelib::SegmentedMesh swatch_sphere() {
  constexpr int kRings = 24, kSegments = 48;
  std::ostringstream obj;
  obj.precision(9);
  obj << "usemtl swatch\n";
  for (int i = 0; i <= kRings; ++i)
    for (int j = 0; j < kSegments; ++j) {
      const double phi = std::numbers::pi * i / kRings, theta = 2.0 * std::numbers::pi * j / kSegments;
      obj << "v " << std::sin(phi) * std::cos(theta) << ' ' << std::cos(phi) << ' ' << std::sin(phi) * std::sin(theta)
          << "\n";
    }
  auto idx = [](int i, int j) { return i * kSegments + (j % kSegments) + 1; };
  for (int i = 0; i < kRings; ++i)
    for (int j = 0; j < kSegments; ++j) {
      if (i > 0) obj << "f " << idx(i, j) << ' ' << idx(i, j + 1) << ' ' << idx(i + 1, j) << "\n";
      if (i + 1 < kRings) obj << "f " << idx(i, j + 1) << ' ' << idx(i + 1, j + 1) << ' ' << idx(i + 1, j) << "\n";
    }
  return shapelib::normalize_to_unit_cube(shapelib::weld_vertices(shapelib::load_obj(obj.str()), 1e-9));
}

}  // namespace

material::Signature swatch_signature(const raster::Rgb& color) {
  static const shapelib::SegmentedMesh sphere = swatch_sphere();
  const camera::SphericalPose pose{0.0, std::numbers::pi / 2.0, 3.0, 45.0};
  const std::array<raster::Rgb, 1> colors{color};
  const RgbImage img = raster::render_flat_color(sphere, pose, 96, colors);
  Mask mask(img.width, img.height);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    mask.values[i] = !(img.data[i * 3] == 255 && img.data[i * 3 + 1] == 255 && img.data[i * 3 + 2] == 255);
  return material::compute_signature(img, mask);
}

material::MaterialLibrary swatch_library(int n) {
  material::MaterialLibrary lib;
  const auto colors = hue_swatches(n);
  for (int i = 0; i < n; ++i) {
    material::MaterialRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "swatch_%02d", i);
    r.id = id;
    r.name = "hue swatch " + std::to_string(i);
    r.substance = substance::kAllSubstances[static_cast<std::size_t>(i % substance::kSubstanceCount)];
    r.scale = 2.0;
    r.signature = swatch_signature(colors[static_cast<std::size_t>(i)]);
    r.brdf_meta = {{"model", "lambert"},
                   {"albedo", {colors[static_cast<std::size_t>(i)][0], colors[static_cast<std::size_t>(i)][1],
                               colors[static_cast<std::size_t>(i)][2]}}};
    lib.records.push_back(std::move(r));
  }
  return lib;
}

material::MaterialLibrary reference_library() {
  struct Family {
    substance::Substance substance;
    int count;
    std::array<double, 3> base;  // RGB in [0, 1]
    const char* model;
  };
  const std::array<Family, 5> families{{
      {substance::Substance::leather, 48, {0.45, 0.28, 0.18}, "beckmann"},
      {substance::Substance::fabric, 154, {0.55, 0.50, 0.60}, "aittala"},
      {substance::Substance::wood, 105, {0.60, 0.40, 0.22}, "aittala"},
      {substance::Substance::metal, 86, {0.70, 0.70, 0.72}, "ggx"},
      {substance::Substance::plastic, 60, {0.30, 0.45, 0.70}, "disney"},
  }};
  material::MaterialLibrary lib;
  Rng rng(453);
  for (const auto& f : families) {
    const std::string sub(substance::name(f.substance));
    for (int i = 0; i < f.count; ++i) {
      material::MaterialRecord r;
      char id[48];
      std::snprintf(id, sizeof id, "%s_%03d", sub.c_str(), i);
      r.id = id;
      r.name = sub + " " + std::to_string(i);
      r.substance = f.substance;
      r.scale = 1.5 + 0.25 * (i % 11);
      raster::Rgb color{};
      for (std::size_t c = 0; c < 3; ++c)
        color[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(f.base[c] + rng.uniform(-0.2, 0.2), 0.0, 1.0)));
      r.signature = swatch_signature(color);
      r.brdf_meta = {{"model", f.model}, {"placeholder", true}, {"albedo", {color[0], color[1], color[2]}}};
      lib.records.push_back(std::move(r));
    }
  }
  return lib;
}

}  // namespace photoshape::fixtures
