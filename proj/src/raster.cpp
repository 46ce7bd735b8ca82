#include "photoshape/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Geometry>

#include "photoshape/error.hpp"

namespace photoshape::raster {
namespace {

using shapelib::Vec3;

// Screen-space triangle: x, y in pixels and 1/depth for perspective-correct
// depth interpolation.
struct ScreenTri {
  std::array<Eigen::Vector3d, 3> v;
  int face;
};

struct FrameBuffers {
  std::vector<int> face;      // -1 = empty
  std::vector<float> depth;
};

constexpr double kNear = 1e-3;

std::vector<ScreenTri> project_faces(const shapelib::SegmentedMesh& mesh, const camera::ViewTransform& vt,
                                     int resolution, const std::vector<bool>* keep) {
  std::vector<Vec3> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    cam[i] = (vt.view * mesh.vertices[i].homogeneous()).head<3>();
  const double fx = vt.projection(0, 0), fy = vt.projection(1, 1);
  auto to_screen = [&](const Vec3& c) {
    const double d = -c.z();
    return Eigen::Vector3d((fx * c.x() / d + 1.0) * 0.5 * resolution, (1.0 - fy * c.y() / d) * 0.5 * resolution,
                           1.0 / d);
  };

  std::vector<ScreenTri> tris;
  tris.reserve(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (keep && !(*keep)[f]) continue;
    // Clip against the near plane (depth = -z >= kNear).
    std::array<Vec3, 3> in{cam[mesh.faces[f][0]], cam[mesh.faces[f][1]], cam[mesh.faces[f][2]]};
    std::vector<Vec3> poly;
    for (int k = 0; k < 3; ++k) {
      const Vec3& a = in[k];
      const Vec3& b = in[(k + 1) % 3];
      const double da = -a.z() - kNear, db = -b.z() - kNear;
      if (da >= 0.0) poly.push_back(a);
      if ((da >= 0.0) != (db >= 0.0)) poly.push_back(a + (b - a) * (da / (da - db)));
    }
    if (poly.size() < 3) continue;
    const Eigen::Vector3d s0 = to_screen(poly[0]);
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
      tris.push_back({{s0, to_screen(poly[k]), to_screen(poly[k + 1])}, static_cast<int>(f)});
  }
  return tris;
}

double edge(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double px, double py) {
  return (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
}

// Top-left fill rule for the orientation used below (positive edge() area in
// y-down screen space).
bool top_left(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

void raster_rows(const std::vector<ScreenTri>& tris, int resolution, int row_begin, int row_end, FrameBuffers& fb) {
  for (const ScreenTri& t : tris) {
    std::array<Eigen::Vector3d, 3> v = t.v;
    double area = edge(v[0], v[1], v[2].x(), v[2].y());
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(v[1], v[2]);
      area = -area;
    }
    const double min_y = std::min({v[0].y(), v[1].y(), v[2].y()});
    const double max_y = std::max({v[0].y(), v[1].y(), v[2].y()});
    const int y0 = std::max(row_begin, static_cast<int>(std::floor(min_y - 0.5)));
    const int y1 = std::min(row_end - 1, static_cast<int>(std::ceil(max_y - 0.5)));
    if (y0 > y1) continue;
    const double min_x = std::min({v[0].x(), v[1].x(), v[2].x()});
    const double max_x = std::max({v[0].x(), v[1].x(), v[2].x()});
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
    const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(max_x - 0.5)));
    const bool tl0 = top_left(v[1], v[2]), tl1 = top_left(v[2], v[0]), tl2 = top_left(v[0], v[1]);
    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double w0 = edge(v[1], v[2], px, py);
        const double w1 = edge(v[2], v[0], px, py);
        const double w2 = edge(v[0], v[1], px, py);
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        if ((w0 == 0.0 && !tl0) || (w1 == 0.0 && !tl1) || (w2 == 0.0 && !tl2)) continue;
        const double inv_depth = (w0 * v[0].z() + w1 * v[1].z() + w2 * v[2].z()) / area;
        const float depth = static_cast<float>(1.0 / inv_depth);
        const std::size_t idx = static_cast<std::size_t>(y) * resolution + x;
        if (depth < fb.depth[idx]) {
          fb.depth[idx] = depth;
          fb.face[idx] = t.face;
        }
      }
    }
  }
}

// Row bands are independent, so the parallel loop matches the serial result.
FrameBuffers rasterize(const std::vector<ScreenTri>& tris, int resolution) {
  FrameBuffers fb;
  const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
  fb.face.assign(n, -1);
  fb.depth.assign(n, std::numeric_limits<float>::infinity());
  constexpr int kBand = 16;
  const int bands = (resolution + kBand - 1) / kBand;
#pragma omp parallel for schedule(static) if (resolution >= 128)
  for (int b = 0; b < bands; ++b) raster_rows(tris, resolution, b * kBand, std::min(resolution, (b + 1) * kBand), fb);
  return fb;
}

void check_renderable(const shapelib::SegmentedMesh& mesh, int resolution) {
  if (mesh.faces.empty()) throw Error("cannot render an empty mesh");
  if (resolution < 16) throw Error("render resolution must be >= 16");
}

}  // namespace

RenderOutput render_part_ids(const shapelib::SegmentedMesh& mesh, const camera::SphericalPose& pose,
                             int resolution) {
  check_renderable(mesh, resolution);
  const auto vt = camera::pose_to_view_transform(pose, shapelib::bounding_box(mesh).center());
  const FrameBuffers fb = rasterize(project_faces(mesh, vt, resolution, nullptr), resolution);

  RenderOutput out;
  out.part_ids = LabelMap(resolution, resolution, mesh.material_part_count(), LabelKind::material_part);
  out.depth = fb.depth;
  for (std::size_t i = 0; i < fb.face.size(); ++i)
    if (fb.face[i] >= 0) out.part_ids.labels[i] = static_cast<std::uint16_t>(mesh.face_material_part[fb.face[i]] + 1);
  return out;
}

Mask silhouette(const RenderOutput& render) { return mask_from_labels(render.part_ids); }

RgbImage render_flat_color(const shapelib::SegmentedMesh& mesh, const camera::SphericalPose& pose, int resolution,
                           std::span<const Rgb> part_colors) {
  check_renderable(mesh, resolution);
  if (static_cast<int>(part_colors.size()) != mesh.material_part_count())
    throw Error("expected one colour per material part (" + std::to_string(mesh.material_part_count()) + "), got " +
                std::to_string(part_colors.size()));
  const auto vt = camera::pose_to_view_transform(pose, shapelib::bounding_box(mesh).center());

  std::vector<bool> front(mesh.faces.size());
  std::vector<double> lambert(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    const Vec3 &a = mesh.vertices[face[0]], &b = mesh.vertices[face[1]], &c = mesh.vertices[face[2]];
    const Vec3 n = (b - a).cross(c - a).normalized();
    const Vec3 centroid = (a + b + c) / 3.0;
    front[f] = n.dot(vt.eye - centroid) > 0.0;
    lambert[f] = std::max(0.0, n.dot(-vt.forward));
  }
  const FrameBuffers fb = rasterize(project_faces(mesh, vt, resolution, &front), resolution);

  RgbImage out(resolution, resolution, 3, 255);
  for (std::size_t i = 0; i < fb.face.size(); ++i) {
    const int f = fb.face[i];
    if (f < 0) continue;
    const Rgb& albedo = part_colors[mesh.face_material_part[f]];
    for (int c = 0; c < 3; ++c)
      out.data[i * 3 + c] = static_cast<std::uint8_t>(std::lround(albedo[c] * lambert[f]));
  }
  return out;
}

CropWindow square_crop_window(const Mask& mask) {
  int min_x = mask.width, min_y = mask.height, max_x = -1, max_y = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
  if (max_x < 0) throw Error("cannot crop to an empty mask");
  const int bw = max_x - min_x + 1, bh = max_y - min_y + 1;
  CropWindow w;
  w.side = std::max(bw, bh);
  auto place = [&](int lo, int extent, int image_extent) {
    int start = lo - (w.side - extent) / 2;
    if (w.side <= image_extent) start = std::clamp(start, 0, image_extent - w.side);
    return start;
  };
  w.x0 = place(min_x, bw, mask.width);
  w.y0 = place(min_y, bh, mask.height);
  return w;
}

namespace {

template <typename Set>
void extract_window(const CropWindow& w, int width, int height, Set set) {
  for (int y = 0; y < w.side; ++y)
    for (int x = 0; x < w.side; ++x) {
      const int sx = w.x0 + x, sy = w.y0 + y;
      set(x, y, sx >= 0 && sy >= 0 && sx < width && sy < height, sx, sy);
    }
}

}  // namespace

LabelMap crop(const LabelMap& labels, const CropWindow& w, int out_size) {
  LabelMap square(w.side, w.side, labels.label_count, labels.kind);
  extract_window(w, labels.width, labels.height, [&](int x, int y, bool inside, int sx, int sy) {
    square.at(x, y) = inside ? labels.at(sx, sy) : LabelMap::kBackground;
  });
  return resize_nearest(square, out_size, out_size);
}

Mask crop(const Mask& mask, const CropWindow& w, int out_size) {
  Mask square(w.side, w.side);
  extract_window(w, mask.width, mask.height, [&](int x, int y, bool inside, int sx, int sy) {
    square.set(x, y, inside && mask.at(sx, sy));
  });
  return resize_nearest(square, out_size, out_size);
}

RgbImage crop(const RgbImage& image, const CropWindow& w, int out_size, Rgb fill) {
  RgbImage square(w.side, w.side, 3);
  extract_window(w, image.width, image.height, [&](int x, int y, bool inside, int sx, int sy) {
    for (int c = 0; c < 3; ++c) square.at(x, y, c) = inside ? image.at(sx, sy, c) : fill[c];
  });
  return resize(square, out_size, out_size);
}

LabelMap square_crop_to_mask(const LabelMap& labels, const Mask& mask, int out_size) {
  return crop(labels, square_crop_window(mask), out_size);
}

Mask square_crop_to_mask(const Mask& image, const Mask& mask, int out_size) {
  return crop(image, square_crop_window(mask), out_size);
}

RgbImage square_crop_to_mask(const RgbImage& image, const Mask& mask, int out_size, Rgb fill) {
  return crop(image, square_crop_window(mask), out_size, fill);
}

}  // namespace photoshape::raster
