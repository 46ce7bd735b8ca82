#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "photoshape/camera.hpp"
#include "photoshape/image.hpp"
#include "photoshape/shapelib.hpp"

namespace photoshape::raster {

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kWhite{255, 255, 255};

struct RenderOutput {
  LabelMap part_ids;          // material part id + 1, 0 = background
  std::vector<float> depth;   // view-space depth, +inf on background
};

// Z-buffered rasterization of material-part ids, square resolution x resolution.
// The camera targets the mesh AABB centre. Back faces are kept; at equal depth
// the lower face index wins.
RenderOutput render_part_ids(const shapelib::SegmentedMesh& mesh, const camera::SphericalPose& pose,
                             int resolution);

Mask silhouette(const RenderOutput& render);

// Flat-shaded preview: part albedo times max(0, n.l) with a headlight along the
// view direction, back faces culled, white background.
RgbImage render_flat_color(const shapelib::SegmentedMesh& mesh, const camera::SphericalPose& pose, int resolution,
                           std::span<const Rgb> part_colors);

// Square window around the mask's tight bounding box. The side is the longer
// bbox side; the window is centred on the box and shifted to stay inside the
// image when it fits, otherwise it extends past the border (padded on crop).
struct CropWindow {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
};
CropWindow square_crop_window(const Mask& mask);

// Crops to the window and resamples to out_size x out_size. Label maps and
// masks use nearest neighbour; images use bilinear (area averaging when
// shrinking). Out-of-image samples take the background value.
LabelMap crop(const LabelMap& labels, const CropWindow& window, int out_size);
Mask crop(const Mask& mask, const CropWindow& window, int out_size);
RgbImage crop(const RgbImage& image, const CropWindow& window, int out_size, Rgb fill = kWhite);

LabelMap square_crop_to_mask(const LabelMap& labels, const Mask& mask, int out_size);
Mask square_crop_to_mask(const Mask& image, const Mask& mask, int out_size);
RgbImage square_crop_to_mask(const RgbImage& image, const Mask& mask, int out_size, Rgb fill = kWhite);

}  // namespace photoshape::raster
