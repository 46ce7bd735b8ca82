#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "photoshape/material.hpp"
#include "photoshape/raster.hpp"
#include "photoshape/shapelib.hpp"

// Procedural assets for tests, demos and the closed-loop run.
namespace photoshape::fixtures {

struct Box {
  shapelib::Vec3 min;
  shapelib::Vec3 max;
  int material_part = 0;
  std::string object_part;
};

// OBJ text with outward-wound quads, per-face UVs in world units and one
// usemtl per material part (names indexed by Box::material_part).
std::string boxes_to_obj(const std::vector<Box>& boxes, const std::vector<std::string>& material_names);

struct ProceduralShape {
  std::string id;
  std::string obj;
  std::vector<std::string> material_parts;
};

// Chair-like assembly of boxes with a one-sided armrest and side table so no
// view is mirror-symmetric. Dimensions vary with (index, seed).
ProceduralShape asymmetric_shape(int index, std::uint64_t seed);

// n fully saturated colours spaced evenly in hue.
std::vector<raster::Rgb> hue_swatches(int n);

// Signature of a flat-shaded sphere swatch under the headlight.
material::Signature swatch_signature(const raster::Rgb& color);

// Library of hue swatches, one record per colour; substances cycle through
// the five categories.
material::MaterialLibrary swatch_library(int n);

// 453 records (48 leather, 154 fabric, 105 wood, 86 metal, 60 plastic) with
// placeholder swatch signatures and deterministic colours.
material::MaterialLibrary reference_library();

}  // namespace photoshape::fixtures
