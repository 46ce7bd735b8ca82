#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "photoshape/image.hpp"
#include "photoshape/shapelib.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("photoshape_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Axis-aligned box as OBJ text, no UVs, faces wound outward.
inline std::string box_obj(double sx, double sy, double sz, const std::string& mtl = "m") {
  std::ostringstream o;
  for (int i = 0; i < 8; ++i) o << "v " << ((i & 1) ? sx : 0) << ' ' << ((i & 2) ? sy : 0) << ' ' << ((i & 4) ? sz : 0) << "\n";
  o << "usemtl " << mtl << "\n";
  // Outward quads: -x, +x, -y, +y, -z, +z
  o << "f 1 5 7 3\nf 2 4 8 6\nf 1 2 6 5\nf 3 7 8 4\nf 1 3 4 2\nf 5 6 8 7\n";
  return o.str();
}

inline photoshape::Mask disc_mask(int size, double cx, double cy, double r) {
  photoshape::Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.set(x, y, std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r);
  return m;
}

inline photoshape::RgbImage random_image(int w, int h, unsigned seed) {
  std::mt19937 g(seed);
  photoshape::RgbImage img(w, h, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(g() & 255);
  return img;
}

}  // namespace testing
