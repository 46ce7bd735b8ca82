#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace photoshape {

// Interleaved image. RGB photos and renders use Image<std::uint8_t> with 3
// channels; intermediate float planes use Image<float>.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t offset(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[offset(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[offset(x, y, c)]; }

  bool operator==(const Image&) const = default;
};

using RgbImage = Image<std::uint8_t>;
using FloatImage = Image<float>;

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // 0 or 1

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { values[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

enum class LabelKind { material_part, substance, material };

// Per-pixel labels; 0 is background and foreground labels are 1..label_count.
struct LabelMap {
  static constexpr std::uint16_t kBackground = 0;

  int width = 0;
  int height = 0;
  int label_count = 0;
  LabelKind kind = LabelKind::material_part;
  std::vector<std::uint16_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h, int count, LabelKind k = LabelKind::material_part)
      : width(w), height(h), label_count(count), kind(k),
        labels(static_cast<std::size_t>(w) * h, kBackground) {}

  std::uint16_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

// Pixel-wise helpers shared by several modules.
FloatImage to_gray(const RgbImage& image);
Image<float> to_float(const RgbImage& image);
RgbImage to_rgb8(const Image<float>& image);

// Area-weighted resampling for downscales, bilinear for upscales.
Image<float> resize(const Image<float>& image, int width, int height);
RgbImage resize(const RgbImage& image, int width, int height);
Mask resize_nearest(const Mask& mask, int width, int height);
LabelMap resize_nearest(const LabelMap& map, int width, int height);

// Separable Gaussian blur with clamped borders; sigma in pixels.
Image<float> gaussian_blur(const Image<float>& image, double sigma);

Mask mask_from_labels(const LabelMap& map);

// Connected components of the foreground (8-connectivity). Returns per-pixel
// component ids (-1 for background) and component sizes.
struct Components {
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
};
Components connected_components(const Mask& mask, bool eight_connected = true);

}  // namespace photoshape
