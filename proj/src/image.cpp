#include "photoshape/image.hpp"

#include <algorithm>
#include <cmath>

namespace photoshape {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

FloatImage to_gray(const RgbImage& image) {
  FloatImage out(image.width, image.height, 1);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    if (image.channels >= 3) {
      const auto* p = &image.data[i * image.channels];
      out.data[i] = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    } else {
      out.data[i] = static_cast<float>(image.data[i * image.channels] / 255.0);
    }
  }
  return out;
}

Image<float> to_float(const RgbImage& image) {
  Image<float> out(image.width, image.height, image.channels);
  std::transform(image.data.begin(), image.data.end(), out.data.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v); });
  return out;
}

RgbImage to_rgb8(const Image<float>& image) {
  RgbImage out(image.width, image.height, image.channels);
  std::transform(image.data.begin(), image.data.end(), out.data.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

namespace {

struct Tap {
  int index;
  double weight;
};

// Per-output-sample taps along one axis.
std::vector<std::vector<Tap>> axis_taps(int in_len, int out_len) {
  std::vector<std::vector<Tap>> taps(out_len);
  const double scale = static_cast<double>(in_len) / out_len;
  for (int i = 0; i < out_len; ++i) {
    if (scale > 1.0) {
      const double lo = i * scale;
      const double hi = (i + 1) * scale;
      for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)); ++s) {
        const double w = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
        if (w > 0.0 && s < in_len) taps[i].push_back({s, w / scale});
      }
    } else {
      const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, in_len - 1.0);
      const int s0 = static_cast<int>(std::floor(pos));
      const int s1 = std::min(s0 + 1, in_len - 1);
      const double t = pos - s0;
      taps[i].push_back({s0, 1.0 - t});
      if (t > 0.0) taps[i].push_back({s1, t});
    }
  }
  return taps;
}

}  // namespace

Image<float> resize(const Image<float>& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  const int c = image.channels;
  const auto tx = axis_taps(image.width, width);
  const auto ty = axis_taps(image.height, height);

  Image<float> tmp(width, image.height, c);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < width; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const Tap& t : tx[x]) acc += t.weight * image.at(t.index, y, ch);
        tmp.at(x, y, ch) = static_cast<float>(acc);
      }

  Image<float> out(width, height, c);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (const Tap& t : ty[y]) acc += t.weight * tmp.at(x, t.index, ch);
        out.at(x, y, ch) = static_cast<float>(acc);
      }
  return out;
}

RgbImage resize(const RgbImage& image, int width, int height) {
  if (width == image.width && height == image.height) return image;
  return to_rgb8(resize(to_float(image), width, height));
}

namespace {

int nearest_source(int i, int in_len, int out_len) {
  const int s = static_cast<int>(std::floor((i + 0.5) * in_len / static_cast<double>(out_len)));
  return std::clamp(s, 0, in_len - 1);
}

}  // namespace

Mask resize_nearest(const Mask& mask, int width, int height) {
  Mask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, mask.height, height);
    for (int x = 0; x < width; ++x) out.set(x, y, mask.at(nearest_source(x, mask.width, width), sy));
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& map, int width, int height) {
  LabelMap out(width, height, map.label_count, map.kind);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, map.height, height);
    for (int x = 0; x < width; ++x) out.at(x, y) = map.at(nearest_source(x, map.width, width), sy);
  }
  return out;
}

Image<float> gaussian_blur(const Image<float>& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = image.width, h = image.height, c = image.channels;
  Image<float> tmp(w, h, c), out(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * image.at(std::clamp(x + k, 0, w - 1), y, ch);
        tmp.at(x, y, ch) = static_cast<float>(acc);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[k + radius] * tmp.at(x, std::clamp(y + k, 0, h - 1), ch);
        out.at(x, y, ch) = static_cast<float>(acc);
      }
  return out;
}

Mask mask_from_labels(const LabelMap& map) {
  Mask m(map.width, map.height);
  for (std::size_t i = 0; i < map.labels.size(); ++i)
    m.values[i] = map.labels[i] != LabelMap::kBackground ? 1 : 0;
  return m;
}

Components connected_components(const Mask& mask, bool eight_connected) {
  Components cc;
  cc.ids.assign(mask.values.size(), -1);
  std::vector<int> stack;
  for (int y0 = 0; y0 < mask.height; ++y0) {
    for (int x0 = 0; x0 < mask.width; ++x0) {
      const std::size_t start = static_cast<std::size_t>(y0) * mask.width + x0;
      if (!mask.values[start] || cc.ids[start] >= 0) continue;
      const int id = static_cast<int>(cc.sizes.size());
      std::size_t size = 0;
      cc.ids[start] = id;
      stack.assign(1, static_cast<int>(start));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        ++size;
        const int px = p % mask.width, py = p / mask.width;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight_connected && dx != 0 && dy != 0)) continue;
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * mask.width + nx;
            if (mask.values[q] && cc.ids[q] < 0) {
              cc.ids[q] = id;
              stack.push_back(static_cast<int>(q));
            }
          }
      }
      cc.sizes.push_back(size);
    }
  }
  return cc;
}

}  // namespace photoshape
