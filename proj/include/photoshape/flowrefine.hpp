#pragma once

#include <filesystem>
#include <vector>

#include "photoshape/image.hpp"

namespace photoshape::flowrefine {

// red = 255 * mask, green = round(255 x / width), blue = round(255 y / height);
// background pixels are black. Throws on an empty mask.
RgbImage encode_coordinate_silhouette(const Mask& mask);

// Mask in the red channel only; used as the unencoded comparison input.
RgbImage plain_silhouette(const Mask& mask);

// Dense SIFT-like descriptors: 4 x 4 cells of cell_size pixels around every
// pixel, 8 signed orientation bins, L2-normalised, clamped at 0.2 and
// renormalised. Values are in [0, 1].
struct DescriptorImage {
  static constexpr int kDims = 128;
  int width = 0;
  int height = 0;
  std::vector<float> values;  // (y, x, dim)

  const float* at(int x, int y) const { return values.data() + (static_cast<std::size_t>(y) * width + x) * kDims; }
  float* at(int x, int y) { return values.data() + (static_cast<std::size_t>(y) * width + x) * kDims; }
};

DescriptorImage dense_descriptors(const RgbImage& image, int cell_size = 4);

// Energy parameters are in units of unit-norm descriptors.
struct FlowParams {
  int max_displacement = 44;   // pixels at full resolution
  int levels = 3;
  int coarse_window = 11;      // label radius at the coarsest level
  int refine_window = 2;       // label radius around the upsampled flow
  int iterations = 40;         // message passing sweeps per level
  double truncation = 40.0;    // t: data term cap
  double eta = 0.005;          // small-displacement weight
  double alpha = 1.0;          // smoothness slope
  double smooth_truncation = 40.0;  // d: smoothness cap
  int icm_sweeps = 20;
  int icm_window = 1;
};

struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<int> u;
  std::vector<int> v;
  double energy = 0.0;
  bool saturated = false;  // some displacement reached max_displacement

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), u(static_cast<std::size_t>(w) * h, 0), v(static_cast<std::size_t>(w) * h, 0) {}
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

// E(w) = sum_p min(|d1(p) - d2(p + w(p))|_1, t) + eta (|u| + |v|)
//      + sum_{p~q} min(alpha |u_p - u_q|, d) + min(alpha |v_p - v_q|, d).
// Targets outside dst compare against the zero (background) descriptor.
double flow_energy(const DescriptorImage& src, const DescriptorImage& dst, const FlowField& flow,
                   const FlowParams& params = {});

// Coarse-to-fine dual-layer (u, v) min-sum belief propagation on a
// checkerboard schedule. Every level also scans uniform offsets of its initial
// flow and refines a separate pure-translation track. The finest level
// compares these with the upsampled coarse flow and zero flow, each polished
// by ICM, and returns the one with the lowest energy.
FlowField compute_flow(const RgbImage& src, const RgbImage& dst, const FlowParams& params = {});
FlowField compute_flow(const DescriptorImage& src, const DescriptorImage& dst, const FlowParams& params = {});

// out(p) = labels(p - w(p)), background when out of bounds.
LabelMap warp_labels(const LabelMap& labels, const FlowField& flow);
Mask warp_mask(const Mask& mask, const FlowField& flow);

FlowField negated(const FlowField& flow);

// Middlebury .flo: "PIEH" tag, int32 width, height, then float (u, v) pairs.
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// Hue encodes direction, saturation the magnitude relative to max_magnitude.
RgbImage visualize_flow(const FlowField& flow, double max_magnitude = 0.0);

}  // namespace photoshape::flowrefine
