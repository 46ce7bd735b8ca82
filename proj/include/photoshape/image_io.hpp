#pragma once

#include <filesystem>
#include <vector>

#include "photoshape/image.hpp"

namespace photoshape::io {

// Reads PNG or JPEG (detected from the file signature) as 8-bit RGB. Alpha is
// composited over white, 16-bit samples are reduced to 8 bits.
RgbImage read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const RgbImage& image);
// Mask as 8-bit grayscale, foreground = 255.
void write_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

// Label maps as 16-bit grayscale; label values are stored verbatim.
void write_png(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels_png(const std::filesystem::path& path, int label_count,
                         LabelKind kind = LabelKind::material_part);

// Single-channel little-endian PFM ("Pf"), rows bottom-to-top per the format.
void write_pfm(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& values);
std::vector<float> read_pfm(const std::filesystem::path& path, int& width, int& height);

bool is_image_file(const std::filesystem::path& path);

}  // namespace photoshape::io
