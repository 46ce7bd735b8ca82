#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "photoshape/camera.hpp"
#include "photoshape/image.hpp"

namespace photoshape::hogindex {

// 13 x 13 cells of 8 px over a 104 x 104 working image with 8 unsigned
// orientation bins: 1352 values.
struct HogConfig {
  int cells_x = 13;
  int cells_y = 13;
  int cell_size = 8;
  int orientation_bins = 8;
  bool signed_gradients = false;
  double blur_sigma = 0.1;  // pixels, applied at the working resolution
  double clip = 0.2;        // L2-hys clipping threshold

  int working_width() const { return cells_x * cell_size; }
  int working_height() const { return cells_y * cell_size; }
  std::size_t dimensions() const {
    return static_cast<std::size_t>(cells_x) * cells_y * orientation_bins;
  }
  bool operator==(const HogConfig&) const = default;
};

struct HogDescriptor {
  HogConfig config;
  std::vector<float> values;  // cell-major: (cy, cx, bin)
};

// Resize to working size -> blur -> centred gradients -> per-cell orientation
// histograms with bilinear spatial/orientation voting -> 2x2-block L2-hys
// normalisation averaged back onto cells.
HogDescriptor hog(const RgbImage& image, const HogConfig& config = {});
HogDescriptor hog(const FloatImage& gray, const HogConfig& config = {});

double l2_distance(std::span<const float> a, std::span<const float> b);

// A rendering of one shape from one grid pose.
struct Rendering {
  std::string shape_id;
  int pose_index = 0;
  camera::SphericalPose pose;
  std::vector<float> descriptor;
};

struct ExemplarQuery {
  std::string id;
  std::vector<float> descriptor;
};

struct CoarseMatch {
  std::string shape_id;
  int pose_index = 0;
  camera::SphericalPose pose;
  std::string exemplar_id;
  double distance = 0.0;
};

// argmin over renderings of the L2 descriptor distance; ties go to the lower
// (shape_id, pose_index).
CoarseMatch coarse_match(std::span<const float> query, std::span<const Rendering> renderings);

struct IndexHit {
  std::string shape_id;
  int pose_index = 0;
  camera::SphericalPose pose;
  double distance = 0.0;
};

struct ReverseIndex {
  int k = 1;
  HogConfig config;
  std::vector<std::string> exemplar_ids;
  std::vector<std::vector<IndexHit>> hits;  // per exemplar, ascending distance
};

// Exact top-k per exemplar. The parallel build distributes exemplars over
// OpenMP threads; the serial build is the reference it is tested against.
ReverseIndex build_reverse_index(std::span<const ExemplarQuery> exemplars, std::span<const Rendering> renderings,
                                 int k, const HogConfig& config = {});
ReverseIndex build_reverse_index_serial(std::span<const ExemplarQuery> exemplars,
                                        std::span<const Rendering> renderings, int k,
                                        const HogConfig& config = {});

struct InvertedHit {
  std::string exemplar_id;
  int pose_index = 0;
  camera::SphericalPose pose;
  double distance = 0.0;
};

// shape id -> exemplars whose top-k contained the shape, closest pose only,
// ascending by distance (ties by exemplar id).
using InvertedIndex = std::map<std::string, std::vector<InvertedHit>>;
InvertedIndex invert_index(const ReverseIndex& index);

// Binary formats (little-endian). Index: "PSIX" v1; rendering bank: "PSDB" v1.
void write_index(const std::filesystem::path& path, const ReverseIndex& index);
ReverseIndex read_index(const std::filesystem::path& path);
void write_bank(const std::filesystem::path& path, const HogConfig& config, std::span<const Rendering> renderings);
std::vector<Rendering> read_bank(const std::filesystem::path& path, HogConfig* config = nullptr);

nlohmann::json to_json(const ReverseIndex& index);
nlohmann::json to_json(const InvertedIndex& inverted);
InvertedIndex inverted_from_json(const nlohmann::json& j);

}  // namespace photoshape::hogindex
