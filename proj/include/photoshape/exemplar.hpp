#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "photoshape/image.hpp"

namespace photoshape::exemplar {

struct Exemplar {
  std::string id;
  RgbImage image;  // square
  Mask mask;       // same size as image, nonempty
  std::string source_uri;
};

inline constexpr int kDefaultWhiteThreshold = 247;
inline constexpr int kDefaultSize = 1000;
inline constexpr double kDefaultDedupThreshold = 0.1;

// A pixel is background when min(R,G,B) >= white_threshold. The largest
// 8-connected foreground component is kept together with any other component
// covering at least min_component_fraction of the image; smaller specks are
// dropped. Throws when nothing is left.
Mask foreground_mask(const RgbImage& image, int white_threshold = kDefaultWhiteThreshold,
                     double min_component_fraction = 0.001);

// Square crop around the mask followed by a resize to out_size.
Exemplar standardize(const RgbImage& image, const Mask& mask, int out_size = kDefaultSize, std::string id = {},
                     std::string source_uri = {});

// HOG of a 256 x 256 downscale, scaled to unit L2 norm (zero stays zero).
std::vector<float> dedup_descriptor(const RgbImage& image);

struct RemovedPair {
  std::size_t removed = 0;
  std::size_t kept_by = 0;
  double distance = 0.0;
};

struct DedupResult {
  std::vector<std::size_t> kept;
  std::vector<RemovedPair> removed;
};

// Greedy scan in input order: an item is removed when its distance to an
// already kept item is below the threshold (the closest such item is reported).
DedupResult dedup(const std::vector<std::vector<float>>& descriptors, double threshold = kDefaultDedupThreshold);

struct ManifestEntry {
  std::string id;
  std::string source_uri;
  std::optional<std::string> removed_by;
  bool operator==(const ManifestEntry&) const = default;
};

nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> manifest_from_json(const nlohmann::json& j);

}  // namespace photoshape::exemplar
