#include "photoshape/exemplar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "photoshape/error.hpp"
#include "photoshape/hogindex.hpp"
#include "photoshape/raster.hpp"

namespace photoshape::exemplar {

Mask foreground_mask(const RgbImage& image, int white_threshold, double min_component_fraction) {
  if (image.channels != 3) throw Error("foreground_mask expects an RGB image");
  Mask raw(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int m = std::min({image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)});
      raw.set(x, y, m < white_threshold);
    }

  const Components comps = connected_components(raw, true);
  if (comps.sizes.empty()) throw Error("no foreground");
  const auto largest = static_cast<int>(std::max_element(comps.sizes.begin(), comps.sizes.end()) - comps.sizes.begin());
  const double min_size = min_component_fraction * static_cast<double>(image.pixel_count());

  Mask out(image.width, image.height);
  for (std::size_t i = 0; i < comps.ids.size(); ++i) {
    const int c = comps.ids[i];
    if (c < 0) continue;
    if (c == largest || static_cast<double>(comps.sizes[static_cast<std::size_t>(c)]) >= min_size)
      out.values[i] = 1;
  }
  return out;
}

Exemplar standardize(const RgbImage& image, const Mask& mask, int out_size, std::string id, std::string source_uri) {
  if (out_size < 1) throw Error("standardize: out_size must be positive");
  if (mask.width != image.width || mask.height != image.height) throw Error("standardize: mask size mismatch");
  const raster::CropWindow window = raster::square_crop_window(mask);
  Exemplar e;
  e.id = std::move(id);
  e.source_uri = std::move(source_uri);
  e.image = raster::crop(image, window, out_size);
  e.mask = raster::crop(mask, window, out_size);
  if (e.mask.count() == 0) throw Error("standardize: mask vanished after resampling");
  return e;
}

std::vector<float> dedup_descriptor(const RgbImage& image) {
  std::vector<float> d = hogindex::hog(resize(image, 256, 256)).values;
  double ss = 0.0;
  for (float v : d) ss += static_cast<double>(v) * v;
  if (ss > 0.0) {
    const double inv = 1.0 / std::sqrt(ss);
    for (float& v : d) v = static_cast<float>(v * inv);
  }
  return d;
}

DedupResult dedup(const std::vector<std::vector<float>>& descriptors, double threshold) {
  DedupResult result;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j : result.kept) {
      const double d = hogindex::l2_distance(descriptors[i], descriptors[j]);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (best < threshold)
      result.removed.push_back({i, best_j, best});
    else
      result.kept.push_back(i);
  }
  return result;
}

nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& entries) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = {{"id", e.id}, {"source_uri", e.source_uri}};
    j["removed_by"] = e.removed_by ? nlohmann::json(*e.removed_by) : nlohmann::json(nullptr);
    items.push_back(std::move(j));
  }
  return {{"format", "photoshape.exemplars/1"}, {"exemplars", std::move(items)}};
}

std::vector<ManifestEntry> manifest_from_json(const nlohmann::json& j) {
  std::vector<ManifestEntry> out;
  for (const auto& item : j.at("exemplars")) {
    ManifestEntry e{item.at("id").get<std::string>(), item.at("source_uri").get<std::string>(), std::nullopt};
    if (item.contains("removed_by") && !item["removed_by"].is_null())
      e.removed_by = item["removed_by"].get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace photoshape::exemplar
