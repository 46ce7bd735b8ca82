#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "photoshape/image.hpp"

namespace photoshape::substance {

enum class Substance : int { leather = 0, fabric = 1, metal = 2, wood = 3, plastic = 4 };
inline constexpr int kSubstanceCount = 5;
inline constexpr std::array<Substance, kSubstanceCount> kAllSubstances{
    Substance::leather, Substance::fabric, Substance::metal, Substance::wood, Substance::plastic};

std::string_view name(Substance s);
// Canonical names only.
std::optional<Substance> parse_substance(std::string_view text);

// Canonical substances plus aliases folded into them.
class SubstanceSet {
 public:
  static SubstanceSet with_default_aliases();
  void add_alias(const std::string& alias, Substance target);
  std::optional<Substance> resolve(std::string_view label) const;
  const std::map<std::string, Substance, std::less<>>& aliases() const { return aliases_; }

 private:
  std::map<std::string, Substance, std::less<>> aliases_;
};

// Per-pixel distribution over arbitrary named labels (classifier output).
struct RawDistribution {
  int width = 0;
  int height = 0;
  std::vector<std::string> labels;
  std::vector<double> probs;  // (pixel, label)
  Mask foreground;
};

// Per-pixel distribution over the five substances. Pixels outside foreground
// are background; flagged pixels had no canonical mass and hold a uniform row.
struct SubstanceMap {
  int width = 0;
  int height = 0;
  std::vector<double> probs;  // (pixel, substance)
  Mask foreground;
  Mask flagged;

  SubstanceMap() = default;
  SubstanceMap(int w, int h);
  const double* row(std::size_t pixel) const { return &probs[pixel * kSubstanceCount]; }
  double* row(std::size_t pixel) { return &probs[pixel * kSubstanceCount]; }
  bool operator==(const SubstanceMap&) const = default;
};

// Folds alias mass into canonical targets, zeroes other labels and
// renormalises. Rows without canonical mass become uniform and are flagged.
// Foreground rows must sum to 1 within 1e-4.
SubstanceMap remap_substances(const RawDistribution& raw, const SubstanceSet& set = SubstanceSet::with_default_aliases());

// Highest-probability substance; ties go to the lexicographically smaller name.
Substance argmax(const double* row);

struct PartSubstanceLabeling {
  std::vector<std::optional<Substance>> labels;  // per material part; nullopt = unknown
  std::vector<std::array<std::size_t, kSubstanceCount>> counts;
  std::vector<std::array<double, kSubstanceCount>> mass;
  std::vector<int> unknown_parts;
};

// Majority of per-pixel argmax substances over each part's visible
// foreground, unflagged pixels. Ties: larger summed probability, then name.
PartSubstanceLabeling aggregate_part_substance(const LabelMap& parts, const SubstanceMap& substances);

// Binary map file ("PSSM") with a JSON sidecar at <path>.json naming the channels.
void write_raw(const std::filesystem::path& path, const RawDistribution& raw);
RawDistribution read_raw(const std::filesystem::path& path);
void write_substance_map(const std::filesystem::path& path, const SubstanceMap& map);
// Reads either a canonical map or a raw one (remapped with the default set).
SubstanceMap read_substance_map(const std::filesystem::path& path);

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string id() const = 0;
  // Whether classify may run concurrently on one instance.
  virtual bool reentrant() const = 0;
  // Throws PluginError naming exemplar_id on failure.
  virtual SubstanceMap classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) = 0;
};

// Precomputed maps, from memory or from <dir>/<exemplar_id>.pssm.
class FixtureClassifier : public Classifier {
 public:
  explicit FixtureClassifier(std::filesystem::path dir);
  explicit FixtureClassifier(std::map<std::string, SubstanceMap> maps);
  std::string id() const override { return "fixture"; }
  bool reentrant() const override { return true; }
  SubstanceMap classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) override;

 private:
  std::filesystem::path dir_;
  std::map<std::string, SubstanceMap> maps_;
};

// Hue/saturation/value heuristic for demos.
class ColorPriorClassifier : public Classifier {
 public:
  std::string id() const override { return "color-prior"; }
  bool reentrant() const override { return true; }
  SubstanceMap classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) override;
  static std::array<double, kSubstanceCount> pixel_distribution(std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// External program invoked as: <argv...> <image.png> <out.pssm>. Exit code 0
// means success; the output may use any channel names (remapped on read).
class SubprocessClassifier : public Classifier {
 public:
  SubprocessClassifier(std::vector<std::string> argv, std::filesystem::path work_dir, bool reentrant = false);
  std::string id() const override;
  bool reentrant() const override { return reentrant_; }
  SubstanceMap classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) override;

 private:
  std::vector<std::string> argv_;
  std::filesystem::path work_dir_;
  bool reentrant_;
};

// "color-prior", "fixture:<dir>" or "subprocess:<command line>".
std::unique_ptr<Classifier> make_classifier(const std::string& spec, const std::filesystem::path& work_dir);

}  // namespace photoshape::substance
