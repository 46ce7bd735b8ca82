#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "photoshape/camera.hpp"
#include "photoshape/densecrf.hpp"
#include "photoshape/flowrefine.hpp"
#include "photoshape/hogindex.hpp"
#include "photoshape/material.hpp"
#include "photoshape/shapelib.hpp"

namespace photoshape::pipeline {

namespace fs = std::filesystem;

// "max": discard pairs with distance > cutoff. "min": the literal reading,
// discard pairs with distance < cutoff.
enum class CutoffMode { max, min };

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string grid_preset = "paper456";
  int render_resolution = 256;
  int exemplar_size = 256;
  int white_threshold = 247;
  bool dedup = true;
  double dedup_threshold = 0.1;
  std::string hog_input = "silhouette";  // or "shaded"
  hogindex::HogConfig hog;
  int k = 5;
  int top_n = 12;
  double distance_cutoff = 8.0;
  CutoffMode cutoff_mode = CutoffMode::max;
  int align_resolution = 64;
  bool coordinate_encoding = true;
  // "render_to_exemplar": flow on the render, labels backward-warped with it.
  // "exemplar_to_render": flow on the exemplar, labels pulled through its negation.
  std::string flow_direction = "render_to_exemplar";
  flowrefine::FlowParams flow;
  densecrf::CrfParams crf;
  std::string substance_classifier = "color-prior";
  std::string material_classifier = "histogram";  // or "median-color"
  bool substance_weighting = true;
  int min_part_pixels = 16;
  int alternatives = 5;
  int preview_resolution = 256;
};

nlohmann::json to_json(const PipelineConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const fs::path& path);

std::uint64_t fnv1a64(std::string_view bytes);
// FNV-1a of the canonical (sorted-key, compact) JSON form, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);
std::string library_hash(const material::MaterialLibrary& library);

// Weld (1e-6) -> unit cube -> planar UVs when missing -> UV density 1.
shapelib::SegmentedMesh prepare_mesh(const shapelib::SegmentedMesh& raw);
shapelib::SegmentedMesh load_mesh(const fs::path& path);  // .obj or mesh JSON

// Black-on-white silhouette image used as HOG input in "silhouette" mode.
RgbImage silhouette_image(const Mask& mask);

struct Candidate {
  std::string shape_id;
  std::string exemplar_id;
  int pose_index = 0;
  camera::SphericalPose pose;
  double hog_distance = 0.0;
  std::string key() const;  // "<shape>__<exemplar>"
};

struct Selection {
  std::vector<Candidate> candidates;          // shape order, then ascending distance
  std::vector<std::string> empty_shapes;      // shapes left with no candidate
};

// Per shape: top_n exemplars by ascending distance (stable), then the cutoff.
Selection select_candidates(const hogindex::InvertedIndex& inverted, int top_n, double cutoff, CutoffMode mode);

// Stages. Each reads its inputs from and writes its artifacts to run_dir.
//   ingest/   meshes, standardized exemplars, manifest.json
//   index/    bank.psdb, reverse.psix, reverse.json, inverted.json, candidates.json
//   align/    <key>.coarse.png, <key>.parts.png, <key>.flo, status.json
//   assign/   <exemplar>.pssm, status.json; descriptors/, previews/
nlohmann::json ingest(const fs::path& shapes_dir, const fs::path& exemplars_dir, const fs::path& run_dir,
                      const PipelineConfig& config);
nlohmann::json build_index(const fs::path& run_dir, const PipelineConfig& config);
nlohmann::json align(const fs::path& run_dir, const PipelineConfig& config);
nlohmann::json assign(const fs::path& run_dir, const material::MaterialLibrary& library, const PipelineConfig& config);

// Reduces the stage status files into report.json.
nlohmann::json write_report(const fs::path& run_dir, const PipelineConfig& config);

// All stages plus config.lock.json, run_meta.json (timestamps) and report.json.
// Per-candidate failures are recorded; systemic problems throw.
nlohmann::json run_pipeline(const fs::path& shapes_dir, const fs::path& exemplars_dir,
                            const material::MaterialLibrary& library, const fs::path& run_dir,
                            const PipelineConfig& config);

// Truth manifest "photoshape.truth/1":
//   parts: [{shape_id, exemplar_id, part_id, material_id}]
//   poses: [{exemplar_id, shape_id, pose_index}]            (optional)
// Descriptor predictions are matched by (shape, exemplar, part).
nlohmann::json evaluate(const fs::path& run_dir, const nlohmann::json& truth, const material::MaterialLibrary& library);

// Scores stored in descriptors use null for -inf.
std::vector<double> scores_from_json(const nlohmann::json& j);
nlohmann::json scores_to_json(const std::vector<double>& scores);

struct ClosedLoopOptions {
  int shapes = 10;
  int swatches = 10;
  std::uint64_t seed = 7;
  std::string grid_preset = "paper456";
  int render_resolution = 256;
  int align_resolution = 64;
  int min_part_pixels = 16;
};

// Writes shapes/*.obj, exemplars/*.png (flat renders at a random grid pose,
// one per shape), library.json (hue swatches), substance/*.pssm fixture maps,
// truth.json and config.json into dir.
void make_closed_loop_fixture(const fs::path& dir, const ClosedLoopOptions& options = {});

}  // namespace photoshape::pipeline
