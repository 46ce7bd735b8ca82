#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "photoshape/camera.hpp"
#include "photoshape/image.hpp"
#include "photoshape/material.hpp"
#include "photoshape/shapelib.hpp"

namespace photoshape::synthgen {

using substance::Substance;

struct Ranges {
  double fov_min = 50.0, fov_max = 60.0;
  double r_min = 1.3, r_max = 1.75;
  double env_min = 0.9, env_max = 1.2;
  double uv_log2_scale_min = -1.0, uv_log2_scale_max = 0.5;
};

// Applied in the order scale -> rotate -> translate. delta_log2_scale is a
// log2 offset: the UV multiplier is 2^delta_log2_scale.
struct UvTransform {
  double delta_log2_scale = 0.0;
  double rotation = 0.0;  // radians, [0, 2pi]
  double offset_x = 0.0;  // [0, 1]
  double offset_y = 0.0;
  bool operator==(const UvTransform&) const = default;
};

struct PartAssignment {
  int part_id = 0;
  std::string part_name;
  Substance substance = Substance::fabric;
  std::string material_id;
  UvTransform uv;
  bool operator==(const PartAssignment&) const = default;
};

struct RenderConfig {
  std::string shape_id;
  std::string exemplar_id;
  camera::SphericalPose pose;  // jittered; fov_x and r hold the sampled values
  std::size_t prior_index = 0;
  double dtheta = 0.0;
  double dphi = 0.0;
  double fov_x = 0.0;
  double r = 0.0;
  std::string env_map_id;
  double env_scale = 1.0;
  std::vector<PartAssignment> parts;
  std::uint64_t rng_seed = 0;
  bool operator==(const RenderConfig&) const = default;
};

struct SampleRequest {
  std::string shape_id;
  std::string exemplar_id;
  std::vector<camera::SphericalPose> pose_prior;  // empirical poses for this pair
  std::vector<std::string> part_names;           // per material part
  std::vector<Substance> part_substances;        // per material part
  std::vector<std::string> env_maps;
};

// Every field is drawn from its interval in Ranges; each part receives a
// material drawn uniformly from the library records sharing its substance.
// Throws naming the part when that pool is empty.
RenderConfig sample_render_config(const SampleRequest& request, const material::MaterialLibrary& library,
                                  std::uint64_t seed, const Ranges& ranges = {});

// Samples count configs with per-sample seeds derive_seed(master_seed, i),
// in parallel; output is ordered by sample index.
std::vector<RenderConfig> sample_batch(const SampleRequest& request, const material::MaterialLibrary& library,
                                       std::size_t count, std::uint64_t master_seed, const Ranges& ranges = {});

nlohmann::json to_json(const RenderConfig& config);
RenderConfig config_from_json(const nlohmann::json& j);

struct Scene {
  nlohmann::json description;  // "photoshape.scene/1"
  LabelMap material_labels;    // library index + 1
  LabelMap substance_labels;   // substance enum + 1
};

// Camera, environment and per-part material/UV entries plus ground-truth
// label maps rendered at the sampled pose. The mesh must be normalized and
// carry UVs.
Scene emit_scene(const RenderConfig& config, const shapelib::SegmentedMesh& mesh,
                 const material::MaterialLibrary& library, int label_resolution = 256);

// Serialised scene bytes (stable key order, two-space indent, trailing newline).
std::string scene_bytes(const Scene& scene);

struct SplitManifest {
  std::vector<std::string> train_shapes;
  std::vector<std::string> validation_shapes;
  std::vector<std::string> train_env_maps;
  std::vector<std::string> validation_env_maps;
};

// Holds out round(fraction * n) shapes and env maps each (sorted output).
SplitManifest split_train_validation(std::span<const std::string> shapes, std::span<const std::string> env_maps,
                                     double holdout_fraction, std::uint64_t seed);
nlohmann::json to_json(const SplitManifest& split);

}  // namespace photoshape::synthgen
