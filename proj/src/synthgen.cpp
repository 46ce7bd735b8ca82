#include "photoshape/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "photoshape/error.hpp"
#include "photoshape/raster.hpp"
#include "photoshape/rng.hpp"

namespace photoshape::synthgen {

namespace {

std::vector<std::vector<std::size_t>> substance_pools(const material::MaterialLibrary& library) {
  std::vector<std::vector<std::size_t>> pools(substance::kSubstanceCount);
  for (std::size_t i = 0; i < library.size(); ++i)
    pools[static_cast<std::size_t>(library.records[i].substance)].push_back(i);
  return pools;
}

}  // namespace

RenderConfig sample_render_config(const SampleRequest& request, const material::MaterialLibrary& library,
                                  std::uint64_t seed, const Ranges& ranges) {
  if (request.part_substances.size() != request.part_names.size())
    throw Error("sample request: one substance per material part is required");
  const auto pools = substance_pools(library);
  for (std::size_t p = 0; p < request.part_substances.size(); ++p) {
    const auto q = request.part_substances[p];
    if (pools[static_cast<std::size_t>(q)].empty())
      throw Error("part '" + request.part_names[p] + "' has substance '" + std::string(substance::name(q)) +
                  "' but the library has no material of that substance");
  }

  Rng rng(seed);
  RenderConfig c;
  c.shape_id = request.shape_id;
  c.exemplar_id = request.exemplar_id;
  c.rng_seed = seed;
  const auto draw = camera::draw_pose_prior(request.pose_prior, rng);
  c.prior_index = draw.base_index;
  c.dtheta = draw.dtheta;
  c.dphi = draw.dphi;
  c.fov_x = rng.uniform(ranges.fov_min, ranges.fov_max);
  c.r = rng.uniform(ranges.r_min, ranges.r_max);
  c.pose = draw.pose;
  c.pose.fov_x = c.fov_x;
  c.pose.r = c.r;
  c.env_map_id = request.env_maps.empty() ? "default" : request.env_maps[rng.index(request.env_maps.size())];
  c.env_scale = rng.uniform(ranges.env_min, ranges.env_max);
  for (std::size_t p = 0; p < request.part_substances.size(); ++p) {
    const auto& pool = pools[static_cast<std::size_t>(request.part_substances[p])];
    PartAssignment a;
    a.part_id = static_cast<int>(p);
    a.part_name = request.part_names[p];
    a.substance = request.part_substances[p];
    a.material_id = library.records[pool[rng.index(pool.size())]].id;
    a.uv.delta_log2_scale = rng.uniform(ranges.uv_log2_scale_min, ranges.uv_log2_scale_max);
    a.uv.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
    a.uv.offset_x = rng.uniform(0.0, 1.0);
    a.uv.offset_y = rng.uniform(0.0, 1.0);
    c.parts.push_back(std::move(a));
  }
  return c;
}

std::vector<RenderConfig> sample_batch(const SampleRequest& request, const material::MaterialLibrary& library,
                                       std::size_t count, std::uint64_t master_seed, const Ranges& ranges) {
  std::vector<RenderConfig> out(count);
  // Validate once so errors surface outside the parallel region.
  if (count > 0) out[0] = sample_render_config(request, library, derive_seed(master_seed, 0), ranges);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 1; i < static_cast<std::ptrdiff_t>(count); ++i)
    out[static_cast<std::size_t>(i)] =
        sample_render_config(request, library, derive_seed(master_seed, static_cast<std::uint64_t>(i)), ranges);
  return out;
}

nlohmann::json to_json(const RenderConfig& c) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : c.parts)
    parts.push_back({{"part_id", p.part_id},
                     {"part_name", p.part_name},
                     {"substance", std::string(substance::name(p.substance))},
                     {"material_id", p.material_id},
                     {"uv",
                      {{"delta_log2_scale", p.uv.delta_log2_scale},
                       {"rotation", p.uv.rotation},
                       {"offset", {p.uv.offset_x, p.uv.offset_y}}}}});
  return {{"format", "photoshape.render_config/1"},
          {"shape_id", c.shape_id},
          {"exemplar_id", c.exemplar_id},
          {"pose", camera::to_json(c.pose)},
          {"prior_index", c.prior_index},
          {"jitter", {{"dtheta", c.dtheta}, {"dphi", c.dphi}}},
          {"fov_x", c.fov_x},
          {"r", c.r},
          {"environment", {{"id", c.env_map_id}, {"scale", c.env_scale}}},
          {"parts", parts},
          {"rng_seed", c.rng_seed}};
}

RenderConfig config_from_json(const nlohmann::json& j) {
  RenderConfig c;
  c.shape_id = j.at("shape_id").get<std::string>();
  c.exemplar_id = j.at("exemplar_id").get<std::string>();
  c.pose = camera::pose_from_json(j.at("pose"));
  c.prior_index = j.at("prior_index").get<std::size_t>();
  c.dtheta = j.at("jitter").at("dtheta").get<double>();
  c.dphi = j.at("jitter").at("dphi").get<double>();
  c.fov_x = j.at("fov_x").get<double>();
  c.r = j.at("r").get<double>();
  c.env_map_id = j.at("environment").at("id").get<std::string>();
  c.env_scale = j.at("environment").at("scale").get<double>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  for (const auto& p : j.at("parts")) {
    PartAssignment a;
    a.part_id = p.at("part_id").get<int>();
    a.part_name = p.at("part_name").get<std::string>();
    const auto q = substance::parse_substance(p.at("substance").get<std::string>());
    if (!q) throw Error("render config: unknown substance in part '" + a.part_name + "'");
    a.substance = *q;
    a.material_id = p.at("material_id").get<std::string>();
    a.uv.delta_log2_scale = p.at("uv").at("delta_log2_scale").get<double>();
    a.uv.rotation = p.at("uv").at("rotation").get<double>();
    a.uv.offset_x = p.at("uv").at("offset").at(0).get<double>();
    a.uv.offset_y = p.at("uv").at("offset").at(1).get<double>();
    c.parts.push_back(std::move(a));
  }
  return c;
}

Scene emit_scene(const RenderConfig& config, const shapelib::SegmentedMesh& input, const material::MaterialLibrary& library,
                 int label_resolution) {
  const shapelib::SegmentedMesh mesh = input.has_uv() ? input : shapelib::generate_planar_uvs(input);
  if (static_cast<int>(config.parts.size()) != mesh.material_part_count())
    throw Error("render config has " + std::to_string(config.parts.size()) + " parts, mesh has " +
                std::to_string(mesh.material_part_count()));

  std::vector<int> material_index(config.parts.size());
  nlohmann::json parts = nlohmann::json::array();
  for (std::size_t p = 0; p < config.parts.size(); ++p) {
    const auto& a = config.parts[p];
    const int m = library.index_of(a.material_id);
    if (m < 0) throw Error("unknown material '" + a.material_id + "' in part '" + a.part_name + "'");
    const auto& rec = library.records[static_cast<std::size_t>(m)];
    if (rec.substance != a.substance)
      throw Error("material '" + rec.id + "' does not match the substance of part '" + a.part_name + "'");
    material_index[p] = m;

    const double density = shapelib::uv_density(mesh, static_cast<int>(p)).density;
    const double density_scale = 1.0 / std::sqrt(density);
    const double log_scale = std::log(rec.scale);
    const double k = density_scale * log_scale * std::exp2(a.uv.delta_log2_scale);
    const double cs = std::cos(a.uv.rotation), sn = std::sin(a.uv.rotation);
    const nlohmann::json matrix = {{k * cs, -k * sn, a.uv.offset_x}, {k * sn, k * cs, a.uv.offset_y}, {0.0, 0.0, 1.0}};
    parts.push_back({{"part_id", a.part_id},
                     {"name", a.part_name},
                     {"substance", std::string(substance::name(a.substance))},
                     {"material", {{"id", rec.id}, {"name", rec.name}, {"brdf_meta", rec.brdf_meta}}},
                     {"uv_transform",
                      {{"order", {"scale", "rotate", "translate"}},
                       {"density_scale", density_scale},
                       {"material_log_scale", log_scale},
                       {"delta_log2_scale", a.uv.delta_log2_scale},
                       {"scale", k},
                       {"rotation", a.uv.rotation},
                       {"translation", {a.uv.offset_x, a.uv.offset_y}},
                       {"matrix", matrix}}}});
  }

  const auto render = raster::render_part_ids(mesh, config.pose, label_resolution);
  Scene s;
  s.material_labels = LabelMap(label_resolution, label_resolution, static_cast<int>(library.size()), LabelKind::material);
  s.substance_labels = LabelMap(label_resolution, label_resolution, substance::kSubstanceCount, LabelKind::substance);
  std::set<std::string> visible;
  for (std::size_t i = 0; i < render.part_ids.labels.size(); ++i) {
    const int part = render.part_ids.labels[i];
    if (part == 0) continue;
    const auto p = static_cast<std::size_t>(part - 1);
    s.material_labels.labels[i] = static_cast<std::uint16_t>(material_index[p] + 1);
    s.substance_labels.labels[i] = static_cast<std::uint16_t>(static_cast<int>(config.parts[p].substance) + 1);
    visible.insert(config.parts[p].material_id);
  }

  const Eigen::Vector3d target = shapelib::bounding_box(mesh).center();
  const Eigen::Vector3d eye = camera::camera_position(config.pose, target);
  s.description = {{"format", "photoshape.scene/1"},
                   {"shape_id", config.shape_id},
                   {"exemplar_id", config.exemplar_id},
                   {"rng_seed", config.rng_seed},
                   {"camera",
                    {{"theta", config.pose.theta},
                     {"phi", config.pose.phi},
                     {"r", config.pose.r},
                     {"fov_x", config.pose.fov_x},
                     {"eye", {eye.x(), eye.y(), eye.z()}},
                     {"target", {target.x(), target.y(), target.z()}},
                     {"up", {0.0, 1.0, 0.0}}}},
                   {"environment", {{"id", config.env_map_id}, {"scale", config.env_scale}}},
                   {"parts", parts},
                   {"ground_truth",
                    {{"resolution", label_resolution},
                     {"material_labels", "library index + 1, 0 = background"},
                     {"substance_labels", "leather=1 fabric=2 metal=3 wood=4 plastic=5, 0 = background"},
                     {"visible_materials", std::vector<std::string>(visible.begin(), visible.end())}}}};
  return s;
}

std::string scene_bytes(const Scene& scene) { return scene.description.dump(2) + "\n"; }

SplitManifest split_train_validation(std::span<const std::string> shapes, std::span<const std::string> env_maps,
                                     double holdout_fraction, std::uint64_t seed) {
  if (shapes.empty() || env_maps.empty()) throw Error("split: shape and environment lists must be nonempty");
  if (holdout_fraction < 0.0 || holdout_fraction > 1.0) throw Error("split: holdout fraction must lie in [0, 1]");
  Rng rng(seed);
  auto split = [&](std::span<const std::string> items, std::vector<std::string>& train, std::vector<std::string>& val) {
    std::vector<std::string> v(items.begin(), items.end());
    std::sort(v.begin(), v.end());
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(v.size())));
    val.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.assign(v.begin() + static_cast<std::ptrdiff_t>(n_val), v.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
  };
  SplitManifest m;
  split(shapes, m.train_shapes, m.validation_shapes);
  split(env_maps, m.train_env_maps, m.validation_env_maps);
  return m;
}

nlohmann::json to_json(const SplitManifest& s) {
  return {{"format", "photoshape.split/1"},
          {"train", {{"shapes", s.train_shapes}, {"env_maps", s.train_env_maps}}},
          {"validation", {{"shapes", s.validation_shapes}, {"env_maps", s.validation_env_maps}}}};
}

}  // namespace photoshape::synthgen
