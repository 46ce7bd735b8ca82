#include "photoshape/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "photoshape/error.hpp"
#include "photoshape/exemplar.hpp"
#include "photoshape/fixtures.hpp"
#include "photoshape/image_io.hpp"
#include "photoshape/raster.hpp"
#include "photoshape/rng.hpp"
#include "photoshape/substance.hpp"

namespace photoshape::pipeline {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("'" + path.string() + "': " + e.what());
  }
}

std::string sanitize_id(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
  return s;
}

std::string shape_id_of(const fs::path& p) {
  std::string stem = p.stem().string();
  if (p.extension() == ".json" && stem.size() > 5 && stem.ends_with(".mesh")) stem.resize(stem.size() - 5);
  return sanitize_id(stem);
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Mask erode(const Mask& m) {
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool keep = m.at(x, y);
      for (int dy = -1; dy <= 1 && keep; ++dy)
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= m.width || yy >= m.height || !m.at(xx, yy)) keep = false;
        }
      out.set(x, y, keep);
    }
  return out;
}

substance::SubstanceMap resize_nearest(const substance::SubstanceMap& map, int w, int h) {
  if (map.width == w && map.height == h) return map;
  substance::SubstanceMap out(w, h);
  out.foreground = photoshape::resize_nearest(map.foreground, w, h);
  out.flagged = photoshape::resize_nearest(map.flagged, w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(map.width - 1, x * map.width / w), sy = std::min(map.height - 1, y * map.height / h);
      const double* src = map.row(static_cast<std::size_t>(sy) * map.width + sx);
      std::copy(src, src + substance::kSubstanceCount, out.row(static_cast<std::size_t>(y) * w + x));
    }
  return out;
}

struct ExemplarData {
  RgbImage image;  // exemplar_size
  Mask mask;
};

ExemplarData load_exemplar(const fs::path& run_dir, const std::string& id) {
  const fs::path dir = run_dir / "ingest" / "exemplars";
  return {io::read_image(dir / (id + ".png")), io::read_mask_png(dir / (id + ".mask.png"))};
}

shapelib::SegmentedMesh load_ingested_mesh(const fs::path& run_dir, const std::string& id) {
  return shapelib::mesh_from_json(read_json(run_dir / "ingest" / "shapes" / (id + ".mesh.json")));
}

RgbImage hog_input(const PipelineConfig& config, const RgbImage& image, const Mask& mask) {
  return config.hog_input == "silhouette" ? silhouette_image(mask) : image;
}

LabelMap coarse_parts(const shapelib::SegmentedMesh& mesh, const camera::SphericalPose& pose, const PipelineConfig& c) {
  const auto render = raster::render_part_ids(mesh, pose, c.render_resolution);
  const Mask sil = raster::silhouette(render);
  if (sil.count() == 0) throw Error("shape is not visible from the candidate pose");
  return raster::square_crop_to_mask(render.part_ids, sil, c.align_resolution);
}

std::vector<Candidate> candidates_from_json(const nlohmann::json& j) {
  std::vector<Candidate> out;
  for (const auto& c : j.at("candidates"))
    out.push_back({c.at("shape_id").get<std::string>(), c.at("exemplar_id").get<std::string>(),
                   c.at("pose_index").get<int>(), camera::pose_from_json(c.at("pose")),
                   c.at("hog_distance").get<double>()});
  return out;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field, std::set<std::string>& known) {
  known.insert(key);
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw Error("unknown config key '" + where + k + "'");
}

}  // namespace

nlohmann::json to_json(const PipelineConfig& c) {
  const auto& f = c.flow;
  const auto& r = c.crf;
  const auto& h = c.hog;
  return {{"format", "photoshape.config/1"},
          {"seed", c.seed},
          {"grid_preset", c.grid_preset},
          {"render_resolution", c.render_resolution},
          {"exemplar_size", c.exemplar_size},
          {"white_threshold", c.white_threshold},
          {"dedup", c.dedup},
          {"dedup_threshold", c.dedup_threshold},
          {"hog_input", c.hog_input},
          {"hog",
           {{"cells_x", h.cells_x},
            {"cells_y", h.cells_y},
            {"cell_size", h.cell_size},
            {"orientation_bins", h.orientation_bins},
            {"signed", h.signed_gradients},
            {"blur_sigma", h.blur_sigma},
            {"clip", h.clip}}},
          {"k", c.k},
          {"top_n", c.top_n},
          {"distance_cutoff", c.distance_cutoff},
          {"cutoff_mode", c.cutoff_mode == CutoffMode::max ? "max" : "min"},
          {"align_resolution", c.align_resolution},
          {"coordinate_encoding", c.coordinate_encoding},
          {"flow_direction", c.flow_direction},
          {"flow",
           {{"max_displacement", f.max_displacement},
            {"levels", f.levels},
            {"coarse_window", f.coarse_window},
            {"refine_window", f.refine_window},
            {"iterations", f.iterations},
            {"truncation", f.truncation},
            {"eta", f.eta},
            {"alpha", f.alpha},
            {"smooth_truncation", f.smooth_truncation},
            {"icm_sweeps", f.icm_sweeps},
            {"icm_window", f.icm_window}}},
          {"crf",
           {{"w_appearance", r.w_appearance},
            {"theta_alpha", r.theta_alpha},
            {"theta_beta", r.theta_beta},
            {"w_smoothness", r.w_smoothness},
            {"theta_gamma", r.theta_gamma},
            {"iterations", r.iterations},
            {"unary_confidence", r.unary_confidence}}},
          {"substance_classifier", c.substance_classifier},
          {"material_classifier", c.material_classifier},
          {"substance_weighting", c.substance_weighting},
          {"min_part_pixels", c.min_part_pixels},
          {"alternatives", c.alternatives},
          {"preview_resolution", c.preview_resolution}};
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  std::set<std::string> known{"format"};
  if (j.contains("format") && j["format"] != "photoshape.config/1")
    throw Error("unsupported config format " + j["format"].dump());
  try {
    read_field(j, "seed", c.seed, known);
    read_field(j, "grid_preset", c.grid_preset, known);
    read_field(j, "render_resolution", c.render_resolution, known);
    read_field(j, "exemplar_size", c.exemplar_size, known);
    read_field(j, "white_threshold", c.white_threshold, known);
    read_field(j, "dedup", c.dedup, known);
    read_field(j, "dedup_threshold", c.dedup_threshold, known);
    read_field(j, "hog_input", c.hog_input, known);
    read_field(j, "k", c.k, known);
    read_field(j, "top_n", c.top_n, known);
    read_field(j, "distance_cutoff", c.distance_cutoff, known);
    read_field(j, "align_resolution", c.align_resolution, known);
    read_field(j, "coordinate_encoding", c.coordinate_encoding, known);
    read_field(j, "flow_direction", c.flow_direction, known);
    read_field(j, "substance_classifier", c.substance_classifier, known);
    read_field(j, "material_classifier", c.material_classifier, known);
    read_field(j, "substance_weighting", c.substance_weighting, known);
    read_field(j, "min_part_pixels", c.min_part_pixels, known);
    read_field(j, "alternatives", c.alternatives, known);
    read_field(j, "preview_resolution", c.preview_resolution, known);
    known.insert("cutoff_mode");
    if (j.contains("cutoff_mode")) {
      const auto m = j["cutoff_mode"].get<std::string>();
      if (m != "max" && m != "min") throw Error("cutoff_mode must be \"max\" or \"min\"");
      c.cutoff_mode = m == "max" ? CutoffMode::max : CutoffMode::min;
    }
    known.insert({"hog", "flow", "crf"});
    if (j.contains("hog")) {
      const auto& s = j["hog"];
      std::set<std::string> k;
      read_field(s, "cells_x", c.hog.cells_x, k);
      read_field(s, "cells_y", c.hog.cells_y, k);
      read_field(s, "cell_size", c.hog.cell_size, k);
      read_field(s, "orientation_bins", c.hog.orientation_bins, k);
      read_field(s, "signed", c.hog.signed_gradients, k);
      read_field(s, "blur_sigma", c.hog.blur_sigma, k);
      read_field(s, "clip", c.hog.clip, k);
      reject_unknown(s, k, "hog.");
    }
    if (j.contains("flow")) {
      const auto& s = j["flow"];
      std::set<std::string> k;
      read_field(s, "max_displacement", c.flow.max_displacement, k);
      read_field(s, "levels", c.flow.levels, k);
      read_field(s, "coarse_window", c.flow.coarse_window, k);
      read_field(s, "refine_window", c.flow.refine_window, k);
      read_field(s, "iterations", c.flow.iterations, k);
      read_field(s, "truncation", c.flow.truncation, k);
      read_field(s, "eta", c.flow.eta, k);
      read_field(s, "alpha", c.flow.alpha, k);
      read_field(s, "smooth_truncation", c.flow.smooth_truncation, k);
      read_field(s, "icm_sweeps", c.flow.icm_sweeps, k);
      read_field(s, "icm_window", c.flow.icm_window, k);
      reject_unknown(s, k, "flow.");
    }
    if (j.contains("crf")) {
      const auto& s = j["crf"];
      std::set<std::string> k;
      read_field(s, "w_appearance", c.crf.w_appearance, k);
      read_field(s, "theta_alpha", c.crf.theta_alpha, k);
      read_field(s, "theta_beta", c.crf.theta_beta, k);
      read_field(s, "w_smoothness", c.crf.w_smoothness, k);
      read_field(s, "theta_gamma", c.crf.theta_gamma, k);
      read_field(s, "iterations", c.crf.iterations, k);
      read_field(s, "unary_confidence", c.crf.unary_confidence, k);
      reject_unknown(s, k, "crf.");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  reject_unknown(j, known, "");
  if (c.hog_input != "silhouette" && c.hog_input != "shaded") throw Error("hog_input must be silhouette or shaded");
  if (c.flow_direction != "render_to_exemplar" && c.flow_direction != "exemplar_to_render")
    throw Error("flow_direction must be render_to_exemplar or exemplar_to_render");
  if (c.material_classifier != "histogram" && c.material_classifier != "median-color")
    throw Error("material_classifier must be histogram or median-color");
  if (c.k < 1 || c.top_n < 1) throw Error("k and top_n must be positive");
  if (c.render_resolution < 16 || c.align_resolution < 16 || c.exemplar_size < 16)
    throw Error("resolutions must be at least 16");
  camera::grid_preset(c.grid_preset);
  return c;
}

PipelineConfig load_config(const fs::path& path) { return config_from_json(read_json(path)); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {
std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
}  // namespace

std::string config_hash(const PipelineConfig& config) { return hex16(fnv1a64(to_json(config).dump())); }
std::string library_hash(const material::MaterialLibrary& library) { return hex16(fnv1a64(material::to_json(library).dump())); }

shapelib::SegmentedMesh prepare_mesh(const shapelib::SegmentedMesh& raw) {
  auto mesh = shapelib::normalize_to_unit_cube(shapelib::weld_vertices(raw, 1e-6));
  if (!mesh.has_uv()) mesh = shapelib::generate_planar_uvs(mesh);
  return shapelib::normalize_uv_scale(mesh);
}

shapelib::SegmentedMesh load_mesh(const fs::path& path) {
  if (path.extension() == ".obj") return shapelib::load_obj_file(path.string());
  if (path.extension() == ".json") return shapelib::mesh_from_json(read_json(path));
  throw Error("unsupported mesh file '" + path.string() + "'");
}

RgbImage silhouette_image(const Mask& mask) {
  RgbImage out(mask.width, mask.height, 3, 255);
  for (std::size_t i = 0; i < mask.values.size(); ++i)
    if (mask.values[i]) out.data[i * 3] = out.data[i * 3 + 1] = out.data[i * 3 + 2] = 0;
  return out;
}

std::string Candidate::key() const { return shape_id + "__" + exemplar_id; }

Selection select_candidates(const hogindex::InvertedIndex& inverted, int top_n, double cutoff, CutoffMode mode) {
  Selection sel;
  for (const auto& [shape, hits] : inverted) {
    std::vector<hogindex::InvertedHit> list = hits;
    std::stable_sort(list.begin(), list.end(),
                     [](const auto& a, const auto& b) { return a.distance < b.distance; });
    if (static_cast<int>(list.size()) > top_n) list.resize(static_cast<std::size_t>(top_n));
    std::size_t kept = 0;
    for (const auto& h : list) {
      const bool discard = mode == CutoffMode::max ? h.distance > cutoff : h.distance < cutoff;
      if (discard) continue;
      sel.candidates.push_back({shape, h.exemplar_id, h.pose_index, h.pose, h.distance});
      ++kept;
    }
    if (kept == 0) sel.empty_shapes.push_back(shape);
  }
  return sel;
}

nlohmann::json ingest(const fs::path& shapes_dir, const fs::path& exemplars_dir, const fs::path& run_dir,
                      const PipelineConfig& config) {
  const fs::path shapes_out = run_dir / "ingest" / "shapes", ex_out = run_dir / "ingest" / "exemplars";
  fs::create_directories(shapes_out);
  fs::create_directories(ex_out);

  nlohmann::json shapes = nlohmann::json::array();
  std::set<std::string> shape_ids;
  for (const auto& path : sorted_files(shapes_dir)) {
    if (path.extension() != ".obj" && path.extension() != ".json") continue;
    const std::string id = shape_id_of(path);
    nlohmann::json entry = {{"id", id}, {"source", path.filename().string()}};
    try {
      if (!shape_ids.insert(id).second) throw Error("duplicate shape id");
      const auto mesh = prepare_mesh(load_mesh(path));
      write_json(shapes_out / (id + ".mesh.json"), shapelib::to_json(mesh));
      entry["status"] = "ok";
      entry["material_parts"] = mesh.material_part_names;
      entry["uv_generated"] = mesh.uv_generated;
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      entry["error"] = e.what();
    }
    shapes.push_back(std::move(entry));
  }

  struct Loaded {
    exemplar::Exemplar ex;
    std::vector<float> dedup;
  };
  std::vector<fs::path> images;
  for (const auto& path : sorted_files(exemplars_dir))
    if (io::is_image_file(path)) images.push_back(path);
  std::vector<std::optional<Loaded>> loaded(images.size());
  std::vector<std::string> errors(images.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(images.size()); ++i) {
    const auto& path = images[static_cast<std::size_t>(i)];
    try {
      const RgbImage img = io::read_image(path);
      const Mask m = exemplar::foreground_mask(img, config.white_threshold);
      Loaded l;
      l.ex = exemplar::standardize(img, m, config.exemplar_size, sanitize_id(path.stem().string()),
                                   path.filename().string());
      l.dedup = exemplar::dedup_descriptor(l.ex.image);
      loaded[static_cast<std::size_t>(i)] = std::move(l);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }

  nlohmann::json failures = nlohmann::json::array();
  std::vector<std::size_t> ok;
  std::set<std::string> ex_ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (loaded[i] && !ex_ids.insert(loaded[i]->ex.id).second) errors[i] = "duplicate exemplar id";
    if (!errors[i].empty()) {
      loaded[i].reset();
      failures.push_back({{"source", images[i].filename().string()}, {"error", errors[i]}});
    } else {
      ok.push_back(i);
    }
  }
  std::vector<std::vector<float>> descriptors;
  for (auto i : ok) descriptors.push_back(loaded[i]->dedup);
  std::vector<std::optional<std::string>> removed_by(ok.size());
  if (config.dedup) {
    const auto d = exemplar::dedup(descriptors, config.dedup_threshold);
    for (const auto& r : d.removed) removed_by[r.removed] = loaded[ok[r.kept_by]]->ex.id;
  }
  std::vector<exemplar::ManifestEntry> entries;
  for (std::size_t n = 0; n < ok.size(); ++n) {
    const auto& ex = loaded[ok[n]]->ex;
    entries.push_back({ex.id, ex.source_uri, removed_by[n]});
    if (removed_by[n]) continue;
    io::write_png(ex_out / (ex.id + ".png"), ex.image);
    io::write_png(ex_out / (ex.id + ".mask.png"), ex.mask);
  }

  nlohmann::json manifest = {{"format", "photoshape.ingest/1"},
                             {"shapes", shapes},
                             {"exemplars", exemplar::manifest_to_json(entries)},
                             {"exemplar_failures", failures}};
  write_json(run_dir / "ingest" / "manifest.json", manifest);
  return manifest;
}

nlohmann::json build_index(const fs::path& run_dir, const PipelineConfig& config) {
  const auto manifest = read_json(run_dir / "ingest" / "manifest.json");
  const fs::path out = run_dir / "index";
  fs::create_directories(out);

  std::vector<std::string> shape_ids;
  std::vector<shapelib::SegmentedMesh> meshes;
  for (const auto& s : manifest.at("shapes"))
    if (s.at("status") == "ok") {
      shape_ids.push_back(s.at("id").get<std::string>());
      meshes.push_back(load_ingested_mesh(run_dir, shape_ids.back()));
    }
  std::vector<std::string> exemplar_ids;
  for (const auto& e : exemplar::manifest_from_json(manifest.at("exemplars")))
    if (!e.removed_by) exemplar_ids.push_back(e.id);

  const auto grid = camera::build_viewpoint_grid(camera::grid_preset(config.grid_preset));
  const std::size_t n_poses = grid.poses.size();
  std::vector<std::optional<hogindex::Rendering>> slots(shape_ids.size() * n_poses);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(slots.size()); ++t) {
    const std::size_t s = static_cast<std::size_t>(t) / n_poses, g = static_cast<std::size_t>(t) % n_poses;
    const auto& mesh = meshes[s];
    const auto& pose = grid.poses[g];
    const auto render = raster::render_part_ids(mesh, pose, config.render_resolution);
    const Mask sil = raster::silhouette(render);
    if (sil.count() == 0) continue;
    const auto window = raster::square_crop_window(sil);
    const Mask cropped = raster::crop(sil, window, config.exemplar_size);
    RgbImage input;
    if (config.hog_input == "silhouette") {
      input = silhouette_image(cropped);
    } else {
      const std::vector<raster::Rgb> gray(static_cast<std::size_t>(mesh.material_part_count()), raster::Rgb{180, 180, 180});
      input = raster::crop(raster::render_flat_color(mesh, pose, config.render_resolution, gray), window,
                           config.exemplar_size);
    }
    slots[static_cast<std::size_t>(t)] =
        hogindex::Rendering{shape_ids[s], static_cast<int>(g), pose, hogindex::hog(input, config.hog).values};
  }
  std::vector<hogindex::Rendering> renderings;
  for (auto& s : slots)
    if (s) renderings.push_back(std::move(*s));

  std::vector<hogindex::ExemplarQuery> queries(exemplar_ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(exemplar_ids.size()); ++i) {
    const auto ex = load_exemplar(run_dir, exemplar_ids[static_cast<std::size_t>(i)]);
    queries[static_cast<std::size_t>(i)] = {exemplar_ids[static_cast<std::size_t>(i)],
                                            hogindex::hog(hog_input(config, ex.image, ex.mask), config.hog).values};
  }

  hogindex::ReverseIndex index;
  if (renderings.empty() || queries.empty()) {
    index.k = config.k;
    index.config = config.hog;
    for (const auto& q : queries) {
      index.exemplar_ids.push_back(q.id);
      index.hits.emplace_back();
    }
  } else {
    index = hogindex::build_reverse_index(queries, renderings, config.k, config.hog);
  }
  const auto inverted = hogindex::invert_index(index);
  const auto sel = select_candidates(inverted, config.top_n, config.distance_cutoff, config.cutoff_mode);

  hogindex::write_bank(out / "bank.psdb", config.hog, renderings);
  hogindex::write_index(out / "reverse.psix", index);
  write_json(out / "reverse.json", hogindex::to_json(index));
  write_json(out / "inverted.json", hogindex::to_json(inverted));

  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : sel.candidates)
    cands.push_back({{"key", c.key()},
                     {"shape_id", c.shape_id},
                     {"exemplar_id", c.exemplar_id},
                     {"pose_index", c.pose_index},
                     {"pose", camera::to_json(c.pose)},
                     {"hog_distance", c.hog_distance}});
  std::vector<std::string> unmatched;
  for (const auto& id : shape_ids)
    if (!inverted.count(id)) unmatched.push_back(id);
  nlohmann::json result = {{"format", "photoshape.candidates/1"},
                           {"renderings", renderings.size()},
                           {"grid_poses", n_poses},
                           {"exemplars", exemplar_ids.size()},
                           {"candidates", cands},
                           {"cutoff_emptied_shapes", sel.empty_shapes},
                           {"unretrieved_shapes", unmatched}};
  write_json(out / "candidates.json", result);
  return result;
}

nlohmann::json align(const fs::path& run_dir, const PipelineConfig& config) {
  const auto cands = candidates_from_json(read_json(run_dir / "index" / "candidates.json"));
  const fs::path out = run_dir / "align";
  fs::create_directories(out);

  std::map<std::string, shapelib::SegmentedMesh> meshes;
  std::map<std::string, ExemplarData> exemplars;
  for (const auto& c : cands) {
    if (!meshes.count(c.shape_id)) meshes.emplace(c.shape_id, load_ingested_mesh(run_dir, c.shape_id));
    if (!exemplars.count(c.exemplar_id)) {
      auto ex = load_exemplar(run_dir, c.exemplar_id);
      const int a = config.align_resolution;
      exemplars.emplace(c.exemplar_id, ExemplarData{resize(ex.image, a, a), photoshape::resize_nearest(ex.mask, a, a)});
    }
  }

  std::vector<nlohmann::json> status(cands.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cands.size()); ++i) {
    const auto& c = cands[static_cast<std::size_t>(i)];
    nlohmann::json s = {{"key", c.key()}};
    try {
      const auto& mesh = meshes.at(c.shape_id);
      const auto& ex = exemplars.at(c.exemplar_id);
      const LabelMap coarse = coarse_parts(mesh, c.pose, config);
      const Mask src_mask = mask_from_labels(coarse);
      auto encode = config.coordinate_encoding ? flowrefine::encode_coordinate_silhouette : flowrefine::plain_silhouette;
      const bool forward = config.flow_direction == "render_to_exemplar";
      const auto flow = forward ? flowrefine::compute_flow(encode(src_mask), encode(ex.mask), config.flow)
                                : flowrefine::negated(flowrefine::compute_flow(encode(ex.mask), encode(src_mask), config.flow));
      const LabelMap warped = flowrefine::warp_labels(coarse, flow);
      const auto q = densecrf::mean_field(densecrf::unary_from_labels(warped, config.crf.unary_confidence), ex.image,
                                          config.crf, densecrf::Method::accelerated);
      LabelMap parts = densecrf::map_labels(q);
      for (std::size_t p = 0; p < parts.labels.size(); ++p)
        if (!ex.mask.values[p]) parts.labels[p] = LabelMap::kBackground;

      const Mask warped_mask = flowrefine::warp_mask(src_mask, flow);
      std::size_t inter = 0, uni = 0;
      for (std::size_t p = 0; p < warped_mask.values.size(); ++p) {
        inter += warped_mask.values[p] && ex.mask.values[p];
        uni += warped_mask.values[p] || ex.mask.values[p];
      }
      io::write_png(out / (c.key() + ".coarse.png"), coarse);
      io::write_png(out / (c.key() + ".parts.png"), parts);
      flowrefine::write_flo(out / (c.key() + ".flo"), flow);
      s["status"] = "ok";
      s["flow_energy"] = flow.energy;
      s["flow_saturated"] = flow.saturated;
      s["silhouette_iou"] = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    } catch (const std::exception& e) {
      s["status"] = "failed";
      s["reason"] = e.what();
    }
    status[static_cast<std::size_t>(i)] = std::move(s);
  }
  nlohmann::json result = {{"format", "photoshape.align_status/1"}, {"candidates", status}};
  write_json(out / "status.json", result);
  return result;
}

std::vector<double> scores_from_json(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(v.is_null() ? kNegInf : v.get<double>());
  return out;
}

nlohmann::json scores_to_json(const std::vector<double>& scores) {
  nlohmann::json out = nlohmann::json::array();
  for (double v : scores) out.push_back(std::isinf(v) && v < 0 ? nlohmann::json(nullptr) : nlohmann::json(v));
  return out;
}

nlohmann::json assign(const fs::path& run_dir, const material::MaterialLibrary& library, const PipelineConfig& config) {
  const auto cands = candidates_from_json(read_json(run_dir / "index" / "candidates.json"));
  const auto align_status = read_json(run_dir / "align" / "status.json").at("candidates");
  const fs::path out = run_dir / "assign", desc_dir = run_dir / "descriptors", prev_dir = run_dir / "previews";
  fs::create_directories(out / "work");
  fs::create_directories(desc_dir);
  fs::create_directories(prev_dir);
  if (library.size() == 0) throw Error("material library is empty");
  const std::string chash = config_hash(config), lhash = library_hash(library);
  const int a = config.align_resolution;

  std::vector<std::size_t> aligned;
  std::vector<std::string> ex_ids;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (align_status.at(i).at("status") == "ok") {
      aligned.push_back(i);
      ex_ids.push_back(cands[i].exemplar_id);
    }
  std::sort(ex_ids.begin(), ex_ids.end());
  ex_ids.erase(std::unique(ex_ids.begin(), ex_ids.end()), ex_ids.end());

  std::map<std::string, ExemplarData> full, small;
  for (const auto& id : ex_ids) {
    auto ex = load_exemplar(run_dir, id);
    small.emplace(id, ExemplarData{resize(ex.image, a, a), photoshape::resize_nearest(ex.mask, a, a)});
    full.emplace(id, std::move(ex));
  }

  // Substance maps, one per exemplar; non-reentrant plugins run one at a time.
  auto classifier = substance::make_classifier(config.substance_classifier, out / "work");
  std::vector<std::optional<substance::SubstanceMap>> maps(ex_ids.size());
  std::vector<std::string> map_errors(ex_ids.size());
  auto classify_one = [&](std::size_t i) {
    try {
      const auto& ex = small.at(ex_ids[i]);
      auto m = resize_nearest(classifier->classify(ex.image, ex.mask, ex_ids[i]), a, a);
      substance::write_substance_map(out / (ex_ids[i] + ".pssm"), m);
      maps[i] = std::move(m);
    } catch (const std::exception& e) {
      map_errors[i] = e.what();
    }
  };
  if (classifier->reentrant()) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(ex_ids.size()); ++i) classify_one(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < ex_ids.size(); ++i) classify_one(i);
  }
  std::map<std::string, std::size_t> ex_slot;
  for (std::size_t i = 0; i < ex_ids.size(); ++i) ex_slot[ex_ids[i]] = i;

  std::map<std::string, shapelib::SegmentedMesh> meshes;
  for (auto i : aligned)
    if (!meshes.count(cands[i].shape_id)) meshes.emplace(cands[i].shape_id, load_ingested_mesh(run_dir, cands[i].shape_id));

  std::vector<nlohmann::json> status(aligned.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(aligned.size()); ++n) {
    const auto& c = cands[aligned[static_cast<std::size_t>(n)]];
    nlohmann::json s = {{"key", c.key()}};
    try {
      const std::size_t slot = ex_slot.at(c.exemplar_id);
      if (!maps[slot]) throw Error("substance: " + map_errors[slot]);
      const auto& smap = *maps[slot];
      const auto& mesh = meshes.at(c.shape_id);
      const int n_parts = mesh.material_part_count();
      const LabelMap parts = io::read_labels_png(run_dir / "align" / (c.key() + ".parts.png"), n_parts);
      const auto labeling = substance::aggregate_part_substance(parts, smap);
      const auto& ex_full = full.at(c.exemplar_id);
      const auto& ex_small = small.at(c.exemplar_id);

      nlohmann::json part_list = nlohmann::json::array();
      std::vector<raster::Rgb> colors(static_cast<std::size_t>(n_parts), raster::Rgb{160, 160, 160});
      for (int p = 0; p < n_parts; ++p) {
        const auto pi = static_cast<std::size_t>(p);
        nlohmann::json e = {{"part_id", p}, {"name", mesh.material_part_names[pi]}};
        Mask region(a, a);
        for (std::size_t i = 0; i < parts.labels.size(); ++i)
          region.values[i] = parts.labels[i] == p + 1 && ex_small.mask.values[i];
        e["pixels"] = region.count();
        if (region.count() < static_cast<std::size_t>(config.min_part_pixels)) {
          e["status"] = "unassigned";
          e["reason"] = region.count() == 0 ? "not visible" : "too few pixels";
          part_list.push_back(std::move(e));
          continue;
        }
        const Mask core = erode(region);
        Mask full_region = photoshape::resize_nearest(core.count() > 0 ? core : region, ex_full.mask.width,
                                                      ex_full.mask.height);
        for (std::size_t i = 0; i < full_region.values.size(); ++i) full_region.values[i] &= ex_full.mask.values[i];
        if (full_region.count() == 0) full_region = photoshape::resize_nearest(region, ex_full.mask.width, ex_full.mask.height);

        auto scores = config.material_classifier == "histogram"
                          ? material::histogram_match(ex_full.image, full_region, library)
                          : material::median_color_match(ex_full.image, full_region, library);
        material::SubstanceDistribution conf{};
        conf.fill(1.0 / substance::kSubstanceCount);
        const auto& label = labeling.labels[pi];
        if (label) {
          double total = 0.0;
          for (double v : labeling.mass[pi]) total += v;
          if (total > 0.0)
            for (int q = 0; q < substance::kSubstanceCount; ++q) conf[static_cast<std::size_t>(q)] = labeling.mass[pi][static_cast<std::size_t>(q)] / total;
        }
        bool weighted = false;
        if (config.substance_weighting && label) {
          auto w = scores;
          bool any = false;
          for (std::size_t m = 0; m < library.size(); ++m) {
            const double cq = conf[static_cast<std::size_t>(library.records[m].substance)];
            w.scores[m] = cq > 0.0 ? w.scores[m] + std::log(cq) : kNegInf;
            any = any || std::isfinite(w.scores[m]);
          }
          if (any) {
            scores = std::move(w);
            weighted = true;
          }
        }
        const auto ranking = material::rank(scores, library);
        const auto& top = library.records[static_cast<std::size_t>(ranking.front().index)];
        nlohmann::json alts = nlohmann::json::array();
        for (std::size_t k = 0; k < std::min<std::size_t>(static_cast<std::size_t>(config.alternatives), ranking.size()); ++k)
          alts.push_back({{"material_id", ranking[k].id}, {"probability", ranking[k].probability}});
        e["status"] = "assigned";
        e["material_id"] = top.id;
        e["substance"] = std::string(substance::name(top.substance));
        e["predicted_substance"] = label ? nlohmann::json(std::string(substance::name(*label))) : nlohmann::json(nullptr);
        e["substance_confidence"] = label ? nlohmann::json(conf) : nlohmann::json(nullptr);
        e["substance_weighted"] = weighted;
        e["alternatives"] = alts;
        e["scores"] = scores_to_json(scores.scores);
        part_list.push_back(std::move(e));
        for (std::size_t ch = 0; ch < 3; ++ch)
          colors[pi][ch] = static_cast<std::uint8_t>(std::lround(std::clamp(top.signature.median[ch], 0.0, 255.0)));
      }

      nlohmann::json d = {{"format", "photoshape.descriptor/1"},
                          {"shape_id", c.shape_id},
                          {"exemplar_id", c.exemplar_id},
                          {"pose_index", c.pose_index},
                          {"pose", camera::to_json(c.pose)},
                          {"hog_distance", c.hog_distance},
                          {"parts", part_list},
                          {"stage_status", {{"coarse", "ok"}, {"align", "ok"}, {"substance", "ok"}, {"material", "ok"}}},
                          {"provenance",
                           {{"config_hash", chash},
                            {"library_hash", lhash},
                            {"substance_classifier", classifier->id()},
                            {"material_classifier", config.material_classifier}}}};
      write_json(desc_dir / (c.key() + ".json"), d);
      io::write_png(prev_dir / (c.key() + ".png"),
                    raster::render_flat_color(mesh, c.pose, config.preview_resolution, colors));
      s["status"] = "ok";
    } catch (const std::exception& e) {
      s["status"] = "failed";
      s["reason"] = e.what();
    }
    status[static_cast<std::size_t>(n)] = std::move(s);
  }
  nlohmann::json result = {{"format", "photoshape.assign_status/1"}, {"candidates", status}};
  write_json(out / "status.json", result);
  return result;
}

nlohmann::json write_report(const fs::path& run_dir, const PipelineConfig& config) {
  nlohmann::json failures = nlohmann::json::array();
  std::size_t shapes = 0, shapes_failed = 0, exemplars = 0, duplicates = 0, ex_failed = 0;
  const fs::path manifest_path = run_dir / "ingest" / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto m = read_json(manifest_path);
    for (const auto& s : m.at("shapes")) {
      ++shapes;
      if (s.at("status") != "ok") {
        ++shapes_failed;
        failures.push_back({{"stage", "ingest"}, {"id", s.at("id")}, {"reason", s.at("error")}});
      }
    }
    for (const auto& e : exemplar::manifest_from_json(m.at("exemplars"))) {
      ++exemplars;
      if (e.removed_by) ++duplicates;
    }
    for (const auto& f : m.at("exemplar_failures")) {
      ++ex_failed;
      failures.push_back({{"stage", "ingest"}, {"id", f.at("source")}, {"reason", f.at("error")}});
    }
  }
  std::size_t renderings = 0, candidates = 0, refined = 0, assigned = 0;
  nlohmann::json empty_shapes = nlohmann::json::array(), unretrieved = nlohmann::json::array();
  if (fs::exists(run_dir / "index" / "candidates.json")) {
    const auto c = read_json(run_dir / "index" / "candidates.json");
    renderings = c.at("renderings").get<std::size_t>();
    candidates = c.at("candidates").size();
    empty_shapes = c.at("cutoff_emptied_shapes");
    unretrieved = c.at("unretrieved_shapes");
  }
  for (const char* stage : {"align", "assign"}) {
    const fs::path p = run_dir / stage / "status.json";
    if (!fs::exists(p)) continue;
    const auto status = read_json(p);
    for (const auto& s : status.at("candidates")) {
      if (s.at("status") == "ok") {
        (std::string(stage) == "align" ? refined : assigned)++;
      } else {
        failures.push_back({{"stage", stage}, {"id", s.at("key")}, {"reason", s.at("reason")}});
      }
    }
  }
  nlohmann::json report = {{"format", "photoshape.report/1"},
                           {"config_hash", config_hash(config)},
                           {"counts",
                            {{"shapes", shapes},
                             {"shapes_failed", shapes_failed},
                             {"exemplars", exemplars},
                             {"exemplar_duplicates", duplicates},
                             {"exemplars_failed", ex_failed},
                             {"renderings", renderings},
                             {"candidates", candidates},
                             {"refined", refined},
                             {"assigned", assigned}}},
                           {"cutoff_emptied_shapes", empty_shapes},
                           {"unretrieved_shapes", unretrieved},
                           {"failures", failures}};
  write_json(run_dir / "report.json", report);
  return report;
}

nlohmann::json run_pipeline(const fs::path& shapes_dir, const fs::path& exemplars_dir,
                            const material::MaterialLibrary& library, const fs::path& run_dir,
                            const PipelineConfig& config) {
  if (library.size() == 0) throw Error("material library is empty");
  fs::create_directories(run_dir);
  const std::string started = utc_now();
  write_json(run_dir / "config.lock.json", {{"format", "photoshape.config_lock/1"},
                                            {"config", to_json(config)},
                                            {"config_hash", config_hash(config)},
                                            {"library_hash", library_hash(library)}});
  ingest(shapes_dir, exemplars_dir, run_dir, config);
  build_index(run_dir, config);
  align(run_dir, config);
  assign(run_dir, library, config);
  auto report = write_report(run_dir, config);
  write_json(run_dir / "run_meta.json", {{"started", started}, {"finished", utc_now()}});
  return report;
}

nlohmann::json evaluate(const fs::path& run_dir, const nlohmann::json& truth, const material::MaterialLibrary& library) {
  if (truth.value("format", "") != "photoshape.truth/1") throw Error("truth manifest must have format photoshape.truth/1");
  std::vector<material::Prediction> preds;
  std::vector<material::Truth> truths;
  nlohmann::json unmatched = nlohmann::json::array(), unassigned = nlohmann::json::array();
  std::map<std::string, nlohmann::json> cache;
  for (const auto& t : truth.at("parts")) {
    const auto shape = t.at("shape_id").get<std::string>(), ex = t.at("exemplar_id").get<std::string>();
    const int part = t.at("part_id").get<int>();
    const auto mat = t.at("material_id").get<std::string>();
    const std::string key = shape + "__" + ex;
    const std::string label = key + "#" + std::to_string(part);
    const int m = library.index_of(mat);
    if (m < 0) throw Error("truth references unknown material '" + mat + "'");
    const fs::path p = run_dir / "descriptors" / (key + ".json");
    if (!cache.count(key)) cache[key] = fs::exists(p) ? read_json(p) : nlohmann::json(nullptr);
    const auto& d = cache[key];
    const nlohmann::json* entry = nullptr;
    if (!d.is_null())
      for (const auto& e : d.at("parts"))
        if (e.at("part_id") == part) entry = &e;
    if (!entry) {
      unmatched.push_back(label);
      continue;
    }
    if (entry->at("status") != "assigned") {
      unassigned.push_back(label);
      continue;
    }
    material::Prediction pr{{scores_from_json(entry->at("scores")), "descriptor"}, std::nullopt};
    if (!entry->at("substance_confidence").is_null()) {
      std::vector<double> logits;
      for (const auto& v : entry->at("substance_confidence")) {
        const double x = v.get<double>();
        logits.push_back(x > 0.0 ? std::log(x) : -1e300);
      }
      pr.substance_logits = logits;
    }
    preds.push_back(std::move(pr));
    truths.push_back({mat, library.records[static_cast<std::size_t>(m)].substance});
  }
  // sub@1 is reported only when every matched part carries substance logits.
  bool all_sub = !preds.empty();
  for (const auto& p : preds) all_sub = all_sub && p.substance_logits.has_value();
  if (!all_sub)
    for (auto& p : preds) p.substance_logits.reset();
  const auto metrics = material::classifier_metrics(preds, truths, library);

  nlohmann::json result = {{"format", "photoshape.evaluation/1"},
                           {"material", material::to_json(metrics)},
                           {"matched", preds.size()},
                           {"unassigned", unassigned},
                           {"unmatched", unmatched}};

  if (truth.contains("poses")) {
    const auto reverse = read_json(run_dir / "index" / "reverse.json");
    std::map<std::string, const nlohmann::json*> top;
    for (const auto& e : reverse.at("entries"))
      if (!e.at("hits").empty()) top[e.at("exemplar_id").get<std::string>()] = &e.at("hits").at(0);
    std::size_t total = 0, correct = 0;
    nlohmann::json misses = nlohmann::json::array();
    for (const auto& t : truth.at("poses")) {
      ++total;
      const auto ex = t.at("exemplar_id").get<std::string>();
      const auto it = top.find(ex);
      const bool ok = it != top.end() && it->second->at("shape_id") == t.at("shape_id") &&
                      it->second->at("pose_index") == t.at("pose_index");
      if (ok) {
        ++correct;
      } else {
        misses.push_back(ex);
      }
    }
    result["pose"] = {{"evaluated", total},
                      {"correct", correct},
                      {"accuracy", total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0},
                      {"misses", misses}};
  }
  if (fs::exists(run_dir / "report.json")) {
    const auto counts = read_json(run_dir / "report.json").at("counts");
    result["funnel"] = {{"candidates", counts.at("candidates")},
                        {"refined", counts.at("refined")},
                        {"assigned", counts.at("assigned")}};
  }
  return result;
}

void make_closed_loop_fixture(const fs::path& dir, const ClosedLoopOptions& o) {
  for (const char* sub : {"shapes", "exemplars", "substance"}) fs::create_directories(dir / sub);
  const auto library = fixtures::swatch_library(o.swatches);
  write_json(dir / "library.json", material::to_json(library));
  const auto colors = fixtures::hue_swatches(o.swatches);
  const auto grid = camera::build_viewpoint_grid(camera::grid_preset(o.grid_preset));

  PipelineConfig config;
  config.seed = o.seed;
  config.grid_preset = o.grid_preset;
  config.render_resolution = o.render_resolution;
  config.exemplar_size = o.render_resolution;
  config.align_resolution = o.align_resolution;
  config.min_part_pixels = o.min_part_pixels;
  config.material_classifier = "histogram";
  config.substance_classifier = "fixture:" + fs::absolute(dir / "substance").string();

  Rng rng(o.seed);
  nlohmann::json truth_parts = nlohmann::json::array(), truth_poses = nlohmann::json::array();
  for (int s = 0; s < o.shapes; ++s) {
    const auto shape = fixtures::asymmetric_shape(s, o.seed);
    {
      std::ofstream f(dir / "shapes" / (shape.id + ".obj"), std::ios::binary);
      f << shape.obj;
    }
    const auto mesh = prepare_mesh(shapelib::load_obj(shape.obj));
    const int n_parts = mesh.material_part_count();
    std::vector<std::size_t> pick(static_cast<std::size_t>(o.swatches));
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    for (std::size_t i = pick.size(); i > 1; --i) std::swap(pick[i - 1], pick[rng.index(i)]);
    std::vector<raster::Rgb> part_colors;
    for (int p = 0; p < n_parts; ++p) part_colors.push_back(colors[pick[static_cast<std::size_t>(p)]]);
    const int g = static_cast<int>(rng.index(grid.poses.size()));
    const auto& pose = grid.poses[static_cast<std::size_t>(g)];
    const std::string ex_id = shape.id + "_view";
    const RgbImage render = raster::render_flat_color(mesh, pose, o.render_resolution, part_colors);
    io::write_png(dir / "exemplars" / (ex_id + ".png"), render);
    truth_poses.push_back({{"exemplar_id", ex_id}, {"shape_id", shape.id}, {"pose_index", g}});

    // Part map in the standardized exemplar frame at align resolution.
    const LabelMap coarse = coarse_parts(mesh, pose, config);
    const auto std_ex = exemplar::standardize(render, exemplar::foreground_mask(render, config.white_threshold),
                                              config.exemplar_size);
    const Mask ex_mask = photoshape::resize_nearest(std_ex.mask, o.align_resolution, o.align_resolution);
    substance::SubstanceMap smap(o.align_resolution, o.align_resolution);
    smap.foreground = ex_mask;
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_parts) + 1, 0);
    for (std::size_t i = 0; i < coarse.labels.size(); ++i) {
      const int l = coarse.labels[i];
      ++counts[static_cast<std::size_t>(l)];
      if (!ex_mask.values[i]) continue;
      if (l == 0) {
        smap.flagged.values[i] = 1;
        continue;
      }
      const auto& rec = library.records[pick[static_cast<std::size_t>(l - 1)]];
      double* row = smap.row(i);
      std::fill(row, row + substance::kSubstanceCount, 0.0);
      row[static_cast<int>(rec.substance)] = 1.0;
    }
    substance::write_substance_map(dir / "substance" / (ex_id + ".pssm"), smap);
    // A part counts as visible when it is large at align resolution and most
    // of its pixels are lit; grazing faces render near black and carry no colour.
    const auto full_parts = raster::render_part_ids(mesh, pose, o.render_resolution).part_ids;
    std::vector<std::size_t> lit(static_cast<std::size_t>(n_parts) + 1, 0), area(lit.size(), 0);
    for (std::size_t i = 0; i < full_parts.labels.size(); ++i) {
      const int l = full_parts.labels[i];
      if (l == 0) continue;
      const auto& albedo = part_colors[static_cast<std::size_t>(l - 1)];
      const int peak = std::max({albedo[0], albedo[1], albedo[2]});
      const int value = std::max({render.data[i * 3], render.data[i * 3 + 1], render.data[i * 3 + 2]});
      ++area[static_cast<std::size_t>(l)];
      if (value >= 0.3 * peak) ++lit[static_cast<std::size_t>(l)];
    }
    for (int p = 0; p < n_parts; ++p)
      if (counts[static_cast<std::size_t>(p) + 1] >= 2 * static_cast<std::size_t>(o.min_part_pixels) &&
          2 * lit[static_cast<std::size_t>(p) + 1] >= area[static_cast<std::size_t>(p) + 1])
        truth_parts.push_back({{"shape_id", shape.id},
                               {"exemplar_id", ex_id},
                               {"part_id", p},
                               {"material_id", library.records[pick[static_cast<std::size_t>(p)]].id}});
  }
  write_json(dir / "truth.json", {{"format", "photoshape.truth/1"}, {"parts", truth_parts}, {"poses", truth_poses}});
  write_json(dir / "config.json", to_json(config));
}

}  // namespace photoshape::pipeline
