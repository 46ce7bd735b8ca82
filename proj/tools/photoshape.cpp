// Command-line front end for the photoshape library.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "photoshape/camera.hpp"
#include "photoshape/error.hpp"
#include "photoshape/exemplar.hpp"
#include "photoshape/fixtures.hpp"
#include "photoshape/hogindex.hpp"
#include "photoshape/image_io.hpp"
#include "photoshape/material.hpp"
#include "photoshape/pipeline.hpp"
#include "photoshape/synthgen.hpp"

namespace fs = std::filesystem;
using namespace photoshape;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  return json::parse(in);
}

// Config from an optional file plus dotted-key overrides ("flow.alpha=2").
struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "pipeline config JSON (defaults when omitted)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set flow.alpha=2")->take_all();
  }

  pipeline::PipelineConfig resolve() const {
    json j = file.empty() ? pipeline::to_json(pipeline::PipelineConfig{}) : read_json(file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got '" + o + "'");
      std::string path = "/" + o.substr(0, eq);
      for (char& c : path)
        if (c == '.') c = '/';
      json value;
      try {
        value = json::parse(o.substr(eq + 1));
      } catch (const json::exception&) {
        value = o.substr(eq + 1);
      }
      j[json::json_pointer(path)] = value;
    }
    return pipeline::config_from_json(j);
  }
};

material::MaterialLibrary load_library(const std::string& path) {
  auto lib = material::load_material_library_file(path);
  for (const auto& w : lib.warnings) std::cerr << "warning: " << w << "\n";
  return lib;
}

void print_counts(const material::MaterialLibrary& lib) {
  const auto c = lib.counts();
  for (auto q : substance::kAllSubstances)
    std::cout << substance::name(q) << ": " << c[static_cast<std::size_t>(q)] << "\n";
  std::cout << "total: " << lib.size() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"photoshape: assign library materials to segmented shapes from exemplar photos"};
  app.require_subcommand(1);

  // ingest
  std::string shapes_dir, exemplars_dir, run_dir, library_path, truth_path, out_path;
  ConfigArgs cfg;
  auto* ingest = app.add_subcommand("ingest", "load meshes and standardize exemplar photos into a run directory");
  ingest->add_option("--shapes", shapes_dir, "directory of .obj / mesh .json files")->required();
  ingest->add_option("--exemplars", exemplars_dir, "directory of PNG/JPEG photos")->required();
  ingest->add_option("--run", run_dir, "run directory")->required();
  cfg.attach(ingest);

  // index build / query / invert
  auto* index = app.add_subcommand("index", "HOG rendering bank and reverse index");
  index->require_subcommand(1);
  auto* index_build = index->add_subcommand("build", "render every shape over the grid and index the exemplars");
  index_build->add_option("--run", run_dir)->required();
  cfg.attach(index_build);
  std::string bank_path, image_path, index_path;
  int k = 5;
  auto* index_query = index->add_subcommand("query", "nearest renderings for one image");
  index_query->add_option("--bank", bank_path, "rendering bank (.psdb)")->required();
  index_query->add_option("--image", image_path, "query image")->required();
  index_query->add_option("-k", k, "number of hits");
  cfg.attach(index_query);
  auto* index_invert = index->add_subcommand("invert", "turn a reverse index into per-shape exemplar lists");
  index_invert->add_option("--index", index_path, "reverse index (.psix)")->required();
  index_invert->add_option("--out", out_path, "output JSON (stdout when omitted)");

  auto* align = app.add_subcommand("align", "flow + dense-CRF refinement of every candidate");
  align->add_option("--run", run_dir)->required();
  cfg.attach(align);

  auto* assign = app.add_subcommand("assign", "substance maps, material ranking, descriptors and previews");
  assign->add_option("--run", run_dir)->required();
  assign->add_option("--library", library_path, "material manifest")->required();
  cfg.attach(assign);

  auto* evaluate = app.add_subcommand("evaluate", "score descriptors against a truth manifest");
  evaluate->add_option("--run", run_dir)->required();
  evaluate->add_option("--truth", truth_path)->required();
  evaluate->add_option("--library", library_path)->required();
  evaluate->add_option("--out", out_path, "write the metrics JSON here as well");

  auto* run = app.add_subcommand("run", "all stages");
  run->add_option("--shapes", shapes_dir)->required();
  run->add_option("--exemplars", exemplars_dir)->required();
  run->add_option("--library", library_path)->required();
  run->add_option("--run", run_dir)->required();
  std::optional<std::uint64_t> seed_override;
  run->add_option("--seed", seed_override, "overrides config seed");
  cfg.attach(run);

  std::string preset = "paper456";
  auto* grid = app.add_subcommand("grid", "emit a viewpoint grid");
  grid->add_option("--preset", preset, "paper456 or coarse");
  grid->add_option("--out", out_path, "poses JSON (summary only when omitted)");

  auto* loss = app.add_subcommand("loss", "multitask loss utilities");
  loss->require_subcommand(1);
  auto* loss_check = loss->add_subcommand("check", "finite-difference gradient check over random states");
  bool fd = false;
  std::size_t states = 1000;
  std::uint64_t seed = 1;
  double tol = 1e-5;
  loss_check->add_flag("--fd", fd, "central finite differences")->required();
  loss_check->add_option("--states", states);
  loss_check->add_option("--seed", seed);
  loss_check->add_option("--tolerance", tol);

  auto* synth = app.add_subcommand("synthgen", "synthetic training-data configurations");
  synth->require_subcommand(1);
  auto* sample = synth->add_subcommand("sample", "sample render configurations (and scenes)");
  std::size_t count = 10;
  std::string shape_path, substances_csv, poses_path;
  std::vector<std::string> env_maps{"env_000", "env_001", "env_002", "env_003"};
  bool scenes = false;
  int label_res = 256;
  sample->add_option("--count", count)->required();
  sample->add_option("--seed", seed)->required();
  sample->add_option("--library", library_path)->required();
  sample->add_option("--shape", shape_path, "mesh (.obj/.json); a procedural chair when omitted");
  sample->add_option("--substances", substances_csv, "per-part substances, comma separated");
  sample->add_option("--poses", poses_path, "pose prior JSON (array of poses); the paper456 grid when omitted");
  sample->add_option("--env", env_maps, "environment map ids")->take_all();
  sample->add_option("--out", out_path, "output directory (JSON lines on stdout when omitted)");
  sample->add_flag("--scenes", scenes, "also emit scene JSON and ground-truth label maps");
  sample->add_option("--label-resolution", label_res);
  auto* split = synth->add_subcommand("split", "hold out shapes and environment maps");
  std::vector<std::string> split_shapes;
  double fraction = 0.1;
  split->add_option("--shapes", split_shapes)->required()->take_all();
  split->add_option("--env", env_maps)->take_all();
  split->add_option("--fraction", fraction);
  split->add_option("--seed", seed);

  auto* fixture = app.add_subcommand("fixture", "generate test fixtures");
  fixture->require_subcommand(1);
  auto* closed = fixture->add_subcommand("closed-loop", "self-rendered shapes, exemplars, swatch library and truth");
  pipeline::ClosedLoopOptions cl;
  closed->add_option("--out", out_path)->required();
  closed->add_option("--shapes", cl.shapes);
  closed->add_option("--seed", cl.seed);
  closed->add_option("--grid", cl.grid_preset);

  auto* library = app.add_subcommand("library", "material library utilities");
  library->require_subcommand(1);
  auto* lib_ref = library->add_subcommand("reference", "write the 453-entry reference manifest");
  lib_ref->add_option("--out", out_path)->required();
  auto* lib_stats = library->add_subcommand("stats", "validate a manifest and print per-substance counts");
  lib_stats->add_option("--library", library_path)->required();

  auto* config_cmd = app.add_subcommand("config", "print the resolved pipeline config");
  cfg.attach(config_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      const auto m = pipeline::ingest(shapes_dir, exemplars_dir, run_dir, cfg.resolve());
      std::cout << "shapes: " << m["shapes"].size() << ", exemplars: " << m["exemplars"]["exemplars"].size()
                << ", failed exemplars: " << m["exemplar_failures"].size() << "\n";
    } else if (*index_build) {
      const auto r = pipeline::build_index(run_dir, cfg.resolve());
      std::cout << "renderings: " << r["renderings"] << ", candidates: " << r["candidates"].size() << "\n";
    } else if (*index_query) {
      hogindex::HogConfig hc;
      const auto bank = hogindex::read_bank(bank_path, &hc);
      const RgbImage img = io::read_image(image_path);
      const auto config = cfg.resolve();
      const auto ex = exemplar::standardize(img, exemplar::foreground_mask(img, config.white_threshold),
                                            config.exemplar_size);
      const RgbImage input = config.hog_input == "silhouette" ? pipeline::silhouette_image(ex.mask) : ex.image;
      const std::vector<hogindex::ExemplarQuery> q{
          {fs::path(image_path).stem().string(), hogindex::hog(input, hc).values}};
      std::cout << hogindex::to_json(hogindex::build_reverse_index(q, bank, k, hc)).dump(2) << "\n";
    } else if (*index_invert) {
      const json j = hogindex::to_json(hogindex::invert_index(hogindex::read_index(index_path)));
      if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        write_json(out_path, j);
      }
    } else if (*align) {
      const auto r = pipeline::align(run_dir, cfg.resolve());
      std::size_t ok = 0;
      for (const auto& c : r["candidates"]) ok += c["status"] == "ok";
      std::cout << "aligned " << ok << " / " << r["candidates"].size() << "\n";
    } else if (*assign) {
      const auto r = pipeline::assign(run_dir, load_library(library_path), cfg.resolve());
      std::size_t ok = 0;
      for (const auto& c : r["candidates"]) ok += c["status"] == "ok";
      std::cout << "assigned " << ok << " / " << r["candidates"].size() << "\n";
      pipeline::write_report(run_dir, cfg.resolve());
    } else if (*evaluate) {
      const auto r = pipeline::evaluate(run_dir, read_json(truth_path), load_library(library_path));
      if (!out_path.empty()) write_json(out_path, r);
      std::cout << r.dump(2) << "\n";
    } else if (*run) {
      auto config = cfg.resolve();
      if (seed_override) config.seed = *seed_override;
      const auto report = pipeline::run_pipeline(shapes_dir, exemplars_dir, load_library(library_path), run_dir, config);
      std::cout << report["counts"].dump() << "\n";
    } else if (*grid) {
      const auto start = std::chrono::steady_clock::now();
      const auto g = camera::build_viewpoint_grid(camera::grid_preset(preset));
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (!out_path.empty()) write_json(out_path, camera::to_json(g));
      std::cout << preset << ": " << g.poses.size() << " poses in " << ms << " ms\n";
    } else if (*loss_check) {
      const auto r = material::check_gradients(states, seed, tol);
      std::cout << "states: " << r.states << "\nmax relative gradient error: " << r.max_relative_error
                << "\nmax stationary-point error: " << r.max_stationary_error
                << "\nmax |uncertainty(s=0) - fixed(lambda=1)|: " << r.max_fixed_vs_uncertainty << "\n"
                << (r.passed ? "PASS" : "FAIL") << "\n";
      return r.passed ? 0 : 1;
    } else if (*sample) {
      const auto lib = load_library(library_path);
      shapelib::SegmentedMesh mesh;
      synthgen::SampleRequest req;
      if (shape_path.empty()) {
        const auto s = fixtures::asymmetric_shape(0, seed);
        mesh = pipeline::prepare_mesh(shapelib::load_obj(s.obj));
        req.shape_id = s.id;
      } else {
        mesh = pipeline::prepare_mesh(pipeline::load_mesh(shape_path));
        req.shape_id = fs::path(shape_path).stem().string();
      }
      req.exemplar_id = "none";
      req.part_names = mesh.material_part_names;
      if (!substances_csv.empty()) {
        std::stringstream ss(substances_csv);
        for (std::string tok; std::getline(ss, tok, ',');) {
          const auto q = substance::parse_substance(tok);
          if (!q) throw Error("unknown substance '" + tok + "'");
          req.part_substances.push_back(*q);
        }
      } else {
        const auto counts = lib.counts();
        std::vector<substance::Substance> usable;
        for (auto q : substance::kAllSubstances)
          if (counts[static_cast<std::size_t>(q)] > 0) usable.push_back(q);
        if (usable.empty()) throw Error("library has no materials");
        for (std::size_t p = 0; p < req.part_names.size(); ++p) req.part_substances.push_back(usable[p % usable.size()]);
      }
      if (poses_path.empty()) {
        req.pose_prior = camera::build_viewpoint_grid(camera::grid_preset("paper456")).poses;
      } else {
        for (const auto& p : read_json(poses_path)) req.pose_prior.push_back(camera::pose_from_json(p));
      }
      req.env_maps = env_maps;
      const auto configs = synthgen::sample_batch(req, lib, count, seed);
      for (std::size_t i = 0; i < configs.size(); ++i) {
        const json j = synthgen::to_json(configs[i]);
        if (out_path.empty()) {
          std::cout << j.dump() << "\n";
          continue;
        }
        char name[32];
        std::snprintf(name, sizeof name, "sample_%06zu", i);
        const fs::path base = fs::path(out_path) / name;
        write_json(base.string() + ".config.json", j);
        if (scenes) {
          const auto scene = synthgen::emit_scene(configs[i], mesh, lib, label_res);
          std::ofstream(base.string() + ".scene.json", std::ios::binary) << synthgen::scene_bytes(scene);
          io::write_png(base.string() + ".material.png", scene.material_labels);
          io::write_png(base.string() + ".substance.png", scene.substance_labels);
        }
      }
      if (!out_path.empty()) std::cout << "wrote " << configs.size() << " samples to " << out_path << "\n";
    } else if (*split) {
      std::cout << synthgen::to_json(synthgen::split_train_validation(split_shapes, env_maps, fraction, seed)).dump(2) << "\n";
    } else if (*closed) {
      pipeline::make_closed_loop_fixture(out_path, cl);
      std::cout << "fixture written to " << out_path << "\n";
    } else if (*lib_ref) {
      const auto lib = fixtures::reference_library();
      write_json(out_path, material::to_json(lib));
      print_counts(lib);
    } else if (*lib_stats) {
      print_counts(load_library(library_path));
    } else if (*config_cmd) {
      const auto c = cfg.resolve();
      std::cout << pipeline::to_json(c).dump(2) << "\nhash: " << pipeline::config_hash(c) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
