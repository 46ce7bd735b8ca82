// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Exit status is 0 when every failing criterion is listed in --known-red.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "photoshape/camera.hpp"
#include "photoshape/densecrf.hpp"
#include "photoshape/fixtures.hpp"
#include "photoshape/flowrefine.hpp"
#include "photoshape/hogindex.hpp"
#include "photoshape/material.hpp"
#include "photoshape/pipeline.hpp"
#include "photoshape/raster.hpp"
#include "photoshape/rng.hpp"
#include "photoshape/shapelib.hpp"
#include "photoshape/synthgen.hpp"

using namespace photoshape;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome viewpoint_grid() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = camera::build_viewpoint_grid(camera::grid_preset("paper456"));
  const double secs = seconds_since(t0);
  std::set<std::pair<double, double>> unique;
  bool in_range = true;
  for (const auto& p : grid.poses) {
    unique.insert({p.theta, p.phi});
    in_range = in_range && p.phi >= camera::kPhiMin - 1e-12 && p.phi <= camera::kPhiMax + 1e-12;
  }
  return {grid.poses.size() == 456 && unique.size() == 456 && in_range && secs < 1.0,
          std::to_string(unique.size()) + " unique poses, phi in range: " + (in_range ? "yes" : "no") +
              ", " + fmt(secs * 1000) + " ms"};
}

// Renders every shape over the grid the way the pipeline builds its bank.
std::vector<hogindex::Rendering> render_bank(const std::vector<shapelib::SegmentedMesh>& meshes,
                                             const camera::ViewpointGrid& grid, int resolution, int size) {
  const std::size_t n = grid.poses.size();
  std::vector<hogindex::Rendering> out(meshes.size() * n);
  std::vector<char> ok(out.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(out.size()); ++t) {
    const std::size_t s = static_cast<std::size_t>(t) / n, g = static_cast<std::size_t>(t) % n;
    const auto render = raster::render_part_ids(meshes[s], grid.poses[g], resolution);
    const Mask sil = raster::silhouette(render);
    if (sil.count() == 0) continue;
    const Mask cropped = raster::crop(sil, raster::square_crop_window(sil), size);
    out[static_cast<std::size_t>(t)] = {"shape" + std::to_string(s), static_cast<int>(g), grid.poses[g],
                                        hogindex::hog(pipeline::silhouette_image(cropped)).values};
    ok[static_cast<std::size_t>(t)] = 1;
  }
  std::vector<hogindex::Rendering> kept;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (ok[i]) kept.push_back(std::move(out[i]));
  return kept;
}

Outcome hog_index(const fs::path& work) {
  const std::size_t dims = hogindex::HogConfig{}.dimensions();
  const auto grid = camera::build_viewpoint_grid(camera::grid_preset("paper456"));
  std::vector<shapelib::SegmentedMesh> meshes;
  for (int i = 0; i < 11; ++i)
    meshes.push_back(pipeline::prepare_mesh(shapelib::load_obj(fixtures::asymmetric_shape(i, 3).obj)));

  const auto t0 = std::chrono::steady_clock::now();
  const auto bank = render_bank(meshes, grid, 256, 256);
  hogindex::write_bank(work / "bank.psdb", hogindex::HogConfig{}, bank);
  const double build_secs = seconds_since(t0);

  bool dims_ok = dims == 1352;
  for (const auto& r : bank) dims_ok = dims_ok && r.descriptor.size() == 1352;

  std::vector<hogindex::ExemplarQuery> queries;
  for (const auto& r : bank) queries.push_back({r.shape_id + "#" + std::to_string(r.pose_index), r.descriptor});
  const auto index = hogindex::build_reverse_index(queries, bank, 1);
  std::size_t self = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& h = index.hits[i].front();
    self += h.distance == 0.0 && h.shape_id == bank[i].shape_id && h.pose_index == bank[i].pose_index;
  }
  return {dims_ok && self == bank.size() && bank.size() >= 5000 && build_secs < 60.0,
          std::to_string(dims) + " dims, " + std::to_string(self) + "/" + std::to_string(bank.size()) +
              " self-retrieved at distance 0, bank built in " + fmt(build_secs) + " s"};
}

densecrf::Unary random_unary(int w, int h, int k, Rng& rng) {
  densecrf::Unary u{w, h, k, std::vector<double>(static_cast<std::size_t>(w) * h * k)};
  for (auto& v : u.values) v = 3.0 * rng.uniform();
  return u;
}

RgbImage random_image(int w, int h, Rng& rng) {
  RgbImage img(w, h, 3, 0);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

Outcome dense_crf() {
  using namespace densecrf;
  Rng rng(2024);
  double worst_dq = 0, worst_norm = 0;
  bool argmax_ok = true;
  for (int t = 0; t < 20; ++t) {
    const int w = 4 + static_cast<int>(rng.index(29)), h = 4 + static_cast<int>(rng.index(29));
    const int k = 2 + static_cast<int>(rng.index(5));
    const auto u = random_unary(w, h, k, rng);
    const auto img = random_image(w, h, rng);
    auto check_norm = [&](int, const Marginals& q) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
        double s = 0;
        for (int l = 0; l < k; ++l) s += q.at(i, l);
        worst_norm = std::max(worst_norm, std::abs(s - 1.0));
      }
    };
    const auto a = mean_field(u, img, {}, Method::brute_force, check_norm);
    const auto b = mean_field(u, img, {}, Method::accelerated, check_norm);
    for (std::size_t i = 0; i < a.q.size(); ++i) worst_dq = std::max(worst_dq, std::abs(a.q[i] - b.q[i]));

    CrfParams zero;
    zero.w_appearance = 0;
    zero.w_smoothness = 0;
    for (auto method : {Method::brute_force, Method::accelerated}) {
      const auto q = mean_field(u, img, zero, method);
      for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
        int best_q = 0, best_u = 0;
        for (int l = 1; l < k; ++l) {
          if (q.at(i, l) > q.at(i, best_q)) best_q = l;
          if (u.values[i * k + l] < u.values[i * k + best_u]) best_u = l;
        }
        argmax_ok = argmax_ok && best_q == best_u;
      }
    }
  }
  return {worst_dq <= 1e-3 && worst_norm <= 1e-6 && argmax_ok,
          "max |dQ| " + fmt(worst_dq) + ", max |sum Q - 1| " + fmt(worst_norm) +
              ", zero-pairwise argmax " + (argmax_ok ? "exact" : "differs")};
}

// Non-symmetric convex trapezoid, offset by (dx, dy) and scaled about the centre.
Mask trapezoid(int size, double dx, double dy, double scale) {
  Mask m(size, size);
  const double c = size / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5 - c - dx) / scale, v = (y + 0.5 - c - dy) / scale;
      const double half = size * 0.15 + 0.25 * (v + size * 0.2);
      m.set(x, y, v > -size * 0.2 && v < size * 0.22 && u > -half && u < half * 0.8);
    }
  return m;
}

Mask ellipse(int size, double cx, double cy, double rx, double ry) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      m.set(x, y, std::pow((x + 0.5 - cx) / rx, 2) + std::pow((y + 0.5 - cy) / ry, 2) <= 1);
  return m;
}

double iou(const Mask& a, const Mask& b) {
  double i = 0, u = 0;
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    i += a.values[k] && b.values[k];
    u += a.values[k] || b.values[k];
  }
  return u > 0 ? i / u : 1.0;
}

Outcome flow() {
  using namespace flowrefine;
  const int size = 128;
  const auto src = trapezoid(size, 0, 0, 0.7);
  const std::vector<std::pair<int, int>> shifts{{6, 0}, {0, -10}, {15, 12}, {-22, 9}, {30, -4}, {-12, -28}};
  int worst_median = 0;
  double enc_err = 0, plain_err = 0;
  for (auto [dx, dy] : shifts) {
    const auto dst = trapezoid(size, dx, dy, 0.7);
    for (bool encoded : {true, false}) {
      const auto f = encoded ? compute_flow(encode_coordinate_silhouette(src), encode_coordinate_silhouette(dst))
                             : compute_flow(plain_silhouette(src), plain_silhouette(dst));
      std::vector<int> ex, ey;
      double sum = 0;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (src.at(x, y)) {
            const auto i = f.index(x, y);
            ex.push_back(f.u[i] - dx);
            ey.push_back(f.v[i] - dy);
            sum += std::hypot(f.u[i] - dx, f.v[i] - dy);
          }
      (encoded ? enc_err : plain_err) += sum / static_cast<double>(ex.size());
      if (encoded) {
        std::nth_element(ex.begin(), ex.begin() + ex.size() / 2, ex.end());
        std::nth_element(ey.begin(), ey.begin() + ey.size() / 2, ey.end());
        worst_median = std::max({worst_median, std::abs(ex[ex.size() / 2]), std::abs(ey[ey.size() / 2])});
      }
    }
  }
  enc_err /= static_cast<double>(shifts.size());
  plain_err /= static_cast<double>(shifts.size());

  double min_iou = 1.0;
  const std::vector<std::tuple<double, double, double>> affine{{3, -2, 1.08}, {-4, 5, 0.92}, {6, 1, 1.12}, {-5, -3, 0.9}};
  for (const auto& a : {trapezoid(64, 0, 0, 1.0), ellipse(64, 30, 33, 17, 12)}) {
    for (auto [dx, dy, s] : affine) {
      Mask dst(64, 64);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const int sx = static_cast<int>(std::floor((x + 0.5 - 32 - dx) / s + 32));
          const int sy = static_cast<int>(std::floor((y + 0.5 - 32 - dy) / s + 32));
          dst.set(x, y, sx >= 0 && sy >= 0 && sx < 64 && sy < 64 && a.at(sx, sy));
        }
      const auto f = compute_flow(encode_coordinate_silhouette(a), encode_coordinate_silhouette(dst));
      min_iou = std::min(min_iou, iou(warp_mask(a, f), dst));
    }
  }
  const bool translation_ok = worst_median == 0, affine_ok = min_iou >= 0.95, strict = enc_err < plain_err;
  return {translation_ok && affine_ok && strict,
          "worst median error " + std::to_string(worst_median) + " px, affine min IoU " + fmt(min_iou) +
              ", mean error encoded " + fmt(enc_err) + " vs plain " + fmt(plain_err) +
              (strict ? "" : " (not strictly lower)")};
}

Outcome uv_density() {
  Rng rng(55);
  double worst = 0;
  std::size_t parts = 0;
  for (int i = 0; i < 50; ++i) {
    auto raw = shapelib::load_obj(fixtures::asymmetric_shape(i, 11).obj);
    if (i % 5 == 4) {
      raw.uv.clear();
      raw.needs_uv = true;
    } else {
      std::vector<double> scale(static_cast<std::size_t>(raw.material_part_count()));
      for (auto& s : scale) s = rng.uniform(0.05, 20.0);
      for (std::size_t f = 0; f < raw.uv.size(); ++f)
        for (auto& c : raw.uv[f]) c *= scale[static_cast<std::size_t>(raw.face_material_part[f])];
    }
    const auto mesh = pipeline::prepare_mesh(raw);
    for (int p = 0; p < mesh.material_part_count(); ++p) {
      worst = std::max(worst, std::abs(shapelib::uv_density(mesh, p).density - 1.0));
      ++parts;
    }
  }
  return {worst <= 1e-6, std::to_string(parts) + " parts over 50 meshes, max |D - 1| " + fmt(worst)};
}

Outcome loss_math() {
  const auto r = material::check_gradients(1000, 99, 1e-5);
  const bool ok = r.max_relative_error <= 1e-5 && r.max_fixed_vs_uncertainty <= 1e-12 && r.max_stationary_error <= 1e-9;
  return {ok, "max relative gradient error " + fmt(r.max_relative_error) + ", |uncertainty(0) - fixed| " +
                  fmt(r.max_fixed_vs_uncertainty) + ", stationary error " + fmt(r.max_stationary_error)};
}

Outcome sampler() {
  using namespace synthgen;
  const auto lib = fixtures::reference_library();
  SampleRequest req;
  req.shape_id = "shape";
  req.exemplar_id = "ex";
  req.pose_prior = camera::build_viewpoint_grid(camera::grid_preset("paper456")).poses;
  for (auto q : substance::kAllSubstances) {
    req.part_names.push_back(std::string(substance::name(q)));
    req.part_substances.push_back(q);
  }
  req.env_maps = {"studio", "sunset", "overcast", "forest"};

  std::size_t outside = 0, wrong_substance = 0;
  for (const auto& c : sample_batch(req, lib, 10000, 1)) {
    const auto& base = req.pose_prior[c.prior_index];
    const double dt = std::remainder(c.pose.theta - base.theta, 2 * kPi);
    outside += c.fov_x < 50 || c.fov_x > 60 || c.r < 1.3 || c.r > 1.75 || c.env_scale < 0.9 ||
               c.env_scale > 1.2 || std::abs(c.dtheta) > kPi / 12 || std::abs(c.dphi) > kPi / 24 ||
               std::abs(dt) > kPi / 12 + 1e-9;
    for (const auto& p : c.parts) {
      const int m = lib.index_of(p.material_id);
      wrong_substance += m < 0 || lib.records[static_cast<std::size_t>(m)].substance != req.part_substances[p.part_id];
    }
  }

  const std::size_t n = 100000;
  std::map<std::string, std::size_t> freq;
  for (const auto& c : sample_batch(req, lib, n, 2))
    for (const auto& p : c.parts) ++freq[p.material_id];
  const auto counts = lib.counts();
  double worst = 0;
  for (const auto& r : lib.records) {
    const double expected = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(r.substance)]);
    worst = std::max(worst, std::abs(static_cast<double>(freq[r.id]) / n - expected));
  }
  return {outside == 0 && wrong_substance == 0 && worst <= 0.002,
          std::to_string(outside) + " draws out of range, " + std::to_string(wrong_substance) +
              " substance violations, max frequency deviation " + fmt(worst)};
}

struct ClosedLoop {
  Outcome accuracy;
  Outcome determinism;
};

ClosedLoop closed_loop(const fs::path& work) {
  const fs::path dir = work / "closed_loop";
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::ClosedLoopOptions options;
  options.shapes = 10;
  options.grid_preset = "paper456";
  pipeline::make_closed_loop_fixture(dir, options);
  const auto config = pipeline::load_config(dir / "config.json");
  const auto library = material::load_material_library_file(dir / "library.json");
  pipeline::run_pipeline(dir / "shapes", dir / "exemplars", library, dir / "run_a", config);
  const double secs = seconds_since(t0);
  const auto truth = nlohmann::json::parse(slurp(dir / "truth.json"));
  const auto e = pipeline::evaluate(dir / "run_a", truth, library);
  const double pose = e["pose"]["accuracy"].get<double>(), mtl = e["material"]["mtl@1"].get<double>();
  ClosedLoop out;
  out.accuracy = {pose == 1.0 && mtl == 1.0 && e["unmatched"].empty() && e["unassigned"].empty() && secs < 300,
                  "pose accuracy " + fmt(pose) + " (" + e["pose"]["correct"].dump() + "/" + e["pose"]["evaluated"].dump() +
                      "), mtl@1 " + fmt(mtl) + " over " + e["matched"].dump() + " parts, " + fmt(secs) + " s"};

  pipeline::run_pipeline(dir / "shapes", dir / "exemplars", library, dir / "run_b", config);
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(dir / "run_a" / "descriptors")) {
    ++files;
    differ += slurp(entry.path()) != slurp(dir / "run_b" / "descriptors" / entry.path().filename());
  }
  const bool report_same = slurp(dir / "run_a" / "report.json") == slurp(dir / "run_b" / "report.json");
  out.determinism = {files > 0 && differ == 0 && report_same,
                     std::to_string(files - differ) + "/" + std::to_string(files) +
                         " descriptors identical, report " + (report_same ? "identical" : "differs")};
  return out;
}

Outcome reference_manifest(const fs::path& path) {
  const auto lib = material::load_material_library_file(path);
  const auto c = lib.counts();
  using substance::Substance;
  auto at = [&](Substance q) { return c[static_cast<std::size_t>(q)]; };
  const bool ok = at(Substance::leather) == 48 && at(Substance::fabric) == 154 && at(Substance::wood) == 105 &&
                  at(Substance::metal) == 86 && at(Substance::plastic) == 60 && lib.size() == 453;
  return {ok, "leather " + std::to_string(at(Substance::leather)) + ", fabric " + std::to_string(at(Substance::fabric)) +
                  ", wood " + std::to_string(at(Substance::wood)) + ", metal " + std::to_string(at(Substance::metal)) +
                  ", plastic " + std::to_string(at(Substance::plastic)) + ", total " + std::to_string(lib.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"photoshape acceptance checks"};
  std::vector<int> known_red, only;
  std::string work = (fs::temp_directory_path() / "photoshape_acceptance").string();
  std::string manifest = PHOTOSHAPE_REFERENCE_MANIFEST;
  app.add_option("--known-red", known_red, "criteria expected to fail; they do not affect the exit status");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--work-dir", work);
  app.add_option("--manifest", manifest, "reference material manifest");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const char* names[] = {"",
                         "viewpoint grid paper456",
                         "HOG dimensions, identity retrieval, index build time",
                         "dense CRF accelerated vs brute force",
                         "flow translation, affine and coordinate encoding",
                         "UV density normalization",
                         "loss gradients",
                         "render-configuration sampler",
                         "closed-loop pose and material recovery",
                         "reference material manifest",
                         "run determinism"};
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, Outcome> results;
  auto guarded = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    try {
      results[c] = f();
    } catch (const std::exception& e) {
      results[c] = {false, std::string("exception: ") + e.what()};
    }
  };
  guarded(1, viewpoint_grid);
  guarded(2, [&] { return hog_index(work); });
  guarded(3, dense_crf);
  guarded(4, flow);
  guarded(5, uv_density);
  guarded(6, loss_math);
  guarded(7, sampler);
  if (wanted(8) || wanted(10)) {
    try {
      const auto cl = closed_loop(work);
      results[8] = cl.accuracy;
      results[10] = cl.determinism;
    } catch (const std::exception& e) {
      results[8] = results[10] = {false, std::string("exception: ") + e.what()};
    }
  }
  guarded(9, [&] { return reference_manifest(manifest); });

  int unexpected = 0;
  for (const auto& [c, r] : results) {
    if (!wanted(c)) continue;
    const bool red = std::find(known_red.begin(), known_red.end(), c) != known_red.end();
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << c << " " << names[c] << ": " << r.detail
              << (!r.pass && red ? " [known red]" : "") << "\n";
    unexpected += !r.pass && !red;
  }
  return unexpected == 0 ? 0 : 1;
}
