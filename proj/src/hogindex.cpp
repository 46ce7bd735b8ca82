#include "photoshape/hogindex.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <tuple>

#include "binary_io.hpp"
#include "photoshape/error.hpp"

namespace photoshape::hogindex {

HogDescriptor hog(const RgbImage& image, const HogConfig& config) { return hog(to_gray(image), config); }

HogDescriptor hog(const FloatImage& gray, const HogConfig& config) {
  if (config.cells_x < 1 || config.cells_y < 1 || config.cell_size < 1 || config.orientation_bins < 1)
    throw Error("invalid HOG configuration");
  if (gray.width < config.cell_size || gray.height < config.cell_size)
    throw Error("image is smaller than one HOG cell");

  const int w = config.working_width(), h = config.working_height();
  const FloatImage work = gaussian_blur(resize(gray, w, h), config.blur_sigma);
  const int bins = config.orientation_bins;
  const int cx_n = config.cells_x, cy_n = config.cells_y;
  const double range = config.signed_gradients ? 2.0 * std::numbers::pi : std::numbers::pi;

  std::vector<double> hist(static_cast<std::size_t>(cx_n) * cy_n * bins, 0.0);
  auto cell = [&](int cx, int cy) { return &hist[(static_cast<std::size_t>(cy) * cx_n + cx) * bins]; };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = work.at(std::min(x + 1, w - 1), y) - work.at(std::max(x - 1, 0), y);
      const double gy = work.at(x, std::min(y + 1, h - 1)) - work.at(x, std::max(y - 1, 0));
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += 2.0 * std::numbers::pi;
      angle = std::fmod(angle, range);

      // Orientation vote split between the two nearest bin centres.
      const double ob = angle / range * bins - 0.5;
      const int o0 = static_cast<int>(std::floor(ob));
      const double ot = ob - o0;
      const int b0 = (o0 + bins) % bins, b1 = (o0 + 1 + bins) % bins;

      // Spatial vote split between the four nearest cell centres.
      const double fx = (x + 0.5) / config.cell_size - 0.5;
      const double fy = (y + 0.5) / config.cell_size - 0.5;
      const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
      const double tx = fx - x0, ty = fy - y0;
      for (int dy = 0; dy <= 1; ++dy) {
        const int cy = y0 + dy;
        if (cy < 0 || cy >= cy_n) continue;
        const double wy = dy ? ty : 1.0 - ty;
        for (int dx = 0; dx <= 1; ++dx) {
          const int cx = x0 + dx;
          if (cx < 0 || cx >= cx_n) continue;
          const double wxy = (dx ? tx : 1.0 - tx) * wy * mag;
          double* c = cell(cx, cy);
          c[b0] += wxy * (1.0 - ot);
          c[b1] += wxy * ot;
        }
      }
    }
  }

  // Block normalisation: every 2x2 block is L2-normalised, clipped and
  // renormalised; each cell averages its normalised copies.
  const int bw = std::min(2, cx_n), bh = std::min(2, cy_n);
  constexpr double kEps = 1e-2;
  std::vector<double> acc(hist.size(), 0.0);
  std::vector<int> copies(static_cast<std::size_t>(cx_n) * cy_n, 0);
  std::vector<double> block(static_cast<std::size_t>(bw) * bh * bins);
  for (int by = 0; by + bh <= cy_n; ++by) {
    for (int bx = 0; bx + bw <= cx_n; ++bx) {
      std::size_t n = 0;
      for (int j = 0; j < bh; ++j)
        for (int i = 0; i < bw; ++i)
          for (int b = 0; b < bins; ++b) block[n++] = cell(bx + i, by + j)[b];
      auto normalize = [&] {
        double ss = 0.0;
        for (double v : block) ss += v * v;
        const double inv = 1.0 / std::sqrt(ss + kEps * kEps);
        for (double& v : block) v *= inv;
      };
      normalize();
      for (double& v : block) v = std::min(v, config.clip);
      normalize();
      n = 0;
      for (int j = 0; j < bh; ++j)
        for (int i = 0; i < bw; ++i) {
          const std::size_t c = static_cast<std::size_t>(by + j) * cx_n + bx + i;
          ++copies[c];
          for (int b = 0; b < bins; ++b) acc[c * bins + b] += block[n++];
        }
    }
  }

  HogDescriptor d;
  d.config = config;
  d.values.resize(hist.size());
  for (std::size_t c = 0; c < copies.size(); ++c)
    for (int b = 0; b < bins; ++b)
      d.values[c * bins + b] = copies[c] ? static_cast<float>(acc[c * bins + b] / copies[c]) : 0.0f;
  return d;
}

double l2_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error("descriptor length mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

namespace {

struct Scored {
  double distance;
  const Rendering* r;
};

bool closer(const Scored& a, const Scored& b) {
  return std::tie(a.distance, a.r->shape_id, a.r->pose_index) < std::tie(b.distance, b.r->shape_id, b.r->pose_index);
}

std::vector<IndexHit> top_k(std::span<const float> query, std::span<const Rendering> renderings, int k) {
  std::vector<Scored> scored;
  scored.reserve(renderings.size());
  for (const Rendering& r : renderings) scored.push_back({l2_distance(query, r.descriptor), &r});
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), closer);
  std::vector<IndexHit> hits;
  hits.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i)
    hits.push_back({scored[i].r->shape_id, scored[i].r->pose_index, scored[i].r->pose, scored[i].distance});
  return hits;
}

ReverseIndex empty_index(std::span<const ExemplarQuery> exemplars, int k, const HogConfig& config) {
  if (k < 1) throw Error("reverse index k must be >= 1");
  ReverseIndex index;
  index.k = k;
  index.config = config;
  for (const auto& e : exemplars) index.exemplar_ids.push_back(e.id);
  index.hits.resize(exemplars.size());
  return index;
}

}  // namespace

CoarseMatch coarse_match(std::span<const float> query, std::span<const Rendering> renderings) {
  if (renderings.empty()) throw Error("coarse_match needs at least one rendering");
  const auto hits = top_k(query, renderings, 1);
  return {hits[0].shape_id, hits[0].pose_index, hits[0].pose, "", hits[0].distance};
}

ReverseIndex build_reverse_index(std::span<const ExemplarQuery> exemplars, std::span<const Rendering> renderings,
                                 int k, const HogConfig& config) {
  ReverseIndex index = empty_index(exemplars, k, config);
  const auto n = static_cast<std::ptrdiff_t>(exemplars.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) index.hits[i] = top_k(exemplars[i].descriptor, renderings, k);
  return index;
}

ReverseIndex build_reverse_index_serial(std::span<const ExemplarQuery> exemplars,
                                        std::span<const Rendering> renderings, int k, const HogConfig& config) {
  ReverseIndex index = empty_index(exemplars, k, config);
  for (std::size_t i = 0; i < exemplars.size(); ++i) index.hits[i] = top_k(exemplars[i].descriptor, renderings, k);
  return index;
}

InvertedIndex invert_index(const ReverseIndex& index) {
  InvertedIndex out;
  for (std::size_t e = 0; e < index.hits.size(); ++e) {
    const std::string& exemplar = index.exemplar_ids[e];
    for (const IndexHit& h : index.hits[e]) {
      auto& list = out[h.shape_id];
      auto it = std::find_if(list.begin(), list.end(), [&](const InvertedHit& x) { return x.exemplar_id == exemplar; });
      if (it == list.end()) {
        list.push_back({exemplar, h.pose_index, h.pose, h.distance});
      } else if (std::tie(h.distance, h.pose_index) < std::tie(it->distance, it->pose_index)) {
        *it = {exemplar, h.pose_index, h.pose, h.distance};
      }
    }
  }
  for (auto& [shape, list] : out)
    std::sort(list.begin(), list.end(), [](const InvertedHit& a, const InvertedHit& b) {
      return std::tie(a.distance, a.exemplar_id) < std::tie(b.distance, b.exemplar_id);
    });
  return out;
}

namespace {

void put_config(std::ostream& out, const HogConfig& c) {
  binary::put_u32(out, static_cast<std::uint32_t>(c.cells_x));
  binary::put_u32(out, static_cast<std::uint32_t>(c.cells_y));
  binary::put_u32(out, static_cast<std::uint32_t>(c.cell_size));
  binary::put_u32(out, static_cast<std::uint32_t>(c.orientation_bins));
  binary::put_u8(out, c.signed_gradients ? 1 : 0);
  binary::put_f64(out, c.blur_sigma);
  binary::put_f64(out, c.clip);
}

HogConfig get_config(std::istream& in) {
  HogConfig c;
  c.cells_x = static_cast<int>(binary::get_u32(in));
  c.cells_y = static_cast<int>(binary::get_u32(in));
  c.cell_size = static_cast<int>(binary::get_u32(in));
  c.orientation_bins = static_cast<int>(binary::get_u32(in));
  c.signed_gradients = binary::get_u8(in) != 0;
  c.blur_sigma = binary::get_f64(in);
  c.clip = binary::get_f64(in);
  return c;
}

void put_pose(std::ostream& out, const camera::SphericalPose& p) {
  binary::put_f64(out, p.theta);
  binary::put_f64(out, p.phi);
  binary::put_f64(out, p.r);
  binary::put_f64(out, p.fov_x);
}

camera::SphericalPose get_pose(std::istream& in) {
  camera::SphericalPose p;
  p.theta = binary::get_f64(in);
  p.phi = binary::get_f64(in);
  p.r = binary::get_f64(in);
  p.fov_x = binary::get_f64(in);
  return p;
}

constexpr std::uint32_t kVersion = 1;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  return in;
}

}  // namespace

void write_index(const std::filesystem::path& path, const ReverseIndex& index) {
  auto out = open_out(path);
  out.write("PSIX", 4);
  binary::put_u32(out, kVersion);
  put_config(out, index.config);
  binary::put_u32(out, static_cast<std::uint32_t>(index.k));
  binary::put_u32(out, static_cast<std::uint32_t>(index.exemplar_ids.size()));
  for (std::size_t e = 0; e < index.exemplar_ids.size(); ++e) {
    binary::put_string(out, index.exemplar_ids[e]);
    binary::put_u32(out, static_cast<std::uint32_t>(index.hits[e].size()));
    for (const IndexHit& h : index.hits[e]) {
      binary::put_string(out, h.shape_id);
      binary::put_u32(out, static_cast<std::uint32_t>(h.pose_index));
      put_pose(out, h.pose);
      binary::put_f64(out, h.distance);
    }
  }
}

ReverseIndex read_index(const std::filesystem::path& path) {
  auto in = open_in(path);
  binary::expect_magic(in, "PSIX");
  if (binary::get_u32(in) != kVersion) throw Error("unsupported index version");
  ReverseIndex index;
  index.config = get_config(in);
  index.k = static_cast<int>(binary::get_u32(in));
  const std::uint32_t n = binary::get_u32(in);
  for (std::uint32_t e = 0; e < n; ++e) {
    index.exemplar_ids.push_back(binary::get_string(in));
    std::vector<IndexHit> hits(binary::get_u32(in));
    for (IndexHit& h : hits) {
      h.shape_id = binary::get_string(in);
      h.pose_index = static_cast<int>(binary::get_u32(in));
      h.pose = get_pose(in);
      h.distance = binary::get_f64(in);
    }
    index.hits.push_back(std::move(hits));
  }
  return index;
}

void write_bank(const std::filesystem::path& path, const HogConfig& config, std::span<const Rendering> renderings) {
  auto out = open_out(path);
  out.write("PSDB", 4);
  binary::put_u32(out, kVersion);
  put_config(out, config);
  binary::put_u32(out, static_cast<std::uint32_t>(renderings.size()));
  binary::put_u32(out, static_cast<std::uint32_t>(config.dimensions()));
  for (const Rendering& r : renderings) {
    if (r.descriptor.size() != config.dimensions()) throw Error("rendering descriptor has wrong length");
    binary::put_string(out, r.shape_id);
    binary::put_u32(out, static_cast<std::uint32_t>(r.pose_index));
    put_pose(out, r.pose);
    for (float v : r.descriptor) binary::put_f32(out, v);
  }
}

std::vector<Rendering> read_bank(const std::filesystem::path& path, HogConfig* config) {
  auto in = open_in(path);
  binary::expect_magic(in, "PSDB");
  if (binary::get_u32(in) != kVersion) throw Error("unsupported bank version");
  const HogConfig c = get_config(in);
  if (config) *config = c;
  const std::uint32_t n = binary::get_u32(in);
  const std::uint32_t dims = binary::get_u32(in);
  std::vector<Rendering> out(n);
  for (Rendering& r : out) {
    r.shape_id = binary::get_string(in);
    r.pose_index = static_cast<int>(binary::get_u32(in));
    r.pose = get_pose(in);
    r.descriptor.resize(dims);
    for (float& v : r.descriptor) v = binary::get_f32(in);
  }
  return out;
}

nlohmann::json to_json(const ReverseIndex& index) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t e = 0; e < index.exemplar_ids.size(); ++e) {
    nlohmann::json hits = nlohmann::json::array();
    for (const IndexHit& h : index.hits[e])
      hits.push_back({{"shape_id", h.shape_id},
                      {"pose_index", h.pose_index},
                      {"pose", camera::to_json(h.pose)},
                      {"distance", h.distance}});
    entries.push_back({{"exemplar_id", index.exemplar_ids[e]}, {"hits", std::move(hits)}});
  }
  return {{"format", "photoshape.reverse_index/1"},
          {"k", index.k},
          {"hog",
           {{"cells_x", index.config.cells_x},
            {"cells_y", index.config.cells_y},
            {"cell_size", index.config.cell_size},
            {"orientation_bins", index.config.orientation_bins},
            {"signed", index.config.signed_gradients},
            {"blur_sigma", index.config.blur_sigma}}},
          {"entries", std::move(entries)}};
}

nlohmann::json to_json(const InvertedIndex& inverted) {
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [shape, list] : inverted) {
    nlohmann::json hits = nlohmann::json::array();
    for (const InvertedHit& h : list)
      hits.push_back({{"exemplar_id", h.exemplar_id},
                      {"pose_index", h.pose_index},
                      {"pose", camera::to_json(h.pose)},
                      {"distance", h.distance}});
    shapes[shape] = std::move(hits);
  }
  return {{"format", "photoshape.inverted_index/1"}, {"shapes", std::move(shapes)}};
}

InvertedIndex inverted_from_json(const nlohmann::json& j) {
  InvertedIndex out;
  for (const auto& [shape, hits] : j.at("shapes").items())
    for (const auto& h : hits)
      out[shape].push_back({h.at("exemplar_id").get<std::string>(), h.at("pose_index").get<int>(),
                            camera::pose_from_json(h.at("pose")), h.at("distance").get<double>()});
  return out;
}

}  // namespace photoshape::hogindex
