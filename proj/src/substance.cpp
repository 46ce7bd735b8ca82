#include "photoshape/substance.hpp"

#include <spawn.h>
#include <sys/wait.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "photoshape/error.hpp"
#include "photoshape/image_io.hpp"

extern char** environ;

namespace photoshape::substance {

namespace {
constexpr std::array<std::string_view, kSubstanceCount> kNames{"leather", "fabric", "metal", "wood", "plastic"};

// Substance indices sorted by name, used for lexicographic tie-breaks.
constexpr std::array<int, kSubstanceCount> kByName{1, 0, 2, 4, 3};
}  // namespace

std::string_view name(Substance s) { return kNames[static_cast<std::size_t>(s)]; }

std::optional<Substance> parse_substance(std::string_view text) {
  for (int i = 0; i < kSubstanceCount; ++i)
    if (kNames[static_cast<std::size_t>(i)] == text) return static_cast<Substance>(i);
  return std::nullopt;
}

SubstanceSet SubstanceSet::with_default_aliases() {
  SubstanceSet set;
  for (const char* a : {"carpet", "textile", "upholstery", "cloth"}) set.add_alias(a, Substance::fabric);
  for (const char* a : {"timber", "plywood"}) set.add_alias(a, Substance::wood);
  for (const char* a : {"chrome", "steel", "aluminum", "aluminium", "iron"}) set.add_alias(a, Substance::metal);
  set.add_alias("suede", Substance::leather);
  return set;
}

void SubstanceSet::add_alias(const std::string& alias, Substance target) {
  if (parse_substance(alias)) throw Error("alias '" + alias + "' shadows a canonical substance");
  aliases_[alias] = target;
}

std::optional<Substance> SubstanceSet::resolve(std::string_view label) const {
  if (auto s = parse_substance(label)) return s;
  if (auto it = aliases_.find(label); it != aliases_.end()) return it->second;
  return std::nullopt;
}

SubstanceMap::SubstanceMap(int w, int h)
    : width(w), height(h), probs(static_cast<std::size_t>(w) * h * kSubstanceCount, 1.0 / kSubstanceCount),
      foreground(w, h), flagged(w, h) {}

SubstanceMap remap_substances(const RawDistribution& raw, const SubstanceSet& set) {
  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height, L = raw.labels.size();
  if (raw.probs.size() != n * L) throw Error("remap_substances: probability table has the wrong size");
  std::vector<int> target(L, -1);
  for (std::size_t k = 0; k < L; ++k)
    if (auto s = set.resolve(raw.labels[k])) target[k] = static_cast<int>(*s);

  SubstanceMap out(raw.width, raw.height);
  out.foreground = raw.foreground.values.empty() ? Mask(raw.width, raw.height) : raw.foreground;
  if (raw.foreground.values.empty()) std::fill(out.foreground.values.begin(), out.foreground.values.end(), 1);
  for (std::size_t p = 0; p < n; ++p) {
    if (!out.foreground.values[p]) continue;
    double row_sum = 0.0;
    std::array<double, kSubstanceCount> acc{};
    for (std::size_t k = 0; k < L; ++k) {
      const double v = raw.probs[p * L + k];
      row_sum += v;
      if (target[k] >= 0) acc[static_cast<std::size_t>(target[k])] += v;
    }
    if (std::abs(row_sum - 1.0) > 1e-4)
      throw Error("remap_substances: pixel " + std::to_string(p) + " does not sum to 1");
    double total = 0.0;
    for (double v : acc) total += v;
    double* r = out.row(p);
    if (total <= 0.0) {
      out.flagged.values[p] = 1;
      continue;  // already uniform
    }
    for (int s = 0; s < kSubstanceCount; ++s) r[s] = acc[static_cast<std::size_t>(s)] / total;
  }
  return out;
}

Substance argmax(const double* row) {
  int best = kByName[0];
  for (int i = 1; i < kSubstanceCount; ++i)
    if (row[kByName[static_cast<std::size_t>(i)]] > row[best]) best = kByName[static_cast<std::size_t>(i)];
  return static_cast<Substance>(best);
}

PartSubstanceLabeling aggregate_part_substance(const LabelMap& parts, const SubstanceMap& substances) {
  if (parts.width != substances.width || parts.height != substances.height)
    throw Error("aggregate_part_substance: size mismatch");
  const auto n_parts = static_cast<std::size_t>(parts.label_count);
  PartSubstanceLabeling out;
  out.labels.assign(n_parts, std::nullopt);
  out.counts.assign(n_parts, {});
  out.mass.assign(n_parts, {});
  for (std::size_t p = 0; p < parts.labels.size(); ++p) {
    const int l = parts.labels[p];
    if (l == LabelMap::kBackground || !substances.foreground.values[p] || substances.flagged.values[p]) continue;
    if (static_cast<std::size_t>(l) > n_parts) throw Error("aggregate_part_substance: label exceeds label_count");
    const double* r = substances.row(p);
    ++out.counts[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(argmax(r))];
    for (int s = 0; s < kSubstanceCount; ++s) out.mass[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(s)] += r[s];
  }
  for (std::size_t part = 0; part < n_parts; ++part) {
    const auto& c = out.counts[part];
    const auto& m = out.mass[part];
    std::size_t total = 0;
    for (auto v : c) total += v;
    if (total == 0) {
      out.unknown_parts.push_back(static_cast<int>(part));
      continue;
    }
    std::size_t best = static_cast<std::size_t>(kByName[0]);
    for (int i = 1; i < kSubstanceCount; ++i) {
      const auto s = static_cast<std::size_t>(kByName[static_cast<std::size_t>(i)]);
      if (c[s] > c[best] || (c[s] == c[best] && m[s] > m[best])) best = s;
    }
    out.labels[part] = static_cast<Substance>(best);
  }
  return out;
}

namespace {

constexpr std::uint32_t kVersion = 1;

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

void write_file(const std::filesystem::path& path, int w, int h, const std::vector<std::string>& channels,
                const std::vector<double>& probs, const Mask& foreground, const Mask* flagged) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write("PSSM", 4);
  binary::put_u32(out, kVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(w));
  binary::put_u32(out, static_cast<std::uint32_t>(h));
  binary::put_u32(out, static_cast<std::uint32_t>(channels.size()));
  for (double v : probs) binary::put_f32(out, static_cast<float>(v));
  for (std::size_t p = 0; p < static_cast<std::size_t>(w) * h; ++p) {
    std::uint8_t bits = foreground.values[p] ? 1 : 0;
    if (flagged && flagged->values[p]) bits |= 2;
    binary::put_u8(out, bits);
  }
  nlohmann::json side = {{"format", "photoshape.substance_map/1"}, {"width", w}, {"height", h}, {"channels", channels}};
  std::ofstream js(sidecar(path));
  if (!js) throw Error("cannot write '" + sidecar(path).string() + "'");
  js << side.dump(2) << '\n';
}

struct FileContents {
  RawDistribution raw;
  Mask flagged;
};

FileContents read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  binary::expect_magic(in, "PSSM");
  if (binary::get_u32(in) != kVersion) throw Error("unsupported substance map version in '" + path.string() + "'");
  FileContents f;
  f.raw.width = static_cast<int>(binary::get_u32(in));
  f.raw.height = static_cast<int>(binary::get_u32(in));
  const std::uint32_t channels = binary::get_u32(in);
  const std::size_t n = static_cast<std::size_t>(f.raw.width) * f.raw.height;
  f.raw.probs.resize(n * channels);
  for (double& v : f.raw.probs) v = binary::get_f32(in);
  f.raw.foreground = Mask(f.raw.width, f.raw.height);
  f.flagged = Mask(f.raw.width, f.raw.height);
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint8_t bits = binary::get_u8(in);
    f.raw.foreground.values[p] = bits & 1;
    f.flagged.values[p] = (bits >> 1) & 1;
  }
  std::ifstream js(sidecar(path));
  if (!js) throw Error("missing sidecar '" + sidecar(path).string() + "'");
  const nlohmann::json side = nlohmann::json::parse(js);
  f.raw.labels = side.at("channels").get<std::vector<std::string>>();
  if (f.raw.labels.size() != channels) throw Error("sidecar channel count disagrees with '" + path.string() + "'");
  return f;
}

std::vector<std::string> canonical_names() { return {kNames.begin(), kNames.end()}; }

}  // namespace

void write_raw(const std::filesystem::path& path, const RawDistribution& raw) {
  Mask fg = raw.foreground;
  if (fg.values.empty()) {
    fg = Mask(raw.width, raw.height);
    std::fill(fg.values.begin(), fg.values.end(), 1);
  }
  write_file(path, raw.width, raw.height, raw.labels, raw.probs, fg, nullptr);
}

RawDistribution read_raw(const std::filesystem::path& path) { return read_file(path).raw; }

void write_substance_map(const std::filesystem::path& path, const SubstanceMap& map) {
  write_file(path, map.width, map.height, canonical_names(), map.probs, map.foreground, &map.flagged);
}

SubstanceMap read_substance_map(const std::filesystem::path& path) {
  FileContents f = read_file(path);
  if (f.raw.labels == canonical_names()) {
    SubstanceMap m(f.raw.width, f.raw.height);
    m.probs = std::move(f.raw.probs);
    m.foreground = std::move(f.raw.foreground);
    m.flagged = std::move(f.flagged);
    return m;
  }
  return remap_substances(f.raw);
}

FixtureClassifier::FixtureClassifier(std::filesystem::path dir) : dir_(std::move(dir)) {}
FixtureClassifier::FixtureClassifier(std::map<std::string, SubstanceMap> maps) : maps_(std::move(maps)) {}

SubstanceMap FixtureClassifier::classify(const RgbImage& image, const Mask&, const std::string& exemplar_id) {
  SubstanceMap m;
  if (auto it = maps_.find(exemplar_id); it != maps_.end()) {
    m = it->second;
  } else if (!dir_.empty()) {
    const auto path = dir_ / (exemplar_id + ".pssm");
    if (!std::filesystem::exists(path)) throw PluginError(exemplar_id, "no fixture map at " + path.string());
    try {
      m = read_substance_map(path);
    } catch (const PluginError&) {
      throw;
    } catch (const Error& e) {
      throw PluginError(exemplar_id, e.what());
    }
  } else {
    throw PluginError(exemplar_id, "no fixture map");
  }
  if (m.width != image.width || m.height != image.height)
    throw PluginError(exemplar_id, "fixture map size differs from the image");
  return m;
}

std::array<double, kSubstanceCount> ColorPriorClassifier::pixel_distribution(std::uint8_t r8, std::uint8_t g8,
                                                                             std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), c = mx - mn;
  double hue = 0.0;
  if (c > 0.0) {
    if (mx == r)
      hue = 60.0 * std::fmod((g - b) / c + 6.0, 6.0);
    else if (mx == g)
      hue = 60.0 * ((b - r) / c + 2.0);
    else
      hue = 60.0 * ((r - g) / c + 4.0);
  }
  const double sat = mx > 0.0 ? c / mx : 0.0, val = mx;
  auto sq = [](double x) { return x * x; };
  // Log-scores, one bump per substance in (hue, saturation, value).
  const double hue_dist = std::min(std::abs(hue - 30.0), 360.0 - std::abs(hue - 30.0));
  std::array<double, kSubstanceCount> score{};
  score[static_cast<std::size_t>(Substance::wood)] =
      3.0 - sq(hue_dist / 15.0) - sq((sat - 0.55) / 0.25) - sq((val - 0.45) / 0.25);
  score[static_cast<std::size_t>(Substance::metal)] = 2.5 - sq(sat / 0.12) - sq((val - 0.65) / 0.25);
  score[static_cast<std::size_t>(Substance::leather)] = 2.0 - sq((val - 0.2) / 0.15) - sq((sat - 0.4) / 0.4);
  score[static_cast<std::size_t>(Substance::fabric)] = 1.5 - sq((sat - 0.4) / 0.3) - sq((val - 0.55) / 0.3);
  score[static_cast<std::size_t>(Substance::plastic)] = 1.5 - sq((sat - 0.85) / 0.2) - sq((val - 0.85) / 0.2);
  const double mxs = *std::max_element(score.begin(), score.end());
  double sum = 0.0;
  for (double& s : score) sum += (s = std::exp(s - mxs));
  for (double& s : score) s /= sum;
  return score;
}

SubstanceMap ColorPriorClassifier::classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) {
  if (mask.width != image.width || mask.height != image.height)
    throw PluginError(exemplar_id, "mask size differs from the image");
  SubstanceMap m(image.width, image.height);
  m.foreground = mask;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * image.width + x;
      if (!mask.values[p]) continue;
      const auto d = pixel_distribution(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
      std::copy(d.begin(), d.end(), m.row(p));
    }
  return m;
}

SubprocessClassifier::SubprocessClassifier(std::vector<std::string> argv, std::filesystem::path work_dir,
                                           bool reentrant)
    : argv_(std::move(argv)), work_dir_(std::move(work_dir)), reentrant_(reentrant) {
  if (argv_.empty()) throw Error("subprocess classifier needs a command");
}

std::string SubprocessClassifier::id() const { return "subprocess:" + argv_.front(); }

SubstanceMap SubprocessClassifier::classify(const RgbImage& image, const Mask& mask, const std::string& exemplar_id) {
  std::filesystem::create_directories(work_dir_);
  std::string stem = exemplar_id;
  for (char& ch : stem)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  const auto image_path = work_dir_ / (stem + ".png");
  const auto out_path = work_dir_ / (stem + ".pssm");
  io::write_png(image_path, image);
  std::filesystem::remove(out_path);

  std::vector<std::string> args = argv_;
  args.push_back(image_path.string());
  args.push_back(out_path.string());
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  cargs.push_back(nullptr);

  pid_t pid = 0;
  if (posix_spawnp(&pid, cargs[0], nullptr, nullptr, cargs.data(), environ) != 0)
    throw PluginError(exemplar_id, "cannot start '" + argv_.front() + "'");
  int status = 0;
  if (waitpid(pid, &status, 0) < 0) throw PluginError(exemplar_id, "waitpid failed");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw PluginError(exemplar_id, "'" + argv_.front() + "' exited with status " +
                                       std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  SubstanceMap m;
  try {
    m = read_substance_map(out_path);
  } catch (const Error& e) {
    throw PluginError(exemplar_id, e.what());
  }
  if (m.width != image.width || m.height != image.height)
    throw PluginError(exemplar_id, "plugin output size differs from the image");
  for (std::size_t p = 0; p < m.foreground.values.size(); ++p) m.foreground.values[p] &= mask.values[p];
  return m;
}

std::unique_ptr<Classifier> make_classifier(const std::string& spec, const std::filesystem::path& work_dir) {
  if (spec == "color-prior") return std::make_unique<ColorPriorClassifier>();
  if (spec.rfind("fixture:", 0) == 0) return std::make_unique<FixtureClassifier>(std::filesystem::path(spec.substr(8)));
  if (spec.rfind("subprocess:", 0) == 0) {
    std::istringstream words(spec.substr(11));
    std::vector<std::string> argv;
    for (std::string w; words >> w;) argv.push_back(w);
    return std::make_unique<SubprocessClassifier>(std::move(argv), work_dir);
  }
  throw Error("unknown classifier '" + spec + "'");
}

}  // namespace photoshape::substance
