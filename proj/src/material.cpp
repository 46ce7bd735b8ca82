#include "photoshape/material.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "photoshape/error.hpp"
#include "photoshape/rng.hpp"

namespace photoshape::material {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kSignatureBins = 3 * kHistogramBins;
}  // namespace

std::array<std::size_t, substance::kSubstanceCount> MaterialLibrary::counts() const {
  std::array<std::size_t, substance::kSubstanceCount> c{};
  for (const auto& r : records) ++c[static_cast<std::size_t>(r.substance)];
  return c;
}

int MaterialLibrary::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].id == id) return static_cast<int>(i);
  return -1;
}

MaterialLibrary load_material_library(const nlohmann::json& manifest) {
  const nlohmann::json& items = manifest.is_array() ? manifest : manifest.at("materials");
  if (!items.is_array()) throw Error("material manifest must be an array of records");
  MaterialLibrary lib;
  std::map<std::string, std::size_t> seen;
  for (const auto& item : items) {
    MaterialRecord r;
    r.id = item.at("id").get<std::string>();
    r.name = item.value("name", r.id);
    const auto sub = item.at("substance").get<std::string>();
    const auto q = substance::parse_substance(sub);
    if (!q) throw Error("material '" + r.id + "': unknown substance '" + sub + "'");
    r.substance = *q;
    r.scale = item.at("scale").get<double>();
    if (!(r.scale > 1.0)) throw Error("material '" + r.id + "': scale must exceed 1");
    const auto& sig = item.at("signature");
    const auto median = sig.at("median").get<std::vector<double>>();
    if (median.size() != 3) throw Error("material '" + r.id + "': median must have 3 channels");
    std::copy(median.begin(), median.end(), r.signature.median.begin());
    r.signature.histogram = sig.at("histogram").get<std::vector<double>>();
    if (r.signature.histogram.size() != kSignatureBins)
      throw Error("material '" + r.id + "': histogram must have 48 bins");
    const double sum = std::accumulate(r.signature.histogram.begin(), r.signature.histogram.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-6) throw Error("material '" + r.id + "': histogram does not sum to 1");
    if (item.contains("brdf_meta")) r.brdf_meta = item["brdf_meta"];
    if (!seen.emplace(r.id, lib.records.size()).second) throw Error("duplicate material id '" + r.id + "'");
    lib.records.push_back(std::move(r));
  }
  if (lib.records.empty()) lib.warnings.push_back("material library is empty");
  return lib;
}

MaterialLibrary load_material_library_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read material manifest '" + path.string() + "'");
  try {
    return load_material_library(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("material manifest '" + path.string() + "': " + e.what());
  }
}

nlohmann::json to_json(const MaterialRecord& r) {
  return {{"id", r.id},
          {"name", r.name},
          {"substance", std::string(substance::name(r.substance))},
          {"scale", r.scale},
          {"signature", {{"median", r.signature.median}, {"histogram", r.signature.histogram}}},
          {"brdf_meta", r.brdf_meta}};
}

nlohmann::json to_json(const MaterialLibrary& library) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : library.records) out.push_back(to_json(r));
  return out;
}

std::array<double, 3> median_color(const RgbImage& image, const Mask& mask) {
  if (mask.width != image.width || mask.height != image.height) throw Error("median_color: mask size mismatch");
  std::array<std::vector<std::uint8_t>, 3> ch;
  for (std::size_t p = 0; p < mask.values.size(); ++p)
    if (mask.values[p])
      for (int c = 0; c < 3; ++c) ch[static_cast<std::size_t>(c)].push_back(image.data[p * 3 + c]);
  if (ch[0].empty()) throw Error("median_color: empty mask");
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    auto& v = ch[c];
    const std::size_t n = v.size(), mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (n % 2 == 1) {
      out[c] = hi;
    } else {
      const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
      out[c] = 0.5 * (lo + hi);
    }
  }
  return out;
}

std::vector<double> color_histogram(const RgbImage& image, const Mask& mask) {
  if (mask.width != image.width || mask.height != image.height) throw Error("color_histogram: mask size mismatch");
  std::vector<double> h(kSignatureBins, 0.0);
  std::size_t n = 0;
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    if (!mask.values[p]) continue;
    ++n;
    for (int c = 0; c < 3; ++c)
      h[static_cast<std::size_t>(c * kHistogramBins + image.data[p * 3 + c] * kHistogramBins / 256)] += 1.0;
  }
  if (n == 0) throw Error("color_histogram: empty mask");
  for (double& v : h) v /= 3.0 * static_cast<double>(n);
  return h;
}

Signature compute_signature(const RgbImage& image, const Mask& mask) {
  return {median_color(image, mask), color_histogram(image, mask)};
}

double chi_squared(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("chi_squared: histogram length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d / (a[i] + b[i] + 1e-10);
  }
  return s;
}

MaterialScores median_color_match(const RgbImage& image, const Mask& mask, const MaterialLibrary& library) {
  const auto med = median_color(image, mask);
  MaterialScores s{{}, "median-color"};
  for (const auto& r : library.records) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d2 += (med[c] - r.signature.median[c]) * (med[c] - r.signature.median[c]);
    s.scores.push_back(-std::sqrt(d2));
  }
  s.scores.push_back(kNegInf);
  return s;
}

MaterialScores histogram_match(const RgbImage& image, const Mask& mask, const MaterialLibrary& library) {
  const auto hist = color_histogram(image, mask);
  MaterialScores s{{}, "histogram"};
  for (const auto& r : library.records) s.scores.push_back(-chi_squared(hist, r.signature.histogram));
  s.scores.push_back(kNegInf);
  return s;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size(), 0.0);
  double mx = kNegInf;
  for (double v : logits) mx = std::max(mx, v);
  if (mx == kNegInf) throw Error("softmax: every logit is -inf");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (out[i] = std::exp(logits[i] - mx));
  for (double& v : out) v /= sum;
  return out;
}

namespace {

void check_scores(const MaterialScores& scores, const MaterialLibrary& library) {
  if (scores.scores.size() != library.size() + 1)
    throw Error("material scores must have one entry per material plus background");
}

std::vector<RankedMaterial> sorted(std::vector<double> p, const MaterialLibrary& library) {
  double total = 0.0;
  for (double v : p) total += v;
  std::vector<RankedMaterial> out;
  for (std::size_t i = 0; i < p.size(); ++i)
    out.push_back({static_cast<int>(i), library.records[i].id, total > 0.0 ? p[i] / total : 0.0});
  std::sort(out.begin(), out.end(), [](const RankedMaterial& a, const RankedMaterial& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.id < b.id;
  });
  return out;
}

}  // namespace

std::vector<RankedMaterial> substance_weighted_ranking(const MaterialScores& scores, const SubstanceDistribution& conf,
                                                       const MaterialLibrary& library) {
  check_scores(scores, library);
  auto p = softmax(scores.scores);
  p.pop_back();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] *= conf[static_cast<std::size_t>(library.records[i].substance)];
  return sorted(std::move(p), library);
}

std::vector<RankedMaterial> rank(const MaterialScores& scores, const MaterialLibrary& library) {
  check_scores(scores, library);
  auto p = softmax(scores.scores);
  p.pop_back();
  return sorted(std::move(p), library);
}

SubstanceDistribution implied_substance(const MaterialScores& scores, const MaterialLibrary& library) {
  check_scores(scores, library);
  const auto p = softmax(scores.scores);
  SubstanceDistribution out{};
  double total = 0.0;
  for (std::size_t i = 0; i < library.size(); ++i) {
    out[static_cast<std::size_t>(library.records[i].substance)] += p[i];
    total += p[i];
  }
  if (total <= 0.0) throw Error("implied_substance: no mass on any material");
  for (double& v : out) v /= total;
  return out;
}

LossAndGradient cross_entropy(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) throw Error("cross_entropy: target out of range");
  double mx = kNegInf;
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  LossAndGradient r;
  r.loss = lse - logits[static_cast<std::size_t>(target)];
  r.gradient.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.gradient[i] = std::exp(logits[i] - lse);
  r.gradient[static_cast<std::size_t>(target)] -= 1.0;
  return r;
}

double multitask_loss_fixed(const MultitaskLossState& s) {
  return cross_entropy(s.material_logits, s.material_target).loss +
         s.lambda * cross_entropy(s.substance_logits, s.substance_target).loss;
}

UncertaintyLoss multitask_loss_uncertainty(const MultitaskLossState& s) {
  const auto m = cross_entropy(s.material_logits, s.material_target);
  const auto q = cross_entropy(s.substance_logits, s.substance_target);
  const double wm = std::exp(-s.log_var_material), ws = std::exp(-s.log_var_substance);
  UncertaintyLoss r;
  r.material_loss = m.loss;
  r.substance_loss = q.loss;
  r.loss = m.loss * wm + s.log_var_material + q.loss * ws + s.log_var_substance;
  r.grad_material_logits = m.gradient;
  for (double& g : r.grad_material_logits) g *= wm;
  r.grad_substance_logits = q.gradient;
  for (double& g : r.grad_substance_logits) g *= ws;
  r.grad_log_var_material = -m.loss * wm + 1.0;
  r.grad_log_var_substance = -q.loss * ws + 1.0;
  return r;
}

ClassifierMetrics classifier_metrics(const std::vector<Prediction>& predictions, const std::vector<Truth>& truths,
                                     const MaterialLibrary& library) {
  if (predictions.size() != truths.size()) throw Error("classifier_metrics: predictions and truths differ in length");
  ClassifierMetrics m;
  m.count = predictions.size();
  if (m.count == 0) return m;
  std::size_t top1 = 0, top5 = 0, sub1 = 0, submtl = 0;
  bool have_sub = true;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto ranking = rank(predictions[i].scores, library);
    for (std::size_t k = 0; k < std::min<std::size_t>(5, ranking.size()); ++k) {
      if (ranking[k].id != truths[i].material_id) continue;
      if (k == 0) ++top1;
      ++top5;
    }
    const auto implied = implied_substance(predictions[i].scores, library);
    if (substance::argmax(implied.data()) == truths[i].substance) ++submtl;
    if (const auto& logits = predictions[i].substance_logits) {
      if (logits->size() != substance::kSubstanceCount) throw Error("classifier_metrics: substance logits need 5 entries");
      if (substance::argmax(logits->data()) == truths[i].substance) ++sub1;
    } else {
      have_sub = false;
    }
  }
  const double n = static_cast<double>(m.count);
  m.mtl_at_1 = static_cast<double>(top1) / n;
  m.mtl_at_5 = static_cast<double>(top5) / n;
  m.sub_mtl_at_1 = static_cast<double>(submtl) / n;
  if (have_sub) m.sub_at_1 = static_cast<double>(sub1) / n;
  return m;
}

nlohmann::json to_json(const ClassifierMetrics& m) {
  return {{"mtl@1", m.mtl_at_1},
          {"mtl@5", m.mtl_at_5},
          {"sub@1", m.sub_at_1 ? nlohmann::json(*m.sub_at_1) : nlohmann::json(nullptr)},
          {"sub-mtl@1", m.sub_mtl_at_1},
          {"count", m.count}};
}

GradientCheckReport check_gradients(std::size_t states, std::uint64_t seed, double tolerance) {
  GradientCheckReport rep;
  rep.states = states;
  constexpr double h = 1e-6;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  for (std::size_t n = 0; n < states; ++n) {
    Rng rng(derive_seed(seed, n));
    MultitaskLossState s;
    s.material_logits.resize(2 + rng.index(9));
    s.substance_logits.resize(substance::kSubstanceCount);
    for (double& v : s.material_logits) v = rng.uniform(-3.0, 3.0);
    for (double& v : s.substance_logits) v = rng.uniform(-3.0, 3.0);
    s.material_target = static_cast<int>(rng.index(s.material_logits.size()));
    s.substance_target = static_cast<int>(rng.index(s.substance_logits.size()));
    s.log_var_material = rng.uniform(-2.0, 2.0);
    s.log_var_substance = rng.uniform(-2.0, 2.0);

    const auto u = multitask_loss_uncertainty(s);
    auto loss_of = [](const MultitaskLossState& st) { return multitask_loss_uncertainty(st).loss; };
    auto probe = [&](double& slot, double analytic) {
      const double keep = slot;
      slot = keep + h;
      const double up = loss_of(s);
      slot = keep - h;
      const double down = loss_of(s);
      slot = keep;
      rep.max_relative_error = std::max(rep.max_relative_error, rel(analytic, (up - down) / (2 * h)));
    };
    for (std::size_t i = 0; i < s.material_logits.size(); ++i) probe(s.material_logits[i], u.grad_material_logits[i]);
    for (std::size_t i = 0; i < s.substance_logits.size(); ++i) probe(s.substance_logits[i], u.grad_substance_logits[i]);
    probe(s.log_var_material, u.grad_log_var_material);
    probe(s.log_var_substance, u.grad_log_var_substance);

    const auto ce = cross_entropy(s.material_logits, s.material_target);
    for (std::size_t i = 0; i < s.material_logits.size(); ++i) {
      auto l = s.material_logits;
      l[i] += h;
      const double up = cross_entropy(l, s.material_target).loss;
      l[i] -= 2 * h;
      const double down = cross_entropy(l, s.material_target).loss;
      rep.max_relative_error = std::max(rep.max_relative_error, rel(ce.gradient[i], (up - down) / (2 * h)));
    }

    // Root of dL/ds_m by bisection; the closed form is ln L_mat.
    if (u.material_loss > 0.0) {
      double lo = -50.0, hi = 50.0;
      auto grad = [&](double sm) { return -u.material_loss * std::exp(-sm) + 1.0; };
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (grad(mid) < 0.0 ? lo : hi) = mid;
      }
      rep.max_stationary_error = std::max(rep.max_stationary_error, std::abs(0.5 * (lo + hi) - std::log(u.material_loss)));
    }

    MultitaskLossState z = s;
    z.log_var_material = z.log_var_substance = 0.0;
    z.lambda = 1.0;
    rep.max_fixed_vs_uncertainty =
        std::max(rep.max_fixed_vs_uncertainty, std::abs(multitask_loss_uncertainty(z).loss - multitask_loss_fixed(z)));
  }
  rep.passed = rep.max_relative_error <= tolerance && rep.max_stationary_error <= 1e-9 &&
               rep.max_fixed_vs_uncertainty <= 1e-12;
  return rep;
}

}  // namespace photoshape::material
