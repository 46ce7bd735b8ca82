#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "photoshape/image.hpp"
#include "photoshape/substance.hpp"

namespace photoshape::material {

using substance::Substance;
using SubstanceDistribution = std::array<double, substance::kSubstanceCount>;

inline constexpr int kHistogramBins = 16;  // per channel; signatures hold 3 x 16

struct Signature {
  std::array<double, 3> median{};  // 8-bit RGB units
  std::vector<double> histogram;   // 48 bins, sums to 1
};

struct MaterialRecord {
  std::string id;
  std::string name;
  Substance substance = Substance::wood;
  double scale = 2.0;  // s_i > 1
  Signature signature;
  nlohmann::json brdf_meta = nlohmann::json::object();
};

struct MaterialLibrary {
  std::vector<MaterialRecord> records;
  std::vector<std::string> warnings;

  std::size_t size() const { return records.size(); }
  std::array<std::size_t, substance::kSubstanceCount> counts() const;
  // Index of the record with this id, or -1.
  int index_of(const std::string& id) const;
};

// Accepts a JSON array of records or {"materials": [...]}. Unknown substances,
// duplicate ids, scales <= 1 and malformed signatures are errors.
MaterialLibrary load_material_library(const nlohmann::json& manifest);
MaterialLibrary load_material_library_file(const std::filesystem::path& path);
nlohmann::json to_json(const MaterialLibrary& library);
nlohmann::json to_json(const MaterialRecord& record);

// Per-channel median of the masked pixels (mean of the middle pair for even counts).
std::array<double, 3> median_color(const RgbImage& image, const Mask& mask);
// Three 16-bin channel histograms of the masked pixels, jointly normalised to 1.
std::vector<double> color_histogram(const RgbImage& image, const Mask& mask);
Signature compute_signature(const RgbImage& image, const Mask& mask);
// sum (a - b)^2 / (a + b + 1e-10)
double chi_squared(std::span<const double> a, std::span<const double> b);

// One score per material followed by the background score.
struct MaterialScores {
  std::vector<double> scores;
  std::string provenance;
  double background() const { return scores.back(); }
};

// score(m) = -|median - m.median|_2, background -inf.
MaterialScores median_color_match(const RgbImage& image, const Mask& mask, const MaterialLibrary& library);
// score(m) = -chi2(hist, m.histogram), background -inf.
MaterialScores histogram_match(const RgbImage& image, const Mask& mask, const MaterialLibrary& library);

// Softmax over all entries; -inf entries get zero mass.
std::vector<double> softmax(std::span<const double> logits);

struct RankedMaterial {
  int index = 0;
  std::string id;
  double probability = 0.0;
};

// p(m) ~ softmax(scores)(m) * conf(q_m), background dropped, renormalised,
// sorted by descending probability then id.
std::vector<RankedMaterial> substance_weighted_ranking(const MaterialScores& scores, const SubstanceDistribution& conf,
                                                       const MaterialLibrary& library);
// Ranking by softmax(scores) alone.
std::vector<RankedMaterial> rank(const MaterialScores& scores, const MaterialLibrary& library);

// p(q) = sum over materials of substance q of softmax(scores)(m), background
// excluded and renormalised.
SubstanceDistribution implied_substance(const MaterialScores& scores, const MaterialLibrary& library);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

// -log softmax(logits)[target]; gradient softmax - one_hot.
LossAndGradient cross_entropy(std::span<const double> logits, int target);

struct MultitaskLossState {
  std::vector<double> material_logits;
  std::vector<double> substance_logits;
  int material_target = 0;
  int substance_target = 0;
  double log_var_material = 0.0;    // s_m
  double log_var_substance = -1.0;  // s_s
  double lambda = 1.0;
};

// L_mat + lambda L_sub
double multitask_loss_fixed(const MultitaskLossState& state);

struct UncertaintyLoss {
  double loss = 0.0;
  double material_loss = 0.0;
  double substance_loss = 0.0;
  std::vector<double> grad_material_logits;
  std::vector<double> grad_substance_logits;
  double grad_log_var_material = 0.0;
  double grad_log_var_substance = 0.0;
};

// L_mat exp(-s_m) + s_m + L_sub exp(-s_s) + s_s and its gradients.
UncertaintyLoss multitask_loss_uncertainty(const MultitaskLossState& state);

struct Prediction {
  MaterialScores scores;
  std::optional<std::vector<double>> substance_logits;
};

struct Truth {
  std::string material_id;
  Substance substance = Substance::wood;
};

struct ClassifierMetrics {
  double mtl_at_1 = 0.0;
  double mtl_at_5 = 0.0;
  std::optional<double> sub_at_1;  // only when every prediction carries substance logits
  double sub_mtl_at_1 = 0.0;
  std::size_t count = 0;
};

ClassifierMetrics classifier_metrics(const std::vector<Prediction>& predictions, const std::vector<Truth>& truths,
                                     const MaterialLibrary& library);
nlohmann::json to_json(const ClassifierMetrics& metrics);

// Finite-difference check of every analytic gradient over random states.
struct GradientCheckReport {
  std::size_t states = 0;
  double max_relative_error = 0.0;
  double max_stationary_error = 0.0;  // |argmin_s_m - ln L_mat|
  double max_fixed_vs_uncertainty = 0.0;
  bool passed = false;
};
GradientCheckReport check_gradients(std::size_t states, std::uint64_t seed, double tolerance = 1e-5);

}  // namespace photoshape::material
