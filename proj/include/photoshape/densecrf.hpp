#pragma once

#include <functional>
#include <vector>

#include "photoshape/image.hpp"

namespace photoshape::densecrf {

struct CrfParams {
  double w_appearance = 10.0;
  double theta_alpha = 60.0;   // pixels
  double theta_beta = 13.0;    // 8-bit colour units
  double w_smoothness = 3.0;
  double theta_gamma = 3.0;    // pixels
  int iterations = 10;
  double unary_confidence = 0.1;  // epsilon: mass given to the other labels
};

// Negative log probabilities, (pixel, label) row-major.
struct Unary {
  int width = 0;
  int height = 0;
  int labels = 0;
  std::vector<double> values;
  double at(std::size_t pixel, int label) const { return values[pixel * static_cast<std::size_t>(labels) + label]; }
};

struct Marginals {
  int width = 0;
  int height = 0;
  int labels = 0;
  std::vector<double> q;  // (pixel, label)
  double at(std::size_t pixel, int label) const { return q[pixel * static_cast<std::size_t>(labels) + label]; }
};

// P(label) = 1 - eps for the pixel's label, eps / (K - 1) for each other label,
// with K = label_count + 1 (background included). Requires 0 < eps < 1.
Unary unary_from_labels(const LabelMap& warped, double eps);

enum class Method { brute_force, accelerated };

using IterationCallback = std::function<void(int iteration, const Marginals&)>;

// Mean-field inference with Potts compatibility:
//   Q_i(l) ~ exp(-U_i(l) - sum_{j != i} k(i, j) [1 - Q_j(l)])
// with k = w_app exp(-|dp|^2 / 2 theta_alpha^2 - |dI|^2 / 2 theta_beta^2)
//        + w_smooth exp(-|dp|^2 / 2 theta_gamma^2).
// brute_force evaluates every pair each iteration. accelerated uses an exact
// separable filter for the spatial kernel and a once-built sparse list of the
// appearance pairs above 1e-9.
Marginals mean_field(const Unary& unary, const RgbImage& guide, const CrfParams& params = {},
                     Method method = Method::accelerated, const IterationCallback& callback = {});

// Per-pixel argmax, ties to the lower label.
LabelMap map_labels(const Marginals& marginals, LabelKind kind = LabelKind::material_part);

Marginals softmax_of(const Unary& unary);

}  // namespace photoshape::densecrf
