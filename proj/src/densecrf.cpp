#include "photoshape/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "photoshape/error.hpp"

namespace photoshape::densecrf {

Unary unary_from_labels(const LabelMap& warped, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error("unary_from_labels: epsilon must lie in (0, 1)");
  const int k = warped.label_count + 1;
  if (k < 2) throw Error("unary_from_labels: need at least one foreground label");
  Unary u;
  u.width = warped.width;
  u.height = warped.height;
  u.labels = k;
  const double on = -std::log(1.0 - eps), off = -std::log(eps / (k - 1));
  u.values.assign(warped.labels.size() * static_cast<std::size_t>(k), off);
  for (std::size_t p = 0; p < warped.labels.size(); ++p) {
    const int l = warped.labels[p];
    if (l >= k) throw Error("unary_from_labels: label exceeds label_count");
    u.values[p * static_cast<std::size_t>(k) + l] = on;
  }
  return u;
}

namespace {

void softmax_row(const double* logits, double* out, int k) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int l = 0; l < k; ++l) mx = std::max(mx, logits[l]);
  double sum = 0.0;
  for (int l = 0; l < k; ++l) {
    out[l] = std::exp(logits[l] - mx);
    sum += out[l];
  }
  for (int l = 0; l < k; ++l) out[l] /= sum;
}

double colour_dist2(const RgbImage& g, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = static_cast<double>(g.data[a * 3 + c]) - g.data[b * 3 + c];
    s += d * d;
  }
  return s;
}

// Kernels below this value are dropped from the sparse appearance lists.
constexpr double kCutoff = 1e-9;
// Above this many stored pairs the appearance term is evaluated on the fly.
constexpr std::size_t kMaxStoredPairs = std::size_t{1} << 26;

struct SparseKernel {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> cols;
  std::vector<float> weights;
};

class Accelerated {
 public:
  Accelerated(const RgbImage& guide, const CrfParams& params) : guide_(guide), params_(params) {
    const int w = guide.width;
    const std::size_t n = guide.pixel_count();
    const double ia = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
    const double ib = 1.0 / (2.0 * params.theta_beta * params.theta_beta);
    const double min_exponent = std::log(kCutoff);

    if (params.w_appearance > 0.0) {
      std::vector<std::size_t> counts(n, 0);
#pragma omp parallel for schedule(dynamic, 16)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const int xi = static_cast<int>(i % w), yi = static_cast<int>(i / w);
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == static_cast<std::size_t>(i)) continue;
          const double dx = xi - static_cast<int>(j % w), dy = yi - static_cast<int>(j / w);
          if (-(dx * dx + dy * dy) * ia - colour_dist2(guide, i, j) * ib >= min_exponent) ++c;
        }
        counts[i] = c;
      }
      std::size_t total = 0;
      for (std::size_t c : counts) total += c;
      stored_ = total <= kMaxStoredPairs;
      if (stored_) {
        kernel_.offsets.assign(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) kernel_.offsets[i + 1] = kernel_.offsets[i] + counts[i];
        kernel_.cols.resize(total);
        kernel_.weights.resize(total);
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
          const int xi = static_cast<int>(i % w), yi = static_cast<int>(i / w);
          std::size_t o = kernel_.offsets[i];
          for (std::size_t j = 0; j < n; ++j) {
            if (j == static_cast<std::size_t>(i)) continue;
            const double dx = xi - static_cast<int>(j % w), dy = yi - static_cast<int>(j / w);
            const double e = -(dx * dx + dy * dy) * ia - colour_dist2(guide, i, j) * ib;
            if (e < min_exponent) continue;
            kernel_.cols[o] = static_cast<std::uint32_t>(j);
            kernel_.weights[o] = static_cast<float>(std::exp(e));
            ++o;
          }
        }
      }
    }

    radius_ = static_cast<int>(std::ceil(6.0 * params.theta_gamma));
    taps_.resize(static_cast<std::size_t>(2 * radius_ + 1));
    for (int d = -radius_; d <= radius_; ++d)
      taps_[static_cast<std::size_t>(d + radius_)] = std::exp(-(d * d) / (2.0 * params.theta_gamma * params.theta_gamma));
  }

  // msg(i, l) = sum_{j != i} k(i, j) Q_j(l)
  void messages(const std::vector<double>& q, int k, std::vector<double>& msg) const {
    const int w = guide_.width, h = guide_.height;
    const std::size_t n = guide_.pixel_count(), K = static_cast<std::size_t>(k);
    std::fill(msg.begin(), msg.end(), 0.0);

    if (params_.w_appearance > 0.0) {
      const double ia = 1.0 / (2.0 * params_.theta_alpha * params_.theta_alpha);
      const double ib = 1.0 / (2.0 * params_.theta_beta * params_.theta_beta);
      const double min_exponent = std::log(kCutoff);
#pragma omp parallel for schedule(dynamic, 16)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* m = &msg[static_cast<std::size_t>(i) * K];
        if (stored_) {
          for (std::size_t o = kernel_.offsets[i]; o < kernel_.offsets[i + 1]; ++o) {
            const double kw = params_.w_appearance * kernel_.weights[o];
            const double* qj = &q[kernel_.cols[o] * K];
            for (std::size_t l = 0; l < K; ++l) m[l] += kw * qj[l];
          }
        } else {
          const int xi = static_cast<int>(i % w), yi = static_cast<int>(i / w);
          for (std::size_t j = 0; j < n; ++j) {
            if (j == static_cast<std::size_t>(i)) continue;
            const double dx = xi - static_cast<int>(j % w), dy = yi - static_cast<int>(j / w);
            const double e = -(dx * dx + dy * dy) * ia - colour_dist2(guide_, i, j) * ib;
            if (e < min_exponent) continue;
            const double kw = params_.w_appearance * static_cast<float>(std::exp(e));
            const double* qj = &q[j * K];
            for (std::size_t l = 0; l < K; ++l) m[l] += kw * qj[l];
          }
        }
      }
    }

    if (params_.w_smoothness > 0.0) {
      std::vector<double> tmp(n * K, 0.0);
#pragma omp parallel for schedule(static)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double* t = &tmp[(static_cast<std::size_t>(y) * w + x) * K];
          for (int d = std::max(-radius_, -x); d <= std::min(radius_, w - 1 - x); ++d) {
            const double g = taps_[static_cast<std::size_t>(d + radius_)];
            const double* qj = &q[(static_cast<std::size_t>(y) * w + x + d) * K];
            for (std::size_t l = 0; l < K; ++l) t[l] += g * qj[l];
          }
        }
#pragma omp parallel for schedule(static)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          double* m = &msg[i * K];
          for (int d = std::max(-radius_, -y); d <= std::min(radius_, h - 1 - y); ++d) {
            const double g = params_.w_smoothness * taps_[static_cast<std::size_t>(d + radius_)];
            const double* tj = &tmp[(static_cast<std::size_t>(y + d) * w + x) * K];
            for (std::size_t l = 0; l < K; ++l) m[l] += g * tj[l];
          }
          for (std::size_t l = 0; l < K; ++l) m[l] -= params_.w_smoothness * q[i * K + l];  // self term
        }
    }
  }

 private:
  const RgbImage& guide_;
  CrfParams params_;
  bool stored_ = false;
  SparseKernel kernel_;
  int radius_ = 0;
  std::vector<double> taps_;
};

void brute_force_messages(const RgbImage& guide, const CrfParams& params, const std::vector<double>& q, int k,
                          std::vector<double>& msg) {
  const int w = guide.width;
  const std::size_t n = guide.pixel_count(), K = static_cast<std::size_t>(k);
  const double ia = 1.0 / (2.0 * params.theta_alpha * params.theta_alpha);
  const double ib = 1.0 / (2.0 * params.theta_beta * params.theta_beta);
  const double ig = 1.0 / (2.0 * params.theta_gamma * params.theta_gamma);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    double* m = &msg[static_cast<std::size_t>(i) * K];
    std::fill(m, m + K, 0.0);
    const int xi = static_cast<int>(i % w), yi = static_cast<int>(i / w);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == static_cast<std::size_t>(i)) continue;
      const double dx = xi - static_cast<int>(j % w), dy = yi - static_cast<int>(j / w);
      const double d2 = dx * dx + dy * dy;
      const double kw = params.w_appearance * std::exp(-d2 * ia - colour_dist2(guide, i, j) * ib) +
                        params.w_smoothness * std::exp(-d2 * ig);
      const double* qj = &q[j * K];
      for (std::size_t l = 0; l < K; ++l) m[l] += kw * qj[l];
    }
  }
}

}  // namespace

Marginals softmax_of(const Unary& unary) {
  Marginals m;
  m.width = unary.width;
  m.height = unary.height;
  m.labels = unary.labels;
  m.q.resize(unary.values.size());
  const std::size_t K = static_cast<std::size_t>(unary.labels);
  std::vector<double> logits(K);
  for (std::size_t p = 0; p * K < unary.values.size(); ++p) {
    for (std::size_t l = 0; l < K; ++l) logits[l] = -unary.values[p * K + l];
    softmax_row(logits.data(), &m.q[p * K], unary.labels);
  }
  return m;
}

Marginals mean_field(const Unary& unary, const RgbImage& guide, const CrfParams& params, Method method,
                     const IterationCallback& callback) {
  if (unary.width != guide.width || unary.height != guide.height)
    throw Error("mean_field: unary and guide dimensions differ");
  if (guide.channels != 3) throw Error("mean_field: guide must be RGB");
  if (params.iterations < 1) throw Error("mean_field: iterations must be >= 1");
  if (params.theta_alpha <= 0.0 || params.theta_beta <= 0.0 || params.theta_gamma <= 0.0)
    throw Error("mean_field: kernel bandwidths must be positive");
  if (params.w_appearance < 0.0 || params.w_smoothness < 0.0) throw Error("mean_field: weights must be >= 0");

  Marginals m = softmax_of(unary);
  const std::size_t n = guide.pixel_count(), K = static_cast<std::size_t>(unary.labels);
  std::vector<double> msg(n * K, 0.0);
  std::optional<Accelerated> fast;
  if (method == Method::accelerated) fast.emplace(guide, params);

  for (int it = 0; it < params.iterations; ++it) {
    if (fast)
      fast->messages(m.q, unary.labels, msg);
    else
      brute_force_messages(guide, params, m.q, unary.labels, msg);
    std::vector<double> next(n * K);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      const double* mi = &msg[static_cast<std::size_t>(i) * K];
      double total = 0.0;
      for (std::size_t l = 0; l < K; ++l) total += mi[l];
      std::vector<double> logits(K);
      for (std::size_t l = 0; l < K; ++l)
        logits[l] = -unary.values[static_cast<std::size_t>(i) * K + l] - (total - mi[l]);
      softmax_row(logits.data(), &next[static_cast<std::size_t>(i) * K], unary.labels);
    }
    m.q = std::move(next);
    if (callback) callback(it + 1, m);
  }
  return m;
}

LabelMap map_labels(const Marginals& marginals, LabelKind kind) {
  LabelMap out(marginals.width, marginals.height, marginals.labels - 1, kind);
  const std::size_t K = static_cast<std::size_t>(marginals.labels);
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < K; ++l)
      if (marginals.q[p * K + l] > marginals.q[p * K + best]) best = l;
    out.labels[p] = static_cast<std::uint16_t>(best);
  }
  return out;
}

}  // namespace photoshape::densecrf
