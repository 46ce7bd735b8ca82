#include "photoshape/flowrefine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "photoshape/error.hpp"

namespace photoshape::flowrefine {

RgbImage encode_coordinate_silhouette(const Mask& mask) {
  if (mask.count() == 0) throw Error("encode_coordinate_silhouette: empty mask");
  RgbImage out(mask.width, mask.height, 3, 0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      out.at(x, y, 0) = 255;
      out.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(255.0 * x / mask.width));
      out.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(255.0 * y / mask.height));
    }
  return out;
}

RgbImage plain_silhouette(const Mask& mask) {
  RgbImage out(mask.width, mask.height, 3, 0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) out.at(x, y, 0) = 255;
  return out;
}

DescriptorImage dense_descriptors(const RgbImage& image, int cell_size) {
  if (image.channels != 3) throw Error("dense_descriptors expects an RGB image");
  if (cell_size < 1) throw Error("dense_descriptors: cell_size must be positive");
  constexpr int kBins = 8;
  const int w = image.width, h = image.height;
  std::vector<float> intensity(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      intensity[static_cast<std::size_t>(y) * w + x] =
          static_cast<float>((image.at(x, y, 0) + image.at(x, y, 1) + image.at(x, y, 2)) / (3.0 * 255.0));
  auto I = [&](int x, int y) {
    return intensity[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
  };

  // Integral image per orientation bin, (w + 1) x (h + 1).
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<double> integral(kBins * stride * (h + 1), 0.0);
  auto plane = [&](int b) { return integral.data() + static_cast<std::size_t>(b) * stride * (h + 1); };
  for (int y = 0; y < h; ++y) {
    std::array<double, kBins> row{};
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (I(x + 1, y) - I(x - 1, y));
      const double gy = 0.5 * (I(x, y + 1) - I(x, y - 1));
      const double mag = std::hypot(gx, gy);
      if (mag > 0.0) {
        double angle = std::atan2(gy, gx);
        if (angle < 0.0) angle += 2.0 * std::numbers::pi;
        const double ob = angle / (2.0 * std::numbers::pi) * kBins;
        const int b0 = static_cast<int>(std::floor(ob)) % kBins;
        const double t = ob - std::floor(ob);
        row[static_cast<std::size_t>(b0)] += mag * (1.0 - t);
        row[static_cast<std::size_t>((b0 + 1) % kBins)] += mag * t;
      }
      for (int b = 0; b < kBins; ++b)
        plane(b)[(y + 1) * stride + x + 1] = plane(b)[y * stride + x + 1] + row[static_cast<std::size_t>(b)];
    }
  }
  auto box = [&](int b, int x0, int y0, int x1, int y1) {  // inclusive-exclusive, clipped
    x0 = std::clamp(x0, 0, w);
    x1 = std::clamp(x1, 0, w);
    y0 = std::clamp(y0, 0, h);
    y1 = std::clamp(y1, 0, h);
    if (x1 <= x0 || y1 <= y0) return 0.0;
    const double* p = plane(b);
    // Clamp away cancellation residue from the running sums.
    return std::max(0.0, p[y1 * stride + x1] - p[y0 * stride + x1] - p[y1 * stride + x0] + p[y0 * stride + x0]);
  };

  DescriptorImage out;
  out.width = w;
  out.height = h;
  out.values.assign(static_cast<std::size_t>(w) * h * DescriptorImage::kDims, 0.0f);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    std::array<double, DescriptorImage::kDims> d{};
    for (int x = 0; x < w; ++x) {
      std::size_t n = 0;
      for (int cy = 0; cy < 4; ++cy)
        for (int cx = 0; cx < 4; ++cx) {
          const int x0 = x + (cx - 2) * cell_size, y0 = y + (cy - 2) * cell_size;
          for (int b = 0; b < kBins; ++b) d[n++] = box(b, x0, y0, x0 + cell_size, y0 + cell_size);
        }
      double ss = 0.0;
      for (double v : d) ss += v * v;
      float* dst = out.at(x, y);
      if (std::sqrt(ss) < 1e-6) continue;
      double inv = 1.0 / std::sqrt(ss);
      ss = 0.0;
      for (double& v : d) {
        v = std::min(v * inv, 0.2);
        ss += v * v;
      }
      inv = 1.0 / std::sqrt(ss);
      for (std::size_t k = 0; k < d.size(); ++k) dst[k] = static_cast<float>(d[k] * inv);
    }
  }
  return out;
}

namespace {

constexpr float kBig = 1e6f;

float l1(const float* a, const float* b) {
  float s = 0.0f;
  for (int k = 0; k < DescriptorImage::kDims; ++k) s += std::fabs(a[k] - b[k]);
  return s;
}

float l1_to_zero(const float* a) {
  float s = 0.0f;
  for (int k = 0; k < DescriptorImage::kDims; ++k) s += std::fabs(a[k]);
  return s;
}

// Outside the frame the silhouette background continues, so targets there
// compare against the zero descriptor.
double data_cost(const DescriptorImage& s, const DescriptorImage& d, int x, int y, int u, int v, double t) {
  const int tx = x + u, ty = y + v;
  const float c = (tx < 0 || ty < 0 || tx >= d.width || ty >= d.height) ? l1_to_zero(s.at(x, y))
                                                                           : l1(s.at(x, y), d.at(tx, ty));
  return std::min(static_cast<double>(c), t);
}

double smooth(int a, int b, const FlowParams& p) { return std::min(p.alpha * std::abs(a - b), p.smooth_truncation); }

DescriptorImage downsample(const DescriptorImage& in) {
  DescriptorImage out;
  out.width = (in.width + 1) / 2;
  out.height = (in.height + 1) / 2;
  out.values.assign(static_cast<std::size_t>(out.width) * out.height * DescriptorImage::kDims, 0.0f);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      float* o = out.at(x, y);
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx >= in.width || sy >= in.height) continue;
          const float* s = in.at(sx, sy);
          for (int k = 0; k < DescriptorImage::kDims; ++k) o[k] += s[k];
          ++n;
        }
      for (int k = 0; k < DescriptorImage::kDims; ++k) o[k] /= static_cast<float>(n);
    }
  return out;
}

FlowField upsample(const FlowField& coarse, int w, int h, int max_disp) {
  FlowField out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t c = coarse.index(std::min(x / 2, coarse.width - 1), std::min(y / 2, coarse.height - 1));
      out.u[out.index(x, y)] = std::clamp(2 * coarse.u[c], -max_disp, max_disp);
      out.v[out.index(x, y)] = std::clamp(2 * coarse.v[c], -max_disp, max_disp);
    }
  return out;
}

constexpr std::array<int, 4> kDx{-1, 1, 0, 0};
constexpr std::array<int, 4> kDy{0, 0, -1, 1};
constexpr std::array<int, 4> kOpposite{1, 0, 3, 2};

// Min-sum message through a truncated L1 pairwise term between label sets
// centred at cp (sender) and cq (receiver), both of radius r.
void send_message(const float* h, int cp, int cq, int r, float alpha, float trunc, float* out,
                  std::vector<float>& buf) {
  const int L = 2 * r + 1;
  const int lo = std::min(cp, cq) - r, hi = std::max(cp, cq) + r;
  buf.assign(static_cast<std::size_t>(hi - lo + 1), std::numeric_limits<float>::infinity());
  float hmin = std::numeric_limits<float>::infinity();
  for (int i = 0; i < L; ++i) {
    buf[static_cast<std::size_t>(cp - r + i - lo)] = h[i];
    hmin = std::min(hmin, h[i]);
  }
  for (std::size_t k = 1; k < buf.size(); ++k) buf[k] = std::min(buf[k], buf[k - 1] + alpha);
  for (std::size_t k = buf.size() - 1; k-- > 0;) buf[k] = std::min(buf[k], buf[k + 1] + alpha);
  float omin = std::numeric_limits<float>::infinity();
  for (int j = 0; j < L; ++j) {
    out[j] = std::min(buf[static_cast<std::size_t>(cq - r + j - lo)], hmin + trunc);
    omin = std::min(omin, out[j]);
  }
  for (int j = 0; j < L; ++j) out[j] -= omin;
}

// Dual-layer belief propagation over labels init +- r, limited to |w| <= max_disp.
FlowField run_bp(const DescriptorImage& s, const DescriptorImage& d, const FlowField& init, int r, int max_disp,
                 const FlowParams& params) {
  const int w = s.width, h = s.height, L = 2 * r + 1;
  const std::size_t N = static_cast<std::size_t>(w) * h, LL = static_cast<std::size_t>(L) * L;
  const auto eta = static_cast<float>(params.eta), alpha = static_cast<float>(params.alpha),
             trunc = static_cast<float>(params.smooth_truncation);

  std::vector<float> cost(N * LL);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      float* c = &cost[p * LL];
      for (int i = 0; i < L; ++i) {
        const int u = init.u[p] + i - r;
        for (int j = 0; j < L; ++j) {
          const int v = init.v[p] + j - r;
          c[i * L + j] = (std::abs(u) > max_disp || std::abs(v) > max_disp)
                             ? kBig
                             : static_cast<float>(data_cost(s, d, x, y, u, v, params.truncation));
        }
      }
    }

  std::vector<float> in_u(4 * N * L, 0.0f), in_v(4 * N * L, 0.0f), m_uv(N * L, 0.0f), m_vu(N * L, 0.0f);
  auto slot = [&](std::vector<float>& m, int dir, std::size_t p) { return &m[(dir * N + p) * L]; };

  auto beliefs = [&](std::size_t p, int x, int y, float* hu, float* hv) {
    for (int i = 0; i < L; ++i) {
      hu[i] = eta * static_cast<float>(std::abs(init.u[p] + i - r));
      hv[i] = eta * static_cast<float>(std::abs(init.v[p] + i - r));
    }
    for (int dir = 0; dir < 4; ++dir) {
      const int nx = x + kDx[dir], ny = y + kDy[dir];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const float* mu = slot(in_u, dir, p);
      const float* mv = slot(in_v, dir, p);
      for (int i = 0; i < L; ++i) {
        hu[i] += mu[i];
        hv[i] += mv[i];
      }
    }
  };

  for (int iter = 0; iter < params.iterations; ++iter) {
    for (int colour = 0; colour < 2; ++colour) {
#pragma omp parallel
      {
        std::vector<float> hu(L), hv(L), tmp(L), buf;
#pragma omp for schedule(static)
        for (int y = 0; y < h; ++y)
          for (int x = (y + colour) % 2; x < w; x += 2) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            beliefs(p, x, y, hu.data(), hv.data());
            const float* c = &cost[p * LL];
            float* uv = &m_uv[p * L];
            float* vu = &m_vu[p * L];
            float muv = std::numeric_limits<float>::infinity(), mvu = muv;
            for (int j = 0; j < L; ++j) uv[j] = std::numeric_limits<float>::infinity();
            for (int i = 0; i < L; ++i) {
              float best = std::numeric_limits<float>::infinity();
              for (int j = 0; j < L; ++j) {
                const float cij = c[i * L + j];
                best = std::min(best, cij + hv[j]);
                uv[j] = std::min(uv[j], cij + hu[i]);
              }
              vu[i] = best;
              mvu = std::min(mvu, best);
            }
            for (int j = 0; j < L; ++j) muv = std::min(muv, uv[j]);
            for (int i = 0; i < L; ++i) {
              vu[i] -= mvu;
              uv[i] -= muv;
            }
            for (int dir = 0; dir < 4; ++dir) {
              const int nx = x + kDx[dir], ny = y + kDy[dir];
              if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
              const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
              const float* back_u = slot(in_u, dir, p);
              for (int i = 0; i < L; ++i) tmp[i] = hu[i] + vu[i] - back_u[i];
              send_message(tmp.data(), init.u[p], init.u[q], r, alpha, trunc, slot(in_u, kOpposite[dir], q), buf);
              const float* back_v = slot(in_v, dir, p);
              for (int j = 0; j < L; ++j) tmp[j] = hv[j] + uv[j] - back_v[j];
              send_message(tmp.data(), init.v[p], init.v[q], r, alpha, trunc, slot(in_v, kOpposite[dir], q), buf);
            }
          }
      }
    }
  }

  FlowField out(w, h);
#pragma omp parallel
  {
    std::vector<float> hu(L), hv(L);
#pragma omp for schedule(static)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        beliefs(p, x, y, hu.data(), hv.data());
        const float* c = &cost[p * LL];
        float best = std::numeric_limits<float>::infinity();
        int bu = init.u[p], bv = init.v[p];
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j) {
            const float e = c[i * L + j] + hu[i] + hv[j];
            const int u = init.u[p] + i - r, v = init.v[p] + j - r;
            if (e < best || (e == best && std::abs(u) + std::abs(v) < std::abs(bu) + std::abs(bv))) {
              best = e;
              bu = u;
              bv = v;
            }
          }
        out.u[p] = bu;
        out.v[p] = bv;
      }
  }
  return out;
}

// Iterated conditional modes on the exact energy; never increases it.
void icm(FlowField& f, const DescriptorImage& s, const DescriptorImage& d, int max_disp, const FlowParams& params) {
  const int w = f.width, h = f.height, r = params.icm_window;
  for (int sweep = 0; sweep < params.icm_sweeps; ++sweep) {
    std::vector<char> changed(static_cast<std::size_t>(h), 0);
    for (int colour = 0; colour < 2; ++colour) {
#pragma omp parallel for schedule(static)
      for (int y = 0; y < h; ++y)
        for (int x = (y + colour) % 2; x < w; x += 2) {
          const std::size_t p = f.index(x, y);
          auto local = [&](int u, int v) {
            double e = data_cost(s, d, x, y, u, v, params.truncation) + params.eta * (std::abs(u) + std::abs(v));
            for (int dir = 0; dir < 4; ++dir) {
              const int nx = x + kDx[dir], ny = y + kDy[dir];
              if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
              const std::size_t q = f.index(nx, ny);
              e += smooth(u, f.u[q], params) + smooth(v, f.v[q], params);
            }
            return e;
          };
          const int u0 = f.u[p], v0 = f.v[p];
          double best = local(u0, v0);
          int bu = u0, bv = v0;
          for (int du = -r; du <= r; ++du)
            for (int dv = -r; dv <= r; ++dv) {
              const int u = u0 + du, v = v0 + dv;
              if ((du == 0 && dv == 0) || std::abs(u) > max_disp || std::abs(v) > max_disp) continue;
              const double e = local(u, v);
              if (e < best - 1e-9) {
                best = e;
                bu = u;
                bv = v;
              }
            }
          if (bu != u0 || bv != v0) {
            f.u[p] = bu;
            f.v[p] = bv;
            changed[static_cast<std::size_t>(y)] = 1;
          }
        }
    }
    if (std::none_of(changed.begin(), changed.end(), [](char c) { return c != 0; })) break;
  }
}

// Best of base + (du, dv) over uniform offsets within +-radius; offsets are
// clamped to +-max_disp.
FlowField best_uniform_offset(const DescriptorImage& s, const DescriptorImage& d, const FlowField& base, int radius,
                              int max_disp, const FlowParams& params) {
  const int side = 2 * radius + 1;
  std::vector<double> energy(static_cast<std::size_t>(side) * side, 0.0);
  auto shifted = [&](int k) {
    FlowField f = base;
    for (int& u : f.u) u = std::clamp(u + k / side - radius, -max_disp, max_disp);
    for (int& v : f.v) v = std::clamp(v + k % side - radius, -max_disp, max_disp);
    return f;
  };
  for (int k = 0; k < side * side; ++k) energy[static_cast<std::size_t>(k)] = flow_energy(s, d, shifted(k), params);
  int best = 0;
  for (int k = 1; k < side * side; ++k) {
    const int u = k / side - radius, v = k % side - radius;
    const int bu = best / side - radius, bv = best % side - radius;
    const double ek = energy[static_cast<std::size_t>(k)], eb = energy[static_cast<std::size_t>(best)];
    if (ek < eb || (ek == eb && std::abs(u) + std::abs(v) < std::abs(bu) + std::abs(bv))) best = k;
  }
  return shifted(best);
}

}  // namespace

double flow_energy(const DescriptorImage& src, const DescriptorImage& dst, const FlowField& flow,
                   const FlowParams& params) {
  if (flow.width != src.width || flow.height != src.height) throw Error("flow_energy: size mismatch");
  std::vector<double> rows(static_cast<std::size_t>(flow.height), 0.0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < flow.height; ++y) {
    double e = 0.0;
    for (int x = 0; x < flow.width; ++x) {
      const std::size_t p = flow.index(x, y);
      e += data_cost(src, dst, x, y, flow.u[p], flow.v[p], params.truncation);
      e += params.eta * (std::abs(flow.u[p]) + std::abs(flow.v[p]));
      if (x + 1 < flow.width) {
        const std::size_t q = flow.index(x + 1, y);
        e += smooth(flow.u[p], flow.u[q], params) + smooth(flow.v[p], flow.v[q], params);
      }
      if (y + 1 < flow.height) {
        const std::size_t q = flow.index(x, y + 1);
        e += smooth(flow.u[p], flow.u[q], params) + smooth(flow.v[p], flow.v[q], params);
      }
    }
    rows[static_cast<std::size_t>(y)] = e;
  }
  double total = 0.0;
  for (double e : rows) total += e;
  return total;
}

FlowField compute_flow(const RgbImage& src, const RgbImage& dst, const FlowParams& params) {
  if (src.width != dst.width || src.height != dst.height) throw Error("compute_flow: image sizes differ");
  return compute_flow(dense_descriptors(src), dense_descriptors(dst), params);
}

FlowField compute_flow(const DescriptorImage& src, const DescriptorImage& dst, const FlowParams& params) {
  if (src.width != dst.width || src.height != dst.height) throw Error("compute_flow: descriptor sizes differ");
  if (params.max_displacement < 0 || params.coarse_window < 0 || params.refine_window < 0 || params.iterations < 0)
    throw Error("compute_flow: invalid parameters");

  std::vector<DescriptorImage> src_pyr{src}, dst_pyr{dst};
  while (static_cast<int>(src_pyr.size()) < std::max(1, params.levels) && src_pyr.back().width >= 8 &&
         src_pyr.back().height >= 8) {
    src_pyr.push_back(downsample(src_pyr.back()));
    dst_pyr.push_back(downsample(dst_pyr.back()));
  }

  const int top = static_cast<int>(src_pyr.size()) - 1;
  FlowField flow;
  // Pure translation hypothesis carried through the pyramid on its own, so a
  // mixed coarse flow cannot hide the global shift from the finer levels.
  FlowField track;
  for (int level = top; level >= 0; --level) {
    const DescriptorImage& s = src_pyr[static_cast<std::size_t>(level)];
    const DescriptorImage& d = dst_pyr[static_cast<std::size_t>(level)];
    const int max_disp = (params.max_displacement + (1 << level) - 1) >> level;
    const FlowField init = level == top ? FlowField(s.width, s.height) : upsample(flow, s.width, s.height, max_disp);
    const int radius = level == top ? std::min(params.coarse_window, max_disp) : params.refine_window;
    FlowField bp = run_bp(s, d, init, radius, max_disp, params);

    // Loopy BP can settle on "object moves, background stays" when a global
    // shift is far cheaper, so every level also tries uniform offsets.
    FlowField alt = best_uniform_offset(s, d, init, radius, max_disp, params);
    track = best_uniform_offset(s, d, level == top ? FlowField(s.width, s.height)
                                                   : upsample(track, s.width, s.height, max_disp),
                                radius, max_disp, params);
    if (level > 0) {
      const double eb = flow_energy(s, d, bp, params), ea = flow_energy(s, d, alt, params);
      flow = eb <= ea ? std::move(bp) : std::move(alt);
      continue;
    }
    FlowField track_bp = run_bp(s, d, track, params.refine_window, max_disp, params);
    std::array<FlowField, 5> candidates{std::move(bp), std::move(alt), std::move(track_bp), init,
                                        FlowField(s.width, s.height)};
    double best = std::numeric_limits<double>::infinity();
    for (FlowField& c : candidates) {
      icm(c, s, d, max_disp, params);
      c.energy = flow_energy(s, d, c, params);
      if (c.energy < best) {
        best = c.energy;
        flow = c;
      }
    }
  }
  flow.saturated = false;
  for (std::size_t p = 0; p < flow.u.size(); ++p)
    if (std::abs(flow.u[p]) >= params.max_displacement || std::abs(flow.v[p]) >= params.max_displacement)
      flow.saturated = true;
  return flow;
}

LabelMap warp_labels(const LabelMap& labels, const FlowField& flow) {
  if (labels.width != flow.width || labels.height != flow.height) throw Error("warp_labels: size mismatch");
  LabelMap out(labels.width, labels.height, labels.label_count, labels.kind);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      const std::size_t p = flow.index(x, y);
      const int sx = x - flow.u[p], sy = y - flow.v[p];
      if (sx >= 0 && sy >= 0 && sx < labels.width && sy < labels.height) out.at(x, y) = labels.at(sx, sy);
    }
  return out;
}

Mask warp_mask(const Mask& mask, const FlowField& flow) {
  if (mask.width != flow.width || mask.height != flow.height) throw Error("warp_mask: size mismatch");
  Mask out(mask.width, mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const std::size_t p = flow.index(x, y);
      const int sx = x - flow.u[p], sy = y - flow.v[p];
      if (sx >= 0 && sy >= 0 && sx < mask.width && sy < mask.height) out.set(x, y, mask.at(sx, sy));
    }
  return out;
}

FlowField negated(const FlowField& flow) {
  FlowField out = flow;
  for (int& u : out.u) u = -u;
  for (int& v : out.v) v = -v;
  return out;
}

namespace {
constexpr float kFloTag = 202021.25f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  binary::put_f32(out, kFloTag);
  binary::put_u32(out, static_cast<std::uint32_t>(flow.width));
  binary::put_u32(out, static_cast<std::uint32_t>(flow.height));
  for (std::size_t p = 0; p < flow.u.size(); ++p) {
    binary::put_f32(out, static_cast<float>(flow.u[p]));
    binary::put_f32(out, static_cast<float>(flow.v[p]));
  }
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  if (binary::get_f32(in) != kFloTag) throw Error("'" + path.string() + "' is not a .flo file");
  const auto w = static_cast<int>(binary::get_u32(in));
  const auto h = static_cast<int>(binary::get_u32(in));
  FlowField f(w, h);
  for (std::size_t p = 0; p < f.u.size(); ++p) {
    f.u[p] = static_cast<int>(std::lround(binary::get_f32(in)));
    f.v[p] = static_cast<int>(std::lround(binary::get_f32(in)));
  }
  return f;
}

RgbImage visualize_flow(const FlowField& flow, double max_magnitude) {
  if (max_magnitude <= 0.0) {
    for (std::size_t p = 0; p < flow.u.size(); ++p)
      max_magnitude = std::max(max_magnitude, std::hypot(static_cast<double>(flow.u[p]), flow.v[p]));
    if (max_magnitude <= 0.0) max_magnitude = 1.0;
  }
  RgbImage out(flow.width, flow.height, 3, 255);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const std::size_t p = flow.index(x, y);
      const double hue = (std::atan2(static_cast<double>(flow.v[p]), flow.u[p]) + std::numbers::pi) /
                         (2.0 * std::numbers::pi) * 6.0;
      const double sat = std::min(1.0, std::hypot(static_cast<double>(flow.u[p]), flow.v[p]) / max_magnitude);
      const int sector = static_cast<int>(std::floor(hue)) % 6;
      const double f = hue - std::floor(hue);
      const double pv = 1.0 - sat, qv = 1.0 - sat * f, tv = 1.0 - sat * (1.0 - f);
      double r = 1, g = 1, b = 1;
      switch (sector) {
        case 0: r = 1; g = tv; b = pv; break;
        case 1: r = qv; g = 1; b = pv; break;
        case 2: r = pv; g = 1; b = tv; break;
        case 3: r = pv; g = qv; b = 1; break;
        case 4: r = tv; g = pv; b = 1; break;
        default: r = 1; g = pv; b = qv; break;
      }
      out.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(255 * r));
      out.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(255 * g));
      out.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(255 * b));
    }
  return out;
}

}  // namespace photoshape::flowrefine
