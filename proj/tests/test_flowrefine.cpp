#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "photoshape/error.hpp"
#include "photoshape/flowrefine.hpp"
#include "photoshape/rng.hpp"
#include "support.hpp"

using namespace photoshape;
using namespace photoshape::flowrefine;

namespace {

Mask ellipse(int size, double cx, double cy, double rx, double ry) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.set(x, y, std::pow((x + 0.5 - cx) / rx, 2) + std::pow((y + 0.5 - cy) / ry, 2) <= 1);
  return m;
}

// Non-symmetric convex polygon (a trapezoid with one slanted side).
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

int median(std::vector<int> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

double iou(const Mask& a, const Mask& b) {
  double i = 0, u = 0;
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    i += a.values[k] && b.values[k];
    u += a.values[k] || b.values[k];
  }
  return i / u;
}

}  // namespace

TEST_SUITE("flowrefine") {
  TEST_CASE("coordinate encoding") {
    Mask full(256, 256);
    std::fill(full.values.begin(), full.values.end(), 1);
    const auto e = encode_coordinate_silhouette(full);
    CHECK(e.at(128, 10, 1) == 128);
    CHECK(e.at(10, 128, 2) == 128);
    CHECK(e.at(5, 5, 0) == 255);

    Mask ring = testing::disc_mask(64, 32, 32, 20);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (std::hypot(x + 0.5 - 32, y + 0.5 - 32) < 10) ring.set(x, y, false);
    const auto r = encode_coordinate_silhouette(ring);
    for (int c = 0; c < 3; ++c) CHECK(r.at(32, 32, c) == 0);

    CHECK_THROWS_AS(encode_coordinate_silhouette(Mask(8, 8)), Error);
  }

  TEST_CASE("encoding round trip and monotone rows") {
    for (int w : {64, 200, 300}) {
      Mask m(w, w / 2);
      std::fill(m.values.begin(), m.values.end(), 1);
      const auto e = encode_coordinate_silhouette(m);
      const int tol = (w + 254) / 255;
      for (int x = 0; x < w; ++x) CHECK(std::abs(std::lround(e.at(x, 3, 1) * w / 255.0) - x) <= tol);
      for (int y = 0; y < w / 2; ++y) CHECK(std::abs(std::lround(e.at(3, y, 2) * (w / 2) / 255.0) - y) <= tol);
      if (w <= 255)
        for (int x = 1; x < w; ++x) CHECK(e.at(x, 3, 1) > e.at(x - 1, 3, 1));
    }
  }

  TEST_CASE("dense descriptors") {
    const auto z = dense_descriptors(RgbImage(24, 24, 3, 90));
    CHECK(z.values.size() == 24u * 24 * 128);
    for (float v : z.values) CHECK(v == 0.0f);

    const auto img = testing::random_image(48, 48, 3);
    RgbImage shifted(48, 48, 3, 0);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x)
        for (int c = 0; c < 3; ++c) shifted.at(x, y, c) = img.at(std::max(0, x - 3), std::max(0, y - 2), c);
    const auto a = dense_descriptors(img), b = dense_descriptors(shifted);
    double worst = 0;
    for (int y = 14; y < 34; ++y)
      for (int x = 14; x < 34; ++x)
        for (int d = 0; d < 128; ++d) worst = std::max(worst, double(std::abs(a.at(x, y)[d] - b.at(x + 3, y + 2)[d])));
    CHECK(worst < 1e-6);
    for (float v : a.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("translations are recovered with median error 0") {
    const int size = 64;
    const auto src_mask = trapezoid(size, 0, 0, 1.0);
    for (auto [dx, dy] : std::vector<std::pair<int, int>>{{5, 0}, {0, -6}, {8, 7}, {-11, 3}}) {
      const auto dst_mask = trapezoid(size, dx, dy, 1.0);
      const auto f = compute_flow(encode_coordinate_silhouette(src_mask), encode_coordinate_silhouette(dst_mask));
      std::vector<int> ex, ey;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (src_mask.at(x, y)) {
            ex.push_back(f.u[f.index(x, y)] - dx);
            ey.push_back(f.v[f.index(x, y)] - dy);
          }
      CHECK(median(ex) == 0);
      CHECK(median(ey) == 0);
    }
  }

  TEST_CASE("identity input keeps zero flow optimal") {
    const auto m = encode_coordinate_silhouette(ellipse(48, 24, 22, 14, 10));
    const auto d = dense_descriptors(m);
    const auto f = compute_flow(d, d);
    CHECK(f.energy <= flow_energy(d, d, FlowField(48, 48)) + 1e-9);
    CHECK(median(f.u) == 0);
    CHECK(median(f.v) == 0);
  }

  TEST_CASE("returned energy is the true objective and never above zero flow") {
    Rng rng(21);
    for (int t = 0; t < 4; ++t) {
      const auto a = ellipse(48, 20 + 8 * rng.uniform(), 24, 10 + 5 * rng.uniform(), 12);
      const auto b = ellipse(48, 26, 20 + 8 * rng.uniform(), 12, 9 + 5 * rng.uniform());
      const auto da = dense_descriptors(encode_coordinate_silhouette(a));
      const auto db = dense_descriptors(encode_coordinate_silhouette(b));
      const auto f = compute_flow(da, db);
      CHECK(f.energy == doctest::Approx(flow_energy(da, db, f)).epsilon(1e-12));
      CHECK(f.energy <= flow_energy(da, db, FlowField(48, 48)) + 1e-9);
      for (std::size_t i = 0; i < f.u.size(); ++i) {
        CHECK(std::abs(f.u[i]) <= FlowParams{}.max_displacement);
        CHECK(std::abs(f.v[i]) <= FlowParams{}.max_displacement);
      }
    }
  }

  TEST_CASE("affine perturbations warp to IoU >= 0.95") {
    const int size = 64;
    const auto src = trapezoid(size, 0, 0, 1.0);
    for (auto [dx, dy, s] : std::vector<std::tuple<double, double, double>>{{3, -2, 1.08}, {-4, 5, 0.92}, {6, 1, 1.12}}) {
      const auto dst = trapezoid(size, dx, dy, s);
      const auto f = compute_flow(encode_coordinate_silhouette(src), encode_coordinate_silhouette(dst));
      CHECK(iou(warp_mask(src, f), dst) >= 0.95);
    }
  }

  TEST_CASE("warp_labels") {
    LabelMap m(32, 32, 3);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) m.at(x, y) = static_cast<std::uint16_t>((x / 8 + y / 8) % 4);

    CHECK(warp_labels(m, FlowField(32, 32)) == m);

    FlowField f(32, 32);
    std::fill(f.u.begin(), f.u.end(), 5);
    LabelMap shifted(32, 32, 3);
    for (int y = 0; y < 32; ++y)
      for (int x = 5; x < 32; ++x) shifted.at(x, y) = m.at(x - 5, y);
    const auto w = warp_labels(m, f);
    for (int y = 0; y < 32; ++y)
      for (int x = 5; x < 32; ++x) CHECK(w.at(x, y) == shifted.at(x, y));
    for (int y = 0; y < 32; ++y) CHECK(w.at(2, y) == 0);

    Rng rng(4);
    FlowField r(32, 32);
    for (std::size_t i = 0; i < r.u.size(); ++i) {
      r.u[i] = static_cast<int>(rng.index(21)) - 10;
      r.v[i] = static_cast<int>(rng.index(21)) - 10;
    }
    std::set<int> in(m.labels.begin(), m.labels.end());
    in.insert(0);
    for (auto l : warp_labels(m, r).labels) CHECK(in.count(l) == 1);
  }

  TEST_CASE("flo round trip") {
    FlowField f(7, 5);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      f.u[i] = static_cast<int>(i % 5) - 2;
      f.v[i] = -static_cast<int>(i % 3);
    }
    const auto dir = testing::temp_dir("flo");
    write_flo(dir / "f.flo", f);
    const auto g = read_flo(dir / "f.flo");
    CHECK(g.u == f.u);
    CHECK(g.v == f.v);
  }

  TEST_CASE("coordinate encoding error is not worse than plain silhouettes") {
    const int size = 64;
    const auto src = trapezoid(size, 0, 0, 1.0);
    double enc = 0, plain = 0;
    for (auto [dx, dy] : std::vector<std::pair<int, int>>{{4, 0}, {-7, 2}, {0, 9}}) {
      const auto dst = trapezoid(size, dx, dy, 1.0);
      const auto fe = compute_flow(encode_coordinate_silhouette(src), encode_coordinate_silhouette(dst));
      const auto fp = compute_flow(plain_silhouette(src), plain_silhouette(dst));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          if (src.at(x, y)) {
            enc += std::hypot(fe.u[fe.index(x, y)] - dx, fe.v[fe.index(x, y)] - dy);
            plain += std::hypot(fp.u[fp.index(x, y)] - dx, fp.v[fp.index(x, y)] - dy);
          }
    }
    CHECK(enc <= plain);
  }
}
