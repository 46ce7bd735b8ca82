#include <doctest.h>

#include <cmath>

#include "photoshape/densecrf.hpp"
#include "photoshape/error.hpp"
#include "photoshape/rng.hpp"
#include "support.hpp"

using namespace photoshape;
using namespace photoshape::densecrf;

namespace {

Unary random_unary(int w, int h, int k, Rng& rng) {
  Unary u{w, h, k, std::vector<double>(static_cast<std::size_t>(w) * h * k)};
  for (auto& v : u.values) v = 3.0 * rng.uniform();
  return u;
}

RgbImage two_region(int size) {
  RgbImage img(size, size, 3, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool left = x < size / 2;
      img.at(x, y, 0) = left ? 220 : 30;
      img.at(x, y, 1) = left ? 40 : 60;
      img.at(x, y, 2) = left ? 40 : 210;
    }
  return img;
}

}  // namespace

TEST_SUITE("densecrf") {
  TEST_CASE("unary from labels") {
    LabelMap m(2, 1, 2);
    m.at(0, 0) = 1;
    m.at(1, 0) = 0;
    const auto u = unary_from_labels(m, 0.2);
    CHECK(u.labels == 3);
    CHECK(u.at(0, 1) == doctest::Approx(-std::log(0.8)));
    CHECK(u.at(0, 0) == doctest::Approx(-std::log(0.1)));
    CHECK(u.at(0, 2) == doctest::Approx(-std::log(0.1)));
    CHECK(u.at(1, 0) == doctest::Approx(-std::log(0.8)));
    CHECK_THROWS_AS(unary_from_labels(m, 0.0), Error);
    CHECK_THROWS_AS(unary_from_labels(m, 1.0), Error);
  }

  TEST_CASE("argmin of the unary is the input label") {
    Rng rng(2);
    LabelMap m(16, 16, 4);
    for (auto& l : m.labels) l = static_cast<std::uint16_t>(rng.index(5));
    const auto u = unary_from_labels(m, 0.3);
    for (std::size_t p = 0; p < m.labels.size(); ++p) {
      int best = 0;
      for (int l = 1; l < u.labels; ++l)
        if (u.at(p, l) < u.at(p, best)) best = l;
      CHECK(best == m.labels[p]);
    }
  }

  TEST_CASE("zero pairwise weights reproduce the unary softmax") {
    Rng rng(3);
    const auto u = random_unary(12, 10, 4, rng);
    CrfParams p;
    p.w_appearance = 0;
    p.w_smoothness = 0;
    p.iterations = 5;
    for (auto method : {Method::brute_force, Method::accelerated}) {
      const auto q = mean_field(u, testing::random_image(12, 10, 1), p, method);
      for (std::size_t i = 0; i < 120; ++i) {
        double z = 0;
        for (int l = 0; l < 4; ++l) z += std::exp(-u.at(i, l));
        for (int l = 0; l < 4; ++l) CHECK(q.at(i, l) == doctest::Approx(std::exp(-u.at(i, l)) / z).epsilon(1e-12));
      }
      const auto a = map_labels(q), b = map_labels(softmax_of(u));
      CHECK(a == b);
    }
  }

  TEST_CASE("strong smoothness makes each colour region pure") {
    Unary u{16, 16, 2, std::vector<double>(16 * 16 * 2, 0.0)};
    // A faint hint per region so the solution is not symmetric.
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const std::size_t p = y * 16 + x;
        const bool hint = (x + y) % 5 == 0;
        u.values[p * 2 + (x < 8 ? 1 : 0)] = hint ? 0.3 : 0.0;
      }
    CrfParams p;
    p.w_appearance = 10;
    p.theta_alpha = 20;
    p.w_smoothness = 3;
    const auto labels = map_labels(mean_field(u, two_region(16), p, Method::brute_force));
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        CHECK(labels.at(x, y) == labels.at(x < 8 ? 0 : 8, 0));
      }
  }

  TEST_CASE("accelerated matches brute force on random instances") {
    Rng rng(17);
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
      const int w = 8 + static_cast<int>(rng.index(25)), h = 8 + static_cast<int>(rng.index(25));
      const int k = 2 + static_cast<int>(rng.index(4));
      const auto u = random_unary(w, h, k, rng);
      const auto img = testing::random_image(w, h, 100 + t);
      const auto a = mean_field(u, img, {}, Method::brute_force);
      const auto b = mean_field(u, img, {}, Method::accelerated);
      for (std::size_t i = 0; i < a.q.size(); ++i) worst = std::max(worst, std::abs(a.q[i] - b.q[i]));
    }
    CHECK(worst <= 1e-3);
  }

  TEST_CASE("marginals stay normalized after every iteration") {
    Rng rng(5);
    const auto u = random_unary(20, 14, 3, rng);
    for (auto method : {Method::brute_force, Method::accelerated}) {
      int calls = 0;
      mean_field(u, testing::random_image(20, 14, 9), {}, method, [&](int, const Marginals& q) {
        ++calls;
        for (std::size_t i = 0; i < 280; ++i) {
          double s = 0;
          for (int l = 0; l < 3; ++l) {
            CHECK(q.at(i, l) >= 0.0);
            s += q.at(i, l);
          }
          CHECK(std::abs(s - 1.0) <= 1e-6);
        }
      });
      CHECK(calls == CrfParams{}.iterations);
    }
  }

  TEST_CASE("mean field is deterministic") {
    Rng rng(6);
    const auto u = random_unary(24, 24, 3, rng);
    const auto img = testing::random_image(24, 24, 2);
    CHECK(mean_field(u, img, {}, Method::brute_force).q == mean_field(u, img, {}, Method::brute_force).q);
    CHECK(mean_field(u, img).q == mean_field(u, img).q);
  }

  TEST_CASE("dimension mismatch is an error") {
    Rng rng(7);
    CHECK_THROWS_AS(mean_field(random_unary(8, 8, 2, rng), testing::random_image(9, 8, 1)), Error);
  }

  TEST_CASE("map_labels") {
    Marginals onehot{3, 1, 3, {0, 1, 0, 0, 0, 1, 1, 0, 0}};
    const auto m = map_labels(onehot);
    CHECK(m.labels == std::vector<std::uint16_t>{1, 2, 0});

    Marginals uniform{2, 1, 3, std::vector<double>(6, 1.0 / 3)};
    CHECK(map_labels(uniform).labels == std::vector<std::uint16_t>{0, 0});

    Rng rng(8);
    Marginals r{10, 10, 4, std::vector<double>(400)};
    for (auto& v : r.q) v = rng.uniform();
    Marginals scaled = r;
    for (std::size_t p = 0; p < 100; ++p) {
      const double s = 0.01 + 10 * rng.uniform();
      for (int l = 0; l < 4; ++l) scaled.q[p * 4 + l] *= s;
    }
    CHECK(map_labels(r) == map_labels(scaled));
  }
}
