#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "photoshape/camera.hpp"
#include "photoshape/error.hpp"

using namespace photoshape;
using namespace photoshape::camera;
constexpr double kPi = std::numbers::pi;

TEST_SUITE("camera") {
  TEST_CASE("single ring grid") {
    GridConfig c;
    c.n_elevations = 1;
    c.azimuth_scale = 5.7;  // round(5.7 sin(pi/4)) = 4
    const auto g = build_viewpoint_grid(c);
    REQUIRE(g.poses.size() == 4);
    for (int i = 0; i < 4; ++i) {
      CHECK(g.poses[i].phi == doctest::Approx(kPi / 4));
      CHECK(g.poses[i].theta == doctest::Approx(i * kPi / 2));
    }
  }

  TEST_CASE("paper456 preset has 456 unique poses") {
    const auto g = build_viewpoint_grid(grid_preset("paper456"));
    CHECK(g.poses.size() == 456);
    std::set<std::pair<double, double>> seen;
    for (const auto& p : g.poses) seen.insert({p.theta, p.phi});
    CHECK(seen.size() == 456);
  }

  TEST_CASE("pose count equals the ring budget") {
    for (int n : {1, 2, 5, 10, 17}) {
      for (double k : {8.0, 20.0, 50.0}) {
        GridConfig c;
        c.n_elevations = n;
        c.azimuth_scale = k;
        std::size_t expected = 0;
        for (int i = 0; i < n; ++i) {
          const double phi = n == 1 ? kPhiMin : kPhiMin + (kPhiMax - kPhiMin) * i / (n - 1);
          expected += static_cast<std::size_t>(std::lround(k * std::sin(phi)));
        }
        CHECK(build_viewpoint_grid(c).poses.size() == expected);
      }
    }
  }

  TEST_CASE("grid ranges and endpoints") {
    const auto g = build_viewpoint_grid(grid_preset("paper456"));
    double lo = 10, hi = -10;
    for (const auto& p : g.poses) {
      CHECK(p.phi >= kPi / 4 - 1e-12);
      CHECK(p.phi <= 9 * kPi / 16 + 1e-12);
      CHECK(p.theta >= 0.0);
      CHECK(p.theta < 2 * kPi);
      lo = std::min(lo, p.phi);
      hi = std::max(hi, p.phi);
    }
    CHECK(lo == doctest::Approx(kPi / 4));
    CHECK(hi == doctest::Approx(9 * kPi / 16));
  }

  TEST_CASE("grid serialization is deterministic") {
    const auto a = to_json(build_viewpoint_grid(grid_preset("paper456"))).dump();
    const auto b = to_json(build_viewpoint_grid(grid_preset("paper456"))).dump();
    CHECK(a == b);
  }

  TEST_CASE("unknown preset and bad configs are errors") {
    CHECK_THROWS_AS(grid_preset("nope"), Error);
    GridConfig c;
    c.n_elevations = 0;
    CHECK_THROWS_AS(build_viewpoint_grid(c), Error);
  }

  TEST_CASE("view transform on the equator") {
    SphericalPose p;
    p.theta = 0;
    p.phi = kPi / 2;
    p.r = 1;
    const auto vt = pose_to_view_transform(p, Vec3::Zero());
    CHECK(vt.eye.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(vt.eye.y()) < 1e-12);
    CHECK(vt.forward.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((vt.forward + vt.eye.normalized()).norm() < 1e-9);
    const Vec3 c = vt.project(Vec3::Zero(), 64, 64);
    CHECK(c.x() == doctest::Approx(32.0));
    CHECK(c.y() == doctest::Approx(32.0));
    CHECK(c.z() == doctest::Approx(1.0));
  }

  TEST_CASE("doubling r doubles the distance and keeps orientation") {
    SphericalPose p;
    p.theta = 1.1;
    p.phi = 1.0;
    p.r = 1.5;
    const Vec3 target(0.5, 0.5, 0.5);
    const auto a = pose_to_view_transform(p, target);
    p.r = 3.0;
    const auto b = pose_to_view_transform(p, target);
    CHECK((b.eye - target).norm() == doctest::Approx(2 * (a.eye - target).norm()));
    CHECK((a.forward - b.forward).norm() < 1e-12);
    CHECK((a.view.block<3, 3>(0, 0) - b.view.block<3, 3>(0, 0)).norm() < 1e-12);
  }

  TEST_CASE("up in the world is up in the image") {
    SphericalPose p;
    p.theta = 0.4;
    p.phi = 1.2;
    const auto vt = pose_to_view_transform(p, Vec3::Zero());
    CHECK(vt.project(Vec3(0, 0.2, 0), 64, 64).y() < vt.project(Vec3::Zero(), 64, 64).y());
  }

  TEST_CASE("pose prior jitter bounds") {
    const std::vector<SphericalPose> one{{1.0, 1.2, 3.0, 45.0}};
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
      const auto q = sample_pose_prior(one, rng);
      CHECK(std::abs(q.theta - 1.0) <= kPi / 12 + 1e-12);
      CHECK(std::abs(q.phi - 1.2) <= kPi / 24 + 1e-12);
    }
  }

  TEST_CASE("pose prior clamps phi and wraps theta") {
    const std::vector<SphericalPose> edge{{0.01, kPhiMin, 3.0, 45.0}};
    Rng rng(9);
    bool wrapped = false;
    for (int i = 0; i < 2000; ++i) {
      const auto q = sample_pose_prior(edge, rng);
      CHECK(q.phi >= kPhiMin);
      CHECK(q.theta >= 0.0);
      CHECK(q.theta < 2 * kPi);
      wrapped = wrapped || q.theta > kPi;
    }
    CHECK(wrapped);
  }

  TEST_CASE("pose prior picks bases uniformly") {
    const std::vector<SphericalPose> two{{0.5, 1.0, 3.0, 45.0}, {3.0, 1.3, 3.0, 45.0}};
    Rng rng(11);
    int first = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) first += draw_pose_prior(two, rng).base_index == 0;
    CHECK(std::abs(first / double(n) - 0.5) <= 0.02);
  }

  TEST_CASE("pose prior is deterministic and rejects empty input") {
    const auto grid = build_viewpoint_grid(grid_preset("coarse")).poses;
    Rng a(3), b(3);
    for (int i = 0; i < 100; ++i) CHECK(sample_pose_prior(grid, a) == sample_pose_prior(grid, b));
    std::vector<SphericalPose> none;
    CHECK_THROWS_AS(sample_pose_prior(none, a), Error);
  }

  TEST_CASE("pose JSON round trip") {
    const SphericalPose p{0.25, 1.1, 2.5, 52.0};
    CHECK(pose_from_json(to_json(p)) == p);
  }
}
