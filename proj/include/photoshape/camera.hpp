#pragma once

#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "photoshape/rng.hpp"

namespace photoshape::camera {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPhiMin = std::numbers::pi / 4.0;
inline constexpr double kPhiMax = 9.0 * std::numbers::pi / 16.0;

// Camera on a sphere around the target. phi is the inclination from the +Y
// zenith, so [pi/4, 9pi/16] runs from 45 degrees above the horizon to slightly
// below it. theta is the azimuth measured from +Z towards +X.
struct SphericalPose {
  double theta = 0.0;
  double phi = std::numbers::pi / 2.0;
  double r = 3.0;
  double fov_x = 45.0;  // degrees

  bool operator==(const SphericalPose&) const = default;
};

struct GridConfig {
  int n_elevations = 10;
  double azimuth_scale = 50.0;
  double phi_min = kPhiMin;
  double phi_max = kPhiMax;
  double r = 3.0;
  double fov_x = 45.0;
};

// Named presets. "paper456" uses 10 elevations and round(50 sin phi) azimuths
// per ring, which is the small-integer configuration giving 456 poses while
// keeping the 50 sin(phi) azimuth rule.
GridConfig grid_preset(std::string_view name);

struct ViewpointGrid {
  GridConfig config;
  std::vector<SphericalPose> poses;
};

ViewpointGrid build_viewpoint_grid(const GridConfig& config);

Vec3 camera_position(const SphericalPose& pose, const Vec3& target);

// Right-handed look-at (camera looks down -Z in view space) plus an OpenGL-style
// perspective projection with the horizontal field of view from the pose.
struct ViewTransform {
  Mat4 view;
  Mat4 projection;
  Vec3 eye;
  Vec3 forward;

  // Pixel coordinates (x right, y down, pixel centres at +0.5) and view depth.
  Vec3 project(const Vec3& world, int width, int height) const;
};

ViewTransform pose_to_view_transform(const SphericalPose& pose, const Vec3& target, double aspect = 1.0,
                                     double near_plane = 0.01, double far_plane = 100.0);

// Uniformly picks one empirical pose and jitters it: dtheta ~ U[-pi/12, pi/12],
// dphi ~ U[-pi/24, pi/24]; phi is clamped to [phi_min, phi_max], theta wrapped.
SphericalPose sample_pose_prior(std::span<const SphericalPose> empirical, Rng& rng, double phi_min = kPhiMin,
                                double phi_max = kPhiMax);

// The same draw with its components exposed.
struct PosePriorDraw {
  std::size_t base_index = 0;
  double dtheta = 0.0;
  double dphi = 0.0;
  SphericalPose pose;
};
PosePriorDraw draw_pose_prior(std::span<const SphericalPose> empirical, Rng& rng, double phi_min = kPhiMin,
                              double phi_max = kPhiMax);

inline constexpr double kThetaJitter = std::numbers::pi / 12.0;
inline constexpr double kPhiJitter = std::numbers::pi / 24.0;

nlohmann::json to_json(const SphericalPose& pose);
SphericalPose pose_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ViewpointGrid& grid);

}  // namespace photoshape::camera
