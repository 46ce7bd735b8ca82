#include "photoshape/camera.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "photoshape/error.hpp"

namespace photoshape::camera {

GridConfig grid_preset(std::string_view name) {
  if (name == "paper456") return GridConfig{};
  if (name == "coarse") {
    GridConfig c;
    c.n_elevations = 3;
    c.azimuth_scale = 8.0;
    return c;
  }
  throw Error("unknown viewpoint preset '" + std::string(name) + "'");
}

ViewpointGrid build_viewpoint_grid(const GridConfig& config) {
  if (config.n_elevations < 1) throw Error("n_elevations must be >= 1");
  if (!(config.azimuth_scale > 0.0)) throw Error("azimuth_scale must be positive");
  if (!(config.phi_max >= config.phi_min)) throw Error("phi range is empty");

  ViewpointGrid grid;
  grid.config = config;
  for (int i = 0; i < config.n_elevations; ++i) {
    const double t = config.n_elevations == 1 ? 0.0 : static_cast<double>(i) / (config.n_elevations - 1);
    const double phi = config.phi_min + (config.phi_max - config.phi_min) * t;
    const long count = std::lround(config.azimuth_scale * std::sin(phi));
    if (count < 1) throw Error("viewpoint ring at phi=" + std::to_string(phi) + " has no azimuths");
    for (long j = 0; j < count; ++j) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(count);
      grid.poses.push_back({theta, phi, config.r, config.fov_x});
    }
  }
  return grid;
}

Vec3 camera_position(const SphericalPose& pose, const Vec3& target) {
  const double s = std::sin(pose.phi);
  return target + pose.r * Vec3(s * std::sin(pose.theta), std::cos(pose.phi), s * std::cos(pose.theta));
}

ViewTransform pose_to_view_transform(const SphericalPose& pose, const Vec3& target, double aspect,
                                     double near_plane, double far_plane) {
  ViewTransform vt;
  vt.eye = camera_position(pose, target);
  vt.forward = (target - vt.eye).normalized();
  Vec3 up = Vec3::UnitY();
  if (vt.forward.cross(up).norm() < 1e-9) up = -Vec3::UnitZ();
  const Vec3 right = vt.forward.cross(up).normalized();
  const Vec3 true_up = right.cross(vt.forward);

  vt.view.setIdentity();
  vt.view.block<1, 3>(0, 0) = right.transpose();
  vt.view.block<1, 3>(1, 0) = true_up.transpose();
  vt.view.block<1, 3>(2, 0) = -vt.forward.transpose();
  vt.view(0, 3) = -right.dot(vt.eye);
  vt.view(1, 3) = -true_up.dot(vt.eye);
  vt.view(2, 3) = vt.forward.dot(vt.eye);

  const double fx = 1.0 / std::tan(0.5 * pose.fov_x * std::numbers::pi / 180.0);
  vt.projection.setZero();
  vt.projection(0, 0) = fx;
  vt.projection(1, 1) = fx * aspect;
  vt.projection(2, 2) = -(far_plane + near_plane) / (far_plane - near_plane);
  vt.projection(2, 3) = -2.0 * far_plane * near_plane / (far_plane - near_plane);
  vt.projection(3, 2) = -1.0;
  return vt;
}

Vec3 ViewTransform::project(const Vec3& world, int width, int height) const {
  const Eigen::Vector4d cam = view * world.homogeneous();
  const Eigen::Vector4d clip = projection * cam;
  const double ndc_x = clip.x() / clip.w();
  const double ndc_y = clip.y() / clip.w();
  return {(ndc_x + 1.0) * 0.5 * width, (1.0 - ndc_y) * 0.5 * height, -cam.z()};
}

PosePriorDraw draw_pose_prior(std::span<const SphericalPose> empirical, Rng& rng, double phi_min, double phi_max) {
  if (empirical.empty()) throw Error("pose prior is empty");
  PosePriorDraw d;
  d.base_index = rng.index(empirical.size());
  d.pose = empirical[d.base_index];
  d.dtheta = rng.uniform(-kThetaJitter, kThetaJitter);
  d.dphi = rng.uniform(-kPhiJitter, kPhiJitter);
  const double two_pi = 2.0 * std::numbers::pi;
  d.pose.theta = std::fmod(d.pose.theta + d.dtheta, two_pi);
  if (d.pose.theta < 0.0) d.pose.theta += two_pi;
  if (d.pose.theta >= two_pi) d.pose.theta = 0.0;
  d.pose.phi = std::clamp(d.pose.phi + d.dphi, phi_min, phi_max);
  return d;
}

SphericalPose sample_pose_prior(std::span<const SphericalPose> empirical, Rng& rng, double phi_min,
                                double phi_max) {
  return draw_pose_prior(empirical, rng, phi_min, phi_max).pose;
}

nlohmann::json to_json(const SphericalPose& pose) {
  return {{"theta", pose.theta}, {"phi", pose.phi}, {"r", pose.r}, {"fov_x", pose.fov_x}};
}

SphericalPose pose_from_json(const nlohmann::json& j) {
  return {j.at("theta").get<double>(), j.at("phi").get<double>(), j.at("r").get<double>(),
          j.at("fov_x").get<double>()};
}

nlohmann::json to_json(const ViewpointGrid& grid) {
  nlohmann::json poses = nlohmann::json::array();
  for (const auto& p : grid.poses) poses.push_back(to_json(p));
  return {{"config",
           {{"n_elevations", grid.config.n_elevations},
            {"azimuth_scale", grid.config.azimuth_scale},
            {"phi_min", grid.config.phi_min},
            {"phi_max", grid.config.phi_max},
            {"r", grid.config.r},
            {"fov_x", grid.config.fov_x}}},
          {"poses", std::move(poses)}};
}

}  // namespace photoshape::camera
