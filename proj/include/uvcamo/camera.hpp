#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <optional>

#include "uvcamo/error.hpp"

namespace uvcamo {

inline constexpr double kDefaultFovDeg = 45.0;
inline constexpr double kNearPlane = 0.1;
inline constexpr double kFarPlane = 1000.0;

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

struct ImageSize {
  int height = 128;
  int width = 128;
  bool operator==(const ImageSize&) const = default;
};

// Orbit camera: azimuth around +z measured from +x, elevation above the
// xy plane, all in degrees.
struct CameraPose {
  double azimuth = 0.0;
  double elevation = 0.0;
  double distance = 5.0;
  std::optional<Eigen::Vector3d> look_at;  // mesh centroid when absent

  bool operator==(const CameraPose&) const = default;
};

inline double normalize_azimuth(double az) {
  double a = std::fmod(az, 360.0);
  if (a < 0) a += 360.0;
  if (a >= 360.0) a = 0.0;
  return a;
}

inline void validate_pose(const CameraPose& p) {
  if (!(p.distance > 0.0) || !std::isfinite(p.distance))
    throw InvariantViolation("camera distance must be positive");
  if (!(p.elevation >= 0.0 && p.elevation <= 90.0))
    throw InvariantViolation("camera elevation must lie in [0, 90]");
  if (!std::isfinite(p.azimuth)) throw InvariantViolation("camera azimuth must be finite");
}

struct CameraMatrices {
  Eigen::Matrix4d view;
  Eigen::Matrix4d projection;
  Eigen::Vector3d eye;
  Eigen::Vector3d target;
  ImageSize size;

  // Pixel-space position (x right, y down, origin at the top-left corner)
  // plus the clip w, which equals view-space depth.
  Eigen::Vector3d to_screen(const Eigen::Vector3d& p) const {
    const Eigen::Vector4d clip = projection * view * p.homogeneous();
    const double w = clip.w();
    const double sx = (clip.x() / w + 1.0) * 0.5 * size.width;
    const double sy = (1.0 - clip.y() / w) * 0.5 * size.height;
    return {sx, sy, w};
  }
};

inline Eigen::Vector3d camera_offset(double azimuth_deg, double elevation_deg) {
  const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

// Right-handed look-at view (camera looks down -z) and an OpenGL-style
// perspective projection with vertical field of view fov_deg.
inline CameraMatrices camera_matrices(const CameraPose& pose, ImageSize size,
                                      double fov_deg = kDefaultFovDeg,
                                      const Eigen::Vector3d& default_target = Eigen::Vector3d::Zero()) {
  validate_pose(pose);
  if (size.height <= 0 || size.width <= 0) throw ShapeMismatch("zero-area image");
  if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw InvariantViolation("fov must lie in (0, 180)");

  const double az = normalize_azimuth(pose.azimuth);
  const Eigen::Vector3d target = pose.look_at.value_or(default_target);
  const Eigen::Vector3d eye = target + pose.distance * camera_offset(az, pose.elevation);

  // Basis from the angles directly, so elevation 90 stays well defined.
  const Eigen::Vector3d forward = (target - eye).normalized();
  const double a = deg2rad(az);
  const Eigen::Vector3d right(-std::sin(a), std::cos(a), 0.0);
  const Eigen::Vector3d up = right.cross(forward);

  Eigen::Matrix4d view = Eigen::Matrix4d::Identity();
  view.block<1, 3>(0, 0) = right.transpose();
  view.block<1, 3>(1, 0) = up.transpose();
  view.block<1, 3>(2, 0) = -forward.transpose();
  view(0, 3) = -right.dot(eye);
  view(1, 3) = -up.dot(eye);
  view(2, 3) = forward.dot(eye);

  const double f = 1.0 / std::tan(deg2rad(fov_deg) * 0.5);
  const double aspect = static_cast<double>(size.width) / size.height;
  Eigen::Matrix4d proj = Eigen::Matrix4d::Zero();
  proj(0, 0) = f / aspect;
  proj(1, 1) = f;
  proj(2, 2) = (kFarPlane + kNearPlane) / (kNearPlane - kFarPlane);
  proj(2, 3) = 2.0 * kFarPlane * kNearPlane / (kNearPlane - kFarPlane);
  proj(3, 2) = -1.0;

  return {view, proj, eye, target, size};
}

}  // namespace uvcamo
