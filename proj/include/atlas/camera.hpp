#pragma once

#include <optional>
#include <stdexcept>

#include "atlas/lie.hpp"

namespace atlas {

struct BehindCamera : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Pinhole camera. baseline > 0 enables stereo disparity = fx * b / z.
struct CameraModel {
  double fx = 500, fy = 500, cx = 320, cy = 240;
  int width = 640, height = 480;
  double baseline = 0.0;  // meters; 0 = monocular
  int n_levels = 4;
  double scale_factor = 1.2;

  double octave_sigma(int octave) const {
    double s = 1.0;
    for (int i = 0; i < octave; ++i) s *= scale_factor;
    return s;
  }

  bool in_image(const Eigen::Vector2d& px) const {
    return px.x() >= 0 && px.x() < width && px.y() >= 0 && px.y() < height;
  }
};

struct Projection {
  Eigen::Vector2d pixel;
  std::optional<double> disparity;
  double depth = 0.0;
};

/// Projects a world point through pose (camera-from-world). Throws
/// BehindCamera for non-positive depth.
Projection project(const CameraModel& cam, const Pose& pose, const Vec3& point);

/// Projection of a point already in the camera frame.
Projection project_camera_point(const CameraModel& cam, const Vec3& pc);

/// Inverse projection at a given depth (camera frame).
Vec3 backproject(const CameraModel& cam, const Eigen::Vector2d& px,
                 double depth);

}  // namespace atlas
