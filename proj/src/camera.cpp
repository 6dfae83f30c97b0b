#include "atlas/camera.hpp"

namespace atlas {

Projection project_camera_point(const CameraModel& cam, const Vec3& pc) {
  if (pc.z() <= 0) throw BehindCamera("project: non-positive depth");
  Projection pr;
  pr.depth = pc.z();
  pr.pixel.x() = cam.fx * pc.x() / pc.z() + cam.cx;
  pr.pixel.y() = cam.fy * pc.y() / pc.z() + cam.cy;
  if (cam.baseline > 0) pr.disparity = cam.fx * cam.baseline / pc.z();
  return pr;
}

Projection project(const CameraModel& cam, const Pose& pose,
                   const Vec3& point) {
  return project_camera_point(cam, pose * point);
}

Vec3 backproject(const CameraModel& cam, const Eigen::Vector2d& px,
                 double depth) {
  return {depth * (px.x() - cam.cx) / cam.fx,
          depth * (px.y() - cam.cy) / cam.fy, depth};
}

}  // namespace atlas
