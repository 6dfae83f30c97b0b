#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace atlas {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid transform in SE(3). For keyframes the convention is camera-from-world
/// (T_cw). Composition uses left-multiplication throughout: applying a local
/// perturbation Exp(eps) to a pose T gives Exp(eps) * T.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -p.rotation * translation;
    return p;
  }

  Vec3 operator*(const Vec3& x) const { return rotation * x + translation; }

  Pose operator*(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
  }

  /// Re-projects the rotation onto SO(3); call after accumulating updates.
  void orthonormalize() {
    Eigen::Quaterniond q(rotation);
    rotation = q.normalized().toRotationMatrix();
  }
};

/// se(3) tangent vector, ordered (x y z wx wy wz): translation part first.
struct Twist {
  Vec6 data = Vec6::Zero();

  Twist() = default;
  explicit Twist(const Vec6& d) : data(d) {}
  Twist(double x, double y, double z, double wx, double wy, double wz) {
    data << x, y, z, wx, wy, wz;
  }

  Vec3 v() const { return data.head<3>(); }
  Vec3 omega() const { return data.tail<3>(); }
};

/// Similarity transform: y = s * R * x + t. Scale is kept next to a Pose
/// rather than on a Sim(3) manifold; alignment is the only consumer.
struct SimTransform {
  Pose pose;
  double scale = 1.0;

  static SimTransform identity() { return {}; }
  static SimTransform from_pose(const Pose& p) { return {p, 1.0}; }

  Vec3 operator*(const Vec3& x) const {
    return scale * (pose.rotation * x) + pose.translation;
  }

  SimTransform operator*(const SimTransform& other) const {
    SimTransform r;
    r.scale = scale * other.scale;
    r.pose.rotation = pose.rotation * other.pose.rotation;
    r.pose.translation =
        scale * (pose.rotation * other.pose.translation) + pose.translation;
    return r;
  }

  SimTransform inverse() const {
    SimTransform r;
    r.scale = 1.0 / scale;
    r.pose.rotation = pose.rotation.transpose();
    r.pose.translation = -r.scale * (r.pose.rotation * pose.translation);
    return r;
  }
};

Mat3 skew(const Vec3& v);

Mat3 exp_so3(const Vec3& omega);
Vec3 log_so3(const Mat3& R);

Pose exp_se3(const Twist& xi);
Twist log_se3(const Pose& p);

bool pose_is_valid(const Pose& p, double tol = 1e-9);

/// Frobenius-ish distance used in tests: rotation + translation mismatch.
double pose_distance(const Pose& a, const Pose& b);

}  // namespace atlas
