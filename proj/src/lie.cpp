#include "atlas/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace atlas {

namespace {
constexpr double kSmallAngle = 1e-8;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(),  //
      v.z(), 0, -v.x(),   //
      -v.y(), v.x(), 0;
  return s;
}

Mat3 exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < kSmallAngle) {
    // 2nd-order Taylor, accurate to ~1e-16 below the threshold.
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 log_so3(const Mat3& R) {
  const double tr = R.trace();
  const Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  // atan2 of the (anti)symmetric parts keeps full precision at both ends of
  // [0, pi], where acos of the trace does not.
  const double sin_theta = 0.5 * w.norm();
  const double cos_theta = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < kSmallAngle) return 0.5 * w;

  if (theta > M_PI - 1e-9) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part. Sign is ambiguous: pick the lexicographically largest
    // of the two valid axes.
    const Mat3 S = 0.5 * (R + Mat3::Identity());
    Vec3 axis(std::sqrt(std::max(0.0, S(0, 0))),
              std::sqrt(std::max(0.0, S(1, 1))),
              std::sqrt(std::max(0.0, S(2, 2))));
    // Fix relative signs from off-diagonal terms, anchored on the largest
    // component.
    int k = 0;
    axis.maxCoeff(&k);
    for (int i = 0; i < 3; ++i) {
      if (i == k) continue;
      if (S(k, i) < 0) axis[i] = -axis[i];
    }
    axis.normalize();
    Vec3 neg = -axis;
    auto lex_greater = [](const Vec3& a, const Vec3& b) {
      for (int i = 0; i < 3; ++i) {
        if (a[i] != b[i]) return a[i] > b[i];
      }
      return false;
    };
    if (lex_greater(neg, axis)) axis = neg;
    return theta * axis;
  }

  return (theta / (2.0 * sin_theta)) * w;
}

namespace {

// Left Jacobian V of SE(3): t = V * v.
Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  const double b = (1.0 - std::cos(theta)) / t2;
  const double c = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + b * W + c * W * W;
}

Mat3 so3_left_jacobian_inv(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 W = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double half = 0.5 * theta;
  const double cot = half / std::tan(half);
  return Mat3::Identity() - 0.5 * W +
         ((1.0 - cot) / (theta * theta)) * W * W;
}

}  // namespace

Pose exp_se3(const Twist& xi) {
  if (!xi.data.allFinite())
    throw std::invalid_argument("exp_se3: non-finite twist");
  Pose p;
  p.rotation = exp_so3(xi.omega());
  p.translation = so3_left_jacobian(xi.omega()) * xi.v();
  return p;
}

Twist log_se3(const Pose& p) {
  const Vec3 omega = log_so3(p.rotation);
  Twist xi;
  xi.data.tail<3>() = omega;
  xi.data.head<3>() = so3_left_jacobian_inv(omega) * p.translation;
  return xi;
}

bool pose_is_valid(const Pose& p, double tol) {
  if (!p.rotation.allFinite() || !p.translation.allFinite()) return false;
  const Mat3 err = p.rotation.transpose() * p.rotation - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(p.rotation.determinant() - 1.0) <= tol;
}

double pose_distance(const Pose& a, const Pose& b) {
  return (a.rotation - b.rotation).norm() +
         (a.translation - b.translation).norm();
}

}  // namespace atlas
