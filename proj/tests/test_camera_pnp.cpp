#include <doctest.h>

#include <random>

#include "atlas/camera.hpp"
#include "atlas/pnp.hpp"

using namespace atlas;

namespace {

CameraModel stereo_cam() {
  CameraModel c;
  c.fx = 450;
  c.fy = 450;
  c.baseline = 0.12;
  return c;
}

}  // namespace

TEST_CASE("project / backproject round trip") {
  const CameraModel cam = stereo_cam();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.5, 30.0);
  std::uniform_real_distribution<double> px(0.0, 639.0), py(0.0, 479.0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d pix(px(rng), py(rng));
    const double depth = u(rng);
    const Vec3 pc = backproject(cam, pix, depth);
    const Projection p = project_camera_point(cam, pc);
    CHECK((p.pixel - pix).norm() < 1e-10);
    CHECK(p.depth == doctest::Approx(depth));
    REQUIRE(p.disparity.has_value());
    CHECK(*p.disparity == doctest::Approx(cam.fx * cam.baseline / depth));
  }
}

TEST_CASE("project respects the pose and throws behind the camera") {
  const CameraModel cam = stereo_cam();
  const Pose t_cw = exp_se3(Twist(0.1, -0.2, 0.5, 0.2, 0.1, -0.3));
  const Vec3 x(1.0, 0.5, 8.0);
  const Projection p = project(cam, t_cw, x);
  const Vec3 pc = t_cw * x;
  CHECK(p.pixel.x() == doctest::Approx(cam.fx * pc.x() / pc.z() + cam.cx));
  CHECK(p.pixel.y() == doctest::Approx(cam.fy * pc.y() / pc.z() + cam.cy));
  const Vec3 behind = t_cw.inverse() * Vec3(0, 0, -1.0);
  CHECK_THROWS_AS(project(cam, t_cw, behind), BehindCamera);
}

TEST_CASE("octave sigma ladder") {
  const CameraModel cam = stereo_cam();
  CHECK(cam.octave_sigma(0) == 1.0);
  CHECK(cam.octave_sigma(3) == doctest::Approx(1.2 * 1.2 * 1.2));
}

TEST_CASE("solve_p3p reproduces a planted pose") {
  const Pose t_cw = exp_se3(Twist(0.4, -0.1, 0.3, 0.2, -0.3, 0.5));
  const std::array<Vec3, 3> world = {Vec3(0, 0, 5), Vec3(2, -1, 7),
                                     Vec3(-1, 2, 6)};
  std::array<Vec3, 3> bearing;
  for (int i = 0; i < 3; ++i) bearing[i] = (t_cw * world[i]).normalized();
  const auto solutions = solve_p3p(world, bearing);
  REQUIRE(!solutions.empty());
  double best = 1e9;
  for (const Pose& s : solutions) best = std::min(best, pose_distance(s, t_cw));
  CHECK(best < 1e-6);
}

TEST_CASE("pnp_ransac with outliers recovers the pose") {
  const CameraModel cam = stereo_cam();
  const Pose t_cw = exp_se3(Twist(0.2, 0.3, -0.1, -0.2, 0.1, 0.4));
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-4.0, 4.0), d(4.0, 20.0);
  std::vector<Vec3> world;
  std::vector<Eigen::Vector2d> pixel;
  const int n_in = 60, n_out = 20;
  const Pose t_wc = t_cw.inverse();
  for (int i = 0; i < n_in; ++i) {
    const Vec3 pc(0.4 * u(rng), 0.4 * u(rng), d(rng));
    world.push_back(t_wc * pc);
    pixel.push_back(project_camera_point(cam, pc).pixel);
  }
  std::uniform_real_distribution<double> px(0.0, 639.0), py(0.0, 479.0);
  for (int i = 0; i < n_out; ++i) {
    const Vec3 pc(0.4 * u(rng), 0.4 * u(rng), d(rng));
    world.push_back(t_wc * pc);
    pixel.push_back({px(rng), py(rng)});
  }
  PnPRansacOptions opts;
  opts.seed = 3;
  const auto res = pnp_ransac(cam, world, pixel, opts);
  REQUIRE(res.has_value());
  CHECK(res->inlier_count >= n_in - 3);
  CHECK(pose_distance(res->pose, t_cw) < 1e-3);
}

TEST_CASE("pnp_ransac reports no consensus on noise") {
  const CameraModel cam = stereo_cam();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0), d(2.0, 30.0);
  std::uniform_real_distribution<double> px(0.0, 639.0), py(0.0, 479.0);
  std::vector<Vec3> world;
  std::vector<Eigen::Vector2d> pixel;
  for (int i = 0; i < 40; ++i) {
    world.push_back({u(rng), u(rng), d(rng)});
    pixel.push_back({px(rng), py(rng)});
  }
  PnPRansacOptions opts;
  opts.inlier_tol_px = 0.5;
  CHECK_FALSE(pnp_ransac(cam, world, pixel, opts).has_value());
}
