#include <doctest.h>

#include <random>

#include "atlas/tracking.hpp"
#include "test_helpers.hpp"

using namespace atlas;
using namespace atlas::testutil;

namespace {

struct PoseProblem {
  std::vector<PoseObservation> obs;
  Pose t_cw;
};

PoseProblem make_problem(int n, double pixel_noise, std::uint64_t seed,
                         double min_depth = 4.0, double max_depth = 20.0) {
  const CameraModel cam = test_camera();
  PoseProblem pr;
  pr.t_cw = exp_se3(Twist(0.2, -0.1, 0.3, 0.1, 0.2, -0.1));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.45, 0.45), d(min_depth, max_depth);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> oct(0, 3);
  const Pose t_wc = pr.t_cw.inverse();
  for (int i = 0; i < n; ++i) {
    const double depth = d(rng);
    const Vec3 pc(u(rng) * depth, u(rng) * depth * 0.75, depth);
    PoseObservation o;
    o.world = t_wc * pc;
    o.octave = oct(rng);
    const double s = pixel_noise * cam.octave_sigma(o.octave);
    o.pixel = project_camera_point(cam, pc).pixel +
              s * Eigen::Vector2d(g(rng), g(rng));
    pr.obs.push_back(o);
  }
  return pr;
}

}  // namespace

TEST_CASE("optimize_pose recovers a noiseless pose exactly") {
  const CameraModel cam = test_camera();
  const PoseProblem pr = make_problem(50, 0.0, 3);
  const Pose start = exp_se3(Twist(0.05, -0.02, 0.1, 0.02, -0.03, 0.05)) *
                     pr.t_cw;
  const PoseEstimate est = optimize_pose(cam, pr.obs, start);
  CHECK(pose_distance(est.pose, pr.t_cw) < 1e-8);
  CHECK(est.inlier_count == 50);
  CHECK(est.final_cost < 1e-12);
}

TEST_CASE("optimize_pose rejects gross outliers via reclassification") {
  const CameraModel cam = test_camera();
  PoseProblem pr = make_problem(60, 0.3, 9);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> px(0.0, 639.0), py(0.0, 479.0);
  for (int i = 0; i < 15; ++i)
    pr.obs[i * 4].pixel = Eigen::Vector2d(px(rng), py(rng));
  const PoseEstimate est = optimize_pose(cam, pr.obs, pr.t_cw);
  CHECK(pose_distance(est.pose, pr.t_cw) < 5e-3);
  CHECK(est.inlier_count >= 40);
  CHECK(est.inlier_count <= 50);
}

TEST_CASE("optimize_pose throws below four inliers") {
  const CameraModel cam = test_camera();
  PoseProblem pr = make_problem(3, 0.0, 7);
  CHECK_THROWS_AS(optimize_pose(cam, pr.obs, pr.t_cw), OptimizationFailed);
}

TEST_CASE("pose hessian matches finite differences of the quadratic cost") {
  // H = sum J^T Omega J; compare against numeric J of the residual stack.
  const CameraModel cam = test_camera();
  const PoseProblem pr = make_problem(25, 0.0, 13);
  const PoseEstimate est = optimize_pose(cam, pr.obs, pr.t_cw);

  Mat6 h_fd = Mat6::Zero();
  const double eps = 1e-6;
  for (const auto& o : pr.obs) {
    const double sigma = cam.octave_sigma(o.octave);
    const double omega = 1.0 / (sigma * sigma);
    auto residual = [&](const Pose& T) {
      const Vec3 pc = T * o.world;
      return Eigen::Vector2d(o.pixel.x() - (cam.fx * pc.x() / pc.z() + cam.cx),
                             o.pixel.y() - (cam.fy * pc.y() / pc.z() + cam.cy));
    };
    Eigen::Matrix<double, 2, 6> j;
    for (int k = 0; k < 6; ++k) {
      Vec6 dp = Vec6::Zero(), dm = Vec6::Zero();
      dp[k] = eps;
      dm[k] = -eps;
      j.col(k) = (residual(exp_se3(Twist(dp)) * est.pose) -
                  residual(exp_se3(Twist(dm)) * est.pose)) /
                 (2 * eps);
    }
    h_fd += omega * j.transpose() * j;
  }
  CHECK((est.hessian - h_fd).norm() / h_fd.norm() < 1e-5);
}

TEST_CASE("hessian sigmas track the monte-carlo spread within factor two") {
  const CameraModel cam = test_camera();
  const double noise = 0.5;
  const PoseProblem base = make_problem(80, 0.0, 21);
  const PoseEstimate ref = optimize_pose(cam, base.obs, base.t_cw);
  const auto sig = pose_sigmas(ref);
  REQUIRE(sig.has_value());

  // Empirical spread of the optimum under fresh measurement noise.
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> centers;
  for (int trial = 0; trial < 300; ++trial) {
    auto obs = base.obs;
    for (auto& o : obs)
      o.pixel += noise * cam.octave_sigma(o.octave) *
                 Eigen::Vector2d(g(rng), g(rng));
    TrackingConfig cfg;
    cfg.pixel_sigma0 = noise;
    const PoseEstimate e = optimize_pose(cam, obs, base.t_cw, cfg);
    centers.push_back(e.pose.translation);
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& c : centers) mean += c;
  mean /= double(centers.size());
  Vec3 var = Vec3::Zero();
  for (const auto& c : centers) var += (c - mean).cwiseAbs2();
  var /= double(centers.size() - 1);

  // ref was optimized with pixel_sigma0 = 1; rescale sigmas to the noise.
  for (int k = 0; k < 3; ++k) {
    const double predicted = noise * (*sig)[k];
    const double empirical = std::sqrt(var[k]);
    CHECK(predicted < 2.0 * empirical);
    CHECK(predicted > 0.5 * empirical);
  }
}

TEST_CASE("tracking criteria: matches and translation sigmas gate together") {
  TrackingConfig cfg;  // theta_match = 15, sigma_th = 0.05
  PoseEstimate est;
  est.hessian = Mat6::Identity() * 1e4;  // sigma = 0.01 everywhere
  est.covariance = est.hessian.inverse();
  CHECK(evaluate_tracking_criteria(est, 100, cfg) == TrackingStatus::OnTrack);
  CHECK(evaluate_tracking_criteria(est, 14, cfg) == TrackingStatus::Lost);

  // One weak translation direction trips the gate even with many matches.
  Mat6 h = Mat6::Identity() * 1e4;
  h(2, 2) = 1.0 / (0.06 * 0.06);  // sigma_z = 0.06 > 0.05
  est.hessian = h;
  est.covariance = h.inverse();
  CHECK(evaluate_tracking_criteria(est, 100, cfg) == TrackingStatus::Lost);

  // Rotation sigmas never participate.
  h = Mat6::Identity() * 1e4;
  h(4, 4) = 1e-6;
  est.hessian = h;
  est.covariance = h.inverse();
  CHECK(evaluate_tracking_criteria(est, 100, cfg) == TrackingStatus::OnTrack);

  // Missing covariance (ill-conditioned Hessian) means Lost.
  est.covariance.reset();
  CHECK(evaluate_tracking_criteria(est, 100, cfg) == TrackingStatus::Lost);
}

TEST_CASE("pose_sigmas unavailable for an ill-conditioned hessian") {
  PoseEstimate est;
  Mat6 h = Mat6::Identity();
  h(5, 5) = 1e-14;  // condition number 1e14 > limit
  est.hessian = h;
  est.covariance.reset();
  CHECK_FALSE(pose_sigmas(est).has_value());
  est.hessian = Mat6::Identity() * 4.0;
  est.covariance = est.hessian.inverse();
  const auto s = pose_sigmas(est);
  REQUIRE(s.has_value());
  for (double v : *s) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("match_frame_to_map finds projected points inside the window") {
  const CameraModel cam = test_camera();
  SubMap map;
  const TestScene scene = make_scene(3, 60, 404);
  populate_map(map, scene, cam);

  // Frame at the first keyframe's pose, measurements re-rendered exactly.
  const KfId kid = map.keyframe_order().front();
  FrameObservations frame;
  frame.timestamp = 9.0;
  for (const auto& m : map.keyframe(kid).measurements)
    frame.measurements.push_back(m);
  for (auto& m : frame.measurements) m.matched_point.reset();

  const auto matches = match_frame_to_map(cam, map, map.keyframe(kid).pose,
                                          frame, 15.0, 50);
  CHECK(matches.size() == frame.measurements.size());
  for (const auto& fm : matches) {
    const auto& p = map.point(fm.point_id);
    CHECK((fm.world - p.position).norm() == 0.0);
    CHECK(hamming(frame.measurements[fm.measurement_index].descriptor,
                  p.descriptor) <= 50);
  }

  // A far-off prediction breaks the window gating.
  Pose off = map.keyframe(kid).pose;
  off.translation += Vec3(5.0, 0, 0);
  const auto misses =
      match_frame_to_map(cam, map, off, frame, 2.0, 50);
  CHECK(misses.size() < matches.size() / 2);
}

TEST_CASE("handle_lost spawns a new map only after n_reloc failures") {
  TrackingConfig cfg;
  cfg.n_reloc = 5;
  TrackingState st;
  st.status = TrackingStatus::Lost;
  st.consecutive_lost_frames = 4;
  CHECK(handle_lost(st, cfg) == LostAction::KeepTrying);
  st.consecutive_lost_frames = 5;
  CHECK(handle_lost(st, cfg) == LostAction::SpawnNewMap);
}
