#include "atlas/tracking.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>

#include "atlas/pnp.hpp"

namespace atlas {

namespace {

struct Linearized {
  Eigen::Matrix<double, 2, 6> jac;  // d residual / d twist (left perturbation)
  Eigen::Vector2d residual;         // measured - projected
  bool valid = false;
};

Linearized linearize(const CameraModel& cam, const Pose& pose,
                     const PoseObservation& o) {
  Linearized lin;
  const Vec3 pc = pose * o.world;
  if (pc.z() <= 1e-9) return lin;
  const double z_inv = 1.0 / pc.z();
  Eigen::Vector2d proj(cam.fx * pc.x() * z_inv + cam.cx,
                       cam.fy * pc.y() * z_inv + cam.cy);
  lin.residual = o.pixel - proj;

  Eigen::Matrix<double, 2, 3> jproj;
  jproj << cam.fx * z_inv, 0, -cam.fx * pc.x() * z_inv * z_inv,  //
      0, cam.fy * z_inv, -cam.fy * pc.y() * z_inv * z_inv;
  Eigen::Matrix<double, 3, 6> jpoint;
  jpoint.leftCols<3>() = Mat3::Identity();
  jpoint.rightCols<3>() = -skew(pc);
  lin.jac = -jproj * jpoint;
  lin.valid = true;
  return lin;
}

}  // namespace

PoseEstimate optimize_pose(const CameraModel& cam,
                           const std::vector<PoseObservation>& obs,
                           const Pose& initial, const TrackingConfig& cfg) {
  if (obs.size() < 4)
    throw OptimizationFailed("optimize_pose: fewer than 4 matches");

  Pose pose = initial;
  std::vector<bool> inlier(obs.size(), true);

  // Per-observation information scale: Omega = w * I2.
  std::vector<double> omega(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const double s = cfg.pixel_sigma0 * cam.octave_sigma(obs[i].octave);
    omega[i] = 1.0 / (s * s);
  }

  const int rounds = 4;
  double cost = 0.0;
  for (int round = 0; round < rounds; ++round) {
    for (int iter = 0; iter < 10; ++iter) {
      Mat6 H = Mat6::Zero();
      Vec6 g = Vec6::Zero();
      cost = 0.0;
      int used = 0;
      for (std::size_t i = 0; i < obs.size(); ++i) {
        if (!inlier[i]) continue;
        const Linearized lin = linearize(cam, pose, obs[i]);
        if (!lin.valid) continue;
        const double chi2 = omega[i] * lin.residual.squaredNorm();
        const double e = std::sqrt(chi2);
        // Huber IRLS weight.
        const double w = e <= cfg.huber_delta ? 1.0 : cfg.huber_delta / e;
        H += (w * omega[i]) * lin.jac.transpose() * lin.jac;
        g += (w * omega[i]) * lin.jac.transpose() * (-lin.residual);
        cost += e <= cfg.huber_delta
                    ? 0.5 * chi2
                    : cfg.huber_delta * (e - 0.5 * cfg.huber_delta);
        ++used;
      }
      if (used < 4) throw OptimizationFailed("optimize_pose: < 4 usable terms");
      // g already carries the minus sign: step = -H^-1 * grad.
      const Vec6 delta = (H + 1e-12 * Mat6::Identity()).ldlt().solve(g);
      pose = exp_se3(Twist(delta)) * pose;
      pose.orthonormalize();
      if (delta.norm() < 1e-12) break;
    }

    // Reclassify against the chi2 95% gate.
    int n_in = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const Linearized lin = linearize(cam, pose, obs[i]);
      const double chi2 =
          lin.valid ? omega[i] * lin.residual.squaredNorm() : 1e30;
      inlier[i] = chi2 <= cfg.chi2_outlier;
      if (inlier[i]) ++n_in;
    }
    if (n_in < 4) throw OptimizationFailed("optimize_pose: < 4 inliers");
  }

  PoseEstimate est;
  est.pose = pose;
  est.inlier_mask = inlier;
  est.final_cost = cost;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!inlier[i]) continue;
    const Linearized lin = linearize(cam, pose, obs[i]);
    if (!lin.valid) continue;
    est.hessian += omega[i] * lin.jac.transpose() * lin.jac;
    ++est.inlier_count;
  }

  Eigen::SelfAdjointEigenSolver<Mat6> eig(est.hessian);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (lmin > 0 && lmax / lmin <= cfg.condition_limit)
    est.covariance = est.hessian.inverse();
  return est;
}

std::optional<std::array<double, 6>> pose_sigmas(const PoseEstimate& est) {
  if (!est.covariance) return std::nullopt;
  std::array<double, 6> s{};
  for (int i = 0; i < 6; ++i)
    s[i] = std::sqrt(std::max(0.0, (*est.covariance)(i, i)));
  return s;
}

TrackingStatus evaluate_tracking_criteria(const PoseEstimate& est,
                                          int n_matches,
                                          const TrackingConfig& cfg) {
  if (n_matches < cfg.theta_match) return TrackingStatus::Lost;
  const auto sigmas = pose_sigmas(est);
  if (!sigmas) return TrackingStatus::Lost;
  const double max_t = std::max({(*sigmas)[0], (*sigmas)[1], (*sigmas)[2]});
  return max_t < cfg.sigma_th ? TrackingStatus::OnTrack : TrackingStatus::Lost;
}

std::vector<FrameMatch> match_frame_to_map(const CameraModel& cam,
                                           const SubMap& map,
                                           const Pose& predicted,
                                           const FrameObservations& frame,
                                           double window_px, int max_hamming) {
  // Project every map point once, keep the visible ones.
  struct Candidate {
    PointId id;
    Vec3 world;
    Eigen::Vector2d pixel;
  };
  std::vector<Candidate> visible;
  visible.reserve(map.points().size());
  for (const auto& [pid, p] : map.points()) {
    const Vec3 pc = predicted * p.position;
    if (pc.z() <= 0) continue;
    const auto pr = project_camera_point(cam, pc);
    if (!cam.in_image(pr.pixel)) continue;
    visible.push_back({pid, p.position, pr.pixel});
  }

  std::vector<FrameMatch> matches;
  std::vector<bool> point_used(visible.size(), false);
  for (int mi = 0; mi < int(frame.measurements.size()); ++mi) {
    const auto& m = frame.measurements[mi];
    int best_h = max_hamming + 1;
    int best_c = -1;
    for (int ci = 0; ci < int(visible.size()); ++ci) {
      if (point_used[ci]) continue;
      if ((visible[ci].pixel - m.pixel).lpNorm<Eigen::Infinity>() > window_px)
        continue;
      const int h = hamming(m.descriptor, map.point(visible[ci].id).descriptor);
      if (h < best_h) {
        best_h = h;
        best_c = ci;
      }
    }
    if (best_c < 0) continue;
    point_used[best_c] = true;
    matches.push_back({mi, visible[best_c].id, visible[best_c].world, m.octave,
                       m.pixel});
  }
  return matches;
}

std::optional<RelocalizationResult> relocalize(const Atlas& atlas,
                                               const RecognitionDatabase& db,
                                               const CameraModel& cam,
                                               const FrameObservations& frame,
                                               const TrackingConfig& cfg) {
  if (frame.measurements.empty()) return std::nullopt;
  std::vector<Descriptor> descs;
  descs.reserve(frame.measurements.size());
  for (const auto& m : frame.measurements) descs.push_back(m.descriptor);

  QueryOptions qopts;
  const auto candidates = db.query(descs, atlas.active_map_id(), {}, qopts);

  for (const auto& cand : candidates) {
    if (!atlas.has_map(cand.map_id)) continue;
    const SubMap& map = atlas.map(cand.map_id);
    if (!map.has_keyframe(cand.keyframe_id)) continue;
    const KeyFrame& kf = map.keyframe(cand.keyframe_id);

    // Descriptor matches frame <-> candidate keyframe's map points.
    std::vector<Vec3> world;
    std::vector<Eigen::Vector2d> pixels;
    std::vector<int> meas_of_match;
    std::vector<PointId> point_of_match;
    std::set<PointId> used;
    for (int mi = 0; mi < int(frame.measurements.size()); ++mi) {
      const auto& m = frame.measurements[mi];
      int best_h = cfg.match_max_hamming + 1;
      std::optional<PointId> best_p;
      for (const auto& meas : kf.measurements) {
        if (!meas.matched_point) continue;
        const PointId pid = map.resolve_point_id(*meas.matched_point);
        if (used.count(pid) || !map.has_point(pid)) continue;
        const int h = hamming(m.descriptor, map.point(pid).descriptor);
        if (h < best_h) {
          best_h = h;
          best_p = pid;
        }
      }
      if (!best_p) continue;
      used.insert(*best_p);
      world.push_back(map.point(*best_p).position);
      pixels.push_back(m.pixel);
      meas_of_match.push_back(mi);
      point_of_match.push_back(*best_p);
    }
    if (world.size() < 6) continue;

    PnPRansacOptions popts;
    popts.seed = cand.keyframe_id;  // deterministic per candidate
    popts.min_inliers = 6;
    const auto pnp = pnp_ransac(cam, world, pixels, popts);
    if (!pnp) continue;

    // Guided matching: reproject candidate-map points, re-match tightly.
    const auto guided =
        match_frame_to_map(cam, map, pnp->pose, frame, cfg.guided_match_px,
                           cfg.match_max_hamming);
    if (int(guided.size()) < 4) continue;

    std::vector<PoseObservation> obs;
    obs.reserve(guided.size());
    for (const auto& g : guided) obs.push_back({g.pixel, g.octave, g.world});
    PoseEstimate est;
    try {
      est = optimize_pose(cam, obs, pnp->pose, cfg);
    } catch (const OptimizationFailed&) {
      continue;
    }
    if (est.inlier_count < cfg.reloc_min_inliers) continue;

    RelocalizationResult r;
    r.map_id = cand.map_id;
    r.estimate = std::move(est);
    r.matches = guided;
    return r;
  }
  return std::nullopt;
}

LostAction handle_lost(const TrackingState& state, const TrackingConfig& cfg) {
  return state.consecutive_lost_frames >= cfg.n_reloc
             ? LostAction::SpawnNewMap
             : LostAction::KeepTrying;
}

}  // namespace atlas
