#include "atlas/ba.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace atlas {

namespace {

struct Residual {
  KfId kf;
  PointId point;
  Eigen::Vector2d pixel;
  double omega;  // isotropic information weight
};

double huber_cost(double chi2, double delta) {
  const double e = std::sqrt(chi2);
  return e <= delta ? 0.5 * chi2 : delta * (e - 0.5 * delta);
}

double huber_weight(double chi2, double delta) {
  const double e = std::sqrt(chi2);
  return e <= delta ? 1.0 : delta / e;
}

}  // namespace

double reprojection_cost(const SubMap& map, const CameraModel& cam,
                         const std::set<KfId>& kfs,
                         const std::set<PointId>& points,
                         const BaOptions& opts) {
  double cost = 0.0;
  for (PointId pid : points) {
    const MapPoint& p = map.point(pid);
    for (const auto& [kf_id, idx] : p.observations) {
      if (!kfs.count(kf_id)) continue;
      const KeyFrame& kf = map.keyframe(kf_id);
      const auto& m = kf.measurements[idx];
      const double s = opts.pixel_sigma0 * cam.octave_sigma(m.octave);
      const double omega = 1.0 / (s * s);
      const Vec3 pc = kf.pose * p.position;
      if (pc.z() <= 1e-9) {
        cost += huber_cost(1e6, opts.huber_delta);
        continue;
      }
      const Eigen::Vector2d proj(cam.fx * pc.x() / pc.z() + cam.cx,
                                 cam.fy * pc.y() / pc.z() + cam.cy);
      cost += huber_cost(omega * (m.pixel - proj).squaredNorm(),
                         opts.huber_delta);
    }
  }
  return cost;
}

BaReport bundle_adjust(SubMap& map, const CameraModel& cam,
                       const std::set<KfId>& variable_kfs,
                       const std::set<KfId>& fixed_kfs,
                       const std::set<PointId>& variable_points,
                       const BaOptions& opts,
                       const std::function<bool()>& interrupt) {
  BaReport report;

  // Gauge-fixed keyframes must not move.
  for (KfId id : variable_kfs)
    if (map.keyframe(id).is_gauge_fixed)
      throw std::invalid_argument("bundle_adjust: gauge keyframe is variable");

  // Collect residuals and index blocks.
  std::vector<KfId> cam_ids(variable_kfs.begin(), variable_kfs.end());
  std::map<KfId, int> cam_index;
  for (int i = 0; i < int(cam_ids.size()); ++i) cam_index[cam_ids[i]] = i;
  std::vector<PointId> point_ids(variable_points.begin(),
                                 variable_points.end());
  std::map<PointId, int> point_index;
  for (int i = 0; i < int(point_ids.size()); ++i)
    point_index[point_ids[i]] = i;

  std::vector<Residual> residuals;
  std::set<KfId> all_kfs = variable_kfs;
  all_kfs.insert(fixed_kfs.begin(), fixed_kfs.end());
  for (PointId pid : point_ids) {
    const MapPoint& p = map.point(pid);
    for (const auto& [kf_id, idx] : p.observations) {
      if (!all_kfs.count(kf_id)) continue;
      const auto& m = map.keyframe(kf_id).measurements[idx];
      const double s = opts.pixel_sigma0 * cam.octave_sigma(m.octave);
      residuals.push_back({kf_id, pid, m.pixel, 1.0 / (s * s)});
    }
  }
  report.residual_count = int(residuals.size());
  if (residuals.empty() || (cam_ids.empty() && point_ids.empty()))
    return report;

  // Working state (poses and points), plus pristine copies for rollback.
  std::map<KfId, Pose> poses;
  for (KfId id : all_kfs) poses[id] = map.keyframe(id).pose;
  std::map<PointId, Vec3> positions;
  for (PointId id : point_ids) positions[id] = map.point(id).position;
  const auto poses0 = poses;
  const auto positions0 = positions;

  auto eval_cost = [&](const std::map<KfId, Pose>& ps,
                       const std::map<PointId, Vec3>& xs) {
    double cost = 0.0;
    for (const auto& r : residuals) {
      const Vec3 pc = ps.at(r.kf) * xs.at(r.point);
      if (pc.z() <= 1e-9) {
        cost += huber_cost(1e6, opts.huber_delta);
        continue;
      }
      const Eigen::Vector2d proj(cam.fx * pc.x() / pc.z() + cam.cx,
                                 cam.fy * pc.y() / pc.z() + cam.cy);
      cost += huber_cost(r.omega * (r.pixel - proj).squaredNorm(),
                         opts.huber_delta);
    }
    return cost;
  };

  const int nc = int(cam_ids.size());
  const int np = int(point_ids.size());
  double lambda = opts.initial_lambda;
  double cost = eval_cost(poses, positions);
  report.initial_cost = cost;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (interrupt && interrupt()) {
      report.interrupted = true;
      return report;  // map untouched
    }
    report.iterations = iter + 1;

    // Linearize at the current state.
    Eigen::MatrixXd Hcc = Eigen::MatrixXd::Zero(6 * nc, 6 * nc);
    Eigen::VectorXd bc = Eigen::VectorXd::Zero(6 * nc);
    std::vector<Mat3> Hpp(np, Mat3::Zero());
    std::vector<Vec3> bp(np, Vec3::Zero());
    // W blocks keyed by (point, cam)
    std::map<std::pair<int, int>, Eigen::Matrix<double, 6, 3>> W;

    for (const auto& r : residuals) {
      const Pose& T = poses.at(r.kf);
      const Vec3& X = positions.at(r.point);
      const Vec3 pc = T * X;
      if (pc.z() <= 1e-9) continue;
      const double z_inv = 1.0 / pc.z();
      const Eigen::Vector2d proj(cam.fx * pc.x() * z_inv + cam.cx,
                                 cam.fy * pc.y() * z_inv + cam.cy);
      const Eigen::Vector2d res = r.pixel - proj;
      const double chi2 = r.omega * res.squaredNorm();
      const double w = huber_weight(chi2, opts.huber_delta) * r.omega;

      Eigen::Matrix<double, 2, 3> jproj;
      jproj << cam.fx * z_inv, 0, -cam.fx * pc.x() * z_inv * z_inv,  //
          0, cam.fy * z_inv, -cam.fy * pc.y() * z_inv * z_inv;

      const int pi = point_index.at(r.point);
      const Eigen::Matrix<double, 2, 3> jpoint = -jproj * T.rotation;
      Hpp[pi] += w * jpoint.transpose() * jpoint;
      bp[pi] -= w * jpoint.transpose() * res;

      auto ci_it = cam_index.find(r.kf);
      if (ci_it != cam_index.end()) {
        const int ci = ci_it->second;
        Eigen::Matrix<double, 3, 6> dp;
        dp.leftCols<3>() = Mat3::Identity();
        dp.rightCols<3>() = -skew(pc);
        const Eigen::Matrix<double, 2, 6> jcam = -jproj * dp;
        Hcc.block<6, 6>(6 * ci, 6 * ci) += w * jcam.transpose() * jcam;
        bc.segment<6>(6 * ci) -= w * jcam.transpose() * res;
        // Eigen's default constructor leaves fixed-size matrices
        // uninitialized, so zero explicitly on first insertion.
        W.try_emplace({pi, ci}, Eigen::Matrix<double, 6, 3>::Zero())
            .first->second += w * jcam.transpose() * jpoint;
      }
    }

    // Group W blocks per point for the Schur pass.
    std::vector<std::vector<std::pair<int, const Eigen::Matrix<double, 6, 3>*>>>
        point_cams(np);
    for (const auto& [key, block] : W)
      point_cams[key.first].emplace_back(key.second, &block);

    bool accepted = false;
    while (!accepted) {
      if (lambda > opts.lambda_cap) {
        // Roll everything back.
        report.aborted = true;
        return report;
      }

      // Damped copies.
      Eigen::MatrixXd Hcc_d = Hcc;
      for (int i = 0; i < 6 * nc; ++i) Hcc_d(i, i) += lambda * (1.0 + Hcc(i, i));
      Eigen::VectorXd bc_d = bc;
      std::vector<Mat3> Hpp_inv(np);
      bool singular_point = false;
      for (int pi = 0; pi < np; ++pi) {
        Mat3 Hd = Hpp[pi];
        for (int i = 0; i < 3; ++i) Hd(i, i) += lambda * (1.0 + Hd(i, i));
        const double det = Hd.determinant();
        if (!(det > 1e-300)) {
          singular_point = true;
          break;
        }
        Hpp_inv[pi] = Hd.inverse();
      }
      if (singular_point) {
        lambda *= 10.0;
        continue;
      }

      // Schur complement: eliminate point blocks.
      for (int pi = 0; pi < np; ++pi) {
        const auto& cams = point_cams[pi];
        for (const auto& [ci, Wi] : cams) {
          const Eigen::Matrix<double, 6, 3> WHinv = (*Wi) * Hpp_inv[pi];
          bc_d.segment<6>(6 * ci) -= WHinv * bp[pi];
          for (const auto& [cj, Wj] : cams)
            Hcc_d.block<6, 6>(6 * ci, 6 * cj) -= WHinv * Wj->transpose();
        }
      }

      Eigen::VectorXd dc = Eigen::VectorXd::Zero(6 * nc);
      if (nc > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Hcc_d);
        if (ldlt.info() != Eigen::Success) {
          lambda *= 10.0;
          continue;
        }
        dc = ldlt.solve(bc_d);
        if (!dc.allFinite()) {
          lambda *= 10.0;
          continue;
        }
      }

      // Back-substitute point updates and form the trial state.
      auto trial_poses = poses;
      auto trial_positions = positions;
      for (int ci = 0; ci < nc; ++ci) {
        Pose& T = trial_poses.at(cam_ids[ci]);
        T = exp_se3(Twist(Vec6(dc.segment<6>(6 * ci)))) * T;
        T.orthonormalize();
      }
      bool step_too_big = false;
      for (int pi = 0; pi < np; ++pi) {
        Vec3 rhs = bp[pi];
        for (const auto& [ci, Wi] : point_cams[pi])
          rhs -= Wi->transpose() * dc.segment<6>(6 * ci);
        const Vec3 dp_step = Hpp_inv[pi] * rhs;
        if (!dp_step.allFinite() || dp_step.norm() > opts.max_point_step) {
          step_too_big = true;
          break;
        }
        trial_positions.at(point_ids[pi]) += dp_step;
      }
      if (step_too_big) {
        lambda *= 10.0;
        continue;
      }

      const double trial_cost = eval_cost(trial_poses, trial_positions);
      if (trial_cost <= cost) {
        const double decrease = cost - trial_cost;
        poses = std::move(trial_poses);
        positions = std::move(trial_positions);
        const double rel = cost > 0 ? decrease / cost : 0.0;
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < opts.rel_decrease_tol) iter = opts.max_iterations;  // stop
      } else if (trial_cost - cost <= 1e-12 * (1.0 + cost)) {
        // Rejected by floating-point dust only: converged, keep the state.
        accepted = true;
        iter = opts.max_iterations;
      } else {
        lambda *= 10.0;
      }
    }
    if (report.iterations >= opts.max_iterations) break;
  }

  // Commit.
  for (KfId id : variable_kfs) map.keyframe(id).pose = poses.at(id);
  for (PointId id : point_ids) map.point(id).position = positions.at(id);

  report.final_cost = cost;
  // Mean (unrobust, unweighted) reprojection error for reporting.
  double err_sum = 0.0;
  int err_n = 0;
  for (const auto& r : residuals) {
    const Vec3 pc = poses.at(r.kf) * positions.at(r.point);
    if (pc.z() <= 1e-9) continue;
    const Eigen::Vector2d proj(cam.fx * pc.x() / pc.z() + cam.cx,
                               cam.fy * pc.y() / pc.z() + cam.cy);
    err_sum += (r.pixel - proj).norm();
    ++err_n;
  }
  report.mean_reprojection_px = err_n ? err_sum / err_n : 0.0;
  return report;
}

}  // namespace atlas
