#include "atlas/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace atlas {

int fuse_local_duplicates(SubMap& map, KfId center, double radius,
                          int max_hamming) {
  std::set<KfId> kfs = {center};
  for (const auto& [n, _] : map.covisibility_neighbors(center)) kfs.insert(n);
  std::set<PointId> cluster;
  for (KfId id : kfs)
    for (const auto& m : map.keyframe(id).measurements)
      if (m.matched_point) cluster.insert(map.resolve_point_id(*m.matched_point));

  std::vector<PointId> ids(cluster.begin(), cluster.end());
  auto nearest = [&](PointId from) {
    const MapPoint& p = map.point(from);
    double best_d = radius;
    std::optional<PointId> best;
    for (PointId raw : ids) {
      if (!map.has_point(raw)) continue;
      const PointId cand = map.resolve_point_id(raw);
      if (cand == map.resolve_point_id(from)) continue;
      const MapPoint& q = map.point(cand);
      const double d = (p.position - q.position).norm();
      if (d <= best_d && hamming(p.descriptor, q.descriptor) <= max_hamming) {
        best_d = d;
        best = cand;
      }
    }
    return best;
  };

  int fused = 0;
  for (PointId raw : ids) {
    if (!map.has_point(raw)) continue;
    const PointId id = map.resolve_point_id(raw);
    if (id != raw) continue;  // already fused away this pass
    const auto other = nearest(id);
    if (!other) continue;
    const auto back = nearest(*other);
    if (!back || *back != id) continue;  // not mutual
    const PointId keep = std::min(id, *other), drop = std::max(id, *other);
    map.fuse_points(keep, drop);
    ++fused;
  }
  return fused;
}

}  // namespace atlas

namespace atlas {

bool decide_new_keyframe(int frames_since_last_kf, double tracked_ratio,
                         const KeyframePolicy& policy) {
  return frames_since_last_kf >= policy.max_frames_between ||
         tracked_ratio < policy.min_tracked_ratio;
}

std::optional<Vec3> triangulate_midpoint(const Vec3& c1, const Vec3& d1,
                                         const Vec3& c2, const Vec3& d2) {
  // Solve [d1 -d2] [s t]^T ~= c2 - c1 in least squares.
  const double a = d1.dot(d1), b = d1.dot(d2), c = d2.dot(d2);
  const double det = a * c - b * b;
  if (det < 1e-12) return std::nullopt;  // near-parallel rays
  const Vec3 rhs = c2 - c1;
  const double e = d1.dot(rhs), f = d2.dot(rhs);
  const double s = (c * e - b * f) / det;
  const double t = (b * e - a * f) / det;
  return 0.5 * ((c1 + s * d1) + (c2 + t * d2));
}

TriangulationReport triangulate_new_points(
    SubMap& map, const CameraModel& cam, KfId new_kf_id,
    const std::vector<KfId>& neighbors,
    const std::function<PointId()>& next_point_id,
    const TriangulationOptions& opts) {
  TriangulationReport report;
  KeyFrame& kf = map.keyframe(new_kf_id);
  const Pose T1 = kf.pose;
  const Pose T1_inv = T1.inverse();
  const Vec3 c1 = T1_inv.translation;

  const double cos_min_parallax =
      std::cos(opts.min_parallax_deg * M_PI / 180.0);

  auto reprojection_ok = [&](const Pose& T, const Eigen::Vector2d& px,
                             const Vec3& X) {
    const Vec3 pc = T * X;
    if (pc.z() <= 0 || pc.z() > opts.max_depth) return false;
    const Eigen::Vector2d proj(cam.fx * pc.x() / pc.z() + cam.cx,
                               cam.fy * pc.y() / pc.z() + cam.cy);
    return (proj - px).norm() < opts.max_reprojection_px;
  };

  for (int mi = 0; mi < int(kf.measurements.size()); ++mi) {
    // Re-read the measurement each time: add_point mutates the keyframe.
    if (map.keyframe(new_kf_id).measurements[mi].matched_point) continue;
    const FrameMeasurement m = map.keyframe(new_kf_id).measurements[mi];

    // Stereo: depth straight from disparity.
    if (cam.baseline > 0 && m.disparity && *m.disparity > 1e-6) {
      const double depth = cam.fx * cam.baseline / *m.disparity;
      if (depth <= 0 || depth > opts.max_depth) {
        ++report.rejected_cheirality;
        continue;
      }
      const Vec3 X = T1_inv * backproject(cam, m.pixel, depth);
      MapPoint p;
      p.id = next_point_id();
      p.position = X;
      p.descriptor = m.descriptor;
      p.origin_landmark = m.sim_landmark;
      p.observations[new_kf_id] = mi;
      map.add_point(std::move(p));
      ++report.created;
      continue;
    }

    // Monocular: best descriptor match among neighbors' unmatched slots.
    int best_h = opts.max_hamming + 1;
    KfId best_kf = 0;
    int best_idx = -1;
    for (KfId nid : neighbors) {
      if (nid == new_kf_id) continue;
      const KeyFrame& nkf = map.keyframe(nid);
      for (int ni = 0; ni < int(nkf.measurements.size()); ++ni) {
        const auto& nm = nkf.measurements[ni];
        if (nm.matched_point) continue;
        const int h = hamming(m.descriptor, nm.descriptor);
        if (h < best_h) {
          best_h = h;
          best_kf = nid;
          best_idx = ni;
        }
      }
    }
    if (best_idx < 0) continue;

    const KeyFrame& nkf = map.keyframe(best_kf);
    const Pose T2_inv = nkf.pose.inverse();
    const Vec3 c2 = T2_inv.translation;
    const Vec3 d1 =
        (T1_inv.rotation * backproject(cam, m.pixel, 1.0)).normalized();
    const Vec3 d2 = (T2_inv.rotation *
                     backproject(cam, nkf.measurements[best_idx].pixel, 1.0))
                        .normalized();

    if (d1.dot(d2) > cos_min_parallax) {
      ++report.rejected_parallax;
      continue;
    }
    const auto X = triangulate_midpoint(c1, d1, c2, d2);
    if (!X) {
      ++report.rejected_parallax;
      continue;
    }
    // Also require the realized parallax at the triangulated point.
    const Vec3 r1 = (*X - c1).normalized(), r2 = (*X - c2).normalized();
    if (r1.dot(r2) > cos_min_parallax) {
      ++report.rejected_parallax;
      continue;
    }
    if ((T1 * *X).z() <= 0 || (nkf.pose * *X).z() <= 0) {
      ++report.rejected_cheirality;
      continue;
    }
    if (!reprojection_ok(T1, m.pixel, *X) ||
        !reprojection_ok(nkf.pose, nkf.measurements[best_idx].pixel, *X)) {
      ++report.rejected_reprojection;
      continue;
    }

    MapPoint p;
    p.id = next_point_id();
    p.position = *X;
    p.descriptor = m.descriptor;
    p.origin_landmark = m.sim_landmark;
    p.observations[new_kf_id] = mi;
    p.observations[best_kf] = best_idx;
    map.add_point(std::move(p));
    ++report.created;
  }
  return report;
}

BaReport local_ba(SubMap& map, const CameraModel& cam, KfId center,
                  const BaOptions& opts,
                  const std::function<bool()>& interrupt) {
  std::set<KfId> local = {center};
  for (const auto& [n, _] : map.covisibility_neighbors(center))
    local.insert(n);

  std::set<KfId> variable, fixed;
  std::set<PointId> points;
  for (KfId id : local) {
    if (map.keyframe(id).is_gauge_fixed)
      fixed.insert(id);
    else
      variable.insert(id);
    for (const auto& m : map.keyframe(id).measurements)
      if (m.matched_point) points.insert(*m.matched_point);
  }
  // Points seen from a single view are unconstrained along their ray; they
  // keep their triangulated position until a second observation arrives.
  for (auto it = points.begin(); it != points.end();)
    it = map.point(*it).observations.size() < 2 ? points.erase(it)
                                                : std::next(it);
  // Outside observers of local points are clamped.
  for (PointId pid : points)
    for (const auto& [kf_id, _] : map.point(pid).observations)
      if (!local.count(kf_id)) fixed.insert(kf_id);

  return bundle_adjust(map, cam, variable, fixed, points, opts, interrupt);
}

}  // namespace atlas
