#pragma once

#include <functional>

#include "atlas/ba.hpp"
#include "atlas/camera.hpp"
#include "atlas/map.hpp"

namespace atlas {

struct KeyframePolicy {
  int max_frames_between = 10;
  double min_tracked_ratio = 0.9;
};

/// Minimal insertion policy: a keyframe is due after a fixed frame budget or
/// when the tracked-point ratio against the reference keyframe decays.
bool decide_new_keyframe(int frames_since_last_kf, double tracked_ratio,
                         const KeyframePolicy& policy = {});

struct TriangulationOptions {
  int max_hamming = 50;
  double min_parallax_deg = 1.0;
  double max_reprojection_px = 2.0;
  double max_depth = 1e4;
};

struct TriangulationReport {
  int created = 0;
  int rejected_parallax = 0;
  int rejected_cheirality = 0;
  int rejected_reprojection = 0;
};

/// Creates map points for unmatched measurements of `new_kf`: stereo
/// measurements are backprojected from disparity; monocular ones are
/// midpoint-triangulated against descriptor matches in neighbor keyframes.
TriangulationReport triangulate_new_points(
    SubMap& map, const CameraModel& cam, KfId new_kf,
    const std::vector<KfId>& neighbors,
    const std::function<PointId()>& next_point_id,
    const TriangulationOptions& opts = {});

/// Midpoint of the common perpendicular of two world-frame rays.
std::optional<Vec3> triangulate_midpoint(const Vec3& center1, const Vec3& dir1,
                                         const Vec3& center2, const Vec3& dir2);

/// Fuses duplicated points around a keyframe: mutual nearest neighbors among
/// the points observed by `center` and its covisible neighbors, within
/// `radius` meters and `max_hamming` descriptor distance. The older point
/// (smaller id) survives. Returns the number of fusions.
int fuse_local_duplicates(SubMap& map, KfId center, double radius,
                          int max_hamming);

/// Local BA around `center`: covisible keyframes move (gauge-fixed ones do
/// not), their points move, and outside observers are clamped.
BaReport local_ba(SubMap& map, const CameraModel& cam, KfId center,
                  const BaOptions& opts = {},
                  const std::function<bool()>& interrupt = {});

}  // namespace atlas
