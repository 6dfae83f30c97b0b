#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "atlas/align.hpp"
#include "atlas/lie.hpp"
#include "atlas/map.hpp"

namespace atlas::eval {

struct TrajectoryEntry {
  double timestamp = 0.0;
  Pose t_cw;  // camera-from-world
};

using Trajectory = std::vector<TrajectoryEntry>;

/// TUM format: `t tx ty tz qx qy qz qw` per line, pose = camera-in-world
/// (the inverse of our camera-from-world convention).
Trajectory read_tum(const std::string& path);
void write_tum(const std::string& path, const Trajectory& traj);
Trajectory parse_tum(std::istream& is);
void format_tum(std::ostream& os, const Trajectory& traj);

struct AssociationOptions {
  double max_dt = 0.02;  // seconds
};

/// Injective nearest-timestamp association (estimate index, reference index).
/// Throws when both trajectories are non-empty yet nothing associates.
std::vector<std::pair<int, int>> associate(const Trajectory& estimate,
                                           const Trajectory& reference,
                                           const AssociationOptions& opts = {});

struct AteResult {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  int matched_frames = 0;
  SimTransform alignment;      // maps estimate coordinates into reference frame
  std::vector<double> errors;  // per-frame translation errors, pair order
};

/// Absolute trajectory error after closed-form alignment of the matched
/// camera centers (SE3, or Sim3 when `with_scale`): the estimate is aligned
/// onto the reference, never the other way around.
AteResult align_and_ate(const Trajectory& estimate, const Trajectory& reference,
                        bool with_scale = false,
                        const AssociationOptions& opts = {});

/// Percentage (0..100) of reference frames with an associated estimate frame:
/// the tracking coverage of a run. Never throws.
double coverage(const Trajectory& estimate, const Trajectory& reference,
                const AssociationOptions& opts = {});

/// One independently-aligned time range of a segmented evaluation.
struct SegmentSpec {
  double t_begin = 0.0;
  double t_end = 0.0;  // half-open [t_begin, t_end)
  bool with_scale = false;
};

/// Aligns each segment independently and pools the squared errors — the
/// multi-reference evaluation for sessions whose frames live in different
/// world frames. Segments with too few associations are skipped.
AteResult segmented_ate(const Trajectory& estimate, const Trajectory& reference,
                        const std::vector<SegmentSpec>& segments,
                        const AssociationOptions& opts = {});

/// Convenience splitter: cuts the estimate at timestamp gaps larger than
/// `gap` seconds and evaluates the pieces as segments.
AteResult segmented_ate_by_gaps(const Trajectory& estimate,
                                const Trajectory& reference, double gap,
                                bool with_scale = false,
                                const AssociationOptions& opts = {});

struct MapStats {
  struct PerMap {
    MapId id = 0;
    int keyframes = 0;
    int points = 0;
  };
  std::vector<PerMap> maps;
  int total_keyframes = 0;
  int total_points = 0;
};

MapStats map_stats(const Atlas& atlas);

}  // namespace atlas::eval
