#pragma once

#include <optional>

#include "atlas/align.hpp"
#include "atlas/ba.hpp"
#include "atlas/camera.hpp"
#include "atlas/map.hpp"
#include "atlas/pose_graph.hpp"
#include "atlas/recognition.hpp"

namespace atlas {

struct MergeConfig {
  GraphMode mode = GraphMode::SE3;
  int max_hamming = 50;
  double fuse_radius = 0.15;  // 3-sigma position gate for duplicate points
  double guided_match_px = 10.0;
  RansacOptions ransac{.inlier_tol = 0.05, .max_iters = 200, .min_inliers = 6};
  int min_covis_weight = 100;
  BaOptions ba;
  PoseGraphOptions pgo;
};

/// Matched keyframe pair driving a merge: K_a in the active map, K_s in the
/// map about to be swallowed.
struct MergeContext {
  MapId active_map = 0;
  MapId swallowed_map = 0;
  KfId k_active = 0;
  KfId k_swallowed = 0;
};

struct AlignmentResult {
  SimTransform t_a_s;  // maps swallowed-world coordinates into active-world
  int putative_matches = 0;
  int ransac_inliers = 0;
  int guided_matches = 0;
};

/// Descriptor matches between map points seen around the two keyframes
/// (covisible clusters), mutual best under the Hamming cap.
std::vector<std::pair<PointId, PointId>> collect_putative_matches(
    const SubMap& map_a, KfId k_a, const SubMap& map_s, KfId k_s,
    int max_hamming);

/// Horn+RANSAC on putative point matches, guided re-matching of active-map
/// points in K_s, then nonlinear refinement of the aligning transform over
/// the reprojection error. Empty optional when RANSAC finds no consensus.
std::optional<AlignmentResult> estimate_alignment(const SubMap& map_a,
                                                  KfId k_a,
                                                  const SubMap& map_s,
                                                  KfId k_s,
                                                  const CameraModel& cam,
                                                  const MergeConfig& cfg);

struct MergeReport {
  MapId merged_map = 0;
  AlignmentResult alignment;
  int fused_first_pass = 0;
  int fused_second_pass = 0;
  BaReport welding_ba;
  PoseGraphReport pgo;
  double candidate_score = 0.0;
};

struct MergeHooks {
  // Test-only: force a rollback right before the atomic swap.
  std::function<bool()> abort_before_commit;
};

/// Seamless merge: transform the swallowed map, fuse duplicate points, weld
/// with local BA around K_a (keyframes fixed in M_a stay fixed), fuse again,
/// pose-graph optimize, then atomically replace both maps. Returns nothing
/// (atlas untouched) when alignment or welding fails.
std::optional<MergeReport> merge_maps(Atlas& atlas, const CameraModel& cam,
                                      const MergeContext& ctx,
                                      const MergeConfig& cfg = {},
                                      const MergeHooks& hooks = {});

struct LoopClosureReport {
  SimTransform correction;  // applied to the current keyframe's cluster
  int fused_points = 0;
  PoseGraphReport pgo;
  BaReport welding_ba;
  double pre_cost = 0.0;
  double post_cost = 0.0;
};

/// Loop closing inside the active map: align the current keyframe's cluster
/// against the loop candidate's cluster, add the loop constraint, fuse
/// duplicated points, pose-graph optimize, then weld with local BA.
std::optional<LoopClosureReport> detect_and_close_loop(
    Atlas& atlas, const CameraModel& cam, KfId current_kf, KfId candidate_kf,
    const MergeConfig& cfg = {});

/// Full BA over all non-gauge keyframes and all points; interruptible, and
/// an interrupted run leaves the map untouched.
BaReport global_ba(SubMap& map, const CameraModel& cam,
                   const BaOptions& opts = {},
                   const std::function<bool()>& interrupt = {});

}  // namespace atlas
