#pragma once

#include <array>
#include <optional>
#include <vector>

#include "atlas/camera.hpp"
#include "atlas/map.hpp"
#include "atlas/mapping.hpp"
#include "atlas/merging.hpp"
#include "atlas/recognition.hpp"
#include "atlas/tracking.hpp"

namespace atlas {

struct SystemConfig {
  bool stereo = true;
  TrackingConfig tracking;
  KeyframePolicy keyframe_policy;
  TriangulationOptions triangulation;
  MergeConfig merge;  // shared by map merging and loop closing
  QueryOptions query;
  BaOptions local_ba;
  bool single_map = false;  // legacy mode: never spawn a map when lost
  bool enable_loop_closing = true;
  bool enable_map_merging = true;
  int recognition_cooldown_kfs = 5;  // keyframes between place-recognition acts
  int min_bootstrap_points = 40;     // stereo
  int min_bootstrap_matches = 40;    // mono two-view
  double min_bootstrap_parallax_px = 15.0;
};

enum class FrameOutcome {
  Bootstrapping,
  Tracked,
  TrackedKeyframe,
  Lost,
  Relocalized,
  NewMapSpawned,
};

/// Per-frame log entry. The frame pose is stored relative to its reference
/// keyframe so trajectory export follows later BA / pose-graph / merge
/// corrections of that keyframe.
struct FrameRecord {
  double timestamp = 0.0;
  FrameOutcome outcome = FrameOutcome::Lost;
  MapId map_id = 0;      // map active when the frame was processed
  KfId ref_keyframe = 0; // 0 = no pose for this frame
  Pose t_frame_ref;      // T_cw(frame) * T_cw(ref)^-1
  int n_matches = 0;
  std::array<double, 6> sigmas{};  // (x y z wx wy wz); NaN when unavailable
  bool has_sigmas = false;
};

struct TimedPoseEstimate {
  double timestamp = 0.0;
  Pose t_cw;
};

/// Full multi-map SLAM pipeline: bootstrap, frame tracking with the pose
/// observability criteria, keyframe insertion with triangulation and local
/// BA, multi-map relocalization, new-map spawning, place recognition driving
/// map merges and loop closures.
class SlamSystem {
 public:
  SlamSystem(CameraModel cam, VocabularyTree vocab, SystemConfig cfg = {});

  void process_frame(const FrameObservations& frame);

  /// Forces a fresh active map (e.g. a new session); tracking restarts from
  /// bootstrap.
  void start_new_map();

  const Atlas& atlas() const { return atlas_; }
  Atlas& atlas() { return atlas_; }
  const RecognitionDatabase& database() const { return db_; }
  const CameraModel& camera() const { return cam_; }
  const SystemConfig& config() const { return cfg_; }
  TrackingStatus status() const { return state_.status; }

  const std::vector<FrameRecord>& frame_log() const { return log_; }
  const std::vector<MergeReport>& merges() const { return merges_; }
  const std::vector<LoopClosureReport>& loop_closures() const { return loops_; }
  int relocalization_count() const { return relocalizations_; }

  /// Estimated camera trajectory: per-frame relative poses composed with the
  /// current (possibly corrected) keyframe poses; retired maps are resolved
  /// to their merged successors. Frames without a pose are skipped.
  std::vector<TimedPoseEstimate> trajectory() const;

 private:
  void bootstrap(const FrameObservations& frame, FrameRecord& rec);
  bool bootstrap_stereo(const FrameObservations& frame);
  bool bootstrap_mono(const FrameObservations& frame);
  void track(const FrameObservations& frame, FrameRecord& rec);
  void on_lost(const FrameObservations& frame, FrameRecord& rec);
  void resume_from_relocalization(const FrameObservations& frame,
                                  const RelocalizationResult& res,
                                  FrameRecord& rec);
  KfId insert_keyframe(const FrameObservations& frame, const Pose& pose,
                       const std::vector<FrameMatch>& matches,
                       const std::vector<bool>& inlier_mask);
  void run_place_recognition(KfId new_kf);
  void rehome_tracking_after_merge(MapId old_map);
  int ref_keyframe_votes(const SubMap& map,
                         const std::vector<FrameMatch>& matches,
                         const std::vector<bool>& inliers, KfId* best) const;

  CameraModel cam_;
  SystemConfig cfg_;
  Atlas atlas_;
  RecognitionDatabase db_;

  TrackingState state_;
  bool bootstrapped_ = false;
  bool force_fresh_map_ = false;
  std::optional<FrameObservations> pending_mono_;
  Pose last_pose_;      // T_cw of previous tracked frame (active-map frame)
  Pose velocity_;       // T_cw(k) * T_cw(k-1)^-1
  bool have_velocity_ = false;
  KfId ref_kf_ = 0;
  int frames_since_kf_ = 0;
  int kfs_since_recognition_ = 0;
  std::vector<KfId> recent_kfs_;  // last keyframes of the active map

  std::vector<FrameRecord> log_;
  std::vector<MergeReport> merges_;
  std::vector<LoopClosureReport> loops_;
  int relocalizations_ = 0;
};

}  // namespace atlas
