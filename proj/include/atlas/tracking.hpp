#pragma once

#include <optional>
#include <vector>

#include "atlas/camera.hpp"
#include "atlas/map.hpp"
#include "atlas/recognition.hpp"

namespace atlas {

struct FrameObservations {
  double timestamp = 0.0;
  std::vector<FrameMeasurement> measurements;
};

enum class TrackingStatus { OnTrack, Lost, Relocalizing };

struct TrackingState {
  TrackingStatus status = TrackingStatus::Lost;
  int consecutive_lost_frames = 0;
};

struct PoseEstimate {
  Pose pose;                       // camera-from-world at the optimum
  Mat6 hessian = Mat6::Zero();     // sum J^T Omega J over inlier terms
  std::optional<Mat6> covariance;  // H^-1 when well conditioned
  int inlier_count = 0;
  std::vector<bool> inlier_mask;
  double final_cost = 0.0;
};

struct TrackingConfig {
  int theta_match = 15;          // criterion (a): minimum matches
  double sigma_th = 0.05;        // criterion (b): translation sigma bound, m
  int n_reloc = 5;               // failed relocalizations before a new map
  double huber_delta = 2.45;     // px, chi2 95% for 2 dof
  double chi2_outlier = 5.991;
  double match_window_px = 15.0;
  int match_max_hamming = 50;
  double guided_match_px = 10.0;
  int reloc_min_inliers = 30;
  double condition_limit = 1e12;
  double pixel_sigma0 = 1.0;     // octave-0 measurement sigma
};

struct OptimizationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One 2D-3D match feeding pose-only optimization.
struct PoseObservation {
  Eigen::Vector2d pixel;
  int octave = 0;
  Vec3 world = Vec3::Zero();
};

/// Pose-only robust Gauss-Newton: minimizes the Huber-robustified
/// reprojection error over the 6-dof pose with map points fixed. Four
/// optimize-reclassify rounds; throws OptimizationFailed below 4 inliers.
PoseEstimate optimize_pose(const CameraModel& cam,
                           const std::vector<PoseObservation>& obs,
                           const Pose& initial, const TrackingConfig& cfg = {});

/// sqrt of diag(H^-1), ordered (x y z wx wy wz). Empty when the covariance
/// is unavailable (singular or ill-conditioned Hessian).
std::optional<std::array<double, 6>> pose_sigmas(const PoseEstimate& est);

/// Lost unless both criteria hold: enough matches and bounded translation
/// sigmas. Rotation sigmas never participate.
TrackingStatus evaluate_tracking_criteria(const PoseEstimate& est,
                                          int n_matches,
                                          const TrackingConfig& cfg);

struct FrameMatch {
  int measurement_index;
  PointId point_id;
  Vec3 world;
  int octave;
  Eigen::Vector2d pixel;
};

/// Projects map points with the predicted pose and matches frame
/// measurements by descriptor within a search window.
std::vector<FrameMatch> match_frame_to_map(const CameraModel& cam,
                                           const SubMap& map,
                                           const Pose& predicted,
                                           const FrameObservations& frame,
                                           double window_px, int max_hamming);

struct RelocalizationResult {
  MapId map_id = 0;
  PoseEstimate estimate;
  std::vector<FrameMatch> matches;
};

/// Multi-map relocalization: database query across all maps, P3P+RANSAC on
/// descriptor matches against the candidate keyframe's points, guided
/// matching, then pose-only optimization.
std::optional<RelocalizationResult> relocalize(const Atlas& atlas,
                                               const RecognitionDatabase& db,
                                               const CameraModel& cam,
                                               const FrameObservations& frame,
                                               const TrackingConfig& cfg);

enum class LostAction { KeepTrying, SpawnNewMap };

LostAction handle_lost(const TrackingState& state, const TrackingConfig& cfg);

}  // namespace atlas
