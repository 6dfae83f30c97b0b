#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atlas/camera.hpp"
#include "atlas/map.hpp"
#include "atlas/tracking.hpp"

namespace atlas::sim {

struct SimLandmark {
  std::uint64_t id = 0;
  Vec3 position = Vec3::Zero();
  Descriptor descriptor;
};

struct SimWorld {
  std::vector<SimLandmark> landmarks;
  std::uint64_t seed = 0;
};

enum class WorldKind { Room, Corridor, Loop };

/// Deterministic synthetic world. Landmark descriptors are drawn uniformly
/// and rejected until every pair is at least `min_pairwise_hamming` apart,
/// so descriptor matching is unambiguous by construction.
SimWorld generate_world(WorldKind kind, int n_landmarks, std::uint64_t seed,
                        int min_pairwise_hamming = 80);

struct RenderOptions {
  double pixel_noise = 0.4;      // gaussian, px
  double disparity_noise = 0.2;  // gaussian, px (stereo only)
  double min_depth = 0.2;
  double max_depth = 60.0;
  int n_outliers = 0;  // spurious measurements with fresh random descriptors
  bool stereo = true;
  bool blackout = false;  // sensor dropout: no measurements at all
  // "Far points only" degradation: landmarks nearer than this are invisible.
  std::optional<double> far_only_min_depth;
};

/// Projects the visible landmarks into a frame; sim_landmark records
/// provenance for test oracles. Noise is a pure function of (seed, frame).
FrameObservations render_frame(const SimWorld& world, const CameraModel& cam,
                               const Pose& t_cw, double timestamp,
                               const RenderOptions& opts, std::uint64_t seed,
                               std::uint64_t frame_index);

/// Camera-from-world pose looking from `eye` toward `target` (+z forward).
Pose look_at(const Vec3& eye, const Vec3& target,
             const Vec3& up = Vec3(0, 0, 1));

struct TimedPose {
  double timestamp = 0.0;
  Pose t_cw;
};

/// Circular path of `frames` poses around `center` at `radius`, camera facing
/// the center. Angle runs from `start_angle` over `revolutions` full turns.
std::vector<TimedPose> orbit_trajectory(const Vec3& center, double radius,
                                        double height, int frames,
                                        double revolutions, double dt,
                                        double start_angle = 0.0,
                                        double t0 = 0.0);

/// Straight path from `from` to `to`, camera facing along the motion unless
/// `face` is given.
std::vector<TimedPose> line_trajectory(const Vec3& from, const Vec3& to,
                                       int frames, double dt,
                                       std::optional<Vec3> face = std::nullopt,
                                       double t0 = 0.0);

struct EpisodeSpec {
  std::string kind;  // "blackout" | "far_only"
  int start = 0, end = 0;  // frame indices, half-open [start, end)
  double min_depth = 15.0;  // far_only only
};

struct TrajectorySpec {
  std::string kind = "orbit";  // "orbit" | "line"
  Vec3 center = Vec3(0, 0, 1.5);
  double radius = 8.0;
  double height = 1.5;
  double revolutions = 1.0;
  double start_angle = 0.0;
  Vec3 from = Vec3::Zero(), to = Vec3(10, 0, 1.5);
  int frames = 600;
  double dt = 0.05;
  double t0 = 0.0;
};

struct SessionScript {
  std::string name = "session";
  std::uint64_t seed = 1;
  bool stereo = true;
  TrajectorySpec trajectory;
  RenderOptions render;  // blackout/far_only here are overridden per episode
  std::vector<EpisodeSpec> episodes;
  std::vector<int> start_new_map_at;  // frames forcing a fresh map
};

struct ScenarioScript {
  WorldKind world_kind = WorldKind::Loop;
  int world_landmarks = 1500;
  std::uint64_t world_seed = 7;
  std::optional<CameraModel> camera;  // default camera when absent
  std::vector<SessionScript> sessions;
};

ScenarioScript parse_scenario(const std::string& json_text);
ScenarioScript load_scenario(const std::string& path);

CameraModel default_camera();

/// Materializes the ground-truth poses of a session's trajectory.
std::vector<TimedPose> session_trajectory(const SessionScript& s);

/// Render options for one frame of a session, with episodes applied.
RenderOptions frame_render_options(const SessionScript& s, int frame);

/// Seeds a ground-truth map into the atlas: keyframes at the given poses,
/// points at the exact landmark positions, observations linked. Keyframes are
/// routed through Atlas::add_keyframe so recognition hooks fire.
MapId seed_map_from_world(Atlas& atlas, const SimWorld& world,
                          const CameraModel& cam,
                          const std::vector<TimedPose>& kf_poses,
                          const RenderOptions& opts = {});

}  // namespace atlas::sim
