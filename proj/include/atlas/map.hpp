#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "atlas/descriptor.hpp"
#include "atlas/lie.hpp"

namespace atlas {

using KfId = std::uint64_t;
using PointId = std::uint64_t;
using MapId = std::uint64_t;

inline constexpr int kDefaultCovisibilityThreshold = 15;

/// One 2D measurement in a frame. Information matrix is derived from the
/// octave: Omega = (1/sigma_oct^2) I2 with sigma_oct = scale_factor^octave.
struct FrameMeasurement {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  int octave = 0;
  Descriptor descriptor;
  std::optional<double> disparity;           // stereo only, pixels
  std::optional<PointId> matched_point;
  std::optional<std::uint64_t> sim_landmark;  // simulator provenance, test-only
};

struct MapPoint {
  PointId id = 0;
  Vec3 position = Vec3::Zero();
  Descriptor descriptor;
  // keyframe id -> measurement index in that keyframe
  std::map<KfId, int> observations;
  std::optional<std::uint64_t> origin_landmark;
};

struct KeyFrame {
  KfId id = 0;
  double timestamp = 0.0;
  Pose pose;  // camera-from-world
  std::vector<FrameMeasurement> measurements;
  bool is_gauge_fixed = false;
};

/// A single map: keyframes, points, covisibility graph and spanning tree.
/// The world reference frame is fixed at the first keyframe's camera.
class SubMap {
 public:
  MapId id = 0;
  int covisibility_threshold = kDefaultCovisibilityThreshold;

  const std::map<KfId, KeyFrame>& keyframes() const { return keyframes_; }
  const std::map<PointId, MapPoint>& points() const { return points_; }
  KeyFrame& keyframe(KfId id);
  const KeyFrame& keyframe(KfId id) const;
  MapPoint& point(PointId id);
  const MapPoint& point(PointId id) const;
  bool has_keyframe(KfId id) const { return keyframes_.count(id) > 0; }
  bool has_point(PointId id) const { return points_.count(resolve_point_id(id)) > 0; }

  /// Follows fuse tombstones so stale ids resolve to the surviving point.
  PointId resolve_point_id(PointId id) const;

  KfId spanning_tree_root() const { return root_; }
  std::optional<KfId> spanning_tree_parent(KfId id) const;
  /// Keyframe ids in insertion (temporal) order.
  const std::vector<KfId>& keyframe_order() const { return order_; }

  /// Exact shared-point count between two keyframes (0 if none).
  int shared_point_count(KfId a, KfId b) const;
  /// Neighbors whose shared count reaches the covisibility threshold,
  /// with the exact counts as weights.
  std::vector<std::pair<KfId, int>> covisibility_neighbors(KfId id) const;
  /// All covisibility edges (a < b, weight >= threshold).
  std::vector<std::tuple<KfId, KfId, int>> covisibility_edges() const;

  /// Inserts a keyframe. Measurements with matched_point set create
  /// observations. The first keyframe becomes the spanning-tree root and is
  /// gauge-fixed. Later keyframes get the most-covisible keyframe as tree
  /// parent, falling back to the temporal predecessor.
  KfId add_keyframe(KeyFrame kf);

  /// Inserts a point; its observations must reference existing keyframes and
  /// unmatched measurement slots (which get linked back).
  PointId add_point(MapPoint p);

  /// Links keyframe measurement `meas_idx` to an existing point.
  void add_observation(KfId kf, int meas_idx, PointId point);

  /// Re-targets every observation of `drop` onto `keep`, removing `drop`.
  /// A keyframe observing both keeps its `keep` link only. The surviving
  /// descriptor is the medoid (min median Hamming distance) of all
  /// observation descriptors.
  void fuse_points(PointId keep, PointId drop);

  void remove_point(PointId id);
  void remove_keyframe(KfId id);

  /// Re-points a spanning-tree edge (used when stitching trees in a merge).
  void set_spanning_parent(KfId child, KfId parent);

  /// Rigidly (or similarly) transforms every keyframe and point so that map
  /// content expressed in this map's world frame moves to frame
  /// T_new_old * old. Keyframe poses T_cw become T_cw * T_new_old^-1 with
  /// scale folded into translation.
  void apply_transform(const SimTransform& t_new_old);

  // test support
  std::map<std::pair<KfId, KfId>, int> brute_force_shared_counts() const;
  bool spanning_tree_is_valid() const;
  bool bidirectional_links_consistent() const;

 private:
  void bump_shared(KfId a, KfId b, int delta);
  void unlink_observation(MapPoint& p, KfId kf);

  std::map<KfId, KeyFrame> keyframes_;
  std::map<PointId, MapPoint> points_;
  std::vector<KfId> order_;
  // pairwise shared-point counts (only pairs with count > 0 present)
  std::map<KfId, std::map<KfId, int>> shared_;
  std::map<KfId, KfId> parent_;
  KfId root_ = 0;
  bool has_root_ = false;
  std::map<PointId, PointId> point_redirect_;

  friend class Atlas;
  friend void save_submap(std::ostream&, const SubMap&);
  friend SubMap load_submap(std::istream&);
};

/// Record kept when a map is retired by a merge: where its content went and
/// the transform that re-homes poses expressed in the retired world frame.
struct RetiredMapInfo {
  MapId successor = 0;
  SimTransform into_successor;  // maps old-world coordinates to new-world
};

/// The atlas: all sub-maps, exactly one active, plus hooks that keep an
/// external recognition database in sync.
class Atlas {
 public:
  std::function<void(MapId, const KeyFrame&)> on_keyframe_added;
  std::function<void(MapId, KfId)> on_keyframe_removed;
  // (merged_id, retired_a, retired_b): lets the recognition index re-home
  // its (map, keyframe) entries after a swap.
  std::function<void(MapId, MapId, MapId)> on_maps_merged;

  MapId create_map();
  void set_active(MapId id);
  MapId active_map_id() const { return active_; }
  SubMap& active_map() { return map(active_); }
  SubMap& map(MapId id);
  const SubMap& map(MapId id) const;
  bool has_map(MapId id) const { return maps_.count(id) > 0; }
  const std::map<MapId, SubMap>& maps() const { return maps_; }

  KfId fresh_keyframe_id() { return next_kf_id_++; }
  PointId fresh_point_id() { return next_point_id_++; }
  MapId fresh_map_id() { return next_map_id_++; }

  /// add_keyframe routed through the atlas so the recognition hook fires.
  KfId add_keyframe(MapId map_id, KeyFrame kf);
  void remove_keyframe(MapId map_id, KfId kf);

  /// Atomically installs `merged` in place of maps `a` and `b`. `t_m_s` maps
  /// coordinates of retired map `s` into the merged frame (the surviving
  /// frame is `a`'s, which enters with the identity).
  MapId swap_merged(SubMap merged, MapId a, MapId b, const SimTransform& t_m_s);

  /// Resolves a possibly-retired map id to the live map it merged into,
  /// accumulating the re-homing transform.
  std::pair<MapId, SimTransform> resolve_map(MapId id) const;

  const std::map<MapId, RetiredMapInfo>& retired() const { return retired_; }

 private:
  friend void save_atlas(std::ostream&, const Atlas&);
  friend Atlas load_atlas(std::istream&);

  std::map<MapId, SubMap> maps_;
  std::map<MapId, RetiredMapInfo> retired_;
  MapId active_ = 0;
  MapId next_map_id_ = 1;
  KfId next_kf_id_ = 1;
  PointId next_point_id_ = 1;
};

}  // namespace atlas
