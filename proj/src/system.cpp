#include "atlas/system.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace atlas {

namespace {

// Re-homes a camera-from-world pose when its world frame moves by t_new_old;
// same convention as SubMap::apply_transform (scale folded into translation).
Pose rehome_pose(const Pose& t_cw, const SimTransform& t_new_old) {
  const SimTransform s = SimTransform::from_pose(t_cw) * t_new_old.inverse();
  Pose out;
  out.rotation = s.pose.rotation;
  out.translation = s.pose.translation / s.scale;
  return out;
}

std::vector<Descriptor> frame_descriptors(const FrameObservations& frame) {
  std::vector<Descriptor> out;
  out.reserve(frame.measurements.size());
  for (const auto& m : frame.measurements) out.push_back(m.descriptor);
  return out;
}

}  // namespace

SlamSystem::SlamSystem(CameraModel cam, VocabularyTree vocab, SystemConfig cfg)
    : cam_(std::move(cam)), cfg_(cfg), db_(std::move(vocab)) {
  atlas_.on_keyframe_added = [this](MapId map_id, const KeyFrame& kf) {
    db_.index_keyframe(map_id, kf);
  };
  atlas_.on_keyframe_removed = [this](MapId, KfId kf_id) {
    db_.remove_keyframe(kf_id);
  };
  atlas_.on_maps_merged = [this](MapId merged, MapId a, MapId b) {
    db_.rehome_maps(merged, a, b);
  };
}

void SlamSystem::process_frame(const FrameObservations& frame) {
  FrameRecord rec;
  rec.timestamp = frame.timestamp;
  rec.map_id = atlas_.maps().empty() ? 0 : atlas_.active_map_id();
  rec.sigmas.fill(std::numeric_limits<double>::quiet_NaN());

  if (!bootstrapped_)
    bootstrap(frame, rec);
  else if (state_.status == TrackingStatus::OnTrack)
    track(frame, rec);
  else
    on_lost(frame, rec);

  log_.push_back(rec);
}

void SlamSystem::start_new_map() {
  bootstrapped_ = false;
  force_fresh_map_ = true;
  pending_mono_.reset();
  state_.status = TrackingStatus::Lost;
  state_.consecutive_lost_frames = 0;
  have_velocity_ = false;
  recent_kfs_.clear();
  ref_kf_ = 0;
}

void SlamSystem::bootstrap(const FrameObservations& frame, FrameRecord& rec) {
  rec.outcome = FrameOutcome::Bootstrapping;

  // Prefer resuming in an existing map over growing a fresh one — unless a
  // fresh map was explicitly requested.
  if (!force_fresh_map_ && db_.size() > 0) {
    if (auto res = relocalize(atlas_, db_, cam_, frame, cfg_.tracking)) {
      resume_from_relocalization(frame, *res, rec);
      return;
    }
  }

  const bool ok =
      cfg_.stereo ? bootstrap_stereo(frame) : bootstrap_mono(frame);
  if (!ok) return;

  bootstrapped_ = true;
  force_fresh_map_ = false;
  state_.status = TrackingStatus::OnTrack;
  state_.consecutive_lost_frames = 0;
  frames_since_kf_ = 0;
  kfs_since_recognition_ = 0;

  rec.outcome = FrameOutcome::TrackedKeyframe;
  rec.map_id = atlas_.active_map_id();
  rec.ref_keyframe = ref_kf_;
  rec.t_frame_ref = last_pose_ * atlas_.active_map().keyframe(ref_kf_).pose.inverse();
  rec.n_matches = int(atlas_.active_map().keyframe(ref_kf_).measurements.size());
}

bool SlamSystem::bootstrap_stereo(const FrameObservations& frame) {
  int usable = 0;
  for (const auto& m : frame.measurements)
    if (m.disparity && *m.disparity > 0.5) ++usable;
  if (usable < cfg_.min_bootstrap_points) return false;

  const MapId map_id = atlas_.create_map();
  atlas_.set_active(map_id);
  SubMap& map = atlas_.active_map();

  KeyFrame kf;
  kf.id = atlas_.fresh_keyframe_id();
  kf.timestamp = frame.timestamp;
  kf.pose = Pose{};  // the new map's world frame is this camera
  kf.measurements = frame.measurements;
  const KfId kf_id = atlas_.add_keyframe(map_id, std::move(kf));

  const KeyFrame& stored = map.keyframe(kf_id);
  for (std::size_t i = 0; i < stored.measurements.size(); ++i) {
    const auto& m = stored.measurements[i];
    if (!m.disparity || *m.disparity <= 0.5) continue;
    const double depth = cam_.fx * cam_.baseline / *m.disparity;
    if (depth <= 0.0 || depth > cfg_.triangulation.max_depth) continue;
    MapPoint p;
    p.id = atlas_.fresh_point_id();
    p.position = backproject(cam_, m.pixel, depth);
    p.descriptor = m.descriptor;
    p.observations[kf_id] = int(i);
    p.origin_landmark = m.sim_landmark;
    map.add_point(std::move(p));
  }

  last_pose_ = Pose{};
  have_velocity_ = false;
  ref_kf_ = kf_id;
  recent_kfs_ = {kf_id};
  return true;
}

bool SlamSystem::bootstrap_mono(const FrameObservations& frame) {
  if (!pending_mono_) {
    pending_mono_ = frame;
    return false;
  }
  const FrameObservations& f1 = *pending_mono_;
  const FrameObservations& f2 = frame;

  // Mutual best descriptor matches between the two views.
  struct Pair {
    int i1, i2;
  };
  std::vector<Pair> pairs;
  std::vector<int> best2_for1(f1.measurements.size(), -1);
  for (std::size_t i = 0; i < f1.measurements.size(); ++i) {
    int best_h = cfg_.tracking.match_max_hamming + 1, best = -1;
    for (std::size_t j = 0; j < f2.measurements.size(); ++j) {
      const int h =
          hamming(f1.measurements[i].descriptor, f2.measurements[j].descriptor);
      if (h < best_h) {
        best_h = h;
        best = int(j);
      }
    }
    best2_for1[i] = best;
  }
  for (std::size_t j = 0; j < f2.measurements.size(); ++j) {
    int best_h = cfg_.tracking.match_max_hamming + 1, best = -1;
    for (std::size_t i = 0; i < f1.measurements.size(); ++i) {
      const int h =
          hamming(f1.measurements[i].descriptor, f2.measurements[j].descriptor);
      if (h < best_h) {
        best_h = h;
        best = int(i);
      }
    }
    if (best >= 0 && best2_for1[best] == int(j)) pairs.push_back({best, int(j)});
  }

  if (int(pairs.size()) < cfg_.min_bootstrap_matches) {
    pending_mono_ = frame;  // scene changed too much; restart from here
    return false;
  }
  double parallax = 0.0;
  for (const auto& p : pairs)
    parallax +=
        (f1.measurements[p.i1].pixel - f2.measurements[p.i2].pixel).norm();
  parallax /= double(pairs.size());
  if (parallax < cfg_.min_bootstrap_parallax_px) return false;  // wait

  // Normalized image coordinates.
  auto normalized = [&](const Eigen::Vector2d& px) {
    return Vec3((px.x() - cam_.cx) / cam_.fx, (px.y() - cam_.cy) / cam_.fy,
                1.0);
  };

  // Eight-point essential matrix: x2^T E x1 = 0.
  Eigen::MatrixXd A(pairs.size(), 9);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Vec3 x1 = normalized(f1.measurements[pairs[k].i1].pixel);
    const Vec3 x2 = normalized(f2.measurements[pairs[k].i2].pixel);
    A.row(k) << x2.x() * x1.x(), x2.x() * x1.y(), x2.x(), x2.y() * x1.x(),
        x2.y() * x1.y(), x2.y(), x1.x(), x1.y(), 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd_a(A, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> e = svd_a.matrixV().col(8);
  Mat3 E;
  E << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  Eigen::JacobiSVD<Mat3> svd_e(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd_e.matrixU(), V = svd_e.matrixV();
  if (U.determinant() < 0) U.col(2) *= -1;
  if (V.determinant() < 0) V.col(2) *= -1;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  struct Hypothesis {
    Mat3 r;
    Vec3 t;
    int support = -1;
  } best;
  const Mat3 rs[2] = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const Vec3 ts[2] = {U.col(2), -U.col(2)};

  struct Tri {
    int i1, i2;
    Vec3 point;  // world = first camera frame
  };
  std::vector<Tri> best_tris;

  for (const Mat3& r : rs) {
    for (const Vec3& t : ts) {
      // Camera 1 at the origin; camera 2 pose T_cw = [r | t].
      const Vec3 c2 = -r.transpose() * t;
      int support = 0;
      std::vector<Tri> tris;
      for (const auto& p : pairs) {
        const Vec3 d1 = normalized(f1.measurements[p.i1].pixel).normalized();
        const Vec3 d2 =
            (r.transpose() * normalized(f2.measurements[p.i2].pixel))
                .normalized();
        const auto x = triangulate_midpoint(Vec3::Zero(), d1, c2, d2);
        if (!x) continue;
        const double z1 = x->z();
        const double z2 = (r * *x + t).z();
        if (z1 <= 0 || z2 <= 0) continue;
        ++support;
        tris.push_back({p.i1, p.i2, *x});
      }
      if (support > best.support) {
        best = {r, t, support};
        best_tris = std::move(tris);
      }
    }
  }
  if (best.support < cfg_.min_bootstrap_matches / 2) {
    pending_mono_ = frame;
    return false;
  }

  // Monocular scale is free: normalize so the median depth is 2.
  std::vector<double> depths;
  for (const auto& t : best_tris) depths.push_back(t.point.z());
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2,
                   depths.end());
  const double scale = 2.0 / depths[depths.size() / 2];
  best.t *= scale;
  for (auto& t : best_tris) t.point *= scale;

  const MapId map_id = atlas_.create_map();
  atlas_.set_active(map_id);
  SubMap& map = atlas_.active_map();

  KeyFrame kf1;
  kf1.id = atlas_.fresh_keyframe_id();
  kf1.timestamp = f1.timestamp;
  kf1.pose = Pose{};
  kf1.measurements = f1.measurements;
  const KfId id1 = atlas_.add_keyframe(map_id, std::move(kf1));

  std::map<int, PointId> point_for_i2;
  for (const auto& t : best_tris) {
    MapPoint p;
    p.id = atlas_.fresh_point_id();
    p.position = t.point;
    p.descriptor = f1.measurements[t.i1].descriptor;
    p.observations[id1] = t.i1;
    p.origin_landmark = f1.measurements[t.i1].sim_landmark;
    point_for_i2[t.i2] = map.add_point(std::move(p));
  }

  KeyFrame kf2;
  kf2.id = atlas_.fresh_keyframe_id();
  kf2.timestamp = f2.timestamp;
  kf2.pose.rotation = best.r;
  kf2.pose.translation = best.t;
  kf2.measurements = f2.measurements;
  for (auto& [i2, pid] : point_for_i2)
    kf2.measurements[i2].matched_point = pid;
  const KfId id2 = atlas_.add_keyframe(map_id, std::move(kf2));

  local_ba(map, cam_, id2, cfg_.local_ba);

  pending_mono_.reset();
  last_pose_ = map.keyframe(id2).pose;
  velocity_ = map.keyframe(id2).pose * map.keyframe(id1).pose.inverse();
  have_velocity_ = true;
  ref_kf_ = id2;
  recent_kfs_ = {id1, id2};
  return true;
}

int SlamSystem::ref_keyframe_votes(const SubMap& map,
                                   const std::vector<FrameMatch>& matches,
                                   const std::vector<bool>& inliers,
                                   KfId* best) const {
  std::map<KfId, int> votes;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    if (k < inliers.size() && !inliers[k]) continue;
    if (!map.has_point(matches[k].point_id)) continue;
    const auto& p = map.point(map.resolve_point_id(matches[k].point_id));
    for (const auto& [kf, _] : p.observations) ++votes[kf];
  }
  int best_votes = 0;
  for (const auto& [kf, v] : votes) {
    if (v > best_votes) {
      best_votes = v;
      *best = kf;
    }
  }
  return best_votes;
}

void SlamSystem::track(const FrameObservations& frame, FrameRecord& rec) {
  SubMap& map = atlas_.active_map();
  const Pose predicted = have_velocity_ ? velocity_ * last_pose_ : last_pose_;

  const auto matches =
      match_frame_to_map(cam_, map, predicted, frame, cfg_.tracking.match_window_px,
                         cfg_.tracking.match_max_hamming);
  rec.n_matches = int(matches.size());

  PoseEstimate est;
  bool optimized = false;
  if (matches.size() >= 4) {
    std::vector<PoseObservation> obs;
    obs.reserve(matches.size());
    for (const auto& m : matches)
      obs.push_back({m.pixel, m.octave, m.world});
    try {
      est = optimize_pose(cam_, obs, predicted, cfg_.tracking);
      optimized = true;
    } catch (const OptimizationFailed&) {
    }
  }

  TrackingStatus status = TrackingStatus::Lost;
  if (optimized) {
    rec.n_matches = est.inlier_count;
    if (const auto s = pose_sigmas(est)) {
      rec.sigmas = *s;
      rec.has_sigmas = true;
    }
    status = evaluate_tracking_criteria(est, est.inlier_count, cfg_.tracking);
  }

  if (status != TrackingStatus::OnTrack) {
    state_.status = TrackingStatus::Lost;
    state_.consecutive_lost_frames = 1;
    rec.outcome = FrameOutcome::Lost;
    have_velocity_ = false;
    return;
  }

  velocity_ = est.pose * last_pose_.inverse();
  have_velocity_ = true;
  last_pose_ = est.pose;

  KfId ref = ref_kf_;
  ref_keyframe_votes(map, matches, est.inlier_mask, &ref);
  ref_kf_ = ref;

  rec.outcome = FrameOutcome::Tracked;
  rec.ref_keyframe = ref_kf_;
  rec.t_frame_ref = est.pose * map.keyframe(ref_kf_).pose.inverse();

  ++frames_since_kf_;
  int ref_tracked = 0;
  for (const auto& m : map.keyframe(ref_kf_).measurements)
    if (m.matched_point) ++ref_tracked;
  const double ratio =
      ref_tracked > 0 ? double(est.inlier_count) / ref_tracked : 0.0;

  if (decide_new_keyframe(frames_since_kf_, ratio, cfg_.keyframe_policy)) {
    const KfId new_kf = insert_keyframe(frame, est.pose, matches, est.inlier_mask);
    rec.outcome = FrameOutcome::TrackedKeyframe;
    rec.ref_keyframe = new_kf;
    rec.t_frame_ref = Pose{};
    rec.map_id = atlas_.active_map_id();
    run_place_recognition(new_kf);
    rec.map_id = atlas_.active_map_id();  // a merge may have re-homed us
  }
}

KfId SlamSystem::insert_keyframe(const FrameObservations& frame,
                                 const Pose& pose,
                                 const std::vector<FrameMatch>& matches,
                                 const std::vector<bool>& inlier_mask) {
  SubMap& map = atlas_.active_map();

  KeyFrame kf;
  kf.id = atlas_.fresh_keyframe_id();
  kf.timestamp = frame.timestamp;
  kf.pose = pose;
  kf.measurements = frame.measurements;
  for (std::size_t k = 0; k < matches.size(); ++k) {
    if (k < inlier_mask.size() && !inlier_mask[k]) continue;
    if (!map.has_point(matches[k].point_id)) continue;
    kf.measurements[matches[k].measurement_index].matched_point =
        map.resolve_point_id(matches[k].point_id);
  }
  // Bind remaining measurements to existing points by guided matching at the
  // refined pose, so triangulation doesn't duplicate already-mapped points.
  std::set<PointId> linked;
  for (const auto& m : kf.measurements)
    if (m.matched_point) linked.insert(*m.matched_point);
  const auto guided =
      match_frame_to_map(cam_, map, pose, frame, cfg_.tracking.guided_match_px,
                         cfg_.tracking.match_max_hamming);
  for (const auto& g : guided) {
    auto& slot = kf.measurements[g.measurement_index].matched_point;
    if (slot || !map.has_point(g.point_id)) continue;
    const PointId pid = map.resolve_point_id(g.point_id);
    if (linked.insert(pid).second) slot = pid;
  }
  const KfId kf_id = atlas_.add_keyframe(atlas_.active_map_id(), std::move(kf));

  std::vector<KfId> neighbors;
  for (const auto& [n, _] : map.covisibility_neighbors(kf_id))
    neighbors.push_back(n);
  triangulate_new_points(
      map, cam_, kf_id, neighbors, [this] { return atlas_.fresh_point_id(); },
      cfg_.triangulation);
  fuse_local_duplicates(map, kf_id, cfg_.merge.fuse_radius,
                        cfg_.tracking.match_max_hamming);

  local_ba(map, cam_, kf_id, cfg_.local_ba);

  frames_since_kf_ = 0;
  ref_kf_ = kf_id;
  last_pose_ = map.keyframe(kf_id).pose;  // BA may have refined it
  recent_kfs_.push_back(kf_id);
  if (recent_kfs_.size() > 3)
    recent_kfs_.erase(recent_kfs_.begin(), recent_kfs_.end() - 3);
  ++kfs_since_recognition_;
  return kf_id;
}

void SlamSystem::run_place_recognition(KfId new_kf) {
  if (kfs_since_recognition_ < cfg_.recognition_cooldown_kfs) return;
  if (!cfg_.enable_loop_closing && !cfg_.enable_map_merging) return;

  const auto candidate =
      confirm_common_region(db_, atlas_, recent_kfs_, cfg_.query);
  if (!candidate) return;

  if (candidate->kind == CandidateKind::MapMerge && cfg_.enable_map_merging) {
    const MapId old_active = atlas_.active_map_id();
    MergeContext ctx;
    ctx.active_map = candidate->map_id;  // the older map's frame survives
    ctx.swallowed_map = old_active;
    ctx.k_active = candidate->keyframe_id;
    ctx.k_swallowed = new_kf;
    if (auto report = merge_maps(atlas_, cam_, ctx, cfg_.merge)) {
      report->candidate_score = candidate->score;
      merges_.push_back(*report);
      atlas_.set_active(report->merged_map);
      rehome_tracking_after_merge(old_active);
      kfs_since_recognition_ = 0;
    }
  } else if (candidate->kind == CandidateKind::LoopClosure &&
             cfg_.enable_loop_closing) {
    if (auto report = detect_and_close_loop(atlas_, cam_, new_kf,
                                            candidate->keyframe_id,
                                            cfg_.merge)) {
      loops_.push_back(*report);
      last_pose_ = atlas_.active_map().keyframe(new_kf).pose;
      have_velocity_ = false;
      kfs_since_recognition_ = 0;
    }
  }
}

void SlamSystem::rehome_tracking_after_merge(MapId old_map) {
  const auto [live, t_new_old] = atlas_.resolve_map(old_map);
  last_pose_ = rehome_pose(last_pose_, t_new_old);
  have_velocity_ = false;
  if (!atlas_.map(live).has_keyframe(ref_kf_))
    ref_kf_ = atlas_.map(live).keyframe_order().back();
}

void SlamSystem::resume_from_relocalization(const FrameObservations& frame,
                                            const RelocalizationResult& res,
                                            FrameRecord& rec) {
  ++relocalizations_;
  atlas_.set_active(res.map_id);
  SubMap& map = atlas_.active_map();

  bootstrapped_ = true;
  state_.status = TrackingStatus::OnTrack;
  state_.consecutive_lost_frames = 0;
  last_pose_ = res.estimate.pose;
  have_velocity_ = false;
  frames_since_kf_ = 0;
  pending_mono_.reset();

  KfId ref = map.keyframe_order().back();
  ref_keyframe_votes(map, res.matches, res.estimate.inlier_mask, &ref);
  ref_kf_ = ref;

  recent_kfs_.clear();
  const auto& order = map.keyframe_order();
  for (std::size_t i = order.size() >= 3 ? order.size() - 3 : 0;
       i < order.size(); ++i)
    recent_kfs_.push_back(order[i]);
  kfs_since_recognition_ = 0;

  rec.outcome = FrameOutcome::Relocalized;
  rec.map_id = res.map_id;
  rec.ref_keyframe = ref_kf_;
  rec.t_frame_ref = res.estimate.pose * map.keyframe(ref_kf_).pose.inverse();
  rec.n_matches = res.estimate.inlier_count;
  if (const auto s = pose_sigmas(res.estimate)) {
    rec.sigmas = *s;
    rec.has_sigmas = true;
  }
  (void)frame;
}

void SlamSystem::on_lost(const FrameObservations& frame, FrameRecord& rec) {
  rec.outcome = FrameOutcome::Lost;
  ++state_.consecutive_lost_frames;

  if (auto res = relocalize(atlas_, db_, cam_, frame, cfg_.tracking)) {
    resume_from_relocalization(frame, *res, rec);
    return;
  }

  if (!cfg_.single_map &&
      handle_lost(state_, cfg_.tracking) == LostAction::SpawnNewMap) {
    // The map itself is only created once bootstrap finds enough structure,
    // so a long dropout never litters the atlas with empty maps.
    bootstrapped_ = false;
    pending_mono_.reset();
    state_.consecutive_lost_frames = 0;
    rec.outcome = FrameOutcome::NewMapSpawned;
  }
}

std::vector<TimedPoseEstimate> SlamSystem::trajectory() const {
  std::vector<TimedPoseEstimate> out;
  out.reserve(log_.size());
  for (const auto& rec : log_) {
    if (rec.ref_keyframe == 0 || rec.map_id == 0) continue;
    const auto [live, _] = atlas_.resolve_map(rec.map_id);
    if (!atlas_.has_map(live)) continue;
    const SubMap& map = atlas_.map(live);
    if (!map.has_keyframe(rec.ref_keyframe)) continue;
    out.push_back(
        {rec.timestamp, rec.t_frame_ref * map.keyframe(rec.ref_keyframe).pose});
  }
  return out;
}

}  // namespace atlas
