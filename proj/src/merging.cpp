#include "atlas/merging.hpp"

#include <Eigen/Dense>
#include <algorithm>

#include "atlas/mapping.hpp"

namespace atlas {

namespace {

// Points observed by a keyframe and its covisible neighbors.
std::set<PointId> cluster_points(const SubMap& map, KfId center) {
  std::set<KfId> kfs = {center};
  for (const auto& [n, _] : map.covisibility_neighbors(center)) kfs.insert(n);
  std::set<PointId> out;
  for (KfId id : kfs)
    for (const auto& m : map.keyframe(id).measurements)
      if (m.matched_point) out.insert(*m.matched_point);
  return out;
}

struct GuidedPair {
  KfId kf;                // keyframe in the swallowed map
  Eigen::Vector2d pixel;  // its measurement
  Vec3 world_a;           // matched active-map point (active world frame)
};

// Reprojects active-map points into swallowed-map keyframes under the
// candidate transform and matches by descriptor within a window.
std::vector<GuidedPair> guided_match(const SubMap& map_a, const SubMap& map_s,
                                     const std::vector<KfId>& s_kfs,
                                     const SimTransform& t_a_s,
                                     const CameraModel& cam, double window_px,
                                     int max_hamming) {
  std::vector<GuidedPair> out;
  const SimTransform t_s_a = t_a_s.inverse();
  for (KfId kf_id : s_kfs) {
    const KeyFrame& kf = map_s.keyframe(kf_id);
    const SimTransform cam_from_a =
        SimTransform::from_pose(kf.pose) * t_s_a;
    struct Cand {
      Eigen::Vector2d px;
      const MapPoint* p;
    };
    std::vector<Cand> visible;
    for (const auto& [pid, p] : map_a.points()) {
      const Vec3 pc = cam_from_a * p.position;
      if (pc.z() <= 1e-9) continue;
      const Eigen::Vector2d proj(cam.fx * pc.x() / pc.z() + cam.cx,
                                 cam.fy * pc.y() / pc.z() + cam.cy);
      if (!cam.in_image(proj)) continue;
      visible.push_back({proj, &p});
    }
    for (const auto& m : kf.measurements) {
      int best_h = max_hamming + 1;
      const MapPoint* best = nullptr;
      for (const auto& c : visible) {
        if ((c.px - m.pixel).lpNorm<Eigen::Infinity>() > window_px) continue;
        const int h = hamming(m.descriptor, c.p->descriptor);
        if (h < best_h) {
          best_h = h;
          best = c.p;
        }
      }
      if (best) out.push_back({kf_id, m.pixel, best->position});
    }
  }
  return out;
}

// Refines t_a_s over the reprojection error of the guided pairs; 7 dof in
// Sim3 mode, 6 otherwise. Numeric Jacobians, damped Gauss-Newton.
SimTransform refine_alignment(const SubMap& map_s,
                              const std::vector<GuidedPair>& pairs,
                              SimTransform t_a_s, const CameraModel& cam,
                              GraphMode mode, double huber_delta = 2.45) {
  const int dof = mode == GraphMode::Sim3 ? 7 : 6;

  auto eval = [&](const SimTransform& t, Eigen::VectorXd* residuals) {
    const SimTransform t_s_a = t.inverse();
    double cost = 0.0;
    int k = 0;
    for (const auto& g : pairs) {
      const SimTransform cam_from_a =
          SimTransform::from_pose(map_s.keyframe(g.kf).pose) * t_s_a;
      const Vec3 pc = cam_from_a * g.world_a;
      Eigen::Vector2d r;
      if (pc.z() <= 1e-9) {
        r = Eigen::Vector2d(1e3, 1e3);
      } else {
        r = g.pixel - Eigen::Vector2d(cam.fx * pc.x() / pc.z() + cam.cx,
                                      cam.fy * pc.y() / pc.z() + cam.cy);
      }
      const double e = r.norm();
      const double w = e <= huber_delta ? 1.0 : huber_delta / e;
      if (residuals) residuals->segment<2>(2 * k) = std::sqrt(w) * r;
      cost += w * r.squaredNorm();
      ++k;
    }
    return cost;
  };

  double cost = eval(t_a_s, nullptr);
  double lambda = 1e-6;
  const double h = 1e-7;
  const int m = int(pairs.size());

  for (int iter = 0; iter < 15; ++iter) {
    Eigen::VectorXd r0(2 * m);
    eval(t_a_s, &r0);
    Eigen::MatrixXd J(2 * m, dof);
    for (int k = 0; k < dof; ++k) {
      Eigen::Matrix<double, 7, 1> d = Eigen::Matrix<double, 7, 1>::Zero();
      d(k) = h;
      SimTransform tp;
      tp.pose = exp_se3(Twist(Vec6(d.head<6>()))) * t_a_s.pose;
      tp.scale = std::exp(d(6)) * t_a_s.scale;
      Eigen::VectorXd rp(2 * m);
      eval(tp, &rp);
      J.col(k) = (rp - r0) / h;
    }
    const Eigen::MatrixXd H = J.transpose() * J;
    const Eigen::VectorXd g = -J.transpose() * r0;

    bool accepted = false;
    while (!accepted && lambda < 1e8) {
      Eigen::MatrixXd Hd = H;
      for (int i = 0; i < dof; ++i) Hd(i, i) += lambda * (1.0 + H(i, i));
      const Eigen::VectorXd delta = Hd.ldlt().solve(g);
      SimTransform trial;
      Eigen::Matrix<double, 7, 1> d = Eigen::Matrix<double, 7, 1>::Zero();
      d.head(dof) = delta;
      trial.pose = exp_se3(Twist(Vec6(d.head<6>()))) * t_a_s.pose;
      trial.pose.orthonormalize();
      trial.scale = std::exp(d(6)) * t_a_s.scale;
      const double trial_cost = eval(trial, nullptr);
      if (trial_cost <= cost) {
        const double rel = cost > 0 ? (cost - trial_cost) / cost : 0;
        t_a_s = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < 1e-10) return t_a_s;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return t_a_s;
}

// Mutual-nearest duplicate fusion between two point sets of one map.
int fuse_duplicates_between(SubMap& map, const std::set<PointId>& keep_side,
                            const std::set<PointId>& drop_side, double radius,
                            int max_hamming) {
  int fused = 0;
  // Snapshot positions (fusion mutates the map).
  std::vector<PointId> keep_ids, drop_ids;
  for (PointId id : keep_side)
    if (map.has_point(id)) keep_ids.push_back(map.resolve_point_id(id));
  for (PointId id : drop_side)
    if (map.has_point(id)) drop_ids.push_back(map.resolve_point_id(id));
  std::sort(keep_ids.begin(), keep_ids.end());
  keep_ids.erase(std::unique(keep_ids.begin(), keep_ids.end()), keep_ids.end());
  std::sort(drop_ids.begin(), drop_ids.end());
  drop_ids.erase(std::unique(drop_ids.begin(), drop_ids.end()), drop_ids.end());

  auto nearest = [&](PointId from, const std::vector<PointId>& pool) {
    const MapPoint& p = map.point(from);
    double best_d = radius;
    std::optional<PointId> best;
    for (PointId cand : pool) {
      if (cand == from || !map.has_point(cand)) continue;
      const MapPoint& q = map.point(cand);
      const double d = (p.position - q.position).norm();
      if (d <= best_d && hamming(p.descriptor, q.descriptor) <= max_hamming) {
        best_d = d;
        best = cand;
      }
    }
    return best;
  };

  for (PointId drop : drop_ids) {
    if (!map.has_point(drop)) continue;
    const auto keep = nearest(drop, keep_ids);
    if (!keep) continue;
    const auto back = nearest(*keep, drop_ids);
    if (!back || *back != drop) continue;  // not mutual
    map.fuse_points(*keep, drop);
    ++fused;
  }
  return fused;
}

}  // namespace

std::vector<std::pair<PointId, PointId>> collect_putative_matches(
    const SubMap& map_a, KfId k_a, const SubMap& map_s, KfId k_s,
    int max_hamming) {
  const auto pts_a = cluster_points(map_a, k_a);
  const auto pts_s = cluster_points(map_s, k_s);

  // Mutual best descriptor match.
  std::map<PointId, std::pair<PointId, int>> best_for_a;
  for (PointId pa : pts_a) {
    int best_h = max_hamming + 1;
    PointId best = 0;
    for (PointId ps : pts_s) {
      const int h =
          hamming(map_a.point(pa).descriptor, map_s.point(ps).descriptor);
      if (h < best_h) {
        best_h = h;
        best = ps;
      }
    }
    if (best_h <= max_hamming) best_for_a[pa] = {best, best_h};
  }
  std::vector<std::pair<PointId, PointId>> out;
  for (const auto& [pa, match] : best_for_a) {
    const PointId ps = match.first;
    int best_h = max_hamming + 1;
    PointId best = 0;
    for (PointId pa2 : pts_a) {
      const int h =
          hamming(map_a.point(pa2).descriptor, map_s.point(ps).descriptor);
      if (h < best_h) {
        best_h = h;
        best = pa2;
      }
    }
    if (best == pa) out.emplace_back(pa, ps);
  }
  return out;
}

std::optional<AlignmentResult> estimate_alignment(const SubMap& map_a,
                                                  KfId k_a,
                                                  const SubMap& map_s,
                                                  KfId k_s,
                                                  const CameraModel& cam,
                                                  const MergeConfig& cfg) {
  const auto putative =
      collect_putative_matches(map_a, k_a, map_s, k_s, cfg.max_hamming);
  if (putative.size() < 3) return std::nullopt;

  CorrespondenceSet corr;  // source: swallowed world, target: active world
  for (const auto& [pa, ps] : putative)
    corr.add(map_s.point(ps).position, map_a.point(pa).position);

  RansacResult ransac;
  try {
    ransac = ransac_align(corr, cfg.mode == GraphMode::Sim3, cfg.ransac);
  } catch (const NoConsensus&) {
    return std::nullopt;
  } catch (const DegenerateAlignment&) {
    return std::nullopt;
  }

  AlignmentResult result;
  result.putative_matches = int(putative.size());
  result.ransac_inliers = ransac.inlier_count;

  // Guided matching in K_s and its covisible neighbors, then refinement.
  std::vector<KfId> s_kfs = {k_s};
  for (const auto& [n, _] : map_s.covisibility_neighbors(k_s))
    s_kfs.push_back(n);
  const auto guided =
      guided_match(map_a, map_s, s_kfs, ransac.transform, cam,
                   cfg.guided_match_px, cfg.max_hamming);
  result.guided_matches = int(guided.size());
  if (guided.size() >= 6) {
    result.t_a_s =
        refine_alignment(map_s, guided, ransac.transform, cam, cfg.mode);
  } else {
    result.t_a_s = ransac.transform;
  }
  if (cfg.mode == GraphMode::SE3) result.t_a_s.scale = 1.0;
  return result;
}

std::optional<MergeReport> merge_maps(Atlas& atlas, const CameraModel& cam,
                                      const MergeContext& ctx,
                                      const MergeConfig& cfg,
                                      const MergeHooks& hooks) {
  if (ctx.active_map == ctx.swallowed_map)
    throw std::invalid_argument("merge_maps: maps must differ");
  const SubMap& map_a = atlas.map(ctx.active_map);
  const SubMap& map_s = atlas.map(ctx.swallowed_map);

  const auto alignment = estimate_alignment(map_a, ctx.k_active, map_s,
                                            ctx.k_swallowed, cam, cfg);
  if (!alignment) return std::nullopt;

  // Everything below operates on private working copies; the atlas is only
  // touched by the final swap.
  SubMap merged = map_a;
  SubMap ms = map_s;
  ms.apply_transform(alignment->t_a_s);

  std::set<PointId> points_from_a, points_from_s;
  for (const auto& [pid, _] : merged.points()) points_from_a.insert(pid);

  // Union: points first (ids are atlas-unique), then keyframes in temporal
  // order so observation links and covisibility rebuild incrementally.
  for (const auto& [pid, p] : ms.points()) {
    MapPoint copy = p;
    copy.observations.clear();
    merged.add_point(std::move(copy));
    points_from_s.insert(pid);
  }
  for (KfId kf_id : ms.keyframe_order()) {
    KeyFrame kf = ms.keyframe(kf_id);
    kf.is_gauge_fixed = false;  // only M_a keyframes keep their gauge
    merged.add_keyframe(std::move(kf));
  }
  // Stitch the spanning trees: M_s keeps its shape, its root hangs off K_a.
  for (KfId kf_id : ms.keyframe_order()) {
    if (kf_id == ms.spanning_tree_root()) {
      merged.set_spanning_parent(kf_id, ctx.k_active);
    } else {
      merged.set_spanning_parent(kf_id, *ms.spanning_tree_parent(kf_id));
    }
  }

  MergeReport report;
  report.alignment = *alignment;
  report.fused_first_pass = fuse_duplicates_between(
      merged, points_from_a, points_from_s, cfg.fuse_radius, cfg.max_hamming);

  // Welding BA around K_a; previously-fixed M_a keyframes stay fixed via
  // their gauge flags.
  report.welding_ba = local_ba(merged, cam, ctx.k_active, cfg.ba);
  if (report.welding_ba.aborted || report.welding_ba.interrupted)
    return std::nullopt;

  report.fused_second_pass = fuse_duplicates_between(
      merged, points_from_a, points_from_s, cfg.fuse_radius, cfg.max_hamming);

  // Pose graph optimization of the merged map.
  PoseGraph graph = build_pose_graph(merged, cfg.min_covis_weight);
  std::set<KfId> fixed;
  for (const auto& [id, kf] : merged.keyframes())
    if (kf.is_gauge_fixed) fixed.insert(id);
  if (fixed.empty()) fixed.insert(merged.spanning_tree_root());
  const PoseGraph before = graph;
  PoseGraphOptions pgo = cfg.pgo;
  pgo.mode = cfg.mode;
  report.pgo = pose_graph_optimize(graph, fixed, pgo);
  apply_pose_graph(merged, before, graph);

  if (hooks.abort_before_commit && hooks.abort_before_commit())
    return std::nullopt;

  report.merged_map = atlas.swap_merged(std::move(merged), ctx.active_map,
                                        ctx.swallowed_map, alignment->t_a_s);
  return report;
}

std::optional<LoopClosureReport> detect_and_close_loop(
    Atlas& atlas, const CameraModel& cam, KfId current_kf, KfId candidate_kf,
    const MergeConfig& cfg) {
  SubMap& map = atlas.active_map();

  // Putative matches between the two clusters of the same map. Shared points
  // carry no information about the drift; use only distinct pairs.
  const auto current_pts = cluster_points(map, current_kf);
  const auto cand_pts = cluster_points(map, candidate_kf);

  CorrespondenceSet corr;
  std::vector<std::pair<PointId, PointId>> pairs;
  for (PointId pc : current_pts) {
    if (cand_pts.count(pc)) continue;
    int best_h = cfg.max_hamming + 1;
    PointId best = 0;
    for (PointId pk : cand_pts) {
      if (current_pts.count(pk)) continue;
      const int h =
          hamming(map.point(pc).descriptor, map.point(pk).descriptor);
      if (h < best_h) {
        best_h = h;
        best = pk;
      }
    }
    if (best_h <= cfg.max_hamming) {
      corr.add(map.point(pc).position, map.point(best).position);
      pairs.emplace_back(pc, best);
    }
  }
  if (corr.size() < 3) return std::nullopt;

  RansacResult ransac;
  try {
    ransac = ransac_align(corr, cfg.mode == GraphMode::Sim3, cfg.ransac);
  } catch (const NoConsensus&) {
    return std::nullopt;
  } catch (const DegenerateAlignment&) {
    return std::nullopt;
  }

  LoopClosureReport report;
  report.correction = ransac.transform;  // drifted frame -> loop-era frame

  // Pose graph with the loop constraint. The corrected pose of the current
  // keyframe follows from applying the correction to its cluster.
  PoseGraph graph = build_pose_graph(map, cfg.min_covis_weight);
  const PoseGraph before = graph;

  const SimTransform s_cur = SimTransform::from_pose(map.keyframe(current_kf).pose);
  const SimTransform s_cand =
      SimTransform::from_pose(map.keyframe(candidate_kf).pose);
  const SimTransform s_cur_corrected = s_cur * report.correction.inverse();

  PoseGraphEdge loop;
  loop.i = candidate_kf;
  loop.j = current_kf;
  loop.t_ij = s_cand.inverse() * s_cur_corrected;
  loop.kind = EdgeKind::Loop;
  graph.edges.push_back(loop);

  std::set<KfId> fixed = {candidate_kf};
  for (const auto& [n, _] : map.covisibility_neighbors(candidate_kf))
    fixed.insert(n);
  for (const auto& [id, kf] : map.keyframes())
    if (kf.is_gauge_fixed) fixed.insert(id);

  PoseGraphOptions pgo = cfg.pgo;
  pgo.mode = cfg.mode;
  report.pre_cost = pose_graph_cost(graph, pgo.mode);
  report.pgo = pose_graph_optimize(graph, fixed, pgo);
  report.post_cost = report.pgo.final_cost;
  apply_pose_graph(map, before, graph);

  // Fuse point duplicates brought together by the correction.
  std::set<PointId> drop_side;
  for (const auto& [pc, pk] : pairs) drop_side.insert(pc);
  std::set<PointId> keep_side;
  for (const auto& [pc, pk] : pairs) keep_side.insert(pk);
  report.fused_points = fuse_duplicates_between(
      map, keep_side, drop_side, cfg.fuse_radius, cfg.max_hamming);

  report.welding_ba = local_ba(map, cam, current_kf, cfg.ba);
  return report;
}

BaReport global_ba(SubMap& map, const CameraModel& cam, const BaOptions& opts,
                   const std::function<bool()>& interrupt) {
  std::set<KfId> variable, fixed;
  for (const auto& [id, kf] : map.keyframes()) {
    if (kf.is_gauge_fixed)
      fixed.insert(id);
    else
      variable.insert(id);
  }
  std::set<PointId> points;
  for (const auto& [pid, p] : map.points())
    if (p.observations.size() >= 2) points.insert(pid);
  return bundle_adjust(map, cam, variable, fixed, points, opts, interrupt);
}

}  // namespace atlas
