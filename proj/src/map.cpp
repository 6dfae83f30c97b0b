#include "atlas/map.hpp"

#include <algorithm>

namespace atlas {

KeyFrame& SubMap::keyframe(KfId id) {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end())
    throw std::invalid_argument("SubMap: unknown keyframe id");
  return it->second;
}
const KeyFrame& SubMap::keyframe(KfId id) const {
  return const_cast<SubMap*>(this)->keyframe(id);
}

MapPoint& SubMap::point(PointId id) {
  auto it = points_.find(resolve_point_id(id));
  if (it == points_.end())
    throw std::invalid_argument("SubMap: unknown point id");
  return it->second;
}
const MapPoint& SubMap::point(PointId id) const {
  return const_cast<SubMap*>(this)->point(id);
}

PointId SubMap::resolve_point_id(PointId id) const {
  auto it = point_redirect_.find(id);
  while (it != point_redirect_.end()) {
    id = it->second;
    it = point_redirect_.find(id);
  }
  return id;
}

std::optional<KfId> SubMap::spanning_tree_parent(KfId id) const {
  auto it = parent_.find(id);
  if (it == parent_.end()) return std::nullopt;
  return it->second;
}

int SubMap::shared_point_count(KfId a, KfId b) const {
  auto it = shared_.find(a);
  if (it == shared_.end()) return 0;
  auto jt = it->second.find(b);
  return jt == it->second.end() ? 0 : jt->second;
}

std::vector<std::pair<KfId, int>> SubMap::covisibility_neighbors(
    KfId id) const {
  std::vector<std::pair<KfId, int>> out;
  auto it = shared_.find(id);
  if (it == shared_.end()) return out;
  for (const auto& [other, count] : it->second)
    if (count >= covisibility_threshold) out.emplace_back(other, count);
  return out;
}

std::vector<std::tuple<KfId, KfId, int>> SubMap::covisibility_edges() const {
  std::vector<std::tuple<KfId, KfId, int>> out;
  for (const auto& [a, row] : shared_)
    for (const auto& [b, count] : row)
      if (a < b && count >= covisibility_threshold)
        out.emplace_back(a, b, count);
  return out;
}

void SubMap::bump_shared(KfId a, KfId b, int delta) {
  if (a == b) return;
  int& ab = shared_[a][b];
  int& ba = shared_[b][a];
  ab += delta;
  ba += delta;
  if (ab <= 0) {
    shared_[a].erase(b);
    shared_[b].erase(a);
  }
}

KfId SubMap::add_keyframe(KeyFrame kf) {
  if (keyframes_.count(kf.id))
    throw std::invalid_argument("SubMap::add_keyframe: duplicate id");
  if (!pose_is_valid(kf.pose, 1e-6))
    throw std::invalid_argument("SubMap::add_keyframe: invalid pose");

  const KfId id = kf.id;
  auto& stored = keyframes_.emplace(id, std::move(kf)).first->second;

  // Register observations declared on the measurements.
  for (int i = 0; i < int(stored.measurements.size()); ++i) {
    auto& m = stored.measurements[i];
    if (!m.matched_point) continue;
    const PointId pid = resolve_point_id(*m.matched_point);
    auto pit = points_.find(pid);
    if (pit == points_.end()) {
      m.matched_point.reset();
      continue;
    }
    MapPoint& p = pit->second;
    if (p.observations.count(id)) {  // duplicate link to same point
      m.matched_point.reset();
      continue;
    }
    m.matched_point = pid;
    for (const auto& [other, _] : p.observations) bump_shared(id, other, 1);
    p.observations[id] = i;
  }

  if (!has_root_) {
    root_ = id;
    has_root_ = true;
    stored.is_gauge_fixed = true;
  } else {
    // Tree parent: most covisible keyframe, else temporal predecessor.
    KfId best_parent = order_.back();
    int best_shared = 0;
    auto it = shared_.find(id);
    if (it != shared_.end()) {
      for (const auto& [other, count] : it->second) {
        if (count > best_shared) {
          best_shared = count;
          best_parent = other;
        }
      }
    }
    parent_[id] = best_parent;
  }
  order_.push_back(id);
  return id;
}

PointId SubMap::add_point(MapPoint p) {
  if (points_.count(p.id))
    throw std::invalid_argument("SubMap::add_point: duplicate id");
  const auto obs = p.observations;
  p.observations.clear();
  const PointId pid = p.id;
  points_.emplace(pid, std::move(p));
  for (const auto& [kf, idx] : obs) add_observation(kf, idx, pid);
  return pid;
}

void SubMap::add_observation(KfId kf_id, int meas_idx, PointId point_id) {
  MapPoint& p = point(point_id);
  if (p.observations.count(kf_id)) return;
  KeyFrame& kf = keyframe(kf_id);
  if (meas_idx < 0 || meas_idx >= int(kf.measurements.size()))
    throw std::invalid_argument("SubMap::add_observation: bad measurement");
  kf.measurements[meas_idx].matched_point = p.id;
  for (const auto& [other, _] : p.observations) bump_shared(kf_id, other, 1);
  p.observations[kf_id] = meas_idx;
}

void SubMap::unlink_observation(MapPoint& p, KfId kf_id) {
  auto it = p.observations.find(kf_id);
  if (it == p.observations.end()) return;
  keyframe(kf_id).measurements[it->second].matched_point.reset();
  for (const auto& [other, _] : p.observations)
    if (other != kf_id) bump_shared(kf_id, other, -1);
  p.observations.erase(it);
}

void SubMap::fuse_points(PointId keep_id, PointId drop_id) {
  keep_id = resolve_point_id(keep_id);
  drop_id = resolve_point_id(drop_id);
  if (keep_id == drop_id) return;
  MapPoint& keep = point(keep_id);
  MapPoint& drop = point(drop_id);

  const auto drop_obs = drop.observations;
  while (!drop.observations.empty())
    unlink_observation(drop, drop.observations.begin()->first);
  points_.erase(drop_id);
  point_redirect_[drop_id] = keep_id;

  for (const auto& [kf, idx] : drop_obs) {
    if (!keep.observations.count(kf)) add_observation(kf, idx, keep_id);
    // else: the keyframe already sees `keep`; the duplicate link is dropped.
  }

  // Medoid descriptor under Hamming distance over all observations.
  std::vector<Descriptor> descs;
  for (const auto& [kf, idx] : keep.observations)
    descs.push_back(keyframe(kf).measurements[idx].descriptor);
  if (descs.size() > 1) {
    double best_median = 1e18;
    for (const auto& cand : descs) {
      std::vector<int> dists;
      for (const auto& other : descs) dists.push_back(hamming(cand, other));
      std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                       dists.end());
      const double med = dists[dists.size() / 2];
      if (med < best_median) {
        best_median = med;
        keep.descriptor = cand;
      }
    }
  }
}

void SubMap::remove_point(PointId id) {
  id = resolve_point_id(id);
  MapPoint& p = point(id);
  while (!p.observations.empty())
    unlink_observation(p, p.observations.begin()->first);
  points_.erase(id);
}

void SubMap::remove_keyframe(KfId id) {
  KeyFrame& kf = keyframe(id);
  for (auto& m : kf.measurements) {
    if (!m.matched_point) continue;
    unlink_observation(point(*m.matched_point), id);
  }

  std::vector<KfId> children;
  for (const auto& [child, par] : parent_)
    if (par == id) children.push_back(child);

  if (id == root_) {
    if (!children.empty()) {
      // New root: child with most observations.
      KfId new_root = children.front();
      std::size_t best = 0;
      for (KfId c : children) {
        std::size_t n = 0;
        for (const auto& m : keyframe(c).measurements)
          if (m.matched_point) ++n;
        if (n > best || (n == best && c < new_root)) {
          best = n;
          new_root = c;
        }
      }
      root_ = new_root;
      parent_.erase(new_root);
      for (KfId c : children)
        if (c != new_root) parent_[c] = new_root;
    } else {
      has_root_ = false;
    }
  } else {
    const KfId par = parent_.at(id);
    for (KfId c : children) parent_[c] = par;
  }
  parent_.erase(id);

  shared_.erase(id);
  for (auto& [_, row] : shared_) row.erase(id);
  order_.erase(std::find(order_.begin(), order_.end(), id));
  keyframes_.erase(id);
}

void SubMap::set_spanning_parent(KfId child, KfId parent) {
  if (!keyframes_.count(child) || !keyframes_.count(parent))
    throw std::invalid_argument("set_spanning_parent: unknown keyframe");
  if (child == root_)
    throw std::invalid_argument("set_spanning_parent: child is the root");
  parent_[child] = parent;
}

void SubMap::apply_transform(const SimTransform& t) {
  for (auto& [_, p] : points_) p.position = t * p.position;
  for (auto& [_, kf] : keyframes_) {
    const Vec3 center = kf.pose.inverse().translation;  // camera center, world
    const Vec3 new_center = t * center;
    kf.pose.rotation = kf.pose.rotation * t.pose.rotation.transpose();
    kf.pose.translation = -(kf.pose.rotation * new_center);
  }
}

std::map<std::pair<KfId, KfId>, int> SubMap::brute_force_shared_counts()
    const {
  std::map<std::pair<KfId, KfId>, int> out;
  for (const auto& [pid, p] : points_) {
    for (auto i = p.observations.begin(); i != p.observations.end(); ++i) {
      auto j = i;
      for (++j; j != p.observations.end(); ++j)
        ++out[{std::min(i->first, j->first), std::max(i->first, j->first)}];
    }
  }
  return out;
}

bool SubMap::spanning_tree_is_valid() const {
  if (keyframes_.empty()) return !has_root_ || keyframes_.count(root_);
  if (!has_root_ || !keyframes_.count(root_)) return false;
  for (const auto& [id, _] : keyframes_) {
    if (id == root_) continue;
    // Walk to the root; cycle detection by step cap.
    KfId cur = id;
    std::size_t steps = 0;
    while (cur != root_) {
      auto it = parent_.find(cur);
      if (it == parent_.end() || !keyframes_.count(it->second)) return false;
      cur = it->second;
      if (++steps > keyframes_.size()) return false;
    }
  }
  return true;
}

bool SubMap::bidirectional_links_consistent() const {
  for (const auto& [pid, p] : points_) {
    for (const auto& [kf_id, idx] : p.observations) {
      auto kit = keyframes_.find(kf_id);
      if (kit == keyframes_.end()) return false;
      if (idx < 0 || idx >= int(kit->second.measurements.size())) return false;
      const auto& mp = kit->second.measurements[idx].matched_point;
      if (!mp || *mp != pid) return false;
    }
  }
  for (const auto& [kf_id, kf] : keyframes_) {
    for (int i = 0; i < int(kf.measurements.size()); ++i) {
      const auto& mp = kf.measurements[i].matched_point;
      if (!mp) continue;
      auto pit = points_.find(*mp);
      if (pit == points_.end()) return false;
      auto oit = pit->second.observations.find(kf_id);
      if (oit == pit->second.observations.end() || oit->second != i)
        return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

MapId Atlas::create_map() {
  SubMap m;
  m.id = fresh_map_id();
  const MapId id = m.id;
  maps_.emplace(id, std::move(m));
  active_ = id;
  return id;
}

void Atlas::set_active(MapId id) {
  if (!maps_.count(id)) throw std::invalid_argument("Atlas: unknown map");
  active_ = id;
}

SubMap& Atlas::map(MapId id) {
  auto it = maps_.find(id);
  if (it == maps_.end()) throw std::invalid_argument("Atlas: unknown map");
  return it->second;
}
const SubMap& Atlas::map(MapId id) const {
  return const_cast<Atlas*>(this)->map(id);
}

KfId Atlas::add_keyframe(MapId map_id, KeyFrame kf) {
  SubMap& m = map(map_id);
  const KfId id = m.add_keyframe(std::move(kf));
  if (on_keyframe_added) on_keyframe_added(map_id, m.keyframe(id));
  return id;
}

void Atlas::remove_keyframe(MapId map_id, KfId kf) {
  map(map_id).remove_keyframe(kf);
  if (on_keyframe_removed) on_keyframe_removed(map_id, kf);
}

MapId Atlas::swap_merged(SubMap merged, MapId a, MapId b,
                         const SimTransform& t_m_s) {
  if (!maps_.count(a) || !maps_.count(b) || a == b)
    throw std::invalid_argument("Atlas::swap_merged: bad source maps");
  merged.id = fresh_map_id();
  const MapId mid = merged.id;
  maps_.emplace(mid, std::move(merged));
  maps_.erase(a);
  maps_.erase(b);
  retired_[a] = {mid, SimTransform::identity()};
  retired_[b] = {mid, t_m_s};
  active_ = mid;
  if (on_maps_merged) on_maps_merged(mid, a, b);
  return mid;
}

std::pair<MapId, SimTransform> Atlas::resolve_map(MapId id) const {
  SimTransform t = SimTransform::identity();
  auto it = retired_.find(id);
  while (it != retired_.end()) {
    t = it->second.into_successor * t;
    id = it->second.successor;
    it = retired_.find(id);
  }
  return {id, t};
}

}  // namespace atlas
