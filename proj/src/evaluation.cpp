#include "atlas/evaluation.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace atlas::eval {

Trajectory parse_tum(std::istream& is) {
  Trajectory out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw std::runtime_error("malformed trajectory line: " + line);
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    Pose t_wc;
    t_wc.rotation = q.normalized().toRotationMatrix();
    t_wc.translation = Vec3(tx, ty, tz);
    out.push_back({t, t_wc.inverse()});
  }
  return out;
}

void format_tum(std::ostream& os, const Trajectory& traj) {
  os << std::setprecision(9) << std::fixed;
  for (const auto& e : traj) {
    const Pose t_wc = e.t_cw.inverse();
    Eigen::Quaterniond q(t_wc.rotation);
    if (q.w() < 0) q.coeffs() *= -1;
    os << e.timestamp << ' ' << t_wc.translation.x() << ' '
       << t_wc.translation.y() << ' ' << t_wc.translation.z() << ' ' << q.x()
       << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

Trajectory read_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  return parse_tum(in);
}

void write_tum(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
  format_tum(out, traj);
}

namespace {

std::vector<std::pair<int, int>> associate_nothrow(
    const Trajectory& estimate, const Trajectory& reference,
    const AssociationOptions& opts) {
  struct Cand {
    double dt;
    int i, j;
  };
  std::vector<double> ref_times;
  ref_times.reserve(reference.size());
  for (const auto& r : reference) ref_times.push_back(r.timestamp);

  std::vector<Cand> cands;
  for (int i = 0; i < int(estimate.size()); ++i) {
    const double t = estimate[i].timestamp;
    const auto it = std::lower_bound(ref_times.begin(), ref_times.end(), t);
    for (const auto jt : {it, it == ref_times.begin() ? it : std::prev(it)}) {
      if (jt == ref_times.end()) continue;
      const int j = int(jt - ref_times.begin());
      const double dt = std::abs(*jt - t);
      if (dt <= opts.max_dt) cands.push_back({dt, i, j});
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.dt < b.dt; });

  std::vector<bool> used_i(estimate.size(), false),
      used_j(reference.size(), false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& c : cands) {
    if (used_i[c.i] || used_j[c.j]) continue;
    used_i[c.i] = used_j[c.j] = true;
    pairs.emplace_back(c.i, c.j);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

Vec3 camera_center(const Pose& t_cw) {
  return -(t_cw.rotation.transpose() * t_cw.translation);
}

AteResult ate_from_pairs(const Trajectory& estimate,
                         const Trajectory& reference,
                         const std::vector<std::pair<int, int>>& pairs,
                         bool with_scale) {
  AteResult res;
  res.matched_frames = int(pairs.size());
  if (pairs.size() < 3)
    throw std::runtime_error("too few associated frames for ATE");

  CorrespondenceSet corr;
  for (const auto& [i, j] : pairs)
    corr.add(camera_center(estimate[i].t_cw), camera_center(reference[j].t_cw));
  res.alignment = horn_align(corr, with_scale);

  double sq_sum = 0.0, sum = 0.0;
  for (const auto& [i, j] : pairs) {
    const double e = (res.alignment * camera_center(estimate[i].t_cw) -
                      camera_center(reference[j].t_cw))
                         .norm();
    res.errors.push_back(e);
    sq_sum += e * e;
    sum += e;
    res.max = std::max(res.max, e);
  }
  res.rmse = std::sqrt(sq_sum / res.errors.size());
  res.mean = sum / res.errors.size();
  std::vector<double> sorted = res.errors;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  res.median = sorted[sorted.size() / 2];
  return res;
}

Trajectory slice(const Trajectory& traj, double t_begin, double t_end) {
  Trajectory out;
  for (const auto& e : traj)
    if (e.timestamp >= t_begin && e.timestamp < t_end) out.push_back(e);
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> associate(const Trajectory& estimate,
                                           const Trajectory& reference,
                                           const AssociationOptions& opts) {
  auto pairs = associate_nothrow(estimate, reference, opts);
  if (pairs.empty() && !estimate.empty() && !reference.empty())
    throw std::runtime_error("trajectory association found no matches");
  return pairs;
}

AteResult align_and_ate(const Trajectory& estimate, const Trajectory& reference,
                        bool with_scale, const AssociationOptions& opts) {
  return ate_from_pairs(estimate, reference,
                        associate(estimate, reference, opts), with_scale);
}

double coverage(const Trajectory& estimate, const Trajectory& reference,
                const AssociationOptions& opts) {
  if (reference.empty() || estimate.empty()) return 0.0;
  return 100.0 * double(associate_nothrow(estimate, reference, opts).size()) /
         double(reference.size());
}

AteResult segmented_ate(const Trajectory& estimate, const Trajectory& reference,
                        const std::vector<SegmentSpec>& segments,
                        const AssociationOptions& opts) {
  AteResult pooled;
  double sq_sum = 0.0, sum = 0.0;

  for (const auto& seg : segments) {
    const Trajectory est = slice(estimate, seg.t_begin, seg.t_end);
    const Trajectory ref = slice(reference, seg.t_begin, seg.t_end);
    const auto pairs = associate_nothrow(est, ref, opts);
    if (pairs.size() < 3) continue;  // segment skipped
    const AteResult r = ate_from_pairs(est, ref, pairs, seg.with_scale);
    pooled.matched_frames += r.matched_frames;
    pooled.errors.insert(pooled.errors.end(), r.errors.begin(), r.errors.end());
    sq_sum += r.rmse * r.rmse * r.matched_frames;
    sum += r.mean * r.matched_frames;
    pooled.max = std::max(pooled.max, r.max);
  }
  if (pooled.matched_frames == 0)
    throw std::runtime_error("no segment had enough associated frames");
  pooled.rmse = std::sqrt(sq_sum / pooled.matched_frames);
  pooled.mean = sum / pooled.matched_frames;
  std::vector<double> sorted = pooled.errors;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  pooled.median = sorted[sorted.size() / 2];
  return pooled;
}

AteResult segmented_ate_by_gaps(const Trajectory& estimate,
                                const Trajectory& reference, double gap,
                                bool with_scale,
                                const AssociationOptions& opts) {
  std::vector<SegmentSpec> segments;
  std::size_t start = 0;
  while (start < estimate.size()) {
    std::size_t end = start + 1;
    while (end < estimate.size() &&
           estimate[end].timestamp - estimate[end - 1].timestamp <= gap)
      ++end;
    SegmentSpec seg;
    seg.t_begin = estimate[start].timestamp;
    seg.t_end = estimate[end - 1].timestamp + 1e-9;
    seg.with_scale = with_scale;
    segments.push_back(seg);
    start = end;
  }
  return segmented_ate(estimate, reference, segments, opts);
}

MapStats map_stats(const Atlas& atlas) {
  MapStats stats;
  for (const auto& [id, map] : atlas.maps()) {
    MapStats::PerMap pm;
    pm.id = id;
    pm.keyframes = int(map.keyframes().size());
    pm.points = int(map.points().size());
    stats.total_keyframes += pm.keyframes;
    stats.total_points += pm.points;
    stats.maps.push_back(pm);
  }
  return stats;
}

}  // namespace atlas::eval
