#pragma once

#include <random>

#include "atlas/camera.hpp"
#include "atlas/map.hpp"

namespace atlas::testutil {

inline Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

inline CameraModel test_camera(double baseline = 0.12) {
  CameraModel c;
  c.fx = 450;
  c.fy = 450;
  c.baseline = baseline;
  return c;
}

/// A small synthetic map: `n_points` landmarks in a box in front of a ring of
/// `n_kfs` cameras, every visible landmark observed in every keyframe.
struct TestScene {
  std::vector<Vec3> landmarks;
  std::vector<Descriptor> descriptors;
  std::vector<Pose> poses;  // camera-from-world
};

inline TestScene make_scene(int n_kfs, int n_points, std::uint64_t seed) {
  TestScene s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-4.0, 4.0), uy(-3.0, 3.0),
      uz(6.0, 14.0);
  for (int i = 0; i < n_points; ++i) {
    s.landmarks.emplace_back(ux(rng), uy(rng), uz(rng));
    s.descriptors.push_back(random_descriptor(rng));
  }
  for (int k = 0; k < n_kfs; ++k) {
    Pose t_wc;  // camera k displaced along x, looking down +z
    t_wc.translation = Vec3(-1.0 + 0.5 * k, 0.1 * k, 0.0);
    t_wc.rotation =
        Eigen::AngleAxisd(0.02 * k, Vec3::UnitY()).toRotationMatrix();
    s.poses.push_back(t_wc.inverse());
  }
  return s;
}

/// Populates `map` from the scene with exact projections; returns the point
/// ids in landmark order.
inline std::vector<PointId> populate_map(SubMap& map, const TestScene& s,
                                         const CameraModel& cam) {
  std::vector<KfId> kf_ids;
  for (std::size_t k = 0; k < s.poses.size(); ++k) {
    KeyFrame kf;
    kf.id = KfId(k + 1);
    kf.timestamp = 0.1 * double(k);
    kf.pose = s.poses[k];
    for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
      const Vec3 pc = kf.pose * s.landmarks[i];
      if (pc.z() <= 0.1) continue;
      const Projection p = project_camera_point(cam, pc);
      if (!cam.in_image(p.pixel)) continue;
      FrameMeasurement m;
      m.pixel = p.pixel;
      m.descriptor = s.descriptors[i];
      m.disparity = p.disparity;
      m.sim_landmark = i;
      kf.measurements.push_back(m);
    }
    kf_ids.push_back(map.add_keyframe(std::move(kf)));
  }

  std::vector<PointId> point_ids(s.landmarks.size(), 0);
  PointId next = 1;
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    MapPoint p;
    p.id = next++;
    p.position = s.landmarks[i];
    p.descriptor = s.descriptors[i];
    p.origin_landmark = i;
    for (KfId kid : kf_ids) {
      const auto& kf = map.keyframe(kid);
      for (int mi = 0; mi < int(kf.measurements.size()); ++mi)
        if (kf.measurements[mi].sim_landmark == i &&
            !kf.measurements[mi].matched_point)
          p.observations[kid] = mi;
    }
    if (p.observations.empty()) continue;
    point_ids[i] = map.add_point(std::move(p));
  }
  return point_ids;
}

}  // namespace atlas::testutil
