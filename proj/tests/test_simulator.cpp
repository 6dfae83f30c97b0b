#include <doctest.h>

#include <set>

#include "atlas/simulator.hpp"
#include "test_helpers.hpp"

using namespace atlas;
using namespace atlas::sim;

TEST_CASE("generate_world is deterministic with well-separated descriptors") {
  const SimWorld w1 = generate_world(WorldKind::Loop, 200, 31);
  const SimWorld w2 = generate_world(WorldKind::Loop, 200, 31);
  REQUIRE(w1.landmarks.size() == 200);
  for (std::size_t i = 0; i < w1.landmarks.size(); ++i) {
    CHECK(w1.landmarks[i].id == i + 1);
    CHECK((w1.landmarks[i].position - w2.landmarks[i].position).norm() == 0.0);
    CHECK(w1.landmarks[i].descriptor == w2.landmarks[i].descriptor);
  }
  for (std::size_t i = 0; i < w1.landmarks.size(); ++i)
    for (std::size_t j = i + 1; j < w1.landmarks.size(); ++j)
      CHECK(hamming(w1.landmarks[i].descriptor, w1.landmarks[j].descriptor) >=
            80);
}

TEST_CASE("look_at places the target on the optical axis") {
  const Vec3 eye(3, -2, 1.5), target(0, 0, 1.5);
  const Pose t_cw = look_at(eye, target);
  CHECK((t_cw * eye).norm() < 1e-12);  // camera center maps to the origin
  const Vec3 tc = t_cw * target;
  CHECK(std::abs(tc.x()) < 1e-12);
  CHECK(std::abs(tc.y()) < 1e-12);
  CHECK(tc.z() > 0.0);  // +z forward
  CHECK(std::abs(t_cw.rotation.determinant() - 1.0) < 1e-12);
}

TEST_CASE("orbit_trajectory keeps the radius and the time base") {
  const Vec3 center(1, 2, 0);
  const auto traj = orbit_trajectory(center, 8.0, 1.5, 40, 1.0, 0.05, 0.0, 3.0);
  REQUIRE(traj.size() == 40);
  for (int i = 0; i < 40; ++i) {
    CHECK(traj[i].timestamp == doctest::Approx(3.0 + 0.05 * i));
    const Vec3 eye = traj[i].t_cw.inverse().translation;
    CHECK(std::abs((eye - Vec3(center.x(), center.y(), 1.5)).norm() - 8.0) <
          1e-9);
    CHECK(eye.z() == doctest::Approx(1.5));
  }
  // One full revolution closes the circle.
  const Vec3 first = traj.front().t_cw.inverse().translation;
  const Vec3 last = traj.back().t_cw.inverse().translation;
  CHECK((first - last).norm() < 1e-9);
}

TEST_CASE("render_frame is a pure function of seed and frame index") {
  const SimWorld world = generate_world(WorldKind::Room, 300, 9);
  const CameraModel cam = default_camera();
  const Pose t_cw = look_at(Vec3(0, 0, 1.5), Vec3(5, 0, 1.5));
  RenderOptions opts;
  opts.n_outliers = 5;

  const auto a = render_frame(world, cam, t_cw, 1.0, opts, 42, 7);
  const auto b = render_frame(world, cam, t_cw, 1.0, opts, 42, 7);
  REQUIRE(a.measurements.size() == b.measurements.size());
  REQUIRE(a.measurements.size() > 20);
  for (std::size_t i = 0; i < a.measurements.size(); ++i) {
    CHECK((a.measurements[i].pixel - b.measurements[i].pixel).norm() == 0.0);
    CHECK(a.measurements[i].descriptor == b.measurements[i].descriptor);
  }
  // Different frame index, different noise.
  const auto c = render_frame(world, cam, t_cw, 1.0, opts, 42, 8);
  bool any_differs = false;
  for (std::size_t i = 0; i < std::min(a.measurements.size(), c.measurements.size()); ++i)
    if ((a.measurements[i].pixel - c.measurements[i].pixel).norm() > 0)
      any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("render_frame noise, provenance and outliers") {
  const SimWorld world = generate_world(WorldKind::Room, 300, 10);
  const CameraModel cam = default_camera();
  const Pose t_cw = look_at(Vec3(0, 0, 1.5), Vec3(5, 0, 1.5));
  RenderOptions opts;
  opts.n_outliers = 8;

  const auto frame = render_frame(world, cam, t_cw, 0.0, opts, 3, 1);
  int inliers = 0, outliers = 0;
  for (const auto& m : frame.measurements) {
    if (!m.sim_landmark) {
      ++outliers;
      continue;
    }
    ++inliers;
    const Vec3 pc = t_cw * world.landmarks[*m.sim_landmark - 1].position;
    CHECK(pc.z() >= opts.min_depth);
    const Eigen::Vector2d exact(cam.fx * pc.x() / pc.z() + cam.cx,
                                cam.fy * pc.y() / pc.z() + cam.cy);
    // Within 6 sigma of the exact projection.
    CHECK((m.pixel - exact).norm() <
          6.0 * opts.pixel_noise * cam.octave_sigma(m.octave));
    REQUIRE(m.disparity.has_value());
    CHECK(std::abs(*m.disparity - cam.fx * cam.baseline / pc.z()) <
          6.0 * opts.disparity_noise);
    CHECK(m.descriptor == world.landmarks[*m.sim_landmark - 1].descriptor);
  }
  CHECK(inliers > 20);
  CHECK(outliers == 8);

  // Degradations: blackout renders nothing, far_only culls near landmarks.
  RenderOptions dark = opts;
  dark.blackout = true;
  CHECK(render_frame(world, cam, t_cw, 0.0, dark, 3, 1).measurements.empty());

  RenderOptions far = opts;
  far.n_outliers = 0;
  far.far_only_min_depth = 4.0;
  const auto farframe = render_frame(world, cam, t_cw, 0.0, far, 3, 1);
  for (const auto& m : farframe.measurements) {
    const Vec3 pc = t_cw * world.landmarks[*m.sim_landmark - 1].position;
    CHECK(pc.z() >= 4.0);
  }
  CHECK(farframe.measurements.size() < frame.measurements.size() - 8);
}

TEST_CASE("parse_scenario reads worlds, cameras, sessions and episodes") {
  const std::string text = R"({
    "world": {"kind": "corridor", "landmarks": 750, "seed": 17},
    "camera": {"fx": 500, "baseline": 0.2},
    "sessions": [{
      "name": "s1", "seed": 5, "mode": "mono",
      "trajectory": {"kind": "orbit", "center": [1, 2, 3], "radius": 6,
                     "frames": 99, "dt": 0.1, "revolutions": 2},
      "noise": {"pixel": 0.7, "outliers": 4},
      "episodes": [{"kind": "blackout", "start": 10, "end": 20},
                   {"kind": "far_only", "start": 30, "end": 35,
                    "min_depth": 12}],
      "start_new_map_at": [50]
    }]
  })";
  const ScenarioScript sc = parse_scenario(text);
  CHECK(sc.world_kind == WorldKind::Corridor);
  CHECK(sc.world_landmarks == 750);
  CHECK(sc.world_seed == 17);
  REQUIRE(sc.camera.has_value());
  CHECK(sc.camera->fx == 500);
  CHECK(sc.camera->baseline == 0.2);
  REQUIRE(sc.sessions.size() == 1);
  const auto& s = sc.sessions[0];
  CHECK(s.name == "s1");
  CHECK_FALSE(s.stereo);
  CHECK(s.trajectory.frames == 99);
  CHECK((s.trajectory.center - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK(s.render.pixel_noise == 0.7);
  CHECK(s.render.n_outliers == 4);
  CHECK(s.start_new_map_at == std::vector<int>{50});

  // Episodes override the per-frame render options over [start, end).
  CHECK(frame_render_options(s, 9).blackout == false);
  CHECK(frame_render_options(s, 10).blackout == true);
  CHECK(frame_render_options(s, 19).blackout == true);
  CHECK(frame_render_options(s, 20).blackout == false);
  CHECK(frame_render_options(s, 32).far_only_min_depth == 12.0);
  CHECK_FALSE(frame_render_options(s, 35).far_only_min_depth.has_value());

  CHECK(session_trajectory(s).size() == 99);
  CHECK_THROWS_AS(parse_scenario("{\"sessions\": 3}"), std::invalid_argument);
  CHECK_THROWS_AS(
      parse_scenario(R"({"world": {"kind": "moon"}, "sessions": []})"),
      std::invalid_argument);
}

TEST_CASE("seed_map_from_world builds an exact ground-truth map") {
  const SimWorld world = generate_world(WorldKind::Loop, 400, 21);
  const CameraModel cam = default_camera();
  const auto poses = orbit_trajectory(Vec3(0, 0, 1.5), 8.0, 1.5, 12, 1.0, 0.5);

  Atlas atlas;
  int hook_calls = 0;
  atlas.on_keyframe_added = [&](MapId, const KeyFrame&) { ++hook_calls; };
  const MapId mid = seed_map_from_world(atlas, world, cam, poses);
  const SubMap& map = atlas.map(mid);

  CHECK(map.keyframes().size() == 12);
  CHECK(hook_calls == 12);
  CHECK(map.points().size() > 100);
  CHECK(map.bidirectional_links_consistent());
  CHECK(map.spanning_tree_is_valid());

  std::set<std::uint64_t> seen;
  for (const auto& [pid, p] : map.points()) {
    REQUIRE(p.origin_landmark.has_value());
    CHECK(seen.insert(*p.origin_landmark).second);  // one point per landmark
    CHECK((p.position - world.landmarks[*p.origin_landmark - 1].position)
              .norm() == 0.0);
    CHECK(p.descriptor == world.landmarks[*p.origin_landmark - 1].descriptor);
  }
  // Every keyframe sees its pose's landmarks with exact pixels.
  for (const auto& [kid, kf] : map.keyframes())
    for (const auto& m : kf.measurements) {
      REQUIRE(m.matched_point.has_value());
      const Vec3 pc = kf.pose * map.point(*m.matched_point).position;
      const Eigen::Vector2d exact(cam.fx * pc.x() / pc.z() + cam.cx,
                                  cam.fy * pc.y() / pc.z() + cam.cy);
      CHECK((m.pixel - exact).norm() < 1e-9);
    }
}
