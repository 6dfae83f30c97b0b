#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "atlas/evaluation.hpp"

using namespace atlas;
using namespace atlas::eval;

namespace {

Trajectory circle(int n, double dt, double radius, double t0 = 0.0) {
  Trajectory traj;
  for (int i = 0; i < n; ++i) {
    const double ang = 2 * M_PI * i / n;
    Pose t_wc;
    t_wc.translation = Vec3(radius * std::cos(ang), radius * std::sin(ang),
                            1.0 + 0.1 * std::sin(3 * ang));
    t_wc.rotation =
        Eigen::AngleAxisd(ang, Vec3::UnitZ()).toRotationMatrix();
    traj.push_back({t0 + i * dt, t_wc.inverse()});
  }
  return traj;
}

Trajectory transformed(const Trajectory& in, const SimTransform& t) {
  // Camera centers move by t; implement by right-composition on T_cw.
  Trajectory out = in;
  for (auto& e : out) {
    const Pose t_wc = e.t_cw.inverse();
    Pose moved;
    moved.rotation = t.pose.rotation * t_wc.rotation;
    moved.translation = t * t_wc.translation;
    e.t_cw = moved.inverse();
  }
  return out;
}

}  // namespace

TEST_CASE("tum format frozen oracle and round trip") {
  // [DERIVED] camera-in-world of T_cw = (exp_so3(0.3 -0.2 0.1), t=(1 2 3)),
  // quaternion computed independently (numpy).
  Trajectory traj;
  Pose t_cw;
  t_cw.rotation = exp_so3(Vec3(0.3, -0.2, 0.1));
  t_cw.translation = Vec3(1, 2, 3);
  traj.push_back({1.5, t_cw});

  std::ostringstream os;
  format_tum(os, traj);
  std::istringstream is(os.str());
  double t, tx, ty, tz, qx, qy, qz, qw;
  is >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw;
  CHECK(t == doctest::Approx(1.5));
  CHECK(tx == doctest::Approx(-1.7419280596151543).epsilon(1e-8));
  CHECK(ty == doctest::Approx(-2.623321542589774).epsilon(1e-8));
  CHECK(tz == doctest::Approx(-2.0208589063340843).epsilon(1e-8));
  CHECK(qx == doctest::Approx(-0.14912652997457845).epsilon(1e-7));
  CHECK(qy == doctest::Approx(0.09941768664971896).epsilon(1e-7));
  CHECK(qz == doctest::Approx(-0.04970884332485948).epsilon(1e-7));
  CHECK(qw == doctest::Approx(0.9825509821552589).epsilon(1e-7));

  std::istringstream is2(os.str());
  const Trajectory back = parse_tum(is2);
  REQUIRE(back.size() == 1);
  CHECK(pose_distance(back[0].t_cw, t_cw) < 1e-7);
}

TEST_CASE("associate is injective and nearest-first") {
  Trajectory ref, est;
  for (int i = 0; i < 10; ++i) ref.push_back({0.1 * i, Pose::identity()});
  // Two estimate frames compete for ref t=0.3; only one may win.
  est.push_back({0.299, Pose::identity()});
  est.push_back({0.301, Pose::identity()});
  est.push_back({0.75, Pose::identity()});   // nothing within 0.02
  est.push_back({0.501, Pose::identity()});
  const auto pairs = associate(est, ref);
  std::set<int> used_ref, used_est;
  for (const auto& [ei, ri] : pairs) {
    CHECK(used_ref.insert(ri).second);
    CHECK(used_est.insert(ei).second);
    CHECK(std::abs(est[ei].timestamp - ref[ri].timestamp) <= 0.02);
  }
  // Only one of 0.299/0.301 may claim ref 0.3; 0.75 matches nothing.
  CHECK(pairs.size() == 2);
  CHECK(used_est.count(0) + used_est.count(1) == 1);
  CHECK_FALSE(used_est.count(2));
}

TEST_CASE("associate throws when nothing matches") {
  Trajectory ref = {{0.0, Pose::identity()}};
  Trajectory est = {{10.0, Pose::identity()}};
  CHECK_THROWS(associate(est, ref));
  CHECK_NOTHROW(associate({}, ref));
}

TEST_CASE("se3 ate of a rigidly moved trajectory is zero") {
  const Trajectory ref = circle(60, 0.1, 5.0);
  SimTransform t;
  t.pose = exp_se3(Twist(3.0, -2.0, 1.0, 0.4, 0.3, -0.5));
  const Trajectory est = transformed(ref, t);
  const AteResult r = align_and_ate(est, ref, false);
  CHECK(r.matched_frames == 60);
  CHECK(r.rmse < 1e-9);
  CHECK(r.max < 1e-9);
}

TEST_CASE("scaled trajectory: sim3 absorbs the scale, se3 cannot") {
  const Trajectory ref = circle(60, 0.1, 5.0);
  SimTransform t;
  t.scale = 1.35;
  t.pose = exp_se3(Twist(0.5, 0.2, -0.1, 0.1, -0.2, 0.3));
  const Trajectory est = transformed(ref, t);
  CHECK(align_and_ate(est, ref, true).rmse < 1e-9);
  CHECK(align_and_ate(est, ref, false).rmse > 0.1);
}

TEST_CASE("ate statistics against hand-built errors") {
  // Non-collinear centers so the alignment is well posed; one estimate frame
  // is pushed 0.4 m out of the plane.
  Trajectory ref = circle(8, 0.1, 3.0);
  Trajectory est = ref;
  Pose t_wc = est[2].t_cw.inverse();
  t_wc.translation += Vec3(0, 0, 0.4);
  est[2].t_cw = t_wc.inverse();
  const AteResult r = align_and_ate(est, ref, false);
  CHECK(r.matched_frames == 8);
  CHECK(r.errors.size() == 8);
  CHECK(r.max > 0.25);
  CHECK(r.max <= 0.4 + 1e-9);
  CHECK(r.rmse > 0.1);
  CHECK(r.rmse < 0.4);
  CHECK(r.median < r.rmse);
  // RMSE is the root mean of the per-frame squared errors.
  double sq = 0.0;
  for (double e : r.errors) sq += e * e;
  CHECK(r.rmse == doctest::Approx(std::sqrt(sq / 8)));
}

TEST_CASE("coverage is a percentage of reference frames") {
  const Trajectory ref = circle(100, 0.1, 3.0);
  Trajectory est(ref.begin(), ref.begin() + 25);
  CHECK(coverage(est, ref) == doctest::Approx(25.0));
  CHECK(coverage({}, ref) == 0.0);
  CHECK(coverage(ref, ref) == doctest::Approx(100.0));
}

TEST_CASE("segmented_ate pools two differently-referenced halves") {
  const Trajectory ref = circle(80, 0.1, 4.0);
  // First half in one frame, second half in another: the single-alignment
  // ATE is large, the segmented one vanishes.
  SimTransform t1, t2;
  t1.pose = exp_se3(Twist(1.0, 0.0, 0.0, 0.0, 0.0, 0.2));
  t2.pose = exp_se3(Twist(-2.0, 1.0, 0.5, 0.3, 0.0, -0.4));
  Trajectory est;
  const Trajectory moved1 = transformed(ref, t1), moved2 = transformed(ref, t2);
  for (int i = 0; i < 40; ++i) est.push_back(moved1[i]);
  for (int i = 40; i < 80; ++i) est.push_back(moved2[i]);

  CHECK(align_and_ate(est, ref, false).rmse > 0.5);
  const std::vector<SegmentSpec> segs = {{0.0, 4.0, false}, {4.0, 8.0, false}};
  const AteResult r = segmented_ate(est, ref, segs);
  CHECK(r.matched_frames == 80);
  CHECK(r.rmse < 1e-9);

  // The gap-splitting convenience finds the same cut from timestamps.
  Trajectory gappy = est;
  for (int i = 40; i < 80; ++i) gappy[i].timestamp += 0.5;
  Trajectory ref_gappy = ref;
  for (int i = 40; i < 80; ++i) ref_gappy[i].timestamp += 0.5;
  CHECK(segmented_ate_by_gaps(gappy, ref_gappy, 0.3).rmse < 1e-9);
}

TEST_CASE("map_stats totals") {
  Atlas atlas;
  const MapId a = atlas.create_map();
  atlas.set_active(a);
  for (int i = 0; i < 3; ++i) {
    KeyFrame kf;
    kf.id = atlas.fresh_keyframe_id();
    atlas.add_keyframe(a, std::move(kf));
  }
  const MapStats st = map_stats(atlas);
  REQUIRE(st.maps.size() == 1);
  CHECK(st.maps[0].keyframes == 3);
  CHECK(st.total_keyframes == 3);
  CHECK(st.total_points == 0);
}
