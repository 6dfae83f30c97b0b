#include "atlas/simulator.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace atlas::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

Descriptor well_separated_descriptor(std::mt19937_64& rng,
                                     const std::vector<SimLandmark>& existing,
                                     int min_hamming) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Descriptor d = random_descriptor(rng);
    bool ok = true;
    for (const auto& lm : existing) {
      if (hamming(d, lm.descriptor) < min_hamming) {
        ok = false;
        break;
      }
    }
    if (ok) return d;
  }
  throw std::runtime_error("could not generate a well-separated descriptor");
}

// Uniform sample on the surface of an axis-aligned box.
Vec3 sample_box_surface(std::mt19937_64& rng, const Vec3& lo, const Vec3& hi) {
  const Vec3 ext = hi - lo;
  const double axy = ext.x() * ext.y(), axz = ext.x() * ext.z(),
               ayz = ext.y() * ext.z();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double pick = u01(rng) * 2.0 * (axy + axz + ayz);
  const double a = u01(rng), b = u01(rng);
  Vec3 p;
  if (pick < 2 * axy) {
    p = Vec3(lo.x() + a * ext.x(), lo.y() + b * ext.y(),
             pick < axy ? lo.z() : hi.z());
  } else if (pick < 2 * axy + 2 * axz) {
    p = Vec3(lo.x() + a * ext.x(), pick < 2 * axy + axz ? lo.y() : hi.y(),
             lo.z() + b * ext.z());
  } else {
    p = Vec3(pick < 2 * (axy + axz) + ayz ? lo.x() : hi.x(),
             lo.y() + a * ext.y(), lo.z() + b * ext.z());
  }
  return p;
}

Vec3 sample_cylinder_shell(std::mt19937_64& rng, double radius, double z_lo,
                           double z_hi) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double theta = 2.0 * M_PI * u01(rng);
  const double z = z_lo + (z_hi - z_lo) * u01(rng);
  return Vec3(radius * std::cos(theta), radius * std::sin(theta), z);
}

int octave_for_depth(double depth, int n_levels) {
  // distance bands: [0,6) -> 0, [6,12) -> 1, [12,24) -> 2, beyond -> 3
  int oct = 0;
  double edge = 6.0;
  while (oct + 1 < n_levels && depth >= edge) {
    ++oct;
    edge *= 2.0;
  }
  return oct;
}

WorldKind parse_world_kind(const std::string& s) {
  if (s == "room") return WorldKind::Room;
  if (s == "corridor") return WorldKind::Corridor;
  if (s == "loop") return WorldKind::Loop;
  throw std::invalid_argument("unknown world kind: " + s);
}

Vec3 json_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

SimWorld generate_world(WorldKind kind, int n_landmarks, std::uint64_t seed,
                        int min_pairwise_hamming) {
  SimWorld world;
  world.seed = seed;
  std::mt19937_64 rng(splitmix64(seed));
  world.landmarks.reserve(n_landmarks);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (int i = 0; i < n_landmarks; ++i) {
    Vec3 p;
    switch (kind) {
      case WorldKind::Room:
        p = sample_box_surface(rng, Vec3(-6, -6, 0), Vec3(6, 6, 3));
        break;
      case WorldKind::Corridor:
        p = sample_box_surface(rng, Vec3(0, -2, 0), Vec3(40, 2, 3));
        break;
      case WorldKind::Loop:
        // Outer cylinder wall plus a central pillar for near features.
        p = u01(rng) < 0.8 ? sample_cylinder_shell(rng, 16.0, 0.0, 3.0)
                           : sample_cylinder_shell(rng, 2.0, 0.0, 3.0);
        break;
    }
    SimLandmark lm;
    lm.id = std::uint64_t(i) + 1;
    lm.position = p;
    lm.descriptor =
        well_separated_descriptor(rng, world.landmarks, min_pairwise_hamming);
    world.landmarks.push_back(lm);
  }
  return world;
}

FrameObservations render_frame(const SimWorld& world, const CameraModel& cam,
                               const Pose& t_cw, double timestamp,
                               const RenderOptions& opts, std::uint64_t seed,
                               std::uint64_t frame_index) {
  FrameObservations frame;
  frame.timestamp = timestamp;
  if (opts.blackout) return frame;

  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(frame_index + 1)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  for (const auto& lm : world.landmarks) {
    const Vec3 pc = t_cw * lm.position;
    if (pc.z() < opts.min_depth || pc.z() > opts.max_depth) continue;
    if (opts.far_only_min_depth && pc.z() < *opts.far_only_min_depth) continue;
    const Eigen::Vector2d pixel(cam.fx * pc.x() / pc.z() + cam.cx,
                                cam.fy * pc.y() / pc.z() + cam.cy);
    if (!cam.in_image(pixel)) continue;

    FrameMeasurement m;
    m.octave = octave_for_depth(pc.z(), cam.n_levels);
    const double sigma = opts.pixel_noise * cam.octave_sigma(m.octave);
    m.pixel = pixel + sigma * Eigen::Vector2d(gauss(rng), gauss(rng));
    if (!cam.in_image(m.pixel)) continue;
    m.descriptor = lm.descriptor;
    if (opts.stereo) {
      const double disp = cam.fx * cam.baseline / pc.z();
      m.disparity =
          std::max(1e-3, disp + opts.disparity_noise * gauss(rng));
    }
    m.sim_landmark = lm.id;
    frame.measurements.push_back(std::move(m));
  }

  for (int i = 0; i < opts.n_outliers; ++i) {
    FrameMeasurement m;
    m.pixel = Eigen::Vector2d(u01(rng) * (cam.width - 1),
                              u01(rng) * (cam.height - 1));
    m.octave = 0;
    m.descriptor = random_descriptor(rng);
    if (opts.stereo)
      m.disparity = 1.0 + u01(rng) * (cam.fx * cam.baseline / opts.min_depth);
    frame.measurements.push_back(std::move(m));
  }
  return frame;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 u = up;
  if (std::abs(z.dot(u.normalized())) > 0.999) u = Vec3(0, 1, 0);
  const Vec3 x = u.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  Pose t_cw;
  t_cw.rotation = r_wc.transpose();
  t_cw.translation = -t_cw.rotation * eye;
  return t_cw;
}

std::vector<TimedPose> orbit_trajectory(const Vec3& center, double radius,
                                        double height, int frames,
                                        double revolutions, double dt,
                                        double start_angle, double t0) {
  std::vector<TimedPose> out;
  out.reserve(frames);
  for (int i = 0; i < frames; ++i) {
    const double a =
        start_angle + 2.0 * M_PI * revolutions * (frames > 1 ? double(i) / (frames - 1) : 0.0);
    const Vec3 eye(center.x() + radius * std::cos(a),
                   center.y() + radius * std::sin(a), height);
    const Vec3 target(center.x(), center.y(), height);
    out.push_back({t0 + i * dt, look_at(eye, target)});
  }
  return out;
}

std::vector<TimedPose> line_trajectory(const Vec3& from, const Vec3& to,
                                       int frames, double dt,
                                       std::optional<Vec3> face, double t0) {
  std::vector<TimedPose> out;
  out.reserve(frames);
  const Vec3 dir = (to - from).normalized();
  for (int i = 0; i < frames; ++i) {
    const double s = frames > 1 ? double(i) / (frames - 1) : 0.0;
    const Vec3 eye = from + s * (to - from);
    const Vec3 target = face ? eye + *face : eye + dir;
    out.push_back({t0 + i * dt, look_at(eye, target)});
  }
  return out;
}

CameraModel default_camera() {
  CameraModel cam;
  cam.fx = 450.0;
  cam.fy = 450.0;
  cam.cx = 320.0;
  cam.cy = 240.0;
  cam.width = 640;
  cam.height = 480;
  cam.baseline = 0.12;
  return cam;
}

ScenarioScript parse_scenario(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ScenarioScript sc;
  if (j.contains("world")) {
    const auto& w = j.at("world");
    if (w.contains("kind")) sc.world_kind = parse_world_kind(w.at("kind"));
    if (w.contains("landmarks")) sc.world_landmarks = w.at("landmarks");
    if (w.contains("seed")) sc.world_seed = w.at("seed");
  }
  if (j.contains("camera")) {
    const auto& c = j.at("camera");
    CameraModel cam = default_camera();
    if (c.contains("fx")) cam.fx = c.at("fx");
    if (c.contains("fy")) cam.fy = c.at("fy");
    if (c.contains("cx")) cam.cx = c.at("cx");
    if (c.contains("cy")) cam.cy = c.at("cy");
    if (c.contains("width")) cam.width = c.at("width");
    if (c.contains("height")) cam.height = c.at("height");
    if (c.contains("baseline")) cam.baseline = c.at("baseline");
    sc.camera = cam;
  }
  if (!j.contains("sessions") || !j.at("sessions").is_array())
    throw std::invalid_argument("scenario needs a \"sessions\" array");
  for (const auto& js : j.at("sessions")) {
    SessionScript s;
    if (js.contains("name")) s.name = js.at("name");
    if (js.contains("seed")) s.seed = js.at("seed");
    if (js.contains("mode")) s.stereo = js.at("mode") == "stereo";
    if (js.contains("trajectory")) {
      const auto& t = js.at("trajectory");
      if (t.contains("kind")) s.trajectory.kind = t.at("kind");
      if (s.trajectory.kind != "orbit" && s.trajectory.kind != "line")
        throw std::invalid_argument("unknown trajectory kind: " +
                                    s.trajectory.kind);
      if (t.contains("center")) s.trajectory.center = json_vec3(t.at("center"));
      if (t.contains("radius")) s.trajectory.radius = t.at("radius");
      if (t.contains("height")) s.trajectory.height = t.at("height");
      if (t.contains("revolutions")) s.trajectory.revolutions = t.at("revolutions");
      if (t.contains("start_angle")) s.trajectory.start_angle = t.at("start_angle");
      if (t.contains("from")) s.trajectory.from = json_vec3(t.at("from"));
      if (t.contains("to")) s.trajectory.to = json_vec3(t.at("to"));
      if (t.contains("frames")) s.trajectory.frames = t.at("frames");
      if (t.contains("dt")) s.trajectory.dt = t.at("dt");
      if (t.contains("t0")) s.trajectory.t0 = t.at("t0");
    }
    if (js.contains("noise")) {
      const auto& n = js.at("noise");
      if (n.contains("pixel")) s.render.pixel_noise = n.at("pixel");
      if (n.contains("disparity")) s.render.disparity_noise = n.at("disparity");
      if (n.contains("outliers")) s.render.n_outliers = n.at("outliers");
    }
    s.render.stereo = s.stereo;
    if (js.contains("episodes")) {
      for (const auto& je : js.at("episodes")) {
        EpisodeSpec e;
        e.kind = je.at("kind");
        if (e.kind != "blackout" && e.kind != "far_only")
          throw std::invalid_argument("unknown episode kind: " + e.kind);
        e.start = je.at("start");
        e.end = je.at("end");
        if (je.contains("min_depth")) e.min_depth = je.at("min_depth");
        s.episodes.push_back(e);
      }
    }
    if (js.contains("start_new_map_at"))
      for (const auto& f : js.at("start_new_map_at"))
        s.start_new_map_at.push_back(f.get<int>());
    sc.sessions.push_back(std::move(s));
  }
  return sc;
}

ScenarioScript load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::vector<TimedPose> session_trajectory(const SessionScript& s) {
  const auto& t = s.trajectory;
  if (t.kind == "orbit")
    return orbit_trajectory(t.center, t.radius, t.height, t.frames,
                            t.revolutions, t.dt, t.start_angle, t.t0);
  return line_trajectory(t.from, t.to, t.frames, t.dt, std::nullopt, t.t0);
}

RenderOptions frame_render_options(const SessionScript& s, int frame) {
  RenderOptions opts = s.render;
  opts.stereo = s.stereo;
  for (const auto& e : s.episodes) {
    if (frame < e.start || frame >= e.end) continue;
    if (e.kind == "blackout") opts.blackout = true;
    if (e.kind == "far_only") opts.far_only_min_depth = e.min_depth;
  }
  return opts;
}

MapId seed_map_from_world(Atlas& atlas, const SimWorld& world,
                          const CameraModel& cam,
                          const std::vector<TimedPose>& kf_poses,
                          const RenderOptions& opts) {
  const MapId map_id = atlas.create_map();
  SubMap& map = atlas.map(map_id);
  std::map<std::uint64_t, PointId> landmark_to_point;

  RenderOptions clean = opts;
  clean.pixel_noise = 0.0;
  clean.disparity_noise = 0.0;
  clean.n_outliers = 0;
  clean.blackout = false;

  for (std::size_t i = 0; i < kf_poses.size(); ++i) {
    const auto frame = render_frame(world, cam, kf_poses[i].t_cw,
                                    kf_poses[i].timestamp, clean, world.seed, i);
    KeyFrame kf;
    kf.id = atlas.fresh_keyframe_id();
    kf.timestamp = kf_poses[i].timestamp;
    kf.pose = kf_poses[i].t_cw;
    kf.measurements = frame.measurements;
    for (auto& m : kf.measurements) {
      const auto it = landmark_to_point.find(*m.sim_landmark);
      if (it != landmark_to_point.end()) m.matched_point = it->second;
    }
    const KfId kf_id = atlas.add_keyframe(map_id, std::move(kf));

    // Create points for first sightings; positions are exact ground truth.
    const KeyFrame& stored = map.keyframe(kf_id);
    for (std::size_t mi = 0; mi < stored.measurements.size(); ++mi) {
      const auto& m = stored.measurements[mi];
      if (m.matched_point) continue;
      const std::uint64_t lm_id = *m.sim_landmark;
      MapPoint p;
      p.id = atlas.fresh_point_id();
      p.position = world.landmarks[lm_id - 1].position;
      p.descriptor = m.descriptor;
      p.observations[kf_id] = int(mi);
      p.origin_landmark = lm_id;
      landmark_to_point[lm_id] = map.add_point(std::move(p));
    }
  }
  return map_id;
}

}  // namespace atlas::sim
