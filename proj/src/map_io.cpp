#include "atlas/map_io.hpp"

#include <Eigen/Geometry>
#include <fstream>
#include <sstream>

namespace atlas {

namespace {

constexpr std::uint32_t kVersion = 2;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("map_io: truncated input");
  return v;
}

void put_pose(std::ostream& os, const Pose& p) {
  Eigen::Quaterniond q(p.rotation);
  q.normalize();
  if (q.w() < 0 || (q.w() == 0 && (q.x() < 0 || (q.x() == 0 && (q.y() < 0 || (q.y() == 0 && q.z() < 0))))))
    q.coeffs() = -q.coeffs();
  put(os, p.translation.x());
  put(os, p.translation.y());
  put(os, p.translation.z());
  put(os, q.x());
  put(os, q.y());
  put(os, q.z());
  put(os, q.w());
  // The exact rotation entries follow: quaternion extraction rounds the last
  // ulp, which would break bytewise round-trip stability.
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) put(os, p.rotation(r, c));
}

Pose get_pose(std::istream& is) {
  Pose p;
  p.translation.x() = get<double>(is);
  p.translation.y() = get<double>(is);
  p.translation.z() = get<double>(is);
  const double qx = get<double>(is), qy = get<double>(is),
               qz = get<double>(is), qw = get<double>(is);
  p.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = get<double>(is);
  return p;
}

void put_descriptor(std::ostream& os, const Descriptor& d) {
  for (auto w : d.words) put(os, w);
}
Descriptor get_descriptor(std::istream& is) {
  Descriptor d;
  for (auto& w : d.words) w = get<std::uint64_t>(is);
  return d;
}

template <typename T>
void put_optional(std::ostream& os, const std::optional<T>& v) {
  put<std::uint8_t>(os, v ? 1 : 0);
  if (v) put(os, *v);
}

template <typename T>
std::optional<T> get_optional(std::istream& is) {
  if (get<std::uint8_t>(is)) return get<T>(is);
  return std::nullopt;
}

void put_measurement(std::ostream& os, const FrameMeasurement& m) {
  put(os, m.pixel.x());
  put(os, m.pixel.y());
  put<std::int32_t>(os, m.octave);
  put_descriptor(os, m.descriptor);
  put_optional(os, m.disparity);
  put_optional(os, m.matched_point);
  put_optional(os, m.sim_landmark);
}

FrameMeasurement get_measurement(std::istream& is) {
  FrameMeasurement m;
  m.pixel.x() = get<double>(is);
  m.pixel.y() = get<double>(is);
  m.octave = get<std::int32_t>(is);
  m.descriptor = get_descriptor(is);
  m.disparity = get_optional<double>(is);
  m.matched_point = get_optional<PointId>(is);
  m.sim_landmark = get_optional<std::uint64_t>(is);
  return m;
}

void put_magic(std::ostream& os, std::uint8_t kind) {
  os.write("ATLS", 4);
  put(os, kVersion);
  put(os, kind);
}

std::uint8_t get_magic(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "ATLS")
    throw std::runtime_error("map_io: bad magic");
  if (get<std::uint32_t>(is) != kVersion)
    throw std::runtime_error("map_io: unsupported version");
  return get<std::uint8_t>(is);
}

void put_submap_body(std::ostream& os, const SubMap& m) {
  put<std::uint64_t>(os, m.id);
  put<std::int32_t>(os, m.covisibility_threshold);

  const auto& kfs = m.keyframes();
  put<std::uint64_t>(os, kfs.size());
  for (const auto& [id, kf] : kfs) {
    put<std::uint64_t>(os, id);
    put(os, kf.timestamp);
    put_pose(os, kf.pose);
    put<std::uint8_t>(os, kf.is_gauge_fixed ? 1 : 0);
    put<std::uint32_t>(os, std::uint32_t(kf.measurements.size()));
    for (const auto& meas : kf.measurements) put_measurement(os, meas);
  }

  put<std::uint64_t>(os, m.keyframe_order().size());
  for (KfId id : m.keyframe_order()) put<std::uint64_t>(os, id);

  const auto& pts = m.points();
  put<std::uint64_t>(os, pts.size());
  for (const auto& [id, p] : pts) {
    put<std::uint64_t>(os, id);
    put(os, p.position.x());
    put(os, p.position.y());
    put(os, p.position.z());
    put_descriptor(os, p.descriptor);
    put_optional(os, p.origin_landmark);
    put<std::uint32_t>(os, std::uint32_t(p.observations.size()));
    for (const auto& [kf, idx] : p.observations) {
      put<std::uint64_t>(os, kf);
      put<std::int32_t>(os, idx);
    }
  }
}

}  // namespace

void save_submap(std::ostream& os, const SubMap& m) {
  put_magic(os, 1);
  put_submap_body(os, m);

  put<std::uint8_t>(os, m.has_root_ ? 1 : 0);
  put<std::uint64_t>(os, m.root_);
  put<std::uint64_t>(os, m.parent_.size());
  for (const auto& [child, par] : m.parent_) {
    put<std::uint64_t>(os, child);
    put<std::uint64_t>(os, par);
  }
  put<std::uint64_t>(os, m.point_redirect_.size());
  for (const auto& [from, to] : m.point_redirect_) {
    put<std::uint64_t>(os, from);
    put<std::uint64_t>(os, to);
  }
  const auto edges = m.covisibility_edges();
  put<std::uint64_t>(os, edges.size());
  for (const auto& [a, b, w] : edges) {
    put<std::uint64_t>(os, a);
    put<std::uint64_t>(os, b);
    put<std::int32_t>(os, w);
  }
}

SubMap load_submap(std::istream& is) {
  if (get_magic(is) != 1) throw std::runtime_error("map_io: not a submap");

  SubMap m;
  m.id = get<std::uint64_t>(is);
  m.covisibility_threshold = get<std::int32_t>(is);

  const auto n_kf = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_kf; ++i) {
    KeyFrame kf;
    kf.id = get<std::uint64_t>(is);
    kf.timestamp = get<double>(is);
    kf.pose = get_pose(is);
    kf.is_gauge_fixed = get<std::uint8_t>(is) != 0;
    const auto n_meas = get<std::uint32_t>(is);
    kf.measurements.reserve(n_meas);
    for (std::uint32_t j = 0; j < n_meas; ++j)
      kf.measurements.push_back(get_measurement(is));
    m.keyframes_.emplace(kf.id, std::move(kf));
  }

  const auto n_order = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_order; ++i)
    m.order_.push_back(get<std::uint64_t>(is));

  const auto n_pts = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_pts; ++i) {
    MapPoint p;
    p.id = get<std::uint64_t>(is);
    p.position.x() = get<double>(is);
    p.position.y() = get<double>(is);
    p.position.z() = get<double>(is);
    p.descriptor = get_descriptor(is);
    p.origin_landmark = get_optional<std::uint64_t>(is);
    const auto n_obs = get<std::uint32_t>(is);
    for (std::uint32_t j = 0; j < n_obs; ++j) {
      const auto kf = get<std::uint64_t>(is);
      const auto idx = get<std::int32_t>(is);
      p.observations[kf] = idx;
    }
    m.points_.emplace(p.id, std::move(p));
  }

  m.has_root_ = get<std::uint8_t>(is) != 0;
  m.root_ = get<std::uint64_t>(is);
  const auto n_par = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_par; ++i) {
    const auto child = get<std::uint64_t>(is);
    m.parent_[child] = get<std::uint64_t>(is);
  }
  const auto n_red = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_red; ++i) {
    const auto from = get<std::uint64_t>(is);
    m.point_redirect_[from] = get<std::uint64_t>(is);
  }
  // Covisibility edges are informational; counts are rebuilt exactly from
  // the observation links.
  const auto n_edges = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_edges; ++i) {
    get<std::uint64_t>(is);
    get<std::uint64_t>(is);
    get<std::int32_t>(is);
  }
  for (const auto& [pair, count] : m.brute_force_shared_counts()) {
    m.shared_[pair.first][pair.second] = count;
    m.shared_[pair.second][pair.first] = count;
  }
  return m;
}

void save_atlas(std::ostream& os, const Atlas& a) {
  put_magic(os, 2);
  put<std::uint64_t>(os, a.active_);
  put<std::uint64_t>(os, a.next_map_id_);
  put<std::uint64_t>(os, a.next_kf_id_);
  put<std::uint64_t>(os, a.next_point_id_);
  put<std::uint64_t>(os, a.maps_.size());
  for (const auto& [id, m] : a.maps_) save_submap(os, m);
  put<std::uint64_t>(os, a.retired_.size());
  for (const auto& [id, info] : a.retired_) {
    put<std::uint64_t>(os, id);
    put<std::uint64_t>(os, info.successor);
    put_pose(os, info.into_successor.pose);
    put(os, info.into_successor.scale);
  }
}

Atlas load_atlas(std::istream& is) {
  if (get_magic(is) != 2) throw std::runtime_error("map_io: not an atlas");
  Atlas a;
  a.active_ = get<std::uint64_t>(is);
  a.next_map_id_ = get<std::uint64_t>(is);
  a.next_kf_id_ = get<std::uint64_t>(is);
  a.next_point_id_ = get<std::uint64_t>(is);
  const auto n_maps = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_maps; ++i) {
    SubMap m = load_submap(is);
    a.maps_.emplace(m.id, std::move(m));
  }
  const auto n_ret = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n_ret; ++i) {
    const auto id = get<std::uint64_t>(is);
    RetiredMapInfo info;
    info.successor = get<std::uint64_t>(is);
    info.into_successor.pose = get_pose(is);
    info.into_successor.scale = get<double>(is);
    a.retired_[id] = info;
  }
  return a;
}

std::string atlas_to_bytes(const Atlas& a) {
  std::ostringstream os(std::ios::binary);
  save_atlas(os, a);
  return os.str();
}

void save_atlas_file(const std::string& path, const Atlas& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("map_io: cannot open " + path);
  save_atlas(os, a);
}

Atlas load_atlas_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("map_io: cannot open " + path);
  return load_atlas(is);
}

}  // namespace atlas
