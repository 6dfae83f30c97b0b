#pragma once

#include <cstdint>
#include <vector>

#include "atlas/lie.hpp"

namespace atlas {

/// Paired 3D points for absolute-orientation estimation. The recovered
/// transform maps source points onto target points.
struct CorrespondenceSet {
  std::vector<Vec3> source;
  std::vector<Vec3> target;

  std::size_t size() const { return source.size(); }
  void add(const Vec3& src, const Vec3& tgt) {
    source.push_back(src);
    target.push_back(tgt);
  }
};

struct DegenerateAlignment : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoConsensus : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Closed-form least-squares similarity (Horn/Umeyama). With with_scale off
/// the scale is pinned to 1 and the fit is rigid.
SimTransform horn_align(const CorrespondenceSet& c, bool with_scale);

struct RansacOptions {
  double inlier_tol = 0.05;  // meters
  int max_iters = 200;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

struct RansacResult {
  SimTransform transform;
  std::vector<bool> inliers;
  int inlier_count = 0;
};

RansacResult ransac_align(const CorrespondenceSet& putative, bool with_scale,
                          const RansacOptions& opts);

}  // namespace atlas
