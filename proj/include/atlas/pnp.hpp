#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "atlas/camera.hpp"
#include "atlas/lie.hpp"

namespace atlas {

/// Minimal P3P (Grunert): camera poses (camera-from-world) consistent with
/// three world points and their unit bearing vectors. Up to four solutions.
std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& world,
                            const std::array<Vec3, 3>& bearing);

struct PnPRansacOptions {
  double inlier_tol_px = 4.0;
  int max_iters = 200;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

struct PnPResult {
  Pose pose;
  std::vector<bool> inliers;
  int inlier_count = 0;
};

/// P3P within RANSAC over 2D-3D matches. Empty optional when no consensus.
std::optional<PnPResult> pnp_ransac(const CameraModel& cam,
                                    const std::vector<Vec3>& world,
                                    const std::vector<Eigen::Vector2d>& pixel,
                                    const PnPRansacOptions& opts);

}  // namespace atlas
