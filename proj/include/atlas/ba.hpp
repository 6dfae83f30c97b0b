#pragma once

#include <functional>
#include <set>

#include "atlas/camera.hpp"
#include "atlas/map.hpp"

namespace atlas {

struct BaOptions {
  int max_iterations = 10;
  double rel_decrease_tol = 1e-6;
  double huber_delta = 2.45;
  double pixel_sigma0 = 1.0;
  double initial_lambda = 1e-6;
  double lambda_cap = 1e10;
  // Trial steps moving any point farther than this are rejected like a cost
  // increase: weakly-constrained points must not be flung along their rays.
  double max_point_step = 100.0;
};

struct BaReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double mean_reprojection_px = 0.0;
  int residual_count = 0;
  bool aborted = false;      // damping cap hit, map restored
  bool interrupted = false;  // stop requested, map restored
};

/// Robust bundle adjustment over the given keyframe poses and point
/// positions. `fixed_kfs` contribute residuals but do not move. Point blocks
/// are eliminated by Schur complement; the reduced camera system is solved
/// densely. Levenberg damping with accept/reject keeps the robust cost
/// non-increasing. Aborted or interrupted runs leave the map untouched.
BaReport bundle_adjust(SubMap& map, const CameraModel& cam,
                       const std::set<KfId>& variable_kfs,
                       const std::set<KfId>& fixed_kfs,
                       const std::set<PointId>& variable_points,
                       const BaOptions& opts = {},
                       const std::function<bool()>& interrupt = {});

/// Total robust reprojection cost of the given residual set at the current
/// map state (test oracle and convergence metric).
double reprojection_cost(const SubMap& map, const CameraModel& cam,
                         const std::set<KfId>& kfs,
                         const std::set<PointId>& points,
                         const BaOptions& opts = {});

}  // namespace atlas
