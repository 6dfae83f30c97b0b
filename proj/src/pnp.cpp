#include "atlas/pnp.hpp"

#include <Eigen/Eigenvalues>
#include <random>

#include "atlas/align.hpp"

namespace atlas {

namespace {

// Real roots of x^4 + c3 x^3 + c2 x^2 + c1 x + c0 via companion matrix.
std::vector<double> quartic_real_roots(double c3, double c2, double c1,
                                       double c0) {
  Eigen::Matrix4d comp = Eigen::Matrix4d::Zero();
  comp(0, 3) = -c0;
  comp(1, 3) = -c1;
  comp(2, 3) = -c2;
  comp(3, 3) = -c3;
  comp(1, 0) = comp(2, 1) = comp(3, 2) = 1.0;
  Eigen::EigenSolver<Eigen::Matrix4d> es(comp);
  std::vector<double> roots;
  for (int i = 0; i < 4; ++i) {
    const auto ev = es.eigenvalues()[i];
    if (std::abs(ev.imag()) < 1e-8 * (1.0 + std::abs(ev.real())))
      roots.push_back(ev.real());
  }
  return roots;
}

}  // namespace

std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& world,
                            const std::array<Vec3, 3>& bearing) {
  const Vec3 f1 = bearing[0].normalized();
  const Vec3 f2 = bearing[1].normalized();
  const Vec3 f3 = bearing[2].normalized();

  const double a = (world[1] - world[2]).norm();  // opposite P1
  const double b = (world[0] - world[2]).norm();  // opposite P2
  const double c = (world[0] - world[1]).norm();  // opposite P3
  if (a < 1e-12 || b < 1e-12 || c < 1e-12) return {};

  const double ca = f2.dot(f3);
  const double cb = f1.dot(f3);
  const double cg = f1.dot(f2);
  const double A = (a * a) / (b * b);
  const double B = (c * c) / (b * b);

  // Grunert quartic in v = s3/s1 (coefficients are the resultant of the two
  // ratio equations eliminating u = s2/s1).
  const double A2 = A * A, B2 = B * B;
  const double k4 = A2 - 2 * A * B - 2 * A + B2 - 4 * B * ca * ca + 2 * B + 1;
  const double k3 = -4 * A2 * cb + 8 * A * B * cb + 4 * A * ca * cg +
                    4 * A * cb - 4 * B2 * cb + 8 * B * ca * ca * cb +
                    4 * B * ca * cg - 4 * B * cb - 4 * ca * cg;
  const double k2 = 4 * A2 * cb * cb + 2 * A2 - 8 * A * B * cb * cb -
                    4 * A * B - 8 * A * ca * cb * cg - 4 * A * cg * cg +
                    4 * B2 * cb * cb + 2 * B2 - 4 * B * ca * ca -
                    8 * B * ca * cb * cg + 4 * ca * ca + 4 * cg * cg - 2;
  const double k1 = -4 * A2 * cb + 8 * A * B * cb + 4 * A * ca * cg +
                    8 * A * cb * cg * cg - 4 * A * cb - 4 * B2 * cb +
                    4 * B * ca * cg + 4 * B * cb - 4 * ca * cg;
  const double k0 = A2 - 2 * A * B - 4 * A * cg * cg + 2 * A + B2 - 2 * B + 1;

  if (std::abs(k4) < 1e-14) return {};

  std::vector<Pose> poses;
  for (double v : quartic_real_roots(k3 / k4, k2 / k4, k1 / k4, k0 / k4)) {
    if (v <= 0) continue;
    const double denom_b = 1.0 + v * v - 2.0 * v * cb;
    if (denom_b <= 1e-12) continue;
    const double u_den = 2.0 * (cg - v * ca);
    if (std::abs(u_den) < 1e-12) continue;
    const double u = ((A - B) * denom_b + 1.0 - v * v) / u_den;
    if (u <= 0) continue;

    const double s1 = b / std::sqrt(denom_b);
    const double s2 = u * s1;
    const double s3 = v * s1;

    CorrespondenceSet corr;
    corr.add(world[0], s1 * f1);
    corr.add(world[1], s2 * f2);
    corr.add(world[2], s3 * f3);
    try {
      poses.push_back(horn_align(corr, /*with_scale=*/false).pose);
    } catch (const DegenerateAlignment&) {
    }
  }
  return poses;
}

std::optional<PnPResult> pnp_ransac(const CameraModel& cam,
                                    const std::vector<Vec3>& world,
                                    const std::vector<Eigen::Vector2d>& pixel,
                                    const PnPRansacOptions& opts) {
  const std::size_t n = world.size();
  if (n < 3 || pixel.size() != n) return std::nullopt;

  std::vector<Vec3> bearings(n);
  for (std::size_t i = 0; i < n; ++i)
    bearings[i] = backproject(cam, pixel[i], 1.0).normalized();

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  auto count_inliers = [&](const Pose& pose, std::vector<bool>* mask) {
    int count = 0;
    const double tol2 = opts.inlier_tol_px * opts.inlier_tol_px;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 pc = pose * world[i];
      if (pc.z() <= 0) continue;
      const auto pr = project_camera_point(cam, pc);
      if ((pr.pixel - pixel[i]).squaredNorm() <= tol2) {
        if (mask) (*mask)[i] = true;
        ++count;
      }
    }
    return count;
  };

  int best_count = 0;
  Pose best_pose;
  for (int it = 0; it < opts.max_iters; ++it) {
    std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    for (const Pose& pose : solve_p3p({world[a], world[b], world[c]},
                                      {bearings[a], bearings[b], bearings[c]})) {
      const int count = count_inliers(pose, nullptr);
      if (count > best_count) {
        best_count = count;
        best_pose = pose;
      }
    }
  }

  if (best_count < std::max(opts.min_inliers, 3)) return std::nullopt;
  PnPResult result;
  result.pose = best_pose;
  result.inliers.assign(n, false);
  result.inlier_count = count_inliers(best_pose, &result.inliers);
  return result;
}

}  // namespace atlas
