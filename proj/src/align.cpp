#include "atlas/align.hpp"

#include <Eigen/SVD>
#include <random>

namespace atlas {

SimTransform horn_align(const CorrespondenceSet& c, bool with_scale) {
  const std::size_t n = c.size();
  if (n < 3 || c.target.size() != n)
    throw DegenerateAlignment("horn_align: need >= 3 pairs");

  Vec3 mu_src = Vec3::Zero(), mu_tgt = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_src += c.source[i];
    mu_tgt += c.target[i];
  }
  mu_src /= double(n);
  mu_tgt /= double(n);

  Mat3 cov = Mat3::Zero();
  double var_src = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = c.source[i] - mu_src;
    const Vec3 dt = c.target[i] - mu_tgt;
    cov += dt * ds.transpose();
    var_src += ds.squaredNorm();
  }
  cov /= double(n);
  var_src /= double(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Collinear (or coincident) sources leave the problem rank-deficient.
  if (sv(1) < 1e-9 * std::max(sv(0), 1e-300))
    throw DegenerateAlignment("horn_align: degenerate point configuration");

  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0)
    D(2, 2) = -1.0;

  SimTransform out;
  out.pose.rotation = svd.matrixU() * D * svd.matrixV().transpose();
  out.scale = with_scale ? (sv.dot(D.diagonal()) / var_src) : 1.0;
  if (out.scale <= 0)
    throw DegenerateAlignment("horn_align: non-positive scale");
  out.pose.translation = mu_tgt - out.scale * (out.pose.rotation * mu_src);
  return out;
}

RansacResult ransac_align(const CorrespondenceSet& putative, bool with_scale,
                          const RansacOptions& opts) {
  const std::size_t n = putative.size();
  if (n < 3) throw NoConsensus("ransac_align: fewer than 3 pairs");

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  int best_count = 0;
  std::vector<bool> best_mask;
  const double tol2 = opts.inlier_tol * opts.inlier_tol;

  for (int it = 0; it < opts.max_iters; ++it) {
    std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;

    CorrespondenceSet minimal;
    minimal.add(putative.source[a], putative.target[a]);
    minimal.add(putative.source[b], putative.target[b]);
    minimal.add(putative.source[c], putative.target[c]);

    SimTransform model;
    try {
      model = horn_align(minimal, with_scale);
    } catch (const DegenerateAlignment&) {
      continue;
    }

    int count = 0;
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if ((putative.target[i] - model * putative.source[i]).squaredNorm() <=
          tol2) {
        mask[i] = true;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
    }
  }

  if (best_count < std::max(opts.min_inliers, 3))
    throw NoConsensus("ransac_align: consensus below minimum");

  // Refit on the consensus set, then reclassify once against the refit model.
  CorrespondenceSet inlier_set;
  for (std::size_t i = 0; i < n; ++i)
    if (best_mask[i]) inlier_set.add(putative.source[i], putative.target[i]);

  RansacResult result;
  result.transform = horn_align(inlier_set, with_scale);
  result.inliers.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if ((putative.target[i] - result.transform * putative.source[i])
            .squaredNorm() <= tol2) {
      result.inliers[i] = true;
      ++result.inlier_count;
    }
  }
  return result;
}

}  // namespace atlas
