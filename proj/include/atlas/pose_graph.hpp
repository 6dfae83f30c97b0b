#pragma once

#include <set>
#include <vector>

#include "atlas/map.hpp"

namespace atlas {

enum class EdgeKind { SpanningTree, Covisibility, Loop, Merge };

struct PoseGraphEdge {
  KfId i = 0;
  KfId j = 0;
  SimTransform t_ij;  // measured relative transform: t_ij ~= T_i^-1 * T_j
  EdgeKind kind = EdgeKind::SpanningTree;
};

/// Nodes carry camera-from-world transforms; scale stays 1 in SE(3) mode.
struct PoseGraph {
  std::map<KfId, SimTransform> nodes;
  std::vector<PoseGraphEdge> edges;
};

enum class GraphMode { SE3, Sim3 };

struct PoseGraphOptions {
  GraphMode mode = GraphMode::SE3;
  int max_iterations = 20;
  double rel_decrease_tol = 1e-9;
  double initial_lambda = 1e-6;
  double lambda_cap = 1e10;
};

struct PoseGraphReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Edge residual: [t; Log(R); log(s)] of t_ij^-1 * T_i^-1 * T_j.
Eigen::Matrix<double, 7, 1> pose_graph_residual(const PoseGraphEdge& e,
                                                const SimTransform& ti,
                                                const SimTransform& tj);

double pose_graph_cost(const PoseGraph& g, GraphMode mode);

bool pose_graph_connected(const PoseGraph& g);

/// Damped Gauss-Newton over the non-fixed nodes (numeric Jacobians);
/// the summed residual never increases. Throws on a disconnected graph or
/// empty fixed set.
PoseGraphReport pose_graph_optimize(PoseGraph& g, const std::set<KfId>& fixed,
                                    const PoseGraphOptions& opts = {});

/// Extracts the ORBSLAM-style essential graph from a map: spanning-tree
/// edges plus covisibility edges of weight >= min_covis_weight.
PoseGraph build_pose_graph(const SubMap& map, int min_covis_weight = 100);

/// Writes optimized node transforms back: keyframe poses take the new
/// values; each map point is carried through its first observing keyframe
/// (camera coordinates preserved).
void apply_pose_graph(SubMap& map, const PoseGraph& before,
                      const PoseGraph& after);

}  // namespace atlas
