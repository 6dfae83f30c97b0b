#include "atlas/pose_graph.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace atlas {

Eigen::Matrix<double, 7, 1> pose_graph_residual(const PoseGraphEdge& e,
                                                const SimTransform& ti,
                                                const SimTransform& tj) {
  const SimTransform err = e.t_ij.inverse() * (ti.inverse() * tj);
  Eigen::Matrix<double, 7, 1> r;
  r.head<3>() = err.pose.translation;
  r.segment<3>(3) = log_so3(err.pose.rotation);
  r(6) = std::log(err.scale);
  return r;
}

double pose_graph_cost(const PoseGraph& g, GraphMode mode) {
  double cost = 0.0;
  for (const auto& e : g.edges) {
    auto r = pose_graph_residual(e, g.nodes.at(e.i), g.nodes.at(e.j));
    if (mode == GraphMode::SE3) r(6) = 0.0;
    cost += r.squaredNorm();
  }
  return cost;
}

bool pose_graph_connected(const PoseGraph& g) {
  if (g.nodes.empty()) return true;
  std::map<KfId, KfId> parent;
  for (const auto& [id, _] : g.nodes) parent[id] = id;
  std::function<KfId(KfId)> find = [&](KfId x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : g.edges) {
    if (!g.nodes.count(e.i) || !g.nodes.count(e.j)) continue;
    parent[find(e.i)] = find(e.j);
  }
  const KfId root = find(g.nodes.begin()->first);
  for (const auto& [id, _] : g.nodes)
    if (find(id) != root) return false;
  return true;
}

namespace {

SimTransform retract(const SimTransform& t,
                     const Eigen::Matrix<double, 7, 1>& delta) {
  SimTransform upd;
  upd.pose = exp_se3(Twist(Vec6(delta.head<6>())));
  upd.scale = std::exp(delta(6));
  SimTransform out = upd * t;
  out.pose.orthonormalize();
  return out;
}

}  // namespace

PoseGraphReport pose_graph_optimize(PoseGraph& g, const std::set<KfId>& fixed,
                                    const PoseGraphOptions& opts) {
  if (!pose_graph_connected(g))
    throw std::invalid_argument("pose_graph_optimize: disconnected graph");
  if (fixed.empty())
    throw std::invalid_argument("pose_graph_optimize: no fixed node");

  const int dof = opts.mode == GraphMode::Sim3 ? 7 : 6;

  std::vector<KfId> free_ids;
  std::map<KfId, int> index;
  for (const auto& [id, _] : g.nodes) {
    if (fixed.count(id)) continue;
    index[id] = int(free_ids.size());
    free_ids.push_back(id);
  }
  const int n = int(free_ids.size());

  PoseGraphReport report;
  double cost = pose_graph_cost(g, opts.mode);
  report.initial_cost = cost;
  if (n == 0) {
    report.final_cost = cost;
    return report;
  }

  double lambda = opts.initial_lambda;
  const double h = 1e-7;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    report.iterations = iter + 1;

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dof * n, dof * n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dof * n);

    for (const auto& e : g.edges) {
      const SimTransform& ti = g.nodes.at(e.i);
      const SimTransform& tj = g.nodes.at(e.j);
      Eigen::Matrix<double, 7, 1> r0 = pose_graph_residual(e, ti, tj);
      if (opts.mode == GraphMode::SE3) r0(6) = 0.0;

      // Numeric Jacobians w.r.t. the local retraction of each endpoint.
      auto jac_for = [&](bool wrt_i) {
        Eigen::MatrixXd J(7, dof);
        for (int k = 0; k < dof; ++k) {
          Eigen::Matrix<double, 7, 1> d = Eigen::Matrix<double, 7, 1>::Zero();
          d(k) = h;
          const SimTransform tp = retract(wrt_i ? ti : tj, d);
          auto rp = wrt_i ? pose_graph_residual(e, tp, tj)
                          : pose_graph_residual(e, ti, tp);
          if (opts.mode == GraphMode::SE3) rp(6) = 0.0;
          J.col(k) = (rp - r0) / h;
        }
        return J;
      };

      const bool fi = fixed.count(e.i) > 0, fj = fixed.count(e.j) > 0;
      Eigen::MatrixXd Ji, Jj;
      if (!fi) Ji = jac_for(true);
      if (!fj) Jj = jac_for(false);

      if (!fi) {
        const int bi = dof * index.at(e.i);
        H.block(bi, bi, dof, dof) += Ji.transpose() * Ji;
        b.segment(bi, dof) -= Ji.transpose() * r0;
      }
      if (!fj) {
        const int bj = dof * index.at(e.j);
        H.block(bj, bj, dof, dof) += Jj.transpose() * Jj;
        b.segment(bj, dof) -= Jj.transpose() * r0;
      }
      if (!fi && !fj) {
        const int bi = dof * index.at(e.i), bj = dof * index.at(e.j);
        H.block(bi, bj, dof, dof) += Ji.transpose() * Jj;
        H.block(bj, bi, dof, dof) += Jj.transpose() * Ji;
      }
    }

    bool accepted = false;
    while (!accepted && lambda <= opts.lambda_cap) {
      Eigen::MatrixXd Hd = H;
      for (int i = 0; i < dof * n; ++i) Hd(i, i) += lambda * (1.0 + H(i, i));
      Eigen::VectorXd delta = Hd.ldlt().solve(b);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      auto trial = g.nodes;
      for (int k = 0; k < n; ++k) {
        Eigen::Matrix<double, 7, 1> d = Eigen::Matrix<double, 7, 1>::Zero();
        d.head(dof) = delta.segment(dof * k, dof);
        trial.at(free_ids[k]) = retract(g.nodes.at(free_ids[k]), d);
      }
      PoseGraph tg{trial, g.edges};
      const double trial_cost = pose_graph_cost(tg, opts.mode);
      if (trial_cost <= cost) {
        const double rel = cost > 0 ? (cost - trial_cost) / cost : 0.0;
        g.nodes = std::move(trial);
        cost = trial_cost;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        if (rel < opts.rel_decrease_tol) iter = opts.max_iterations;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;  // damping cap: keep the best state found
  }

  report.final_cost = cost;
  return report;
}

PoseGraph build_pose_graph(const SubMap& map, int min_covis_weight) {
  PoseGraph g;
  for (const auto& [id, kf] : map.keyframes())
    g.nodes[id] = SimTransform::from_pose(kf.pose);

  auto add_edge = [&](KfId i, KfId j, EdgeKind kind) {
    PoseGraphEdge e;
    e.i = i;
    e.j = j;
    e.t_ij = g.nodes.at(i).inverse() * g.nodes.at(j);
    e.kind = kind;
    g.edges.push_back(e);
  };

  for (const auto& [id, _] : map.keyframes()) {
    const auto par = map.spanning_tree_parent(id);
    if (par && map.has_keyframe(*par)) add_edge(*par, id, EdgeKind::SpanningTree);
  }
  for (const auto& [a, b, w] : map.covisibility_edges())
    if (w >= min_covis_weight) add_edge(a, b, EdgeKind::Covisibility);
  return g;
}

void apply_pose_graph(SubMap& map, const PoseGraph& before,
                      const PoseGraph& after) {
  // Points ride with their first observing keyframe.
  for (const auto& [pid, p] : map.points()) {
    if (p.observations.empty()) continue;
    const KfId ref = p.observations.begin()->first;
    auto bit = before.nodes.find(ref);
    auto ait = after.nodes.find(ref);
    if (bit == before.nodes.end() || ait == after.nodes.end()) continue;
    const Vec3 cam_coords = bit->second * p.position;
    map.point(pid).position = ait->second.inverse() * cam_coords;
  }
  for (auto& [id, node] : after.nodes) {
    if (!map.has_keyframe(id)) continue;
    // Fold scale into translation: keyframe poses stay SE(3).
    Pose p = node.pose;
    p.translation /= node.scale;
    Pose adj;
    adj.rotation = p.rotation;
    adj.translation = p.translation;
    map.keyframe(id).pose = adj;
  }
}

}  // namespace atlas
