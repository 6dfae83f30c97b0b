#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "atlas/evaluation.hpp"
#include "atlas/map_io.hpp"
#include "atlas/simulator.hpp"
#include "atlas/system.hpp"

namespace fs = std::filesystem;
using namespace atlas;

namespace {

struct Overrides {
  std::optional<std::string> mode;  // "mono" | "stereo"
  std::optional<double> sigma_th;
  std::optional<int> theta_match;
  std::optional<int> n_reloc;
  std::optional<std::uint64_t> seed;
  bool deterministic = true;  // sequential pipeline; kept for interface parity
};

const char* outcome_name(FrameOutcome o) {
  switch (o) {
    case FrameOutcome::Bootstrapping: return "bootstrapping";
    case FrameOutcome::Tracked: return "tracked";
    case FrameOutcome::TrackedKeyframe: return "keyframe";
    case FrameOutcome::Lost: return "lost";
    case FrameOutcome::Relocalized: return "relocalized";
    case FrameOutcome::NewMapSpawned: return "new_map";
  }
  return "?";
}

SystemConfig make_config(const sim::SessionScript& session,
                         const Overrides& ov) {
  SystemConfig cfg;
  cfg.stereo = ov.mode ? (*ov.mode == "stereo") : session.stereo;
  if (ov.sigma_th) cfg.tracking.sigma_th = *ov.sigma_th;
  if (ov.theta_match) cfg.tracking.theta_match = *ov.theta_match;
  if (ov.n_reloc) cfg.tracking.n_reloc = *ov.n_reloc;
  cfg.merge.mode = cfg.stereo ? GraphMode::SE3 : GraphMode::Sim3;
  return cfg;
}

void write_session_log(const fs::path& path,
                       const std::vector<FrameRecord>& log, std::size_t begin,
                       std::size_t end) {
  std::ofstream os(path);
  os << std::setprecision(9);
  os << "frame,timestamp,outcome,map,ref_keyframe,n_matches,"
        "sigma_x,sigma_y,sigma_z\n";
  for (std::size_t i = begin; i < end; ++i) {
    const auto& r = log[i];
    os << (i - begin) << ',' << r.timestamp << ',' << outcome_name(r.outcome)
       << ',' << r.map_id << ',' << r.ref_keyframe << ',' << r.n_matches;
    for (int k = 0; k < 3; ++k) {
      os << ',';
      if (r.has_sigmas) os << r.sigmas[k];
    }
    os << '\n';
  }
}

void write_ply(const fs::path& path, const SubMap& map) {
  std::ofstream os(path);
  os << "ply\nformat ascii 1.0\nelement vertex " << map.points().size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "end_header\n";
  os << std::setprecision(9);
  for (const auto& [id, p] : map.points())
    os << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z()
       << '\n';
}

void write_merge_reports(const fs::path& path,
                         const std::vector<MergeReport>& merges) {
  std::ofstream os(path);
  os << "merged_map,putative_matches,ransac_inliers,guided_matches,"
        "fused_first_pass,fused_second_pass,welding_ba_final_cost,"
        "pgo_final_cost,candidate_score\n";
  os << std::setprecision(9);
  for (const auto& m : merges)
    os << m.merged_map << ',' << m.alignment.putative_matches << ','
       << m.alignment.ransac_inliers << ',' << m.alignment.guided_matches << ','
       << m.fused_first_pass << ',' << m.fused_second_pass << ','
       << m.welding_ba.final_cost << ',' << m.pgo.final_cost << ','
       << m.candidate_score << '\n';
}

void print_map_stats(std::ostream& os, const Atlas& atlas) {
  const auto stats = eval::map_stats(atlas);
  os << "maps: " << stats.maps.size() << " (active " << atlas.active_map_id()
     << ")\n";
  for (const auto& m : stats.maps)
    os << "  map " << m.id << ": " << m.keyframes << " keyframes, " << m.points
       << " points\n";
  os << "  total: " << stats.total_keyframes << " keyframes, "
     << stats.total_points << " points\n";
}

eval::Trajectory to_eval(const std::vector<TimedPoseEstimate>& traj) {
  eval::Trajectory out;
  for (const auto& e : traj) out.push_back({e.timestamp, e.t_cw});
  return out;
}

eval::Trajectory gt_of(const std::vector<sim::TimedPose>& poses) {
  eval::Trajectory out;
  for (const auto& p : poses) out.push_back({p.timestamp, p.t_cw});
  return out;
}

int run_scenarios(const std::vector<std::string>& script_paths,
                  const std::string& out_dir, const Overrides& ov,
                  bool print_stats_each_session) {
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  const sim::ScenarioScript first = sim::load_scenario(script_paths.front());
  const std::uint64_t world_seed = ov.seed ? *ov.seed : first.world_seed;
  const sim::SimWorld world =
      sim::generate_world(first.world_kind, first.world_landmarks, world_seed);
  const CameraModel cam =
      first.camera ? *first.camera : sim::default_camera();

  std::vector<Descriptor> descs;
  for (const auto& lm : world.landmarks) descs.push_back(lm.descriptor);
  VocabularyTree vocab = build_vocabulary(descs, 10, 3, world_seed);

  std::vector<sim::SessionScript> sessions;
  for (const auto& path : script_paths) {
    const auto sc =
        &path == &script_paths.front() ? first : sim::load_scenario(path);
    for (const auto& s : sc.sessions) sessions.push_back(s);
  }
  if (sessions.empty()) throw std::runtime_error("no sessions in scripts");

  std::optional<SlamSystem> system;
  eval::Trajectory gt_all;

  for (std::size_t si = 0; si < sessions.size(); ++si) {
    sim::SessionScript session = sessions[si];
    if (ov.seed) session.seed = *ov.seed + si;
    const SystemConfig cfg = make_config(session, ov);
    if (!system)
      system.emplace(cam, vocab, cfg);
    else
      system->start_new_map();

    const auto gt = sim::session_trajectory(session);
    const std::size_t log_begin = system->frame_log().size();

    for (int f = 0; f < int(gt.size()); ++f) {
      for (int mark : session.start_new_map_at)
        if (mark == f) system->start_new_map();
      const auto opts = sim::frame_render_options(session, f);
      const auto frame = sim::render_frame(world, cam, gt[f].t_cw,
                                           gt[f].timestamp, opts, session.seed,
                                           std::uint64_t(f));
      system->process_frame(frame);
    }

    eval::write_tum(out / (session.name + "_gt.tum"), gt_of(gt));
    write_session_log(out / (session.name + "_log.csv"), system->frame_log(),
                      log_begin, system->frame_log().size());
    for (const auto& p : gt) gt_all.push_back({p.timestamp, p.t_cw});

    if (print_stats_each_session) {
      std::cout << "after session '" << session.name << "':\n";
      print_map_stats(std::cout, system->atlas());
    }
  }

  eval::write_tum(out / "est.tum", to_eval(system->trajectory()));
  eval::write_tum(out / "gt.tum", gt_all);
  write_merge_reports(out / "merges.csv", system->merges());
  for (const auto& [id, map] : system->atlas().maps())
    write_ply(out / ("map_" + std::to_string(id) + ".ply"), map);
  save_atlas_file((out / "atlas.bin").string(), system->atlas());

  std::cout << "final ";
  print_map_stats(std::cout, system->atlas());
  std::cout << "merges: " << system->merges().size()
            << ", loop closures: " << system->loop_closures().size()
            << ", relocalizations: " << system->relocalization_count() << "\n";
  return 0;
}

std::vector<eval::SegmentSpec> parse_segments(const std::string& spec,
                                              bool default_scale) {
  std::vector<eval::SegmentSpec> out;
  std::istringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    eval::SegmentSpec seg;
    seg.with_scale = default_scale;
    std::istringstream is(item);
    std::string b, e, m;
    if (!std::getline(is, b, ':') || !std::getline(is, e, ':'))
      throw std::runtime_error("bad segment spec: " + item);
    seg.t_begin = std::stod(b);
    seg.t_end = std::stod(e);
    if (std::getline(is, m, ':')) seg.with_scale = (m == "sim3");
    out.push_back(seg);
  }
  if (out.empty()) throw std::runtime_error("empty segment spec");
  return out;
}

int run_evaluate(const std::string& est_path, const std::string& gt_path,
                 const std::string& mode, const std::string& segments,
                 const std::string& out_dir, double max_ate,
                 double min_coverage) {
  const auto est = eval::read_tum(est_path);
  const auto gt = eval::read_tum(gt_path);
  const bool with_scale = mode == "sim3";

  eval::AteResult r;
  if (!segments.empty())
    r = eval::segmented_ate(est, gt, parse_segments(segments, with_scale));
  else
    r = eval::align_and_ate(est, gt, with_scale);
  const double cov = eval::coverage(est, gt);

  std::cout << std::setprecision(6);
  std::cout << "frames matched : " << r.matched_frames << " / " << gt.size()
            << "\n"
            << "coverage       : " << cov << " %\n"
            << "ATE rmse       : " << r.rmse << " m\n"
            << "ATE mean       : " << r.mean << " m\n"
            << "ATE median     : " << r.median << " m\n"
            << "ATE max        : " << r.max << " m\n"
            << "alignment scale: " << r.alignment.scale << "\n";

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "ate_report.csv");
    os << std::setprecision(9);
    os << "metric,value\nrmse," << r.rmse << "\nmean," << r.mean << "\nmedian,"
       << r.median << "\nmax," << r.max << "\ncoverage," << cov
       << "\nmatched_frames," << r.matched_frames << '\n';
    std::ofstream oe(fs::path(out_dir) / "ate_errors.csv");
    oe << std::setprecision(9) << "error_m\n";
    for (double e : r.errors) oe << e << '\n';
  }

  if (max_ate > 0 && r.rmse > max_ate) {
    std::cerr << "ATE budget exceeded: " << r.rmse << " > " << max_ate << "\n";
    return 1;
  }
  if (min_coverage > 0 && cov < min_coverage) {
    std::cerr << "coverage below budget: " << cov << " < " << min_coverage
              << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-map SLAM backend: simulation, evaluation, multisession"};
  app.require_subcommand(1);

  Overrides ov;
  std::string mode_flag;
  app.add_option("--mode", mode_flag, "sensor mode: mono|stereo (overrides scripts)")
      ->check(CLI::IsMember({"mono", "stereo"}));
  double sigma_th = -1;
  app.add_option("--sigma-th", sigma_th,
                 "translation sigma bound of the observability gate, meters");
  int theta_match = -1;
  app.add_option("--theta-match", theta_match,
                 "minimum matched points for tracking");
  int n_reloc = -1;
  app.add_option("--n-reloc", n_reloc,
                 "failed relocalization frames before spawning a new map");
  std::uint64_t seed = 0;
  const auto seed_opt =
      app.add_option("--seed", seed, "overrides every script seed");
  app.add_flag("--deterministic", ov.deterministic,
               "fully sequential pipeline (default; flag kept for CI parity)");

  std::string out_dir = "out";

  auto* sim_cmd = app.add_subcommand("simulate", "run a scenario script");
  std::string script_path;
  sim_cmd->add_option("script", script_path, "scenario JSON")->required();
  sim_cmd->add_option("--out", out_dir, "output directory");

  auto* eval_cmd =
      app.add_subcommand("evaluate", "ATE/coverage of an estimate vs ground truth");
  std::string est_path, gt_path, eval_mode = "se3", segments;
  double max_ate = -1, min_coverage = -1;
  eval_cmd->add_option("estimate", est_path, "estimated trajectory (TUM)")
      ->required();
  eval_cmd->add_option("reference", gt_path, "ground-truth trajectory (TUM)")
      ->required();
  eval_cmd->add_option("--mode", eval_mode, "alignment: se3|sim3")
      ->check(CLI::IsMember({"se3", "sim3"}));
  eval_cmd->add_option("--segments", segments,
                       "independent alignment ranges: begin:end[:se3|sim3],...");
  eval_cmd->add_option("--out", out_dir, "report output directory")
      ->default_str("");
  eval_cmd->add_option("--max-ate", max_ate, "fail when RMS ATE exceeds this");
  eval_cmd->add_option("--min-coverage", min_coverage,
                       "fail when coverage %% is below this");

  auto* multi_cmd = app.add_subcommand(
      "multisession", "run several scenario scripts over one persistent atlas");
  std::vector<std::string> script_paths;
  multi_cmd->add_option("scripts", script_paths, "scenario JSONs")->required();
  multi_cmd->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (!mode_flag.empty()) ov.mode = mode_flag;
  if (sigma_th >= 0) ov.sigma_th = sigma_th;
  if (theta_match >= 0) ov.theta_match = theta_match;
  if (n_reloc >= 0) ov.n_reloc = n_reloc;
  if (seed_opt->count() > 0) ov.seed = seed;

  try {
    if (sim_cmd->parsed())
      return run_scenarios({script_path}, out_dir, ov, false);
    if (multi_cmd->parsed())
      return run_scenarios(script_paths, out_dir, ov, true);
    if (eval_cmd->parsed())
      return run_evaluate(est_path, gt_path, eval_mode, segments,
                          eval_cmd->count("--out") ? out_dir : "", max_ate,
                          min_coverage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
