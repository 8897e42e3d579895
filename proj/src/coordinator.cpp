#include "mags/coordinator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mags/registration.hpp"
#include "mags/voxel.hpp"
#include "mags/wire.hpp"

namespace mags {

namespace {

using ordered_json = nlohmann::ordered_json;

LogLevel parse_level(const char* text) {
  if (text == nullptr) return LogLevel::kWarn;
  const std::string s(text);
  if (s == "error") return LogLevel::kError;
  if (s == "warn") return LogLevel::kWarn;
  if (s == "info") return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

LogLevel& active_level() {
  static LogLevel level = parse_level(std::getenv("MAGS_LOG_LEVEL"));
  return level;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::kError:
      return "error";
    case LogLevel::kWarn:
      return "warn";
    case LogLevel::kInfo:
      return "info";
    default:
      return "debug";
  }
}

std::string id_string(const SubmapId& id) {
  return std::to_string(id.agent) + ":" + std::to_string(id.index);
}

const char* status_name(RegistrationOutcome::Status status) {
  switch (status) {
    case RegistrationOutcome::Status::kVerified:
      return "verified";
    case RegistrationOutcome::Status::kRejected:
      return "rejected";
    case RegistrationOutcome::Status::kInsufficientMatches:
      return "insufficient_matches";
    case RegistrationOutcome::Status::kEstimationFailed:
      return "estimation_failed";
    default:
      return "degenerate";
  }
}

ordered_json json_or_null(const std::optional<double>& v) {
  if (v.has_value()) return ordered_json(*v);
  return ordered_json(nullptr);
}

// Nearest-timestamp lookup over a trajectory sorted by timestamp.
size_t nearest_index(const std::vector<TimedPose>& sorted, double t) {
  const auto cmp = [](const TimedPose& a, double b) { return a.timestamp < b; };
  const size_t n = sorted.size();
  size_t hi = static_cast<size_t>(
      std::lower_bound(sorted.begin(), sorted.end(), t, cmp) - sorted.begin());
  if (hi == 0) return 0;
  if (hi == n) return n - 1;
  const double d_lo = t - sorted[hi - 1].timestamp;
  const double d_hi = sorted[hi].timestamp - t;
  return d_hi < d_lo ? hi : hi - 1;
}

}  // namespace

LogLevel log_level() { return active_level(); }

void set_log_level(LogLevel level) { active_level() = level; }

void log_line(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  std::fprintf(stderr, "[mags] %s: %s\n", level_name(level), msg.c_str());
}

AteResult ate_rmse(const std::vector<TimedPose>& estimate, const std::vector<TimedPose>& truth,
                   AlignMode mode, double max_dt) {
  std::vector<TimedPose> est = estimate;
  std::stable_sort(est.begin(), est.end(),
                   [](const TimedPose& a, const TimedPose& b) { return a.timestamp < b.timestamp; });

  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> tgt;
  if (!est.empty()) {
    for (const TimedPose& g : truth) {
      const size_t j = nearest_index(est, g.timestamp);
      if (std::abs(est[j].timestamp - g.timestamp) > max_dt) continue;
      src.push_back(est[j].pose.translation);
      tgt.push_back(g.pose.translation);
    }
  }
  if (src.size() < 3) {
    throw std::invalid_argument("ate_rmse: fewer than 3 matched poses (" +
                                std::to_string(src.size()) + ")");
  }

  Sim3 align = umeyama(src, tgt);
  if (mode == AlignMode::kSe3) {
    Eigen::Vector3d c_src = Eigen::Vector3d::Zero();
    Eigen::Vector3d c_tgt = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < src.size(); ++i) {
      c_src += src[i];
      c_tgt += tgt[i];
    }
    c_src /= static_cast<double>(src.size());
    c_tgt /= static_cast<double>(src.size());
    align = Sim3(1.0, align.rotation, c_tgt - align.rotation * c_src);
  }

  double sum_sq = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    sum_sq += (align * src[i] - tgt[i]).squaredNorm();
  }

  AteResult result;
  result.rmse_cm = std::sqrt(sum_sq / static_cast<double>(src.size())) * 100.0;
  result.matched = src.size();
  result.alignment = align;
  return result;
}

std::string report_to_json(const RunReport& report) {
  ordered_json j;
  j["records"] = report.records;
  j["summaries"] = report.summaries;
  j["pgba_reports"] = report.pgba_reports;
  j["payloads"] = report.payloads;
  j["truths"] = report.truths;
  j["skipped"] = report.skipped;
  j["nodes"] = report.nodes;
  j["temporal_edges"] = report.temporal_edges;
  j["verified_edges"] = report.verified_edges;
  j["new_verified_edges"] = report.new_verified_edges;
  j["reverified_edges"] = report.reverified_edges;
  j["dropped_edges"] = report.dropped_edges;
  j["rigid_rewrites"] = report.rigid_rewrites;
  j["invalidations"] = report.invalidations;
  j["fusion_runs"] = report.fusion_runs;
  j["solver_evaluations"] = report.solver_evaluations;
  j["final_cost"] = report.final_cost;
  j["global_gaussians"] = report.global_gaussians;
  j["coverage"] = json_or_null(report.coverage);
  ordered_json agents = ordered_json::array();
  for (const AgentReport& a : report.agents) {
    ordered_json ja;
    ja["agent_id"] = a.agent_id;
    ja["submaps"] = a.submaps;
    ja["keyframes"] = a.keyframes;
    ja["ate_rmse_cm"] = json_or_null(a.ate_rmse_cm);
    ja["matched_poses"] = a.matched_poses;
    ja["recovered_rel_scale"] = json_or_null(a.recovered_rel_scale);
    ja["true_rel_scale"] = json_or_null(a.true_rel_scale);
    ja["own_gaussians"] = a.own_gaussians;
    ja["fused_gaussians"] = a.fused_gaussians;
    ja["borrowed_total"] = a.borrowed_total;
    ja["borrowed_retained"] = a.borrowed_retained;
    ja["pruned"] = a.pruned;
    agents.push_back(std::move(ja));
  }
  j["agents"] = std::move(agents);
  return j.dump(2) + "\n";
}

std::string audit_to_jsonl(const std::vector<CandidateLog>& audit) {
  std::string out;
  for (const CandidateLog& c : audit) {
    ordered_json j;
    j["query"] = id_string(c.query);
    j["candidate"] = id_string(c.candidate);
    j["reverification"] = c.reverification;
    if (c.skipped_same_agent) {
      j["status"] = "skipped_same_agent";
    } else {
      j["status"] = status_name(c.outcome.status);
      j["tier1_matches"] = c.outcome.n_tier1_matches;
      j["correspondences"] = c.outcome.n_correspondences;
      j["dense_fallback"] = c.outcome.used_dense_fallback;
      if (c.outcome.estimate.has_value()) {
        j["scale"] = c.outcome.estimate->scale;
        j["inlier_rmse"] = c.outcome.estimate->inlier_rmse;
        j["icp_fitness"] = c.outcome.estimate->icp_fitness;
      }
      if (!c.outcome.failure_reason.empty()) j["failure_reason"] = c.outcome.failure_reason;
      ordered_json gates = ordered_json::array();
      for (const GateCheck& g : c.outcome.verification.gates) {
        ordered_json jg;
        jg["name"] = g.name;
        jg["value"] = g.value;
        jg["pass"] = g.pass;
        jg["constraint"] = g.constraint;
        gates.push_back(std::move(jg));
      }
      j["gates"] = std::move(gates);
    }
    out += j.dump();
    out += "\n";
  }
  return out;
}

Coordinator::Coordinator(const RunConfig& config) : config_(config) {
  if (config_.handle.fallback == nullptr) config_.handle.fallback = &dense_matcher_;
}

void Coordinator::consume(const StreamRecord& record) {
  if (finished_) throw std::logic_error("consume called after finish");
  ++report_.records;
  switch (record.kind) {
    case StreamRecord::Kind::kFusionPayload: {
      payloads_[{record.payload.agent_id, record.payload.submap_index}] = record.payload;
      ++report_.payloads;
      break;
    }
    case StreamRecord::Kind::kTruth: {
      truths_[{record.truth.agent_id, record.truth.submap_index}] = record.truth;
      ++report_.truths;
      break;
    }
    case StreamRecord::Kind::kMessage: {
      handle_message(record.message);
      break;
    }
    default:
      reject("unknown record kind " +
             std::to_string(static_cast<unsigned>(record.kind)));
  }
}

void Coordinator::handle_message(const Message& message) {
  const auto it = last_sequence_.find(message.agent_id);
  if (it != last_sequence_.end() && message.sequence <= it->second) {
    reject("agent " + std::to_string(message.agent_id) + " sequence " +
           std::to_string(message.sequence) + " not after " + std::to_string(it->second));
    return;
  }
  last_sequence_[message.agent_id] = message.sequence;

  if (message.kind != Message::Kind::kSummary && message.kind != Message::Kind::kPgbaReport) {
    reject("unknown message kind " +
           std::to_string(static_cast<unsigned>(message.kind)));
    return;
  }

  try {
    if (message.kind == Message::Kind::kSummary) {
      auto summary = std::make_shared<SubmapSummary>(decode_summary(message.payload));
      if (summary->agent_id != message.agent_id) {
        throw std::runtime_error("summary agent " + std::to_string(summary->agent_id) +
                                 " does not match message agent " +
                                 std::to_string(message.agent_id));
      }
      const SubmapId id{summary->agent_id, summary->submap_index};
      log_line(LogLevel::kInfo, "summary " + id_string(id));
      const HandleResult result = handle_summary(graph_, std::move(summary), config_.handle);
      ++report_.summaries;
      absorb(result);
    } else if (message.kind == Message::Kind::kPgbaReport) {
      const PgbaReport pgba = decode_pgba_report(message.payload);
      if (pgba.agent_id != message.agent_id) {
        throw std::runtime_error("report agent " + std::to_string(pgba.agent_id) +
                                 " does not match message agent " +
                                 std::to_string(message.agent_id));
      }
      const SubmapId id{pgba.agent_id, pgba.submap_index};
      if (graph_.find(id) == nullptr) {
        throw std::runtime_error("report for unknown node " + id_string(id));
      }
      const RigidityReport rigidity = fit_rigidity(id, pgba.pre_centers, pgba.post_centers);
      log_line(LogLevel::kInfo, "pgba report " + id_string(id) + " rho " +
                                    std::to_string(rigidity.rho_rig));
      const HandleResult result = handle_report(graph_, rigidity, config_.handle);
      ++report_.pgba_reports;
      if (result.rewrite.rigid) {
        ++report_.rigid_rewrites;
      } else {
        ++report_.invalidations;
      }
      absorb(result);
    }
  } catch (const std::runtime_error& e) {  // DecodeError and graph failures
    reject(e.what());
  } catch (const std::invalid_argument& e) {
    reject(e.what());
  }
}

void Coordinator::reject(const std::string& why) {
  const std::string msg = "record " + std::to_string(report_.records) + ": " + why;
  if (config_.strict) throw std::runtime_error(msg);
  ++report_.skipped;
  log_line(LogLevel::kWarn, "skipped " + msg);
}

void Coordinator::absorb(const HandleResult& result) {
  report_.new_verified_edges += result.new_verified_edges;
  report_.reverified_edges += result.reverified_edges;
  report_.dropped_edges += result.dropped_edges;
  report_.solver_evaluations += result.stats.evaluations;
  audit_.insert(audit_.end(), result.candidates.begin(), result.candidates.end());

  std::set<SubmapId> now(result.fusable.begin(), result.fusable.end());
  std::vector<SubmapId> gained;
  for (const SubmapId& id : now) {
    if (fusable_.count(id) == 0) gained.push_back(id);
  }
  fusable_ = std::move(now);
  if (gained.empty()) return;

  // A gained member is new borrowable material for every *other* agent; the
  // owner's own map is not gated on fusability and is rebuilt at finish.
  std::vector<uint32_t> targets;
  for (const SubmapNode& node : graph_.nodes) {
    const uint32_t a = node.id.agent;
    if (std::find(targets.begin(), targets.end(), a) != targets.end()) continue;
    for (const SubmapId& g : gained) {
      if (g.agent != a) {
        targets.push_back(a);
        break;
      }
    }
  }
  std::sort(targets.begin(), targets.end());
  run_fusions(targets);
}

std::map<SubmapId, Sim3> Coordinator::corrections_snapshot() const {
  std::map<SubmapId, Sim3> snapshot;
  for (const SubmapNode& node : graph_.nodes) snapshot[node.id] = node.correction;
  return snapshot;
}

FuseResult Coordinator::fuse_target(uint32_t agent,
                                    const std::map<SubmapId, Sim3>& snapshot) const {
  std::vector<Gaussian> target;
  std::vector<CarveKeyframe> carve;
  std::vector<BorrowedSubmap> borrowed;
  for (const auto& [id, correction] : snapshot) {
    const auto payload = payloads_.find(id);
    if (payload == payloads_.end()) continue;
    if (id.agent == agent) {
      for (const Gaussian& g : payload->second.gaussians) {
        target.push_back(transform_gaussian(g, correction));
      }
      for (const FusionKeyframe& kf : payload->second.keyframes) {
        CarveKeyframe ck;
        ck.pose = correction * kf.local_pose;
        ck.depth = kf.depth;
        ck.fx = kf.fx;
        ck.fy = kf.fy;
        ck.cx = kf.cx;
        ck.cy = kf.cy;
        ck.rendered = kf.rendered;
        ck.reference = kf.reference;
        carve.push_back(std::move(ck));
      }
    } else if (fusable_.count(id) != 0) {
      borrowed.push_back({id, correction, payload->second.gaussians});
    }
  }
  return fuse(target, borrowed, carve, config_.fuse);
}

void Coordinator::run_fusions(const std::vector<uint32_t>& targets) {
  if (targets.empty()) return;
  const std::map<SubmapId, Sim3> snapshot = corrections_snapshot();
  std::vector<FuseResult> results(targets.size());
  const size_t workers =
      std::min<size_t>(std::max(config_.threads, 1), targets.size());
  if (workers > 1) {
    std::vector<std::future<void>> futures;
    futures.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
      futures.push_back(std::async(std::launch::async, [this, w, workers, &targets, &snapshot,
                                                        &results] {
        for (size_t i = w; i < targets.size(); i += workers) {
          results[i] = fuse_target(targets[i], snapshot);
        }
      }));
    }
    for (auto& f : futures) f.get();
  } else {
    for (size_t i = 0; i < targets.size(); ++i) results[i] = fuse_target(targets[i], snapshot);
  }
  for (size_t i = 0; i < targets.size(); ++i) last_fusion_[targets[i]] = std::move(results[i]);
  report_.fusion_runs += targets.size();
  log_line(LogLevel::kDebug, "fusion ran for " + std::to_string(targets.size()) + " target(s)");
}

RunReport Coordinator::finish() {
  if (finished_) return report_;
  finished_ = true;

  const std::map<SubmapId, Sim3> snapshot = corrections_snapshot();

  std::vector<uint32_t> agents;
  for (const SubmapNode& node : graph_.nodes) {
    if (std::find(agents.begin(), agents.end(), node.id.agent) == agents.end()) {
      agents.push_back(node.id.agent);
    }
  }
  std::sort(agents.begin(), agents.end());

  run_fusions(agents);  // final full fusion per agent

  report_.nodes = graph_.nodes.size();
  report_.temporal_edges = 0;
  report_.verified_edges = 0;
  for (const GraphEdge& e : graph_.edges) {
    if (e.kind == EdgeKind::kTemporal) {
      ++report_.temporal_edges;
    } else if (e.valid) {
      ++report_.verified_edges;
    }
  }
  report_.final_cost = graph_.nodes.empty() ? 0.0 : total_cost(graph_, config_.handle.solve.cost);

  // Per-agent trajectories, metrics, and the correction-scale summary.
  struct AgentTraj {
    std::vector<TimedPose> est;
    std::vector<TimedPose> gt;
  };
  std::map<uint32_t, AgentTraj> trajectories;
  std::map<uint32_t, double> log_scale;       // mean log correction scale
  std::map<uint32_t, double> true_log_scale;  // from truth sidecars
  report_.agents.clear();
  for (const uint32_t agent : agents) {
    AgentReport ar;
    ar.agent_id = agent;
    AgentTraj& traj = trajectories[agent];
    double sum_log = 0.0;
    double sum_true_log = 0.0;
    size_t n_true = 0;
    for (const SubmapNode& node : graph_.nodes) {
      if (node.id.agent != agent) continue;
      ++ar.submaps;
      sum_log += std::log(node.correction.scale);
      const auto payload = payloads_.find(node.id);
      const auto truth = truths_.find(node.id);
      if (payload != payloads_.end()) {
        ar.keyframes += payload->second.keyframes.size();
        ar.own_gaussians += payload->second.gaussians.size();
      }
      if (truth != truths_.end()) {
        sum_true_log += std::log(truth->second.true_correction.scale);
        ++n_true;
      }
      if (payload == payloads_.end() || truth == truths_.end()) continue;
      const size_t n =
          std::min(payload->second.keyframes.size(), truth->second.keyframes.size());
      for (size_t k = 0; k < n; ++k) {
        const KeyframeTruth& kt = truth->second.keyframes[k];
        traj.est.push_back(
            {kt.timestamp, node.correction * payload->second.keyframes[k].local_pose});
        traj.gt.push_back({kt.timestamp, kt.world_pose});
      }
    }
    if (ar.submaps > 0) log_scale[agent] = sum_log / static_cast<double>(ar.submaps);
    if (n_true > 0) true_log_scale[agent] = sum_true_log / static_cast<double>(n_true);
    if (traj.est.size() >= 3) {
      try {
        const AteResult ate = ate_rmse(traj.est, traj.gt, AlignMode::kSim3);
        ar.ate_rmse_cm = ate.rmse_cm;
        ar.matched_poses = ate.matched;
      } catch (const DegeneracyError& e) {
        log_line(LogLevel::kWarn,
                 "agent " + std::to_string(agent) + " trajectory alignment: " + e.what());
      }
    }
    const auto fused = last_fusion_.find(agent);
    if (fused != last_fusion_.end()) {
      ar.fused_gaussians = fused->second.map.size();
      ar.borrowed_total = fused->second.borrowed_total;
      ar.borrowed_retained = fused->second.borrowed_retained;
      ar.pruned = fused->second.pruned;
    }
    report_.agents.push_back(std::move(ar));
  }
  if (!agents.empty()) {
    const uint32_t ref = agents.front();
    for (AgentReport& ar : report_.agents) {
      if (log_scale.count(ref) && log_scale.count(ar.agent_id)) {
        ar.recovered_rel_scale = std::exp(log_scale[ar.agent_id] - log_scale[ref]);
      }
      if (true_log_scale.count(ref) && true_log_scale.count(ar.agent_id)) {
        ar.true_rel_scale = std::exp(true_log_scale[ar.agent_id] - true_log_scale[ref]);
      }
    }
  }

  // Cross-agent global map: fold each agent's submaps into the accumulated
  // map as borrowed material, carving with every keyframe seen so far.
  std::vector<Gaussian> global_map;
  std::vector<CarveKeyframe> global_carve;
  for (const uint32_t agent : agents) {
    std::vector<BorrowedSubmap> borrowed;
    std::vector<CarveKeyframe> own_carve;
    for (const SubmapNode& node : graph_.nodes) {
      if (node.id.agent != agent) continue;
      const auto payload = payloads_.find(node.id);
      if (payload == payloads_.end()) continue;
      const Sim3& correction = snapshot.at(node.id);
      borrowed.push_back({node.id, correction, payload->second.gaussians});
      for (const FusionKeyframe& kf : payload->second.keyframes) {
        CarveKeyframe ck;
        ck.pose = correction * kf.local_pose;
        ck.depth = kf.depth;
        ck.fx = kf.fx;
        ck.fy = kf.fy;
        ck.cx = kf.cx;
        ck.cy = kf.cy;
        ck.rendered = kf.rendered;
        ck.reference = kf.reference;
        own_carve.push_back(std::move(ck));
      }
    }
    std::sort(borrowed.begin(), borrowed.end(),
              [](const BorrowedSubmap& a, const BorrowedSubmap& b) { return a.id < b.id; });
    FuseResult step = fuse(global_map, borrowed, global_carve, config_.fuse);
    global_map = std::move(step.map);
    global_carve.insert(global_carve.end(), std::make_move_iterator(own_carve.begin()),
                        std::make_move_iterator(own_carve.end()));
  }
  report_.global_gaussians = global_map.size();

  // Coverage: the global map lives in the gauge frame, so align it onto the
  // true world through the matched trajectories, then score the fraction of
  // true surface voxels its means touch.
  std::optional<Sim3> gauge_align;
  {
    std::vector<Eigen::Vector3d> est_pts;
    std::vector<Eigen::Vector3d> gt_pts;
    for (const auto& [agent, traj] : trajectories) {
      for (const TimedPose& tp : traj.est) est_pts.push_back(tp.pose.translation);
      for (const TimedPose& tp : traj.gt) gt_pts.push_back(tp.pose.translation);
    }
    if (est_pts.size() >= 3) {
      try {
        gauge_align = umeyama(est_pts, gt_pts);
      } catch (const DegeneracyError& e) {
        log_line(LogLevel::kWarn, std::string("gauge alignment: ") + e.what());
      }
    }
  }
  if (gauge_align.has_value()) {
    std::unordered_set<uint64_t> surface;
    for (const auto& [id, truth] : truths_) {
      const auto payload = payloads_.find(id);
      if (payload == payloads_.end()) continue;
      const size_t n = std::min(payload->second.keyframes.size(), truth.keyframes.size());
      for (size_t k = 0; k < n; ++k) {
        const FusionKeyframe& kf = payload->second.keyframes[k];
        const Sim3& world = truth.keyframes[k].world_pose;
        for (int y = 0; y < kf.depth.height; ++y) {
          for (int x = 0; x < kf.depth.width; ++x) {
            const float d = kf.depth.at(x, y);
            if (!(d > 0.0f)) continue;
            const double true_d = static_cast<double>(d) / truth.scale_error;
            const Eigen::Vector3d p_cam((x - kf.cx) / kf.fx * true_d,
                                        (y - kf.cy) / kf.fy * true_d, true_d);
            surface.insert(voxel_key(world * p_cam, kCoverageVoxel));
          }
        }
      }
    }
    if (!surface.empty()) {
      std::unordered_set<uint64_t> covered;
      covered.reserve(global_map.size() * 2);
      for (const Gaussian& g : global_map) {
        covered.insert(voxel_key(*gauge_align * g.mean, kCoverageVoxel));
      }
      size_t hit = 0;
      for (const uint64_t key : surface) hit += covered.count(key);
      report_.coverage = static_cast<double>(hit) / static_cast<double>(surface.size());
    }
  }

  if (!config_.out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path out(config_.out_dir);
    fs::create_directories(out);
    write_text_file((out / "report.json").string(), report_to_json(report_));
    write_text_file((out / "audit.jsonl").string(), audit_to_jsonl(audit_));
    write_text_file((out / "graph.json").string(), graph_to_json(graph_));
    write_ply((out / "map_global.ply").string(), global_map);
    for (const uint32_t agent : agents) {
      const std::string tag = "agent_" + std::to_string(agent);
      const auto fused = last_fusion_.find(agent);
      if (fused != last_fusion_.end()) {
        write_ply((out / ("map_" + tag + ".ply")).string(), fused->second.map);
      }
      const AgentTraj& traj = trajectories[agent];
      if (!traj.est.empty()) {
        write_text_file((out / ("traj_" + tag + "_est.tum")).string(), tum_to_string(traj.est));
        write_text_file((out / ("traj_" + tag + "_gt.tum")).string(), tum_to_string(traj.gt));
      }
    }
    log_line(LogLevel::kInfo, "artifacts written to " + out.string());
  }

  return report_;
}

RunReport run_records(const std::vector<StreamRecord>& records, const RunConfig& config) {
  Coordinator coordinator(config);
  for (const StreamRecord& record : records) coordinator.consume(record);
  return coordinator.finish();
}

RunReport run_stream(const std::vector<uint8_t>& stream_bytes, const RunConfig& config) {
  return run_records(decode_stream(stream_bytes), config);
}

}  // namespace mags
