#pragma once

// The running system: consumes summary / PGBA-report messages (plus fusion
// payloads and ground-truth sidecars) from an ordered record stream, drives
// the pose graph, triggers occupancy-aware fusion per target agent on
// immutable correction snapshots, computes trajectory metrics, and renders
// the deterministic run report. Replaying the same serialized stream yields
// byte-identical reports and map exports.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mags/fusion.hpp"
#include "mags/posegraph.hpp"
#include "mags/simworld.hpp"

namespace mags {

// --- Logging -----------------------------------------------------------------

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Threshold parsed once from MAGS_LOG_LEVEL in {error, warn, info, debug};
// defaults to warn, and unknown values fall back to warn.
LogLevel log_level();
// Overrides the environment lookup (used by tests and the CLI).
void set_log_level(LogLevel level);
// Writes "[mags] <msg>" to stderr when level <= the active threshold.
// Artifact bytes never depend on logging.
void log_line(LogLevel level, const std::string& msg);

// --- Trajectory metrics ------------------------------------------------------

enum class AlignMode { kSim3, kSe3 };

struct AteResult {
  double rmse_cm = 0.0;
  size_t matched = 0;
  Sim3 alignment;  // maps the estimate onto ground truth
};

// Nearest-timestamp association (within max_dt seconds), closed-form
// similarity alignment of matched positions (kSe3 keeps the rotation and
// re-solves the translation with unit scale), then the RMSE of aligned
// position residuals in centimeters. ATE is invariant to a common similarity
// applied to both trajectories in kSim3 mode. Throws std::invalid_argument
// when fewer than 3 poses match.
AteResult ate_rmse(const std::vector<TimedPose>& estimate, const std::vector<TimedPose>& truth,
                   AlignMode mode = AlignMode::kSim3, double max_dt = 0.02);

// --- Run configuration and report --------------------------------------------

struct RunConfig {
  bool strict = false;  // malformed records abort instead of being skipped
  int threads = 1;      // per-target fusion workers; results merge in agent order
  // handle.fallback left null wires in the coordinator's own NCC grid
  // matcher; salient patches alone rarely survive a real viewpoint change.
  HandleParams handle;
  FuseParams fuse;
  std::string out_dir;  // when non-empty, artifacts are written here
};

struct AgentReport {
  uint32_t agent_id = 0;
  size_t submaps = 0;
  size_t keyframes = 0;
  std::optional<double> ate_rmse_cm;  // absent without truth records
  size_t matched_poses = 0;
  // Geometric-mean correction scale relative to the lowest-id agent.
  std::optional<double> recovered_rel_scale;
  std::optional<double> true_rel_scale;
  size_t own_gaussians = 0;
  size_t fused_gaussians = 0;
  size_t borrowed_total = 0;
  size_t borrowed_retained = 0;
  size_t pruned = 0;
};

struct RunReport {
  size_t records = 0;
  size_t summaries = 0;
  size_t pgba_reports = 0;
  size_t payloads = 0;
  size_t truths = 0;
  size_t skipped = 0;  // lenient-mode rejects
  size_t nodes = 0;
  size_t temporal_edges = 0;
  size_t verified_edges = 0;      // live and valid at finish
  size_t new_verified_edges = 0;  // admitted over the whole run
  size_t reverified_edges = 0;
  size_t dropped_edges = 0;
  size_t rigid_rewrites = 0;
  size_t invalidations = 0;
  size_t fusion_runs = 0;  // per-target fusion executions
  int solver_evaluations = 0;
  double final_cost = 0.0;
  size_t global_gaussians = 0;
  // Fraction of true surface voxels (kCoverageVoxel) hit by the gauge-aligned
  // global map; absent without truth records or a computable alignment.
  std::optional<double> coverage;
  std::vector<AgentReport> agents;
};

// Voxel edge used for the coverage metric, independent of the fusion voxel.
inline constexpr double kCoverageVoxel = 0.10;

// Deterministic JSON with a fixed field order; absent optionals render null.
std::string report_to_json(const RunReport& report);

// One JSON line per retrieval candidate with its gate evaluations.
std::string audit_to_jsonl(const std::vector<CandidateLog>& audit);

// --- Coordinator -------------------------------------------------------------

class Coordinator {
 public:
  explicit Coordinator(const RunConfig& config = {});

  // Feeds one record in channel order. Summaries and rigidity reports drive
  // the pose graph; whenever the fusable set gains a member, fusion runs for
  // every target agent on a snapshot of the current corrections. Malformed
  // content (an undecodable payload, a non-increasing sequence number, an
  // unknown graph node, degenerate report centers) throws std::runtime_error
  // in strict mode and is otherwise counted, logged, and skipped.
  void consume(const StreamRecord& record);

  // Runs the final full fusion (per agent and the cross-agent global map),
  // computes metrics, writes artifacts when configured, and returns the
  // report. Call once, after the last record.
  RunReport finish();

  const PoseGraph& graph() const { return graph_; }
  const std::vector<CandidateLog>& audit() const { return audit_; }

 private:
  struct FusionInputs;
  void handle_message(const Message& message);
  void reject(const std::string& why);
  void absorb(const HandleResult& result);
  std::map<SubmapId, Sim3> corrections_snapshot() const;
  FuseResult fuse_target(uint32_t agent,
                         const std::map<SubmapId, Sim3>& snapshot) const;
  void run_fusions(const std::vector<uint32_t>& targets);

  RunConfig config_;
  NccGridMatcher dense_matcher_;
  PoseGraph graph_;
  std::map<SubmapId, FusionPayload> payloads_;
  std::map<SubmapId, TruthRecord> truths_;
  std::map<uint32_t, uint64_t> last_sequence_;
  std::set<SubmapId> fusable_;
  std::map<uint32_t, FuseResult> last_fusion_;
  std::vector<CandidateLog> audit_;
  RunReport report_;
  bool finished_ = false;
};

// Convenience wrappers: consume every record, then finish.
RunReport run_records(const std::vector<StreamRecord>& records, const RunConfig& config = {});
RunReport run_stream(const std::vector<uint8_t>& stream_bytes, const RunConfig& config = {});

}  // namespace mags
