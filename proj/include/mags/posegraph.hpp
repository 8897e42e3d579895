#pragma once

// Global Sim(3) submap graph: temporal and verified edges, geometric and
// anchor-photometric residuals with analytic Jacobians, a damped
// Gauss-Newton solver with a Levenberg-Marquardt trust region, the fusable
// gate, and the reactive rigidity-based edge rewrite rule.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mags/registration.hpp"
#include "mags/sim3.hpp"
#include "mags/summary.hpp"

namespace mags {

inline constexpr double kHuberGeo = 0.5;   // tangent-norm units
inline constexpr double kHuberPho = 0.1;   // intensity units
inline constexpr double kWeightTemporal = 5.0;
inline constexpr double kWeightVerified = 1.0;
inline constexpr double kWeightPho = 1.0;
inline constexpr int kPhoStride = 2;
inline constexpr size_t kMinPhoPixels = 64;
inline constexpr double kTauRes = 0.2;  // fusable residual gate
inline constexpr double kTauRig = 0.1;  // m, rigidity gate

// Huber kernel over the squared residual norm s = ||r||^2.
double huber(double s, double delta);
// d rho / d s, the IRLS weight.
double huber_weight(double s, double delta);

// r = log(M^-1 * C_tgt^-1 * C_src).
Vector7d geo_residual(const Sim3& measurement, const Sim3& c_src, const Sim3& c_tgt);

// Residual plus analytic Jacobians with respect to right-multiplicative
// perturbations C <- C * exp(eps) of each endpoint correction.
void geo_jacobians(const Sim3& measurement, const Sim3& c_src, const Sim3& c_tgt, Vector7d* r,
                   Matrix7d* j_src, Matrix7d* j_tgt);

// One cached photometric sample: source-anchor intensity and the
// back-projected point in the source submap frame.
struct PhoPixel {
  double intensity = 0.0;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

// The valid-pixel set U_e, frozen against the edge measurement: source
// anchor pixels on a stride grid with positive disparity whose warp under
// `measurement` lands in the target frame with positive depth and bilinear
// support.
std::vector<PhoPixel> build_pixel_cache(const AnchorKeyframe& src, const AnchorKeyframe& tgt,
                                        const Sim3& measurement, int stride = kPhoStride);

// Photometric residual over the cached pixels under the current
// corrections: r(u) = I_src(u) - I_tgt(project(warp(p_u))). Pixels that
// leave the frame (or lose positive depth) contribute exactly zero.
Eigen::VectorXd pho_residual(const std::vector<PhoPixel>& pixels, const AnchorKeyframe& tgt,
                             const Sim3& c_src, const Sim3& c_tgt);

// Residual plus per-pixel analytic Jacobian rows (chain rule through the
// warp, pinhole projection, and bilinear sampler), same conventions as
// geo_jacobians.
void pho_jacobians(const std::vector<PhoPixel>& pixels, const AnchorKeyframe& tgt,
                   const Sim3& c_src, const Sim3& c_tgt, Eigen::VectorXd* r,
                   Eigen::MatrixXd* j_src, Eigen::MatrixXd* j_tgt);

enum class EdgeKind { kTemporal, kVerified };

struct GraphEdge {
  EdgeKind kind = EdgeKind::kTemporal;
  SubmapId src;
  SubmapId tgt;
  Sim3 measurement;  // source submap frame -> target submap frame
  double weight = kWeightTemporal;
  double pho_weight = 0.0;
  bool valid = true;
  std::vector<PhoPixel> pixels;  // U_e cache, verified edges only
  bool pixel_cache_valid = false;
};

struct SubmapNode {
  SubmapId id;
  Sim3 correction;  // submap-local -> global
  std::shared_ptr<const SubmapSummary> summary;
  bool gauge = false;  // exactly one node; correction pinned to identity
  bool anchor_cache_valid = true;
};

class PoseGraph {
 public:
  // The first node added becomes the gauge anchor.
  SubmapNode& add_node(std::shared_ptr<const SubmapSummary> summary);
  // Temporal: consecutive submaps of one agent. Verified: distinct agents.
  GraphEdge& add_temporal_edge(const SubmapId& src, const SubmapId& tgt, const Sim3& measurement);
  GraphEdge& add_verified_edge(const SubmapId& src, const SubmapId& tgt, const Sim3& measurement);

  SubmapNode* find(const SubmapId& id);
  const SubmapNode* find(const SubmapId& id) const;
  // Throwing lookups for callers that require existence.
  SubmapNode& at(const SubmapId& id);
  const SubmapNode& at(const SubmapId& id) const;

  // Builds any missing U_e caches from current summaries and measurements.
  void ensure_pixel_caches();

  std::vector<SubmapNode> nodes;
  std::vector<GraphEdge> edges;
  // Endpoints of invalidated verified edges awaiting re-verification.
  std::vector<std::pair<SubmapId, SubmapId>> reverify_queue;

 private:
  std::map<SubmapId, size_t> index_;
};

struct CostParams {
  double geo_delta = kHuberGeo;
  double pho_delta = kHuberPho;
};

// Sum over valid edges of w_e rho(||r_geo||^2), plus (w_pho/|U_e|)
// rho(||r_pho||^2) for verified edges whose pixel set clears kMinPhoPixels.
double total_cost(PoseGraph& g, const CostParams& params = {});

struct SolveOptions {
  int max_evals = 200;
  double init_damping = 1e-4;
  double damping_up = 10.0;
  double damping_down = 0.5;
  double max_damping = 1e12;
  double step_tol = 1e-10;
  double rel_reduction_tol = 1e-12;
  CostParams cost;
};

struct SolveStats {
  int evaluations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool aborted_singular = false;
  std::vector<double> accepted_costs;  // monotone non-increasing
};

// Damped Gauss-Newton / LM trust region over all non-fixed corrections.
// The gauge node stays at identity; every connected component without the
// gauge holds its lowest (agent, index) node fixed instead. On a singular
// system at maximum damping, corrections are restored untouched.
SolveStats solve(PoseGraph& g, const SolveOptions& options = {});

// Nodes whose mean robust residual sqrt(rho(||r_geo||^2)) over incident
// valid edges is <= tau_res and that carry at least one valid verified
// edge. Sorted by (agent, index).
std::vector<SubmapId> fusable_set(PoseGraph& g, double tau_res = kTauRes,
                                  const CostParams& params = {});

struct RigidityReport {
  SubmapId node;
  Sim3 delta;            // pre -> post alignment of keyframe centers
  double rho_rig = 0.0;  // alignment RMSE, m
};

// Closed-form similarity alignment of pre/post keyframe centers; rho_rig
// is the post-fit RMSE. Throws DegeneracyError on degenerate centers.
RigidityReport fit_rigidity(const SubmapId& node, const std::vector<Eigen::Vector3d>& pre_centers,
                            const std::vector<Eigen::Vector3d>& post_centers);

// Returns a copy with all geometry carried through `delta`: cloud and
// salient positions, the AABB, and the anchor pose (disparity and
// intrinsics are untouched — the pose absorbs the scale).
SubmapSummary transform_summary(const SubmapSummary& s, const Sim3& delta);

struct RewriteResult {
  std::vector<size_t> updated_edges;      // indices into graph.edges
  std::vector<size_t> invalidated_edges;  // indices into graph.edges
  bool rigid = false;
  bool regauged = false;
};

// Reactive rewrite rule. rho_rig <= tau_rig: every incident edge absorbs
// delta analytically (M <- M * delta^-1 at the source side, M <- delta * M
// at the target side), the node's correction takes the companion update
// C <- C * delta^-1, its summary geometry is carried through delta, and if
// the node is the gauge the whole graph is re-gauged so the gauge stays at
// identity. rho_rig > tau_rig: incident verified edges are invalidated and
// queued for re-verification. Both branches drop the node's photometric
// caches. Throws std::out_of_range for an unknown node.
RewriteResult apply_pgba_rewrite(PoseGraph& g, const RigidityReport& report,
                                 double tau_rig = kTauRig);

struct HandleParams {
  MatchGates gates;
  VerificationThresholds thresholds;
  const DenseMatcher* fallback = nullptr;
  size_t retrieval_k = 3;
  double tau_sim = 0.30;
  SolveOptions solve;
  double tau_res = kTauRes;
  double tau_rig = kTauRig;
};

struct CandidateLog {
  SubmapId query;
  SubmapId candidate;
  bool skipped_same_agent = false;
  bool reverification = false;
  RegistrationOutcome outcome;
};

struct HandleResult {
  std::vector<SubmapId> fusable;
  SolveStats stats;
  size_t new_verified_edges = 0;
  size_t reverified_edges = 0;
  size_t dropped_edges = 0;  // failed re-verification, removed permanently
  RewriteResult rewrite;     // populated for rigidity reports
  std::vector<CandidateLog> candidates;
};

// Ingest one summary: add the node (warm-started from its predecessor),
// add the temporal edge, retry any queued re-verifications, run retrieval
// and the registration cascade against the catalog, then solve and gate.
HandleResult handle_summary(PoseGraph& g, std::shared_ptr<const SubmapSummary> s,
                            const HandleParams& params = {});

// Ingest one rigidity report: apply the rewrite rule, then solve and gate.
HandleResult handle_report(PoseGraph& g, const RigidityReport& report,
                           const HandleParams& params = {});

// Deterministic JSON export of nodes (corrections as 8 doubles) and edges
// for the inspect command.
std::string graph_to_json(const PoseGraph& g);

}  // namespace mags
