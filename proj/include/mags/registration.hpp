#pragma once

// Inter-submap registration: descriptor matching, RANSAC-Umeyama similarity
// estimation, ICP refinement, and the verification cascade that turns a
// candidate pair of summaries into an accepted Sim(3) constraint.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mags/sim3.hpp"
#include "mags/summary.hpp"

namespace mags {

// Raised when input geometry cannot support the requested fit (collinear or
// coincident points, zero variance, empty extent boxes).
class DegeneracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when model search fails (too few correspondences, no consensus set).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Correspondence {
  int src_index = -1;
  int tgt_index = -1;
  Eigen::Vector3d src = Eigen::Vector3d::Zero();
  Eigen::Vector3d tgt = Eigen::Vector3d::Zero();
  double score = 0.0;
};

// Ordered by ascending source index; source indices are unique.
using CorrespondenceSet = std::vector<Correspondence>;

// Gates applied to descriptor matches, in both match directions.
struct MatchGates {
  double min_cosine = 0.55;  // absolute gate on the best similarity
  double max_ratio = 0.90;   // second-best / best
  double min_margin = 0.02;  // best - second-best
};

struct VerificationThresholds {
  double scale_band_low = 0.33;   // open interval
  double scale_band_high = 3.0;   // open interval
  int min_inliers = 12;
  double min_overlap_ratio = 0.25;  // |inliers| / |correspondences|
  double max_residual = 0.20;       // m, RMSE over inliers under the final transform
  double min_fitness = 0.25;        // ICP fitness
  double max_rmse = 0.20;           // m, ICP RMSE
  double tau_ext = 0.15;            // spatial-extent ratio floor
  int ransac_iters = 256;
  double ransac_inlier_dist = 0.15;  // m, inclusive
  int n_min = 20;                    // minimum correspondences before fallback
};

// Sentinel RMSE when no correspondences exist to measure one.
inline constexpr double kNoRmse = 1e30;

struct Sim3Estimate {
  Sim3 transform;  // source submap frame -> target submap frame
  std::vector<Eigen::Vector3d> inlier_src;
  std::vector<Eigen::Vector3d> inlier_tgt;
  double scale = 1.0;            // scale component of `transform`
  double inlier_rmse = kNoRmse;  // over the inlier set, under the final transform
  double icp_fitness = 0.0;      // fraction of source cloud with a correspondence
  double icp_rmse = kNoRmse;
  double extent_ratio = 0.0;
  size_t n_correspondences = 0;  // size of the set RANSAC consumed
};

struct GateCheck {
  std::string name;
  double value = 0.0;
  bool pass = false;
  std::string constraint;  // human-readable bound, e.g. "s in (0.33, 3)"
};

struct VerificationReport {
  bool pass = false;
  std::vector<GateCheck> gates;
};

// Mutual nearest-neighbor matching of salient points by local-descriptor
// cosine similarity, jointly gated in both directions. Deterministic,
// ordered by source index.
CorrespondenceSet match(const SubmapSummary& src, const SubmapSummary& tgt,
                        const MatchGates& gates = {});

// Closed-form similarity fit minimizing sum ||p_t - (s R p_s + t)||^2, with
// reflection handling through the sign-corrected SVD. Throws DegeneracyError
// for < 3 pairs, zero source variance, or a cross-covariance of rank < 2.
Sim3 umeyama(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& tgt);

// Seeded RANSAC around `umeyama`: 4-point hypotheses (3 when only 3 pairs
// exist), inliers within `inlier_dist` (inclusive), best model by inlier
// count with ties broken by lower inlier RMSE, final re-fit on the full
// inlier set. Throws EstimationError when no hypothesis reaches 3 inliers.
Sim3Estimate ransac_umeyama(const CorrespondenceSet& m, uint64_t seed, int iters = 256,
                            double inlier_dist = 0.15);

struct IcpResult {
  Sim3 transform;
  double fitness = 0.0;
  double rmse = kNoRmse;
  int iterations = 0;
};

// Point-to-point ICP alternating grid-indexed nearest-neighbor association
// (within max_corr under the current transform) with a full similarity
// re-fit. Stops at `iters`, on a parameter change below 1e-8, or when an
// association round would raise the RMSE (the previous state is kept).
// Zero associations on entry return T0 with fitness 0.
IcpResult icp_refine(const Sim3& t0, const std::vector<Eigen::Vector3d>& src_cloud,
                     const std::vector<Eigen::Vector3d>& tgt_cloud, int iters = 64,
                     double max_corr = 0.20);

// Spatial-extent ratio: min over the two sides of (inlier AABB diagonal /
// summary AABB diagonal), clamped to [0, 1]. Throws DegeneracyError on an
// empty inlier set or a zero summary diagonal.
double extent_ratio(const std::vector<Eigen::Vector3d>& inlier_src,
                    const std::vector<Eigen::Vector3d>& inlier_tgt, const Aabb& src_aabb,
                    const Aabb& tgt_aabb);

// Evaluates every gate (no short-circuiting) and reports each one.
VerificationReport verify(const Sim3Estimate& e, const VerificationThresholds& thresholds = {});

// Second-tier matcher used when salient matching yields too few pairs.
class DenseMatcher {
 public:
  virtual ~DenseMatcher() = default;
  virtual CorrespondenceSet match(const SubmapSummary& src, const SubmapSummary& tgt) const = 0;
};

// Default dense fallback: back-projects a coarse grid of anchor pixels with
// valid disparity and matches them across the two anchors by mean-removed
// patch correlation (mutual nearest neighbor above `min_ncc`).
class NccGridMatcher final : public DenseMatcher {
 public:
  explicit NccGridMatcher(int stride = 4, double min_ncc = 0.70)
      : stride_(stride), min_ncc_(min_ncc) {}
  CorrespondenceSet match(const SubmapSummary& src, const SubmapSummary& tgt) const override;

 private:
  int stride_;
  double min_ncc_;
};

// Deterministic RANSAC seed for a candidate pair, derived from the two
// submap identities so concurrent scheduling cannot change results.
uint64_t pair_seed(const SubmapId& src, const SubmapId& tgt);

struct RegistrationOutcome {
  enum class Status {
    kVerified,
    kRejected,             // estimate produced, verification gates failed
    kInsufficientMatches,  // both tiers below n_min
    kEstimationFailed,     // RANSAC found no consensus
    kDegenerate,           // geometry could not support a fit
  };
  Status status = Status::kInsufficientMatches;
  std::optional<Sim3Estimate> estimate;
  VerificationReport verification;  // populated when an estimate exists
  size_t n_tier1_matches = 0;
  size_t n_correspondences = 0;
  bool used_dense_fallback = false;
  std::string failure_reason;
};

// Full cascade: match (with dense fallback), RANSAC-Umeyama, ICP refinement
// on the summary clouds, extent ratio, verification. Never throws for data
// reasons; failures land in the outcome status and reason.
RegistrationOutcome register_pair(const SubmapSummary& src, const SubmapSummary& tgt,
                                  const MatchGates& gates = {},
                                  const VerificationThresholds& thresholds = {},
                                  const DenseMatcher* fallback = nullptr);

}  // namespace mags
