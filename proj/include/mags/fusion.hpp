#pragma once

// Occupancy-aware asynchronous map fusion: borrowed Gaussians move through
// graph corrections, the target agent's occupied/free voxel sets gate
// deduplication, and per-keyframe exposure models absorb radiometric drift.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "mags/sim3.hpp"
#include "mags/types.hpp"
#include "mags/voxel.hpp"

namespace mags {

inline constexpr double kFusionVoxel = 0.10;    // m
inline constexpr double kEnvelopeSigma = 1.0;   // +-k sigma occupancy envelope
inline constexpr float kMinOpacity = 0.005f;    // prune gate
inline constexpr int kCarvePixelStride = 16;    // 1-per-16-pixel sub-sampling
inline constexpr double kMaxRayLength = 8.0;    // m

struct OccupancyGrid {
  double voxel = kFusionVoxel;
  std::unordered_set<uint64_t> occupied;
  std::unordered_set<uint64_t> free;
};

struct ExposureModel {
  double a = 0.0;  // log-gain
  double b = 0.0;  // bias
  double gain() const { return std::exp(a); }
};

// mu' = sR mu + t, scales' = s * scales, rotation' = R o rotation
// (renormalized), opacity and color untouched; equivalently the covariance
// maps as Sigma' = s^2 R Sigma R^T.
Gaussian transform_gaussian(const Gaussian& g, const Sim3& c);

// Union over gaussians of every voxel intersecting the world-frame AABB of
// the rotated +-envelope*scales box around the mean.
std::unordered_set<uint64_t> build_occupied(const std::vector<Gaussian>& gaussians,
                                            double voxel = kFusionVoxel,
                                            double envelope = kEnvelopeSigma);

struct CarveKeyframe {
  Sim3 pose;     // camera -> fusion frame
  ImageF depth;  // meters along the camera z axis; values <= 0 are invalid
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  // Optional exposure-fit inputs; left empty the keyframe contributes a
  // default model.
  ImageF rendered;
  ImageF reference;
  MaskImage valid;  // empty = every pixel valid
};

// Free-space carving: for every `pixel_stride`-th pixel with valid depth,
// march from the camera center toward the back-projected endpoint in steps
// of voxel/2 over t in [0, 1) of min(ray length, max_ray), inserting every
// visited voxel. The endpoint voxel is reached only if an earlier step
// lands in it.
std::unordered_set<uint64_t> carve_free(const std::vector<CarveKeyframe>& keyframes,
                                        double voxel = kFusionVoxel,
                                        int pixel_stride = kCarvePixelStride,
                                        double max_ray = kMaxRayLength);

// A borrowed gaussian survives only if its mean's voxel is neither occupied
// by nor carved free by the target agent. Order-preserving and idempotent.
std::vector<Gaussian> dedup(const std::vector<Gaussian>& borrowed, const OccupancyGrid& grid);

// Least-squares gain/bias of reference ~ e^a * rendered + b over valid
// pixels. A constant rendered image leaves the gain indeterminate: a = 0 and
// b is the mean difference. A non-positive unconstrained gain is clamped to
// 1e-3 with the bias refit.
ExposureModel fit_exposure(const ImageF& rendered, const ImageF& reference,
                           const MaskImage& valid = {});

struct BorrowedSubmap {
  SubmapId id;
  Sim3 correction;                  // submap-local -> fusion frame
  std::vector<Gaussian> gaussians;  // submap-local
};

struct FuseParams {
  double voxel = kFusionVoxel;
  double envelope = kEnvelopeSigma;
  float min_opacity = kMinOpacity;
  int pixel_stride = kCarvePixelStride;
  double max_ray = kMaxRayLength;
};

struct FuseResult {
  std::vector<Gaussian> map;
  std::vector<ExposureModel> exposure;  // aligned with the keyframe list
  OccupancyGrid grid;                   // the grid the dedup ran against
  size_t borrowed_total = 0;
  size_t borrowed_retained = 0;
  size_t pruned = 0;  // sub-opacity gaussians dropped from the output
};

// Full per-target pipeline: transform borrowed gaussians by their
// corrections, build the target's occupancy grid, dedup, append what
// survives, prune low-opacity gaussians, and fit per-keyframe exposure.
FuseResult fuse(const std::vector<Gaussian>& target_map,
                const std::vector<BorrowedSubmap>& borrowed,
                const std::vector<CarveKeyframe>& keyframes, const FuseParams& params = {});

// Binary little-endian PLY: per vertex x/y/z, scale_0..2, rot_0..3 (w first),
// opacity as float32, red/green/blue as uint8.
std::string gaussians_to_ply(const std::vector<Gaussian>& gaussians);
void write_ply(const std::string& path, const std::vector<Gaussian>& gaussians);

// Sorted key lists ("occupied <n>" then keys ascending, "free <m>" likewise)
// for textual diffing.
std::string grid_to_text(const OccupancyGrid& grid);

}  // namespace mags
