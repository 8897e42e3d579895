#pragma once

// Submap summaries: the compact transmissible encoding of a frozen submap
// (global descriptor, salient points, registration cloud, AABB, anchor
// keyframe) plus saliency scoring, downsampling, and descriptor retrieval.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "mags/sim3.hpp"
#include "mags/types.hpp"

namespace mags {

inline constexpr size_t kMaxSalientPoints = 512;
inline constexpr size_t kMaxCloudPoints = 4096;
inline constexpr int kDescriptorDim = 128;
inline constexpr int kLocalDescriptorDim = 32;

using Descriptor = Eigen::Matrix<float, kDescriptorDim, 1>;
using LocalDescriptor = Eigen::Matrix<float, kLocalDescriptorDim, 1>;

struct AnchorKeyframe {
  Sim3 pose;         // submap-local camera-to-world, scale 1
  ImageF image;      // grayscale, values in [0, 1]
  ImageF disparity;  // inverse depth 1/m; 0 marks an invalid pixel
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

struct SalientPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // submap-local, meters
  LocalDescriptor descriptor = LocalDescriptor::Zero();
};

struct SubmapSummary {
  uint32_t agent_id = 0;
  uint32_t submap_index = 0;
  Descriptor descriptor = Descriptor::Zero();
  std::vector<SalientPoint> salient;
  std::vector<Eigen::Vector3d> cloud;  // registration cloud, submap-local
  Aabb aabb;
  AnchorKeyframe anchor;
  // Odometry measurement mapping this submap's local frame into the previous
  // submap's local frame; absent for an agent's first submap. Travels in the
  // wire header so the coordinator can build temporal edges.
  std::optional<Sim3> prev_odometry;

  SubmapId id() const { return {agent_id, submap_index}; }
};

// Throws std::invalid_argument when a summary violates its invariants
// (descriptor norm, caps, AABB containment, anchor dimensions/intrinsics).
void validate_summary(const SubmapSummary& s);

struct SaliencyWeights {
  double lambda_d = 0.35;  // disparity-gradient weight
  double lambda_f = 0.10;  // feature-magnitude weight
};

// sigma(u) = ||grad F||_u + lambda_d ||grad d||_u + lambda_F ||F||_u with
// central differences in the interior, one-sided at borders. `features` holds
// C channel planes of identical size (the simulator supplies C = 1).
ImageD score_saliency(const std::vector<ImageF>& features, const ImageF& disparity,
                      const SaliencyWeights& weights);

struct SalientPick {
  int pixel = 0;  // row-major index, the tie-break key
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double score = 0.0;
};

// The k highest-scoring pixels with valid positions, sorted by descending
// score, ties by ascending row-major pixel index.
std::vector<SalientPick> select_salient(const ImageD& score, const PointGrid& positions, size_t k);

// 32-D local descriptor: 8 wide x 4 tall intensity patch around (x, y)
// (clamped at borders), mean-removed and L2-normalized; an exactly flat patch
// yields the zero vector.
LocalDescriptor patch_descriptor(const ImageF& image, int x, int y);

// Voxel-grid downsampling: centroid per occupied voxel, capped at `cap` by
// keeping voxels in ascending 64-bit key order (output in that order).
std::vector<Eigen::Vector3d> voxel_downsample(const std::vector<Eigen::Vector3d>& points,
                                              double voxel, size_t cap = kMaxCloudPoints);

// Cosine similarity accumulated in double, for any fixed-size float vector.
template <int N>
double cosine_similarity(const Eigen::Matrix<float, N, 1>& a, const Eigen::Matrix<float, N, 1>& b) {
  return a.template cast<double>().dot(b.template cast<double>());
}

// Up to k catalog entries with cosine similarity >= tau_sim, descending
// similarity (ties by (agent_id, submap_index)), excluding same-agent
// summaries within 1 submap index of the query.
std::vector<const SubmapSummary*> retrieve(const SubmapSummary& query,
                                           const std::vector<const SubmapSummary*>& catalog,
                                           size_t k, double tau_sim);

}  // namespace mags
