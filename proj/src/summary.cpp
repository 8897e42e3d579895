#include "mags/summary.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mags/voxel.hpp"

namespace mags {

void validate_summary(const SubmapSummary& s) {
  const double norm = s.descriptor.cast<double>().norm();
  if (std::abs(norm - 1.0) > 1e-6) {
    throw std::invalid_argument("summary: descriptor not L2-normalized");
  }
  if (s.salient.size() > kMaxSalientPoints) {
    throw std::invalid_argument("summary: salient point cap exceeded");
  }
  if (s.cloud.size() > kMaxCloudPoints) {
    throw std::invalid_argument("summary: registration cloud cap exceeded");
  }
  if (s.aabb.empty() || !(s.aabb.min.array() <= s.aabb.max.array()).all()) {
    throw std::invalid_argument("summary: malformed aabb");
  }
  for (const auto& q : s.salient) {
    if (!s.aabb.contains(q.position, 1e-6)) {
      throw std::invalid_argument("summary: salient point outside aabb");
    }
  }
  for (const auto& p : s.cloud) {
    if (!s.aabb.contains(p, 1e-6)) {
      throw std::invalid_argument("summary: cloud point outside aabb");
    }
  }
  const auto& a = s.anchor;
  if (!a.image.same_size(a.disparity) || a.image.width <= 0 || a.image.height <= 0) {
    throw std::invalid_argument("summary: anchor image/disparity size mismatch");
  }
  if (!(a.fx > 0) || !(a.fy > 0) || !(a.cx < a.image.width) || !(a.cy < a.image.height)) {
    throw std::invalid_argument("summary: bad anchor intrinsics");
  }
  for (float d : a.disparity.data) {
    if (d < 0 || !std::isfinite(d)) {
      throw std::invalid_argument("summary: negative or non-finite disparity");
    }
  }
}

namespace {
// One-sided at borders, central (half-difference) in the interior.
inline void gradient_at(const ImageF& img, int x, int y, double& gx, double& gy) {
  if (x == 0) {
    gx = double(img.at(1, y)) - img.at(0, y);
  } else if (x == img.width - 1) {
    gx = double(img.at(x, y)) - img.at(x - 1, y);
  } else {
    gx = 0.5 * (double(img.at(x + 1, y)) - img.at(x - 1, y));
  }
  if (y == 0) {
    gy = double(img.at(x, 1)) - img.at(x, 0);
  } else if (y == img.height - 1) {
    gy = double(img.at(x, y)) - img.at(x, y - 1);
  } else {
    gy = 0.5 * (double(img.at(x, y + 1)) - img.at(x, y - 1));
  }
}
}  // namespace

ImageD score_saliency(const std::vector<ImageF>& features, const ImageF& disparity,
                      const SaliencyWeights& weights) {
  if (features.empty()) throw std::invalid_argument("score_saliency: no feature channels");
  for (const auto& ch : features) {
    if (!ch.same_size(disparity)) {
      throw std::invalid_argument("score_saliency: dimension mismatch");
    }
  }
  if (disparity.width < 2 || disparity.height < 2) {
    throw std::invalid_argument("score_saliency: image too small for gradients");
  }
  ImageD score(disparity.width, disparity.height);
  for (int y = 0; y < disparity.height; ++y) {
    for (int x = 0; x < disparity.width; ++x) {
      double grad_f_sq = 0.0, mag_f_sq = 0.0;
      for (const auto& ch : features) {
        double gx, gy;
        gradient_at(ch, x, y, gx, gy);
        grad_f_sq += gx * gx + gy * gy;
        mag_f_sq += double(ch.at(x, y)) * ch.at(x, y);
      }
      double dx, dy;
      gradient_at(disparity, x, y, dx, dy);
      score.at(x, y) = std::sqrt(grad_f_sq) + weights.lambda_d * std::sqrt(dx * dx + dy * dy) +
                       weights.lambda_f * std::sqrt(mag_f_sq);
    }
  }
  return score;
}

std::vector<SalientPick> select_salient(const ImageD& score, const PointGrid& positions,
                                        size_t k) {
  if (score.width != positions.width || score.height != positions.height) {
    throw std::invalid_argument("select_salient: dimension mismatch");
  }
  if (k > score.size()) {
    throw std::invalid_argument("select_salient: k exceeds pixel count");
  }
  std::vector<int> idx;
  idx.reserve(score.size());
  for (size_t i = 0; i < score.size(); ++i) {
    if (positions.valid[i]) idx.push_back(static_cast<int>(i));
  }
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (score.data[a] != score.data[b]) return score.data[a] > score.data[b];
    return a < b;
  });
  if (idx.size() > k) idx.resize(k);
  std::vector<SalientPick> out;
  out.reserve(idx.size());
  for (int i : idx) {
    out.push_back({i, positions.points[i], score.data[i]});
  }
  return out;
}

LocalDescriptor patch_descriptor(const ImageF& image, int x, int y) {
  // 8 wide x 4 tall window [x-3, x+4] x [y-1, y+2], border-replicated.
  LocalDescriptor d;
  int n = 0;
  double sum = 0.0;
  for (int dy = -1; dy <= 2; ++dy) {
    for (int dx = -3; dx <= 4; ++dx) {
      const int px = std::clamp(x + dx, 0, image.width - 1);
      const int py = std::clamp(y + dy, 0, image.height - 1);
      const float v = image.at(px, py);
      d[n++] = v;
      sum += v;
    }
  }
  d.array() -= static_cast<float>(sum / kLocalDescriptorDim);
  const float norm = d.norm();
  if (norm > 0) d /= norm;
  return d;
}

std::vector<Eigen::Vector3d> voxel_downsample(const std::vector<Eigen::Vector3d>& points,
                                              double voxel, size_t cap) {
  if (!(voxel > 0)) throw std::invalid_argument("voxel_downsample: voxel must be positive");
  struct Accum {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    size_t n = 0;
  };
  // Ordered map: the cap keeps voxels in ascending key order by contract.
  std::map<uint64_t, Accum> bins;
  for (const auto& p : points) {
    auto& a = bins[voxel_key(p, voxel)];
    a.sum += p;
    a.n += 1;
  }
  std::vector<Eigen::Vector3d> out;
  out.reserve(std::min(cap, bins.size()));
  for (const auto& [key, a] : bins) {
    if (out.size() == cap) break;
    out.push_back(a.sum / double(a.n));
  }
  return out;
}

std::vector<const SubmapSummary*> retrieve(const SubmapSummary& query,
                                           const std::vector<const SubmapSummary*>& catalog,
                                           size_t k, double tau_sim) {
  struct Scored {
    double sim;
    const SubmapSummary* s;
  };
  std::vector<Scored> scored;
  for (const SubmapSummary* s : catalog) {
    if (s->agent_id == query.agent_id) {
      const int64_t dl = int64_t(s->submap_index) - int64_t(query.submap_index);
      if (dl >= -1 && dl <= 1) continue;  // covered by the temporal edge
    }
    const double sim = cosine_similarity(query.descriptor, s->descriptor);
    if (sim >= tau_sim) scored.push_back({sim, s});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    if (a.s->agent_id != b.s->agent_id) return a.s->agent_id < b.s->agent_id;
    return a.s->submap_index < b.s->submap_index;
  });
  if (scored.size() > k) scored.resize(k);
  std::vector<const SubmapSummary*> out;
  out.reserve(scored.size());
  for (const auto& sc : scored) out.push_back(sc.s);
  return out;
}

}  // namespace mags
