#include "mags/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_map>

#include "mags/voxel.hpp"

namespace mags {
namespace {

// Portable bounded draw: rejection sampling against a power-of-two mask so
// results depend only on the engine sequence, not on library internals.
size_t bounded(std::mt19937_64& rng, size_t n) {
  uint64_t mask = n - 1;
  mask |= mask >> 1;
  mask |= mask >> 2;
  mask |= mask >> 4;
  mask |= mask >> 8;
  mask |= mask >> 16;
  mask |= mask >> 32;
  for (;;) {
    const uint64_t draw = rng() & mask;
    if (draw < n) return size_t(draw);
  }
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct Best2 {
  int index = -1;
  double best = -2.0;    // cosine lower bound is -1; -2 marks "none"
  double second = -2.0;  // -2 also stands in for "no second candidate"
};

bool pass_gates(const Best2& b, const MatchGates& g) {
  if (b.index < 0 || b.best < g.min_cosine) return false;
  if (b.second > -1.5) {  // a real second-best exists
    if (b.best > 0.0 && b.second / b.best > g.max_ratio) return false;
    if (b.best - b.second < g.min_margin) return false;
  }
  return true;
}

double rmse_under(const Sim3& t, const std::vector<Eigen::Vector3d>& src,
                  const std::vector<Eigen::Vector3d>& tgt) {
  if (src.empty()) return kNoRmse;
  double acc = 0.0;
  for (size_t i = 0; i < src.size(); ++i) acc += (tgt[i] - t * src[i]).squaredNorm();
  return std::sqrt(acc / double(src.size()));
}

// Uniform-grid nearest-neighbor index with cell size = search radius, so a
// query only ever touches the 27 cells around its own.
class GridIndex {
 public:
  GridIndex(const std::vector<Eigen::Vector3d>& points, double cell)
      : points_(points), cell_(cell) {
    for (size_t i = 0; i < points.size(); ++i) {
      cells_[voxel_key(points[i], cell_)].push_back(int(i));
    }
  }

  // Index of the nearest point within `cell_` of q, or -1.
  int nearest(const Eigen::Vector3d& q) const {
    const int64_t ix = voxel_index(q.x(), cell_);
    const int64_t iy = voxel_index(q.y(), cell_);
    const int64_t iz = voxel_index(q.z(), cell_);
    int best = -1;
    double best_d2 = cell_ * cell_;
    for (int64_t dx = -1; dx <= 1; ++dx) {
      for (int64_t dy = -1; dy <= 1; ++dy) {
        for (int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(pack_voxel_indices(ix + dx, iy + dy, iz + dz));
          if (it == cells_.end()) continue;
          for (const int i : it->second) {
            const double d2 = (points_[i] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && (best < 0 || i < best))) {
              best = i;
              best_d2 = d2;
            }
          }
        }
      }
    }
    return best;
  }

 private:
  const std::vector<Eigen::Vector3d>& points_;
  double cell_;
  std::unordered_map<uint64_t, std::vector<int>> cells_;
};

}  // namespace

CorrespondenceSet match(const SubmapSummary& src, const SubmapSummary& tgt,
                        const MatchGates& gates) {
  const size_t ns = src.salient.size(), nt = tgt.salient.size();
  CorrespondenceSet out;
  if (ns == 0 || nt == 0) return out;

  std::vector<Best2> fwd(ns), bwd(nt);
  for (size_t i = 0; i < ns; ++i) {
    for (size_t j = 0; j < nt; ++j) {
      const double sim = cosine_similarity(src.salient[i].descriptor, tgt.salient[j].descriptor);
      if (sim > fwd[i].best) {
        fwd[i].second = fwd[i].best;
        fwd[i].best = sim;
        fwd[i].index = int(j);
      } else if (sim > fwd[i].second) {
        fwd[i].second = sim;
      }
      if (sim > bwd[j].best) {
        bwd[j].second = bwd[j].best;
        bwd[j].best = sim;
        bwd[j].index = int(i);
      } else if (sim > bwd[j].second) {
        bwd[j].second = sim;
      }
    }
  }
  for (size_t i = 0; i < ns; ++i) {
    const int j = fwd[i].index;
    if (j < 0 || bwd[j].index != int(i)) continue;  // not mutual
    if (!pass_gates(fwd[i], gates) || !pass_gates(bwd[j], gates)) continue;
    Correspondence c;
    c.src_index = int(i);
    c.tgt_index = j;
    c.src = src.salient[i].position;
    c.tgt = tgt.salient[j].position;
    c.score = fwd[i].best;
    out.push_back(c);
  }
  return out;  // ascending source index by construction
}

Sim3 umeyama(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& tgt) {
  const size_t n = src.size();
  if (n != tgt.size()) throw DegeneracyError("umeyama: size mismatch");
  if (n < 3) throw DegeneracyError("umeyama: fewer than 3 pairs");

  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_t = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_t += tgt[i];
  }
  mu_s /= double(n);
  mu_t /= double(n);

  double var_s = 0.0;
  Eigen::Matrix3d gamma = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d ds = src[i] - mu_s, dt = tgt[i] - mu_t;
    var_s += ds.squaredNorm();
    gamma += dt * ds.transpose();
  }
  var_s /= double(n);
  gamma /= double(n);
  if (var_s <= 0.0) throw DegeneracyError("umeyama: zero source variance");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(gamma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(1) <= 1e-9 * sv(0)) {
    throw DegeneracyError("umeyama: cross-covariance rank below 2");
  }
  Eigen::Vector3d d(1.0, 1.0, 1.0);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2) = -1.0;
  const Eigen::Matrix3d r =
      svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  const double s = sv.dot(d) / var_s;
  if (s <= 0.0) throw DegeneracyError("umeyama: non-positive scale");
  return Sim3(s, Eigen::Quaterniond(r), mu_t - s * (r * mu_s));
}

Sim3Estimate ransac_umeyama(const CorrespondenceSet& m, uint64_t seed, int iters,
                            double inlier_dist) {
  if (m.size() < 3) throw EstimationError("ransac: fewer than 3 correspondences");
  std::mt19937_64 rng(splitmix64(seed));
  const size_t sample_size = std::min<size_t>(4, m.size());

  bool have_best = false;
  Sim3 best_t;
  size_t best_count = 0;
  double best_rmse = kNoRmse;
  std::vector<Eigen::Vector3d> hs(sample_size), ht(sample_size);

  for (int it = 0; it < iters; ++it) {
    size_t idx[4] = {0, 0, 0, 0};
    for (size_t k = 0; k < sample_size; ++k) {
      for (;;) {
        const size_t cand = bounded(rng, m.size());
        bool dup = false;
        for (size_t j = 0; j < k; ++j) dup |= (idx[j] == cand);
        if (!dup) {
          idx[k] = cand;
          break;
        }
      }
    }
    for (size_t k = 0; k < sample_size; ++k) {
      hs[k] = m[idx[k]].src;
      ht[k] = m[idx[k]].tgt;
    }
    Sim3 t;
    try {
      t = umeyama(hs, ht);
    } catch (const DegeneracyError&) {
      continue;
    }
    size_t count = 0;
    double acc = 0.0;
    for (const auto& c : m) {
      const double d2 = (c.tgt - t * c.src).squaredNorm();
      if (d2 <= inlier_dist * inlier_dist) {
        ++count;
        acc += d2;
      }
    }
    if (count < 3) continue;
    const double rmse = std::sqrt(acc / double(count));
    if (!have_best || count > best_count || (count == best_count && rmse < best_rmse)) {
      have_best = true;
      best_t = t;
      best_count = count;
      best_rmse = rmse;
    }
  }
  if (!have_best) throw EstimationError("ransac: no hypothesis reached 3 inliers");

  // Re-fit on the winning consensus set, then report the inliers of the
  // re-fit transform.
  std::vector<Eigen::Vector3d> cs, ct;
  for (const auto& c : m) {
    if ((c.tgt - best_t * c.src).squaredNorm() <= inlier_dist * inlier_dist) {
      cs.push_back(c.src);
      ct.push_back(c.tgt);
    }
  }
  Sim3 fit = best_t;
  try {
    fit = umeyama(cs, ct);
  } catch (const DegeneracyError&) {
    // Keep the hypothesis transform when the consensus set is degenerate.
  }
  Sim3Estimate e;
  e.transform = fit;
  e.scale = fit.scale;
  e.n_correspondences = m.size();
  for (const auto& c : m) {
    if ((c.tgt - fit * c.src).squaredNorm() <= inlier_dist * inlier_dist) {
      e.inlier_src.push_back(c.src);
      e.inlier_tgt.push_back(c.tgt);
    }
  }
  e.inlier_rmse = rmse_under(fit, e.inlier_src, e.inlier_tgt);
  return e;
}

IcpResult icp_refine(const Sim3& t0, const std::vector<Eigen::Vector3d>& src_cloud,
                     const std::vector<Eigen::Vector3d>& tgt_cloud, int iters, double max_corr) {
  IcpResult res;
  res.transform = t0;
  if (src_cloud.empty() || tgt_cloud.empty()) return res;

  const GridIndex index(tgt_cloud, max_corr);
  Sim3 t = t0;
  bool recorded = false;
  std::vector<Eigen::Vector3d> as, at;

  for (int it = 0; it < iters; ++it) {
    as.clear();
    at.clear();
    for (const auto& p : src_cloud) {
      const Eigen::Vector3d q = t * p;
      const int j = index.nearest(q);
      if (j >= 0) {
        as.push_back(p);
        at.push_back(tgt_cloud[j]);
      }
    }
    if (as.empty()) break;  // on entry: t0 with fitness 0

    const double rmse = rmse_under(t, as, at);
    if (recorded && rmse > res.rmse + 1e-12) break;  // keep the better state
    res.transform = t;
    res.fitness = double(as.size()) / double(src_cloud.size());
    res.rmse = rmse;
    res.iterations = it + 1;
    recorded = true;

    Sim3 next;
    try {
      next = umeyama(as, at);
    } catch (const DegeneracyError&) {
      break;
    }
    const double delta = log(t.inverse() * next).vec().norm();
    t = next;
    if (delta < 1e-8) {
      // Converged: record the refit state if the association agrees.
      const double final_rmse = rmse_under(t, as, at);
      if (final_rmse <= res.rmse + 1e-12) {
        res.transform = t;
        res.rmse = final_rmse;
      }
      break;
    }
  }
  return res;
}

double extent_ratio(const std::vector<Eigen::Vector3d>& inlier_src,
                    const std::vector<Eigen::Vector3d>& inlier_tgt, const Aabb& src_aabb,
                    const Aabb& tgt_aabb) {
  if (inlier_src.empty() || inlier_src.size() != inlier_tgt.size()) {
    throw DegeneracyError("extent_ratio: empty or mismatched inlier set");
  }
  const double ds = src_aabb.diagonal(), dt = tgt_aabb.diagonal();
  if (!(ds > 0.0) || !(dt > 0.0)) throw DegeneracyError("extent_ratio: zero summary diagonal");
  Aabb bs, bt;
  for (const auto& p : inlier_src) bs.expand(p);
  for (const auto& p : inlier_tgt) bt.expand(p);
  const double eta = std::min(bs.diagonal() / ds, bt.diagonal() / dt);
  return std::min(eta, 1.0);
}

VerificationReport verify(const Sim3Estimate& e, const VerificationThresholds& th) {
  VerificationReport rep;
  const double overlap =
      e.n_correspondences == 0
          ? 0.0
          : double(e.inlier_src.size()) / double(e.n_correspondences);
  char buf[64];

  std::snprintf(buf, sizeof buf, "s in (%g, %g)", th.scale_band_low, th.scale_band_high);
  rep.gates.push_back({"scale", e.scale,
                       e.scale > th.scale_band_low && e.scale < th.scale_band_high, buf});
  std::snprintf(buf, sizeof buf, ">= %d", th.min_inliers);
  rep.gates.push_back(
      {"inliers", double(e.inlier_src.size()), int(e.inlier_src.size()) >= th.min_inliers, buf});
  std::snprintf(buf, sizeof buf, ">= %g", th.min_overlap_ratio);
  rep.gates.push_back({"overlap", overlap, overlap >= th.min_overlap_ratio, buf});
  std::snprintf(buf, sizeof buf, "<= %g m", th.max_residual);
  rep.gates.push_back({"inlier_rmse", e.inlier_rmse, e.inlier_rmse <= th.max_residual, buf});
  std::snprintf(buf, sizeof buf, ">= %g", th.min_fitness);
  rep.gates.push_back({"fitness", e.icp_fitness, e.icp_fitness >= th.min_fitness, buf});
  std::snprintf(buf, sizeof buf, "<= %g m", th.max_rmse);
  rep.gates.push_back({"icp_rmse", e.icp_rmse, e.icp_rmse <= th.max_rmse, buf});
  std::snprintf(buf, sizeof buf, ">= %g", th.tau_ext);
  rep.gates.push_back({"extent", e.extent_ratio, e.extent_ratio >= th.tau_ext, buf});

  rep.pass = true;
  for (const auto& g : rep.gates) rep.pass &= g.pass;
  return rep;
}

CorrespondenceSet NccGridMatcher::match(const SubmapSummary& src, const SubmapSummary& tgt) const {
  struct Sample {
    LocalDescriptor desc;
    Eigen::Vector3d point;
  };
  const auto collect = [&](const AnchorKeyframe& a) {
    std::vector<Sample> out;
    for (int y = stride_ / 2; y < a.image.height; y += stride_) {
      for (int x = stride_ / 2; x < a.image.width; x += stride_) {
        const float d = a.disparity.at(x, y);
        if (!(d > 0.f)) continue;
        Sample s;
        s.desc = patch_descriptor(a.image, x, y);
        if (s.desc.norm() == 0.f) continue;  // flat patch carries no signal
        const double z = 1.0 / double(d);
        const Eigen::Vector3d ray((x - a.cx) / a.fx, (y - a.cy) / a.fy, 1.0);
        s.point = a.pose * (z * ray);
        out.push_back(std::move(s));
      }
    }
    return out;
  };
  const std::vector<Sample> ss = collect(src.anchor), ts = collect(tgt.anchor);

  CorrespondenceSet out;
  if (ss.empty() || ts.empty()) return out;
  std::vector<int> fwd(ss.size(), -1), bwd(ts.size(), -1);
  std::vector<double> fbest(ss.size(), -2.0), bbest(ts.size(), -2.0);
  for (size_t i = 0; i < ss.size(); ++i) {
    for (size_t j = 0; j < ts.size(); ++j) {
      const double ncc = cosine_similarity(ss[i].desc, ts[j].desc);
      if (ncc > fbest[i]) {
        fbest[i] = ncc;
        fwd[i] = int(j);
      }
      if (ncc > bbest[j]) {
        bbest[j] = ncc;
        bwd[j] = int(i);
      }
    }
  }
  for (size_t i = 0; i < ss.size(); ++i) {
    const int j = fwd[i];
    if (j < 0 || bwd[j] != int(i) || fbest[i] < min_ncc_) continue;
    Correspondence c;
    c.src_index = int(i);
    c.tgt_index = j;
    c.src = ss[i].point;
    c.tgt = ts[size_t(j)].point;
    c.score = fbest[i];
    out.push_back(c);
  }
  return out;
}

uint64_t pair_seed(const SubmapId& src, const SubmapId& tgt) {
  uint64_t h = splitmix64((uint64_t(src.agent) << 32) | src.index);
  h = splitmix64(h ^ ((uint64_t(tgt.agent) << 32) | tgt.index));
  return h;
}

RegistrationOutcome register_pair(const SubmapSummary& src, const SubmapSummary& tgt,
                                  const MatchGates& gates, const VerificationThresholds& th,
                                  const DenseMatcher* fallback) {
  RegistrationOutcome out;
  CorrespondenceSet corr = match(src, tgt, gates);
  out.n_tier1_matches = corr.size();
  if (int(corr.size()) < th.n_min && fallback != nullptr) {
    corr = fallback->match(src, tgt);
    out.used_dense_fallback = true;
  }
  out.n_correspondences = corr.size();
  if (int(corr.size()) < th.n_min) {
    out.status = RegistrationOutcome::Status::kInsufficientMatches;
    out.failure_reason = "insufficient matches";
    return out;
  }

  Sim3Estimate est;
  try {
    est = ransac_umeyama(corr, pair_seed(src.id(), tgt.id()), th.ransac_iters,
                         th.ransac_inlier_dist);
  } catch (const EstimationError& e) {
    out.status = RegistrationOutcome::Status::kEstimationFailed;
    out.failure_reason = e.what();
    return out;
  }

  const IcpResult icp = icp_refine(est.transform, src.cloud, tgt.cloud, 64, 0.20);
  est.transform = icp.transform;
  est.scale = icp.transform.scale;
  est.icp_fitness = icp.fitness;
  est.icp_rmse = icp.rmse;
  est.inlier_rmse = rmse_under(est.transform, est.inlier_src, est.inlier_tgt);
  try {
    est.extent_ratio = extent_ratio(est.inlier_src, est.inlier_tgt, src.aabb, tgt.aabb);
  } catch (const DegeneracyError& e) {
    out.status = RegistrationOutcome::Status::kDegenerate;
    out.failure_reason = e.what();
    out.estimate = est;
    return out;
  }

  out.estimate = est;
  out.verification = verify(est, th);
  out.status = out.verification.pass ? RegistrationOutcome::Status::kVerified
                                     : RegistrationOutcome::Status::kRejected;
  if (!out.verification.pass) out.failure_reason = "verification gates failed";
  return out;
}

}  // namespace mags
