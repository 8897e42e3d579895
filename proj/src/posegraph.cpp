#include "mags/posegraph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

namespace mags {
namespace {

// d exp(eps) p / d eps for a right-multiplicative Sim(3) perturbation
// acting on a point: columns for (nu, omega, lambda).
Eigen::Matrix<double, 3, 7> point_jacobian(const Eigen::Vector3d& p) {
  Eigen::Matrix<double, 3, 7> d;
  d.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
  d.block<3, 3>(0, 3) = -hat(p);
  d.col(6) = p;
  return d;
}

struct BilinearSample {
  double value = 0.0;
  double du = 0.0;
  double dv = 0.0;
};

bool bilinear(const ImageF& img, double u, double v, BilinearSample* out) {
  const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
  if (x0 < 0 || y0 < 0 || x0 + 1 >= img.width || y0 + 1 >= img.height) return false;
  const double a = u - x0, b = v - y0;
  const double i00 = img.at(x0, y0), i10 = img.at(x0 + 1, y0);
  const double i01 = img.at(x0, y0 + 1), i11 = img.at(x0 + 1, y0 + 1);
  out->value = (1 - a) * (1 - b) * i00 + a * (1 - b) * i10 + (1 - a) * b * i01 + a * b * i11;
  out->du = (1 - b) * (i10 - i00) + b * (i11 - i01);
  out->dv = (1 - a) * (i01 - i00) + a * (i11 - i10);
  return true;
}

// Shared per-pixel evaluation for the photometric residual and Jacobians.
struct PixelEval {
  bool live = false;           // landed in-frame with positive depth
  double residual = 0.0;
  Eigen::Vector3d y = Eigen::Vector3d::Zero();     // warped point, target submap frame
  Eigen::RowVector3d dr_dq = Eigen::RowVector3d::Zero();  // d r / d camera point
};

PixelEval eval_pixel(const PhoPixel& px, const AnchorKeyframe& tgt, const Sim3& relative,
                     const Sim3& tgt_pose_inv, bool want_derivative) {
  PixelEval e;
  e.y = relative * px.point;
  const Eigen::Vector3d q = tgt_pose_inv * e.y;
  if (!(q.z() > 0.0)) return e;
  const double u = tgt.fx * q.x() / q.z() + tgt.cx;
  const double v = tgt.fy * q.y() / q.z() + tgt.cy;
  BilinearSample s;
  if (!bilinear(tgt.image, u, v, &s)) return e;
  e.live = true;
  e.residual = px.intensity - s.value;
  if (want_derivative) {
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << tgt.fx / q.z(), 0.0, -tgt.fx * q.x() / (q.z() * q.z()),
        0.0, tgt.fy / q.z(), -tgt.fy * q.y() / (q.z() * q.z());
    e.dr_dq = -(Eigen::RowVector2d(s.du, s.dv) * dpi);
  }
  return e;
}

double robust_edge_residual(const GraphEdge& e, const Sim3& c_src, const Sim3& c_tgt,
                            double geo_delta) {
  const double s = geo_residual(e.measurement, c_src, c_tgt).squaredNorm();
  return std::sqrt(huber(s, geo_delta));
}

}  // namespace

double huber(double s, double delta) {
  const double d2 = delta * delta;
  return s <= d2 ? s : 2.0 * delta * std::sqrt(s) - d2;
}

double huber_weight(double s, double delta) {
  const double d2 = delta * delta;
  return s <= d2 ? 1.0 : delta / std::sqrt(s);
}

Vector7d geo_residual(const Sim3& measurement, const Sim3& c_src, const Sim3& c_tgt) {
  return log(measurement.inverse() * c_tgt.inverse() * c_src).vec();
}

void geo_jacobians(const Sim3& measurement, const Sim3& c_src, const Sim3& c_tgt, Vector7d* r,
                   Matrix7d* j_src, Matrix7d* j_tgt) {
  const Vector7d r0 = geo_residual(measurement, c_src, c_tgt);
  if (r) *r = r0;
  // Right perturbation of C_src: r(eps) = log(exp(r0) exp(eps)).
  if (j_src) *j_src = jr_inv(Sim3Tangent(r0));
  // Right perturbation of C_tgt: r(eps) = log(exp(-Ad_{M^-1} eps) exp(r0)),
  // and the left Jacobian inverse at r0 is the right one at -r0.
  if (j_tgt) {
    *j_tgt = -jr_inv(Sim3Tangent(Vector7d(-r0))) * adjoint_matrix(measurement.inverse());
  }
}

std::vector<PhoPixel> build_pixel_cache(const AnchorKeyframe& src, const AnchorKeyframe& tgt,
                                        const Sim3& measurement, int stride) {
  std::vector<PhoPixel> out;
  const Sim3 tgt_pose_inv = tgt.pose.inverse();
  for (int y = 0; y < src.image.height; y += stride) {
    for (int x = 0; x < src.image.width; x += stride) {
      const float d = src.disparity.at(x, y);
      if (!(d > 0.f)) continue;
      const double z = 1.0 / double(d);
      const Eigen::Vector3d ray((x - src.cx) / src.fx, (y - src.cy) / src.fy, 1.0);
      PhoPixel px;
      px.intensity = src.image.at(x, y);
      px.point = src.pose * (z * ray);
      if (eval_pixel(px, tgt, measurement, tgt_pose_inv, false).live) out.push_back(px);
    }
  }
  return out;
}

Eigen::VectorXd pho_residual(const std::vector<PhoPixel>& pixels, const AnchorKeyframe& tgt,
                             const Sim3& c_src, const Sim3& c_tgt) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(long(pixels.size()));
  const Sim3 relative = c_tgt.inverse() * c_src;
  const Sim3 tgt_pose_inv = tgt.pose.inverse();
  for (size_t i = 0; i < pixels.size(); ++i) {
    r[long(i)] = eval_pixel(pixels[i], tgt, relative, tgt_pose_inv, false).residual;
  }
  return r;
}

void pho_jacobians(const std::vector<PhoPixel>& pixels, const AnchorKeyframe& tgt,
                   const Sim3& c_src, const Sim3& c_tgt, Eigen::VectorXd* r,
                   Eigen::MatrixXd* j_src, Eigen::MatrixXd* j_tgt) {
  const long n = long(pixels.size());
  if (r) *r = Eigen::VectorXd::Zero(n);
  if (j_src) *j_src = Eigen::MatrixXd::Zero(n, 7);
  if (j_tgt) *j_tgt = Eigen::MatrixXd::Zero(n, 7);
  const Sim3 relative = c_tgt.inverse() * c_src;
  const Sim3 tgt_pose_inv = tgt.pose.inverse();
  const Eigen::Matrix3d lt = tgt_pose_inv.linear();
  const Eigen::Matrix3d lg = relative.linear();
  for (long i = 0; i < n; ++i) {
    const PixelEval e = eval_pixel(pixels[size_t(i)], tgt, relative, tgt_pose_inv, true);
    if (!e.live) continue;
    if (r) (*r)[i] = e.residual;
    if (j_src) j_src->row(i) = e.dr_dq * lt * lg * point_jacobian(pixels[size_t(i)].point);
    if (j_tgt) j_tgt->row(i) = -e.dr_dq * lt * point_jacobian(e.y);
  }
}

SubmapNode& PoseGraph::add_node(std::shared_ptr<const SubmapSummary> summary) {
  if (!summary) throw std::invalid_argument("add_node: null summary");
  const SubmapId id = summary->id();
  if (index_.count(id)) throw std::invalid_argument("add_node: duplicate node");
  SubmapNode n;
  n.id = id;
  n.summary = std::move(summary);
  n.gauge = nodes.empty();
  index_[id] = nodes.size();
  nodes.push_back(std::move(n));
  return nodes.back();
}

GraphEdge& PoseGraph::add_temporal_edge(const SubmapId& src, const SubmapId& tgt,
                                        const Sim3& measurement) {
  if (src.agent != tgt.agent || std::abs(int(src.index) - int(tgt.index)) != 1) {
    throw std::invalid_argument("temporal edge must join consecutive submaps of one agent");
  }
  at(src);
  at(tgt);
  GraphEdge e;
  e.kind = EdgeKind::kTemporal;
  e.src = src;
  e.tgt = tgt;
  e.measurement = measurement;
  e.weight = kWeightTemporal;
  e.pho_weight = 0.0;
  edges.push_back(std::move(e));
  return edges.back();
}

GraphEdge& PoseGraph::add_verified_edge(const SubmapId& src, const SubmapId& tgt,
                                        const Sim3& measurement) {
  if (src.agent == tgt.agent) {
    throw std::invalid_argument("verified edge must join distinct agents");
  }
  at(src);
  at(tgt);
  GraphEdge e;
  e.kind = EdgeKind::kVerified;
  e.src = src;
  e.tgt = tgt;
  e.measurement = measurement;
  e.weight = kWeightVerified;
  e.pho_weight = kWeightPho;
  edges.push_back(std::move(e));
  return edges.back();
}

SubmapNode* PoseGraph::find(const SubmapId& id) {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &nodes[it->second];
}

const SubmapNode* PoseGraph::find(const SubmapId& id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &nodes[it->second];
}

SubmapNode& PoseGraph::at(const SubmapId& id) {
  SubmapNode* n = find(id);
  if (!n) throw std::out_of_range("unknown submap node");
  return *n;
}

const SubmapNode& PoseGraph::at(const SubmapId& id) const {
  const SubmapNode* n = find(id);
  if (!n) throw std::out_of_range("unknown submap node");
  return *n;
}

void PoseGraph::ensure_pixel_caches() {
  for (auto& e : edges) {
    if (e.kind != EdgeKind::kVerified || !e.valid || e.pixel_cache_valid) continue;
    const SubmapNode& s = at(e.src);
    const SubmapNode& t = at(e.tgt);
    e.pixels = build_pixel_cache(s.summary->anchor, t.summary->anchor, e.measurement);
    e.pixel_cache_valid = true;
  }
  for (auto& n : nodes) n.anchor_cache_valid = true;
}

double total_cost(PoseGraph& g, const CostParams& params) {
  g.ensure_pixel_caches();
  double cost = 0.0;
  for (const auto& e : g.edges) {
    if (!e.valid) continue;
    const Sim3& cs = g.at(e.src).correction;
    const Sim3& ct = g.at(e.tgt).correction;
    cost += e.weight * huber(geo_residual(e.measurement, cs, ct).squaredNorm(), params.geo_delta);
    if (e.kind == EdgeKind::kVerified && e.pixels.size() >= kMinPhoPixels) {
      const Eigen::VectorXd r = pho_residual(e.pixels, g.at(e.tgt).summary->anchor, cs, ct);
      cost += (e.pho_weight / double(e.pixels.size())) * huber(r.squaredNorm(), params.pho_delta);
    }
  }
  return cost;
}

namespace {

// Connected components over valid edges; each component elects its fixed
// node (the gauge when present, else the lowest id).
std::vector<size_t> fixed_nodes(const PoseGraph& g) {
  const size_t n = g.nodes.size();
  std::vector<int> comp(n, -1);
  std::map<SubmapId, size_t> index;
  for (size_t i = 0; i < n; ++i) index[g.nodes[i].id] = i;
  std::vector<std::vector<size_t>> adj(n);
  for (const auto& e : g.edges) {
    if (!e.valid) continue;
    const size_t a = index.at(e.src), b = index.at(e.tgt);
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  int n_comp = 0;
  for (size_t seed = 0; seed < n; ++seed) {
    if (comp[seed] >= 0) continue;
    std::vector<size_t> stack{seed};
    comp[seed] = n_comp;
    while (!stack.empty()) {
      const size_t u = stack.back();
      stack.pop_back();
      for (const size_t v : adj[u]) {
        if (comp[v] < 0) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
      }
    }
    ++n_comp;
  }
  std::vector<int> pick(size_t(n_comp), -1);
  for (size_t i = 0; i < n; ++i) {
    const int c = comp[i];
    if (g.nodes[i].gauge) {
      pick[size_t(c)] = int(i);
    } else if (pick[size_t(c)] < 0 ||
               (!g.nodes[size_t(pick[size_t(c)])].gauge && g.nodes[i].id < g.nodes[size_t(pick[size_t(c)])].id)) {
      pick[size_t(c)] = int(i);
    }
  }
  std::vector<size_t> out;
  for (const int i : pick) out.push_back(size_t(i));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SolveStats solve(PoseGraph& g, const SolveOptions& opt) {
  SolveStats stats;
  if (g.nodes.empty()) return stats;
  g.ensure_pixel_caches();

  const std::vector<size_t> fixed = fixed_nodes(g);
  std::vector<long> var_base(g.nodes.size(), -1);
  long n_var = 0;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (!std::binary_search(fixed.begin(), fixed.end(), i)) {
      var_base[i] = n_var;
      n_var += 7;
    }
  }
  std::map<SubmapId, size_t> index;
  for (size_t i = 0; i < g.nodes.size(); ++i) index[g.nodes[i].id] = i;

  const std::vector<Sim3> initial = [&] {
    std::vector<Sim3> c;
    for (const auto& n : g.nodes) c.push_back(n.correction);
    return c;
  }();

  double cost = total_cost(g, opt.cost);
  stats.evaluations = 1;
  stats.initial_cost = cost;
  stats.accepted_costs.push_back(cost);
  double lambda = opt.init_damping;

  while (n_var > 0 && stats.evaluations < opt.max_evals) {
    // Linearize at the current corrections.
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n_var, n_var);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n_var);
    for (auto& e : g.edges) {
      if (!e.valid) continue;
      const size_t si = index.at(e.src), ti = index.at(e.tgt);
      const Sim3& cs = g.nodes[si].correction;
      const Sim3& ct = g.nodes[ti].correction;
      const long vs = var_base[si], vt = var_base[ti];

      Vector7d r;
      Matrix7d js, jt;
      geo_jacobians(e.measurement, cs, ct, &r, &js, &jt);
      const double w = e.weight * huber_weight(r.squaredNorm(), opt.cost.geo_delta);
      if (vs >= 0) {
        h.block<7, 7>(vs, vs) += w * js.transpose() * js;
        b.segment<7>(vs) += w * js.transpose() * r;
      }
      if (vt >= 0) {
        h.block<7, 7>(vt, vt) += w * jt.transpose() * jt;
        b.segment<7>(vt) += w * jt.transpose() * r;
      }
      if (vs >= 0 && vt >= 0) {
        h.block<7, 7>(vs, vt) += w * js.transpose() * jt;
        h.block<7, 7>(vt, vs) += w * jt.transpose() * js;
      }

      if (e.kind == EdgeKind::kVerified && e.pixels.size() >= kMinPhoPixels) {
        Eigen::VectorXd rp;
        Eigen::MatrixXd jps, jpt;
        pho_jacobians(e.pixels, g.nodes[ti].summary->anchor, cs, ct, &rp, &jps, &jpt);
        const double wp = (e.pho_weight / double(e.pixels.size())) *
                          huber_weight(rp.squaredNorm(), opt.cost.pho_delta);
        if (vs >= 0) {
          h.block<7, 7>(vs, vs) += wp * jps.transpose() * jps;
          b.segment<7>(vs) += wp * jps.transpose() * rp;
        }
        if (vt >= 0) {
          h.block<7, 7>(vt, vt) += wp * jpt.transpose() * jpt;
          b.segment<7>(vt) += wp * jpt.transpose() * rp;
        }
        if (vs >= 0 && vt >= 0) {
          h.block<7, 7>(vs, vt) += wp * jps.transpose() * jpt;
          h.block<7, 7>(vt, vs) += wp * jpt.transpose() * jps;
        }
      }
    }
    if (b.lpNorm<Eigen::Infinity>() < 1e-14) break;  // stationary

    bool stepped = false;
    while (stats.evaluations < opt.max_evals) {
      Eigen::MatrixXd hd = h;
      hd.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(hd);
      Eigen::VectorXd dx;
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        dx = ldlt.solve(-b);
        ok = dx.allFinite();
      }
      if (!ok) {
        lambda *= opt.damping_up;
        if (lambda > opt.max_damping) {
          // Singular at maximum damping: leave corrections untouched.
          for (size_t i = 0; i < g.nodes.size(); ++i) g.nodes[i].correction = initial[i];
          stats.aborted_singular = true;
          stats.final_cost = stats.initial_cost;
          return stats;
        }
        continue;
      }
      if (dx.norm() < opt.step_tol) {
        stats.final_cost = cost;
        return stats;
      }

      std::vector<Sim3> backup;
      for (const auto& n : g.nodes) backup.push_back(n.correction);
      for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (var_base[i] >= 0) {
          g.nodes[i].correction =
              g.nodes[i].correction * exp(Vector7d(dx.segment<7>(var_base[i])));
        }
      }
      const double trial = total_cost(g, opt.cost);
      ++stats.evaluations;
      if (trial < cost) {
        const double reduction = (cost - trial) / std::max(cost, 1e-300);
        cost = trial;
        lambda *= opt.damping_down;
        stats.accepted_costs.push_back(cost);
        ++stats.accepted_steps;
        stepped = true;
        if (reduction < opt.rel_reduction_tol) {
          stats.final_cost = cost;
          return stats;
        }
        break;  // relinearize
      }
      for (size_t i = 0; i < g.nodes.size(); ++i) g.nodes[i].correction = backup[i];
      lambda *= opt.damping_up;
    }
    if (!stepped) break;  // evaluation budget exhausted while rejecting
  }
  stats.final_cost = cost;
  return stats;
}

std::vector<SubmapId> fusable_set(PoseGraph& g, double tau_res, const CostParams& params) {
  std::vector<SubmapId> out;
  for (const auto& n : g.nodes) {
    double acc = 0.0;
    int incident = 0;
    bool has_verified = false;
    for (const auto& e : g.edges) {
      if (!e.valid || (!(e.src == n.id) && !(e.tgt == n.id))) continue;
      acc += robust_edge_residual(e, g.at(e.src).correction, g.at(e.tgt).correction,
                                  params.geo_delta);
      ++incident;
      has_verified |= (e.kind == EdgeKind::kVerified);
    }
    if (!has_verified || incident == 0) continue;
    if (acc / incident <= tau_res) out.push_back(n.id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

RigidityReport fit_rigidity(const SubmapId& node, const std::vector<Eigen::Vector3d>& pre_centers,
                            const std::vector<Eigen::Vector3d>& post_centers) {
  RigidityReport rep;
  rep.node = node;
  rep.delta = umeyama(pre_centers, post_centers);
  double acc = 0.0;
  for (size_t i = 0; i < pre_centers.size(); ++i) {
    acc += (post_centers[i] - rep.delta * pre_centers[i]).squaredNorm();
  }
  rep.rho_rig = std::sqrt(acc / double(pre_centers.size()));
  return rep;
}

SubmapSummary transform_summary(const SubmapSummary& s, const Sim3& delta) {
  SubmapSummary out = s;
  for (auto& p : out.cloud) p = delta * p;
  for (auto& q : out.salient) q.position = delta * q.position;
  out.anchor.pose = delta * out.anchor.pose;
  if (!s.aabb.empty()) {
    Aabb box;
    for (int corner = 0; corner < 8; ++corner) {
      const Eigen::Vector3d c((corner & 1) ? s.aabb.max.x() : s.aabb.min.x(),
                              (corner & 2) ? s.aabb.max.y() : s.aabb.min.y(),
                              (corner & 4) ? s.aabb.max.z() : s.aabb.min.z());
      box.expand(delta * c);
    }
    out.aabb = box;
  }
  return out;
}

RewriteResult apply_pgba_rewrite(PoseGraph& g, const RigidityReport& report, double tau_rig) {
  SubmapNode& node = g.at(report.node);
  RewriteResult res;

  for (auto& e : g.edges) {
    if (e.src == node.id || e.tgt == node.id) {
      e.pixels.clear();
      e.pixel_cache_valid = false;
    }
  }
  node.anchor_cache_valid = false;

  if (report.rho_rig > tau_rig) {
    for (size_t i = 0; i < g.edges.size(); ++i) {
      GraphEdge& e = g.edges[i];
      if (e.kind != EdgeKind::kVerified || !e.valid) continue;
      if (!(e.src == node.id) && !(e.tgt == node.id)) continue;
      e.valid = false;
      g.reverify_queue.emplace_back(e.src, e.tgt);
      res.invalidated_edges.push_back(i);
    }
    return res;
  }

  res.rigid = true;
  const Sim3 delta_inv = report.delta.inverse();
  for (size_t i = 0; i < g.edges.size(); ++i) {
    GraphEdge& e = g.edges[i];
    if (!e.valid) continue;
    if (e.src == node.id) {
      e.measurement = e.measurement * delta_inv;
      res.updated_edges.push_back(i);
    } else if (e.tgt == node.id) {
      e.measurement = report.delta * e.measurement;
      res.updated_edges.push_back(i);
    }
  }
  node.correction = node.correction * delta_inv;
  node.summary = std::make_shared<SubmapSummary>(transform_summary(*node.summary, report.delta));
  if (node.gauge) {
    const Sim3 regauge = node.correction.inverse();
    for (auto& n : g.nodes) n.correction = regauge * n.correction;
    res.regauged = true;
  }
  return res;
}

namespace {

void finish(PoseGraph& g, const HandleParams& params, HandleResult* out) {
  out->stats = solve(g, params.solve);
  out->fusable = fusable_set(g, params.tau_res, params.solve.cost);
}

void run_reverification(PoseGraph& g, const HandleParams& params, HandleResult* out) {
  const auto queue = std::move(g.reverify_queue);
  g.reverify_queue.clear();
  for (const auto& [a, b] : queue) {
    SubmapNode* na = g.find(a);
    SubmapNode* nb = g.find(b);
    const auto edge_it =
        std::find_if(g.edges.begin(), g.edges.end(), [&](const GraphEdge& e) {
          return e.kind == EdgeKind::kVerified && !e.valid && e.src == a && e.tgt == b;
        });
    if (!na || !nb || edge_it == g.edges.end()) continue;
    CandidateLog log;
    log.query = a;
    log.candidate = b;
    log.reverification = true;
    log.outcome = register_pair(*na->summary, *nb->summary, params.gates, params.thresholds,
                                params.fallback);
    if (log.outcome.status == RegistrationOutcome::Status::kVerified) {
      edge_it->valid = true;
      edge_it->measurement = log.outcome.estimate->transform;
      edge_it->pixels.clear();
      edge_it->pixel_cache_valid = false;
      ++out->reverified_edges;
    } else {
      g.edges.erase(edge_it);  // failed re-verification is permanent
      ++out->dropped_edges;
    }
    out->candidates.push_back(std::move(log));
  }
}

}  // namespace

HandleResult handle_summary(PoseGraph& g, std::shared_ptr<const SubmapSummary> s,
                            const HandleParams& params) {
  HandleResult out;
  SubmapNode& node = g.add_node(std::move(s));
  const SubmapSummary& summary = *node.summary;

  if (summary.submap_index > 0 && summary.prev_odometry) {
    const SubmapId prev_id{summary.agent_id, summary.submap_index - 1};
    if (const SubmapNode* prev = g.find(prev_id)) {
      // Measurement maps the new submap's frame into its predecessor's.
      g.add_temporal_edge(node.id, prev_id, *summary.prev_odometry);
      g.at(node.id).correction = prev->correction * (*summary.prev_odometry);
    }
  }

  run_reverification(g, params, &out);

  std::vector<const SubmapSummary*> catalog;
  for (const auto& n : g.nodes) {
    if (!(n.id == node.id)) catalog.push_back(n.summary.get());
  }
  const auto candidates = retrieve(summary, catalog, params.retrieval_k, params.tau_sim);
  for (const SubmapSummary* cand : candidates) {
    CandidateLog log;
    log.query = node.id;
    log.candidate = cand->id();
    if (cand->agent_id == summary.agent_id) {
      log.skipped_same_agent = true;  // verified edges join distinct agents
      out.candidates.push_back(std::move(log));
      continue;
    }
    log.outcome =
        register_pair(summary, *cand, params.gates, params.thresholds, params.fallback);
    if (log.outcome.status == RegistrationOutcome::Status::kVerified) {
      g.add_verified_edge(node.id, cand->id(), log.outcome.estimate->transform);
      ++out.new_verified_edges;
    }
    out.candidates.push_back(std::move(log));
  }

  finish(g, params, &out);
  return out;
}

HandleResult handle_report(PoseGraph& g, const RigidityReport& report,
                           const HandleParams& params) {
  HandleResult out;
  out.rewrite = apply_pgba_rewrite(g, report, params.tau_rig);
  finish(g, params, &out);
  return out;
}

std::string graph_to_json(const PoseGraph& g) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes) {
    nlohmann::ordered_json jn;
    jn["agent"] = n.id.agent;
    jn["index"] = n.id.index;
    jn["gauge"] = n.gauge;
    jn["correction"] = n.correction.to_array();
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : g.edges) {
    nlohmann::ordered_json je;
    je["kind"] = e.kind == EdgeKind::kTemporal ? "temporal" : "verified";
    je["src"] = {{"agent", e.src.agent}, {"index", e.src.index}};
    je["tgt"] = {{"agent", e.tgt.agent}, {"index", e.tgt.index}};
    je["measurement"] = e.measurement.to_array();
    je["weight"] = e.weight;
    je["pho_weight"] = e.pho_weight;
    je["valid"] = e.valid;
    je["pixels"] = e.pixels.size();
    j["edges"].push_back(std::move(je));
  }
  return j.dump(2);
}

}  // namespace mags
