#include "mags/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mags/posegraph.hpp"

namespace mags {

namespace {

constexpr double kPi = 3.14159265358979323846;

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) { return splitmix(a ^ splitmix(b)); }

// Uniform in [0, 1) from one hash draw.
double unit_hash(uint64_t h) { return double(h >> 11) * 0x1.0p-53; }

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

Eigen::Vector3d gauss3(std::mt19937_64& rng, std::normal_distribution<double>& n) {
  return Eigen::Vector3d(n(rng), n(rng), n(rng));
}

}  // namespace

// --- Scene -----------------------------------------------------------------

double face_intensity(const SceneModel& scene, size_t box_index, int face, double u, double v) {
  const SceneBox& b = scene.boxes[box_index];
  const uint64_t key = mix(scene.seed, box_index * 6 + uint64_t(face));
  const double p1 = 2.0 * kPi * unit_hash(splitmix(key + 1));
  const double p2 = 2.0 * kPi * unit_hash(splitmix(key + 2));
  const double p3 = 2.0 * kPi * unit_hash(splitmix(key + 3));
  const double j1 = 1.0 + 0.2 * (2.0 * unit_hash(splitmix(key + 4)) - 1.0);
  const double j2 = 1.0 + 0.2 * (2.0 * unit_hash(splitmix(key + 5)) - 1.0);

  double base = 0.5;
  switch (b.texture) {
    case TextureId::kSine:
      base = 0.55 + 0.28 * std::sin(2.1 * j1 * u + p1) * std::cos(4.7 * j2 * v + p2) +
             0.12 * std::sin(8.3 * (u + v) + p3);
      break;
    case TextureId::kChecker:
      // Smoothed checker: steep but differentiable transitions.
      base = 0.5 + 0.35 * std::tanh(6.0 * std::sin(kPi * u / 0.4 + p1)) *
                       std::tanh(6.0 * std::sin(kPi * v / 0.4 + p2));
      break;
    case TextureId::kGradient:
      base = 0.45 + 0.22 * std::sin(0.8 * j1 * u + p1) + 0.22 * std::sin(0.8 * j2 * v + p2);
      break;
  }
  return clamp01(0.5 + (base - 0.5) * b.albedo_scale + b.albedo_bias);
}

bool raycast(const SceneModel& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
             RayHit* hit, double eps) {
  bool found = false;
  double best = std::numeric_limits<double>::infinity();
  for (size_t bi = 0; bi < scene.boxes.size(); ++bi) {
    const Aabb& box = scene.boxes[bi].box;
    for (int face = 0; face < 6; ++face) {
      const int axis = face / 2;
      if (dir[axis] == 0.0) continue;
      const double plane = (face % 2) ? box.max[axis] : box.min[axis];
      const double t = (plane - origin[axis]) / dir[axis];
      if (!(t > eps) || t >= best) continue;
      const Eigen::Vector3d p = origin + t * dir;
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      if (p[a1] < box.min[a1] - 1e-12 || p[a1] > box.max[a1] + 1e-12) continue;
      if (p[a2] < box.min[a2] - 1e-12 || p[a2] > box.max[a2] + 1e-12) continue;
      best = t;
      found = true;
      if (hit) {
        hit->t = t;
        hit->box_index = bi;
        hit->face = face;
        hit->point = p;
      }
    }
  }
  return found;
}

AnchorKeyframe render_anchor(const SceneModel& scene, const Sim3& world_pose,
                             const SimCamera& cam) {
  if (std::abs(world_pose.scale - 1.0) > 1e-12) {
    throw std::invalid_argument("render_anchor: pose must be rigid");
  }
  if (cam.width < 8 || cam.height < 8) {
    throw std::invalid_argument("render_anchor: resolution under 8x8");
  }
  AnchorKeyframe out;
  out.image = ImageF(cam.width, cam.height);
  out.disparity = ImageF(cam.width, cam.height);
  out.fx = cam.fx;
  out.fy = cam.fy;
  out.cx = cam.cx;
  out.cy = cam.cy;
  const Eigen::Matrix3d r = world_pose.rotation.toRotationMatrix();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      // dir has unit camera z, so the ray parameter equals camera depth and
      // the rendered disparity is exactly 1/t.
      const Eigen::Vector3d dir_cam((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      RayHit hit;
      if (!raycast(scene, world_pose.translation, r * dir_cam, &hit)) continue;
      const int axis = hit.face / 2;
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      out.image.at(x, y) =
          float(face_intensity(scene, hit.box_index, hit.face, hit.point[a1], hit.point[a2]));
      out.disparity.at(x, y) = float(1.0 / hit.t);
    }
  }
  return out;
}

// --- Scripts and submaps ---------------------------------------------------

void validate_script(const AgentScript& script) {
  if (!(script.scale_error >= 0.33 && script.scale_error <= 3.0)) {
    throw std::invalid_argument("script: scale_error outside [0.33, 3.0]");
  }
  if (script.keyframe_poses.size() < 2) {
    throw std::invalid_argument("script: needs at least 2 keyframes");
  }
  if (script.timestamps.size() != script.keyframe_poses.size()) {
    throw std::invalid_argument("script: timestamp/pose count mismatch");
  }
  for (size_t i = 1; i < script.timestamps.size(); ++i) {
    if (!(script.timestamps[i] > script.timestamps[i - 1])) {
      throw std::invalid_argument("script: timestamps must strictly increase");
    }
  }
  for (const Sim3& p : script.keyframe_poses) {
    if (std::abs(p.scale - 1.0) > 1e-12) {
      throw std::invalid_argument("script: keyframe poses must be rigid");
    }
  }
}

namespace {

// Greedy freeze partition over believed camera-center distances.
std::vector<std::pair<size_t, size_t>> freeze_partition(const AgentScript& script, double s,
                                                        int k_max, double tau_move) {
  std::vector<std::pair<size_t, size_t>> spans;  // [first, last] inclusive
  const size_t n = script.keyframe_poses.size();
  size_t first = 0;
  std::vector<Eigen::Vector3d> centers;
  double spread = 0.0;  // running max pairwise distance within the open span
  for (size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d& c = script.keyframe_poses[k].translation;
    for (const auto& prev : centers) spread = std::max(spread, (c - prev).norm());
    centers.push_back(c);
    if (int(centers.size()) >= k_max || s * spread > tau_move) {
      spans.emplace_back(first, k);
      first = k + 1;
      centers.clear();
      spread = 0.0;
    }
  }
  if (first < n) spans.emplace_back(first, n - 1);
  return spans;
}

// 128-D random-Fourier-feature embedding of the true anchor pose. This is
// the stand-in for learned place recognition: cosine similarity approximates
// a Gaussian kernel over (position, weighted viewing direction), so
// physically co-located submaps retrieve each other and distant ones do not.
Descriptor place_descriptor(uint64_t scene_seed, const Sim3& world_pose) {
  Eigen::Matrix<double, 6, 1> u;
  u.head<3>() = world_pose.translation;
  u.tail<3>() = 0.8 * (world_pose.rotation * Eigen::Vector3d::UnitZ());
  const double kappa = 1.1;
  Eigen::Matrix<double, kDescriptorDim, 1> d;
  std::mt19937_64 rng(mix(scene_seed, 0x5eedfacedULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * kPi);
  for (int i = 0; i < kDescriptorDim; ++i) {
    double dot = 0.0;
    for (int j = 0; j < 6; ++j) dot += kappa * gauss(rng) * u[j];
    d[i] = std::cos(dot + uni(rng));
  }
  d /= d.norm();
  return d.cast<float>();
}

}  // namespace

std::vector<SubmapData> build_submaps(const AgentScript& script, const SceneModel& scene,
                                      const BuildParams& params) {
  validate_script(script);
  const double s = script.scale_error;
  const SimCamera& cam = params.camera;
  const auto spans = freeze_partition(script, s, params.k_max, params.tau_move);

  std::vector<SubmapData> out;
  for (size_t si = 0; si < spans.size(); ++si) {
    const auto [first, last] = spans[si];
    SubmapData sub;
    sub.scale_error = s;
    const Sim3& t_first = script.keyframe_poses[first];
    sub.true_correction = Sim3(1.0 / s, t_first.rotation, t_first.translation);

    std::mt19937_64 rng_points(mix(params.seed, mix(script.agent_id, si) ^ 0x11ULL));
    std::mt19937_64 rng_drift(mix(params.seed, mix(script.agent_id, si) ^ 0x22ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);

    SubmapSummary& sum = sub.summary;
    sum.agent_id = script.agent_id;
    sum.submap_index = uint32_t(si);
    sum.descriptor = place_descriptor(scene.seed, t_first);

    std::vector<Eigen::Vector3d> cloud_raw;
    const Eigen::Matrix3d r_first_t = t_first.rotation.toRotationMatrix().transpose();
    for (size_t k = first; k <= last; ++k) {
      const Sim3& t_k = script.keyframe_poses[k];
      // Believed submap-local pose: rotation relative to the anchor, the
      // translation scaled into the agent's map units.
      const Sim3 local(1.0, Eigen::Quaterniond(r_first_t * t_k.rotation.toRotationMatrix()),
                       s * (r_first_t * (t_k.translation - t_first.translation)));
      const AnchorKeyframe render = render_anchor(scene, t_k, cam);

      FusionKeyframe fk;
      fk.local_pose = local;
      fk.fx = cam.fx;
      fk.fy = cam.fy;
      fk.cx = cam.cx;
      fk.cy = cam.cy;
      fk.depth = ImageF(cam.width, cam.height);
      fk.rendered = render.image;
      fk.reference = render.image;
      for (size_t i = 0; i < fk.reference.size(); ++i) {
        fk.reference.data[i] =
            float(params.exposure_gain * render.image.data[i] + params.exposure_bias);
      }
      for (size_t i = 0; i < render.disparity.size(); ++i) {
        const float disp = render.disparity.data[i];
        fk.depth.data[i] = disp > 0.f ? float(s / double(disp)) : 0.f;
      }

      // Registration cloud: believed back-projection on the cloud stride.
      for (int y = 0; y < cam.height; y += params.cloud_stride) {
        for (int x = 0; x < cam.width; x += params.cloud_stride) {
          const float disp = render.disparity.at(x, y);
          if (!(disp > 0.f)) continue;
          const double d = s / double(disp);
          const Eigen::Vector3d p_cam(d * (x - cam.cx) / cam.fx, d * (y - cam.cy) / cam.fy, d);
          cloud_raw.push_back(local * p_cam);
        }
      }

      // Gaussian seeding: every gaussian_stride-th pixel, camera-axis
      // aligned, footprint from the pixel solid angle, view-axis extent
      // inflated by the local believed-depth gradient.
      for (int y = 0; y < cam.height; y += params.gaussian_stride) {
        for (int x = 0; x < cam.width; x += params.gaussian_stride) {
          const float disp = render.disparity.at(x, y);
          if (!(disp > 0.f)) continue;
          const double d = s / double(disp);
          const Eigen::Vector3d p_cam(d * (x - cam.cx) / cam.fx, d * (y - cam.cy) / cam.fy, d);
          const double footprint = params.gaussian_stride * d / cam.fx;
          const int xm = std::max(0, x - 1), xp = std::min(cam.width - 1, x + 1);
          const int ym = std::max(0, y - 1), yp = std::min(cam.height - 1, y + 1);
          auto depth_at = [&](int px, int py) {
            const float dd = render.disparity.at(px, py);
            return dd > 0.f ? s / double(dd) : d;
          };
          const double gx = (depth_at(xp, y) - depth_at(xm, y)) / double(xp - xm);
          const double gy = (depth_at(x, yp) - depth_at(x, ym)) / double(yp - ym);
          const double grad = std::hypot(gx, gy);
          Gaussian g;
          g.mean = local * p_cam;
          g.rotation = local.rotation;
          const double base = 0.5 * footprint;
          g.scales = Eigen::Vector3d(base, base, base * std::min(1.0 + 4.0 * grad, 4.0));
          g.opacity = 1.0f;
          const float intensity = render.image.at(x, y);
          g.color = Eigen::Vector3f(intensity, intensity, intensity);
          sub.gaussians.push_back(g);
        }
      }

      if (k == first) {
        sum.anchor.pose = Sim3();
        sum.anchor.image = render.image;
        sum.anchor.disparity = render.disparity;
        for (auto& disp : sum.anchor.disparity.data) disp = float(double(disp) / s);
        sum.anchor.fx = cam.fx;
        sum.anchor.fy = cam.fy;
        sum.anchor.cx = cam.cx;
        sum.anchor.cy = cam.cy;
      }

      sub.keyframes.push_back(std::move(fk));
      sub.truth.push_back({script.timestamps[k], t_k, local});
    }

    // Salient points from the anchor keyframe.
    PointGrid grid(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const float disp = sum.anchor.disparity.at(x, y);
        if (!(disp > 0.f)) continue;
        const double d = 1.0 / double(disp);  // believed depth, anchor frame
        grid.points[size_t(y) * cam.width + x] =
            Eigen::Vector3d(d * (x - cam.cx) / cam.fx, d * (y - cam.cy) / cam.fy, d);
        grid.valid[size_t(y) * cam.width + x] = 1;
      }
    }
    const ImageD score = score_saliency({sum.anchor.image}, sum.anchor.disparity, {});
    const size_t salient_k = std::min(params.salient_k, score.size());
    for (const SalientPick& pick : select_salient(score, grid, salient_k)) {
      SalientPoint sp;
      sp.position = pick.position;
      sp.descriptor =
          patch_descriptor(sum.anchor.image, pick.pixel % cam.width, pick.pixel / cam.width);
      sum.salient.push_back(std::move(sp));
    }

    sum.cloud = voxel_downsample(cloud_raw, params.cloud_voxel, kMaxCloudPoints);
    if (params.point_noise > 0.0) {
      for (auto& p : sum.cloud) p += params.point_noise * gauss3(rng_points, gauss);
      for (auto& sp : sum.salient) sp.position += params.point_noise * gauss3(rng_points, gauss);
    }
    sum.aabb = Aabb();
    for (const auto& p : sum.cloud) sum.aabb.expand(p);
    for (const auto& sp : sum.salient) sum.aabb.expand(sp.position);

    // Odometry to the predecessor, from current true corrections; drift is
    // accumulated per keyframe step covered by this submap.
    if (si > 0) {
      Sim3 odo = out.back().true_correction.inverse() * sub.true_correction;
      const auto& dm = script.drift;
      if (dm.sigma_nu > 0 || dm.sigma_omega > 0 || dm.sigma_lambda > 0) {
        Vector7d xi = Vector7d::Zero();
        for (size_t k = first; k <= last; ++k) {
          xi.head<3>() += dm.sigma_nu * gauss3(rng_drift, gauss);
          xi.segment<3>(3) += dm.sigma_omega * gauss3(rng_drift, gauss);
          xi[6] += dm.sigma_lambda * gauss(rng_drift);
        }
        odo = odo * exp(xi);
      }
      sum.prev_odometry = odo;
    }

    validate_summary(sum);
    out.push_back(std::move(sub));
  }
  return out;
}

PgbaReport emit_pgba_event(SubmapData& submap, const PgbaEvent& event, uint64_t seed) {
  if (event.submap_index != submap.summary.submap_index) {
    throw std::out_of_range("pgba event names a different submap");
  }
  PgbaReport report;
  report.agent_id = submap.summary.agent_id;
  report.submap_index = submap.summary.submap_index;

  std::mt19937_64 rng(mix(seed, mix(report.agent_id, report.submap_index) ^ 0x33ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& kf : submap.keyframes) {
    report.pre_centers.push_back(kf.local_pose.translation);
    Eigen::Vector3d post = (event.delta * kf.local_pose).translation;
    if (event.sigma > 0.0) post += event.sigma * gauss3(rng, gauss);
    report.post_centers.push_back(post);
  }

  if (event.sigma <= kSimRigidSigma) {
    // Rigid regime: the agent actually rewrote the submap by delta.
    submap.summary = transform_summary(submap.summary, event.delta);
    for (auto& g : submap.gaussians) g = transform_gaussian(g, event.delta);
    for (auto& kf : submap.keyframes) kf.local_pose = event.delta * kf.local_pose;
    for (auto& t : submap.truth) t.local_pose = event.delta * t.local_pose;
    submap.true_correction = submap.true_correction * event.delta.inverse();
    submap.scale_error *= event.delta.scale;
  }
  return report;
}

// --- Scenario generation ---------------------------------------------------

namespace {

void add_room(SceneModel& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& size,
              uint64_t room_key) {
  SceneBox room;
  room.box.min = origin;
  room.box.max = origin + size;
  room.texture = TextureId::kSine;
  scene.add_box(room);

  // Four pillars in the corner zones, outside the trajectory annulus.
  const TextureId cycle[3] = {TextureId::kSine, TextureId::kChecker, TextureId::kGradient};
  for (int j = 0; j < 4; ++j) {
    const uint64_t key = mix(room_key, uint64_t(j));
    const double hx = 0.15 + 0.10 * unit_hash(splitmix(key + 1));
    const double hy = 0.15 + 0.10 * unit_hash(splitmix(key + 2));
    const double px = (j % 2 == 0) ? origin.x() + 0.55 + 0.15 * unit_hash(splitmix(key + 3))
                                   : origin.x() + size.x() - 0.55 - 0.15 * unit_hash(splitmix(key + 3));
    const double py = (j / 2 == 0) ? origin.y() + 0.55 + 0.15 * unit_hash(splitmix(key + 4))
                                   : origin.y() + size.y() - 0.55 - 0.15 * unit_hash(splitmix(key + 4));
    const double top = (j % 2 == 0) ? size.z() : 0.5 * size.z();
    SceneBox pillar;
    pillar.box.min = Eigen::Vector3d(px - hx, py - hy, origin.z());
    pillar.box.max = Eigen::Vector3d(px + hx, py + hy, origin.z() + top);
    pillar.texture = cycle[j % 3];
    pillar.albedo_scale = 0.9 + 0.2 * unit_hash(splitmix(key + 5));
    scene.add_box(pillar);
  }
}

Eigen::Quaterniond look_rotation(const Eigen::Vector3d& forward) {
  const Eigen::Vector3d f = forward.normalized();
  Eigen::Vector3d d = Eigen::Vector3d(0, 0, -1);
  d = (d - d.dot(f) * f).normalized();  // camera y: down, orthogonal to view
  const Eigen::Vector3d r = d.cross(f);
  Eigen::Matrix3d m;
  m.col(0) = r;
  m.col(1) = d;
  m.col(2) = f;
  return Eigen::Quaterniond(m);
}

}  // namespace

Scenario generate_scenario(const ScenarioParams& params) {
  if (params.n_agents < 1 || params.n_agents > 8) {
    throw std::invalid_argument("scenario: n_agents outside [1, 8]");
  }
  if (params.pgba_events.size() != params.pgba_event_agents.size()) {
    throw std::invalid_argument("scenario: pgba event/agent list size mismatch");
  }
  Scenario sc;
  sc.params = params;
  sc.scene.seed = params.seed;

  const Eigen::Vector3d room_size(4.8, 3.6, 2.4);
  const int n_rooms = params.overlap == OverlapPlan::kNone ? params.n_agents : 1;
  for (int r = 0; r < n_rooms; ++r) {
    add_room(sc.scene, Eigen::Vector3d(r * (room_size.x() + 1.2), 0, 0), room_size,
             mix(params.seed, 0xA00 + uint64_t(r)));
  }

  const int n_kf = params.submaps_per_agent * params.keyframes_per_submap;
  if (n_kf < 2) throw std::invalid_argument("scenario: needs at least 2 keyframes per agent");
  for (int a = 0; a < params.n_agents; ++a) {
    AgentScript script;
    script.agent_id = uint32_t(a);
    script.scale_error =
        params.scale_errors.empty() ? 1.0 : params.scale_errors[a % params.scale_errors.size()];
    script.drift = params.drift;

    const int room = params.overlap == OverlapPlan::kNone ? a : 0;
    const Eigen::Vector3d center(room * (room_size.x() + 1.2) + room_size.x() / 2,
                                 room_size.y() / 2, 0.0);
    const double radius = 1.08 + 0.03 * a;
    // Constant angular step (the 96-keyframe reference covers 1.25 loops), so
    // keyframe spacing — and with it the count-driven freeze partition — does
    // not depend on the configured stream length.
    double phase = 0.0, step = 2.0 * kPi * 1.25 / 95.0;
    if (params.overlap == OverlapPlan::kFull) {
      phase = 2.0 * kPi * a / params.n_agents;
    } else if (params.overlap == OverlapPlan::kPartial) {
      phase = 2.0 * kPi * a / params.n_agents;
      step = 2.0 * kPi * 0.55 / 95.0;
    }
    for (int k = 0; k < n_kf; ++k) {
      const double theta = phase + step * k;
      const Eigen::Vector3d pos =
          center + Eigen::Vector3d(radius * std::cos(theta), radius * std::sin(theta),
                                   1.2 + 0.18 * std::sin(2.0 * theta + a));
      const Eigen::Vector3d forward(std::cos(theta), std::sin(theta),
                                    0.12 * std::cos(2.0 * theta + a));
      script.timestamps.push_back(0.1 * k);
      script.keyframe_poses.push_back(Sim3(1.0, look_rotation(forward), pos));
    }

    for (size_t e = 0; e < params.pgba_events.size(); ++e) {
      if (params.pgba_event_agents[e] != uint32_t(a)) continue;
      PgbaEvent ev = params.pgba_events[e];
      if (ev.magnitude > 0.0) {
        std::mt19937_64 rng(mix(params.seed, mix(a, ev.submap_index) ^ 0x44ULL));
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vector7d xi;
        for (int i = 0; i < 7; ++i) xi[i] = gauss(rng);
        ev.delta = exp(Vector7d(ev.magnitude * xi.normalized()));
      }
      script.pgba_events.push_back(ev);
    }
    sc.scripts.push_back(std::move(script));
  }
  return sc;
}

BuildParams scenario_build_params(const Scenario& scenario, uint32_t agent_id) {
  BuildParams bp;
  bp.camera = scenario.params.camera;
  bp.k_max = scenario.params.keyframes_per_submap;
  bp.point_noise = scenario.params.point_noise;
  bp.exposure_gain = 1.0 + scenario.params.exposure_jitter * 0.12 * std::sin(1.0 + agent_id);
  bp.exposure_bias = scenario.params.exposure_jitter * 0.05 * std::cos(1.0 + agent_id);
  bp.seed = mix(scenario.params.seed, 0x66ULL + agent_id);
  return bp;
}

// --- Replay container ------------------------------------------------------

namespace {

void put_image(ByteWriter& w, const ImageF& img) {
  for (float v : img.data) w.f32(v);
}

ImageF get_image(ByteReader& r, uint32_t width, uint32_t height) {
  ImageF img{int(width), int(height)};
  for (auto& v : img.data) v = r.f32();
  return img;
}

}  // namespace

std::vector<uint8_t> encode_fusion_payload(const FusionPayload& p) {
  ByteWriter w;
  w.u32(p.agent_id);
  w.u32(p.submap_index);
  w.u32(uint32_t(p.gaussians.size()));
  for (const Gaussian& g : p.gaussians) {
    for (int i = 0; i < 3; ++i) w.f64(g.mean[i]);
    for (int i = 0; i < 3; ++i) w.f64(g.scales[i]);
    w.f64(g.rotation.w());
    w.f64(g.rotation.x());
    w.f64(g.rotation.y());
    w.f64(g.rotation.z());
    w.f32(g.opacity);
    for (int i = 0; i < 3; ++i) w.f32(g.color[i]);
  }
  w.u32(uint32_t(p.keyframes.size()));
  for (const FusionKeyframe& kf : p.keyframes) {
    w.sim3(kf.local_pose);
    w.f64(kf.fx);
    w.f64(kf.fy);
    w.f64(kf.cx);
    w.f64(kf.cy);
    w.u32(uint32_t(kf.depth.width));
    w.u32(uint32_t(kf.depth.height));
    put_image(w, kf.depth);
    put_image(w, kf.rendered);
    put_image(w, kf.reference);
  }
  return w.take();
}

FusionPayload decode_fusion_payload(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.set_section("fusion payload");
  FusionPayload p;
  p.agent_id = r.u32();
  p.submap_index = r.u32();
  const uint32_t ng = r.u32();
  if (uint64_t(ng) * 96 > r.remaining()) r.fail("gaussian count exceeds payload");
  p.gaussians.reserve(ng);
  for (uint32_t i = 0; i < ng; ++i) {
    Gaussian g;
    for (int j = 0; j < 3; ++j) g.mean[j] = r.f64();
    for (int j = 0; j < 3; ++j) g.scales[j] = r.f64();
    const double qw = r.f64(), qx = r.f64(), qy = r.f64(), qz = r.f64();
    g.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
    g.opacity = r.f32();
    for (int j = 0; j < 3; ++j) g.color[j] = r.f32();
    p.gaussians.push_back(g);
  }
  const uint32_t nk = r.u32();
  for (uint32_t i = 0; i < nk; ++i) {
    FusionKeyframe kf;
    kf.local_pose = r.sim3();
    kf.fx = r.f64();
    kf.fy = r.f64();
    kf.cx = r.f64();
    kf.cy = r.f64();
    const uint32_t w = r.u32(), h = r.u32();
    if (w == 0 || h == 0 || uint64_t(w) * h > 1u << 24) r.fail("bad keyframe raster size");
    if (uint64_t(w) * h * 12 > r.remaining()) r.fail("keyframe rasters exceed payload");
    kf.depth = get_image(r, w, h);
    kf.rendered = get_image(r, w, h);
    kf.reference = get_image(r, w, h);
    p.keyframes.push_back(std::move(kf));
  }
  r.expect_consumed_until(bytes.size());
  return p;
}

std::vector<uint8_t> encode_truth_record(const TruthRecord& t) {
  ByteWriter w;
  w.u32(t.agent_id);
  w.u32(t.submap_index);
  w.f64(t.scale_error);
  w.sim3(t.true_correction);
  w.u32(uint32_t(t.keyframes.size()));
  for (const KeyframeTruth& kf : t.keyframes) {
    w.f64(kf.timestamp);
    w.sim3(kf.world_pose);
    w.sim3(kf.local_pose);
  }
  return w.take();
}

TruthRecord decode_truth_record(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.set_section("truth record");
  TruthRecord t;
  t.agent_id = r.u32();
  t.submap_index = r.u32();
  t.scale_error = r.f64();
  t.true_correction = r.sim3();
  const uint32_t nk = r.u32();
  if (uint64_t(nk) * 136 > r.remaining()) r.fail("keyframe count exceeds record");
  for (uint32_t i = 0; i < nk; ++i) {
    KeyframeTruth kf;
    kf.timestamp = r.f64();
    kf.world_pose = r.sim3();
    kf.local_pose = r.sim3();
    t.keyframes.push_back(kf);
  }
  r.expect_consumed_until(bytes.size());
  return t;
}

std::vector<uint8_t> encode_stream(const std::vector<StreamRecord>& records) {
  ByteWriter w;
  w.bytes("MSTR", 4);
  w.u16(1);
  for (const StreamRecord& rec : records) {
    std::vector<uint8_t> payload;
    switch (rec.kind) {
      case StreamRecord::Kind::kMessage:
        payload = encode_message(rec.message);
        break;
      case StreamRecord::Kind::kFusionPayload:
        payload = encode_fusion_payload(rec.payload);
        break;
      case StreamRecord::Kind::kTruth:
        payload = encode_truth_record(rec.truth);
        break;
    }
    w.u8(uint8_t(rec.kind));
    w.u32(uint32_t(payload.size()));
    w.bytes(payload.data(), payload.size());
  }
  return w.take();
}

std::vector<StreamRecord> decode_stream(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.set_section("stream preamble");
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "MSTR") r.fail("bad stream magic");
  if (r.u16() != 1) r.fail("unsupported stream version");

  std::vector<StreamRecord> out;
  r.set_section("stream record");
  while (r.remaining() > 0) {
    const uint8_t kind = r.u8();
    const uint32_t len = r.u32();
    if (len > r.remaining()) r.fail("truncated stream record");
    std::vector<uint8_t> payload(len);
    r.bytes(payload.data(), len);
    StreamRecord rec;
    switch (kind) {
      case 1: {
        ByteReader mr(payload);
        rec.kind = StreamRecord::Kind::kMessage;
        rec.message = decode_message(mr);
        break;
      }
      case 2:
        rec.kind = StreamRecord::Kind::kFusionPayload;
        rec.payload = decode_fusion_payload(payload);
        break;
      case 3:
        rec.kind = StreamRecord::Kind::kTruth;
        rec.truth = decode_truth_record(payload);
        break;
      default:
        r.fail("unknown stream record kind " + std::to_string(kind));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<StreamRecord> scenario_to_records(const Scenario& scenario) {
  std::vector<std::vector<SubmapData>> per_agent;
  size_t max_submaps = 0;
  for (const AgentScript& script : scenario.scripts) {
    per_agent.push_back(
        build_submaps(script, scenario.scene, scenario_build_params(scenario, script.agent_id)));
    max_submaps = std::max(max_submaps, per_agent.back().size());
  }
  for (size_t a = 0; a < scenario.scripts.size(); ++a) {
    for (const PgbaEvent& ev : scenario.scripts[a].pgba_events) {
      if (ev.submap_index >= per_agent[a].size() || ev.emit_after < ev.submap_index) {
        throw std::invalid_argument("scenario: pgba event precedes its submap");
      }
      if (ev.emit_after >= max_submaps) {
        throw std::invalid_argument("scenario: pgba event scheduled after stream end");
      }
    }
  }

  std::vector<StreamRecord> records;
  std::vector<uint64_t> seq(scenario.scripts.size(), 0);
  auto payload_record = [&](const SubmapData& sub) {
    StreamRecord rec;
    rec.kind = StreamRecord::Kind::kFusionPayload;
    rec.payload.agent_id = sub.summary.agent_id;
    rec.payload.submap_index = sub.summary.submap_index;
    rec.payload.gaussians = sub.gaussians;
    rec.payload.keyframes = sub.keyframes;
    return rec;
  };

  for (size_t round = 0; round < max_submaps; ++round) {
    for (size_t a = 0; a < per_agent.size(); ++a) {
      if (round >= per_agent[a].size()) continue;
      const SubmapData& sub = per_agent[a][round];
      records.push_back(payload_record(sub));

      StreamRecord truth;
      truth.kind = StreamRecord::Kind::kTruth;
      truth.truth.agent_id = sub.summary.agent_id;
      truth.truth.submap_index = sub.summary.submap_index;
      truth.truth.scale_error = sub.scale_error;
      truth.truth.true_correction = sub.true_correction;
      truth.truth.keyframes = sub.truth;
      records.push_back(std::move(truth));

      StreamRecord msg;
      msg.kind = StreamRecord::Kind::kMessage;
      msg.message.kind = Message::Kind::kSummary;
      msg.message.agent_id = sub.summary.agent_id;
      msg.message.sequence = ++seq[a];
      msg.message.payload = encode_summary(sub.summary);
      records.push_back(std::move(msg));
    }
    for (size_t a = 0; a < per_agent.size(); ++a) {
      const uint32_t agent_id = scenario.scripts[a].agent_id;
      for (const PgbaEvent& ev : scenario.scripts[a].pgba_events) {
        if (ev.emit_after != round) continue;
        SubmapData& sub = per_agent[a][ev.submap_index];
        const PgbaReport report =
            emit_pgba_event(sub, ev, scenario_build_params(scenario, agent_id).seed);
        if (ev.sigma <= kSimRigidSigma) records.push_back(payload_record(sub));
        StreamRecord msg;
        msg.kind = StreamRecord::Kind::kMessage;
        msg.message.kind = Message::Kind::kPgbaReport;
        msg.message.agent_id = agent_id;
        msg.message.sequence = ++seq[a];
        msg.message.payload = encode_pgba_report(report);
        records.push_back(std::move(msg));
      }
    }
  }
  return records;
}

std::vector<uint8_t> scenario_to_stream(const Scenario& scenario) {
  return encode_stream(scenario_to_records(scenario));
}

// --- Config and TUM --------------------------------------------------------

namespace {

[[noreturn]] void config_fail(int line, const std::string& what) {
  throw std::invalid_argument("scenario config line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, int line) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) config_fail(line, "trailing characters in number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    config_fail(line, "not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    config_fail(line, "number out of range: '" + s + "'");
  }
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ScenarioParams parse_scenario_config(const std::string& text) {
  ScenarioParams p;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) config_fail(line_no, "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "seed") {
      p.seed = uint64_t(parse_double(value, line_no));
    } else if (key == "n_agents") {
      p.n_agents = int(parse_double(value, line_no));
    } else if (key == "overlap") {
      if (value == "none") p.overlap = OverlapPlan::kNone;
      else if (value == "partial") p.overlap = OverlapPlan::kPartial;
      else if (value == "full") p.overlap = OverlapPlan::kFull;
      else config_fail(line_no, "overlap must be none|partial|full");
    } else if (key == "submaps_per_agent") {
      p.submaps_per_agent = int(parse_double(value, line_no));
    } else if (key == "keyframes_per_submap") {
      p.keyframes_per_submap = int(parse_double(value, line_no));
    } else if (key == "scale_errors") {
      p.scale_errors.clear();
      for (const std::string& tok : split_commas(value)) {
        p.scale_errors.push_back(parse_double(trim(tok), line_no));
      }
    } else if (key == "point_noise") {
      p.point_noise = parse_double(value, line_no);
    } else if (key == "drift_nu") {
      p.drift.sigma_nu = parse_double(value, line_no);
    } else if (key == "drift_omega") {
      p.drift.sigma_omega = parse_double(value, line_no);
    } else if (key == "drift_lambda") {
      p.drift.sigma_lambda = parse_double(value, line_no);
    } else if (key == "exposure_jitter") {
      p.exposure_jitter = parse_double(value, line_no);
    } else if (key == "image_width") {
      p.camera = SimCamera::standard(int(parse_double(value, line_no)), p.camera.height,
                                     p.camera.fx);
    } else if (key == "image_height") {
      p.camera =
          SimCamera::standard(p.camera.width, int(parse_double(value, line_no)), p.camera.fx);
    } else if (key == "focal") {
      p.camera =
          SimCamera::standard(p.camera.width, p.camera.height, parse_double(value, line_no));
    } else if (key == "pgba_event") {
      const auto toks = split_commas(value);
      if (toks.size() != 5) config_fail(line_no, "pgba_event needs agent,submap,emit_after,magnitude,sigma");
      PgbaEvent ev;
      p.pgba_event_agents.push_back(uint32_t(parse_double(trim(toks[0]), line_no)));
      ev.submap_index = uint32_t(parse_double(trim(toks[1]), line_no));
      ev.emit_after = uint32_t(parse_double(trim(toks[2]), line_no));
      ev.magnitude = parse_double(trim(toks[3]), line_no);
      ev.sigma = parse_double(trim(toks[4]), line_no);
      p.pgba_events.push_back(ev);
    } else {
      config_fail(line_no, "unknown key '" + key + "'");
    }
  }
  return p;
}

std::string tum_to_string(const std::vector<TimedPose>& trajectory) {
  std::string out;
  char buf[256];
  for (const TimedPose& tp : trajectory) {
    const auto& q = tp.pose.rotation;
    const auto& t = tp.pose.translation;
    std::snprintf(buf, sizeof buf, "%.6f %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n", tp.timestamp,
                  t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    out += buf;
  }
  return out;
}

std::vector<TimedPose> parse_tum(const std::string& text) {
  std::vector<TimedPose> out;
  std::istringstream is(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw std::invalid_argument("tum line " + std::to_string(line_no) + ": expected 8 numbers");
    }
    std::string extra;
    if (ls >> extra) {
      throw std::invalid_argument("tum line " + std::to_string(line_no) + ": trailing tokens");
    }
    TimedPose tp;
    tp.timestamp = t;
    tp.pose = Sim3(1.0, Eigen::Quaterniond(qw, qx, qy, qz), Eigen::Vector3d(tx, ty, tz));
    out.push_back(tp);
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(content.data(), std::streamsize(content.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw std::runtime_error("short read: " + path);
  return bytes;
}

}  // namespace mags
