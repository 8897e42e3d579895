#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "mags/fusion.hpp"
#include "test_util.hpp"

using namespace mags;
using testutil::gauss;
using testutil::uniform;

namespace {

Gaussian random_gaussian(std::mt19937_64& rng, double extent = 2.0) {
  Gaussian g;
  g.mean = Eigen::Vector3d(uniform(rng, -extent, extent), uniform(rng, -extent, extent),
                           uniform(rng, -extent, extent));
  g.scales = Eigen::Vector3d(uniform(rng, 0.02, 0.2), uniform(rng, 0.02, 0.2),
                             uniform(rng, 0.02, 0.2));
  g.rotation = testutil::random_rotation(rng);
  g.opacity = float(uniform(rng, 0.1, 1.0));
  g.color = Eigen::Vector3f(float(uniform(rng, 0, 1)), float(uniform(rng, 0, 1)),
                            float(uniform(rng, 0, 1)));
  return g;
}

Eigen::Matrix3d covariance_of(const Gaussian& g) {
  const Eigen::Matrix3d r = g.rotation.toRotationMatrix();
  return r * g.scales.cwiseProduct(g.scales).asDiagonal() * r.transpose();
}

// Independent world AABB of the rotated envelope box: corner enumeration
// instead of the |R| h formula.
void envelope_box(const Gaussian& g, double k, Eigen::Vector3d* lo, Eigen::Vector3d* hi) {
  const Eigen::Matrix3d r = g.rotation.toRotationMatrix();
  *lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  *hi = -*lo;
  for (int c = 0; c < 8; ++c) {
    const Eigen::Vector3d local(((c & 1) ? 1 : -1) * k * g.scales.x(),
                                ((c & 2) ? 1 : -1) * k * g.scales.y(),
                                ((c & 4) ? 1 : -1) * k * g.scales.z());
    const Eigen::Vector3d w = g.mean + r * local;
    *lo = lo->cwiseMin(w);
    *hi = hi->cwiseMax(w);
  }
}

}  // namespace

TEST_CASE("transform_gaussian: identity and pure-scale corrections act as pinned") {
  std::mt19937_64 rng(401);
  const Gaussian g = random_gaussian(rng);

  const Gaussian same = transform_gaussian(g, Sim3());
  CHECK(same.mean == g.mean);
  CHECK(same.scales == g.scales);
  CHECK(same.rotation.coeffs() == g.rotation.coeffs());
  CHECK(same.opacity == g.opacity);
  CHECK(same.color == g.color);

  Sim3 doubling;
  doubling.scale = 2.0;
  const Gaussian big = transform_gaussian(g, doubling);
  CHECK((big.mean - 2.0 * g.mean).norm() < 1e-15);
  CHECK((big.scales - 2.0 * g.scales).norm() < 1e-15);
  CHECK(big.rotation.angularDistance(g.rotation) < 1e-15);
  CHECK(big.opacity == g.opacity);
  CHECK(big.color == g.color);
}

TEST_CASE("transform_gaussian: covariance maps as s^2 R Sigma R^T") {
  std::mt19937_64 rng(402);
  for (int trial = 0; trial < 20; ++trial) {
    const Gaussian g = random_gaussian(rng);
    const Sim3 c = testutil::random_sim3(rng, 3.0, 0.4, 2.5);
    const Gaussian t = transform_gaussian(g, c);

    const Eigen::Matrix3d expect =
        c.scale * c.scale * c.rotation.toRotationMatrix() * covariance_of(g) *
        c.rotation.toRotationMatrix().transpose();
    CHECK((covariance_of(t) - expect).norm() < 1e-9 * std::max(1.0, expect.norm()));
    CHECK((t.mean - c * g.mean).norm() < 1e-12);
  }
}

TEST_CASE("transform_gaussian is a group action under composition") {
  std::mt19937_64 rng(403);
  for (int trial = 0; trial < 20; ++trial) {
    const Gaussian g = random_gaussian(rng);
    const Sim3 a = testutil::random_sim3(rng, 2.0, 0.5, 2.0);
    const Sim3 b = testutil::random_sim3(rng, 2.0, 0.5, 2.0);
    const Gaussian two_steps = transform_gaussian(transform_gaussian(g, b), a);
    const Gaussian one_step = transform_gaussian(g, a * b);
    CHECK((two_steps.mean - one_step.mean).norm() < 1e-9 * std::max(1.0, one_step.mean.norm()));
    CHECK((two_steps.scales - one_step.scales).norm() < 1e-9);
    CHECK(two_steps.rotation.angularDistance(one_step.rotation) < 1e-9);
    CHECK(two_steps.opacity == one_step.opacity);
  }
}

TEST_CASE("build_occupied: tiny gaussian marks exactly its mean's voxel") {
  Gaussian g;
  g.mean = Eigen::Vector3d(0.05, 0.05, 0.05);
  g.scales = Eigen::Vector3d(0.001, 0.001, 0.001);
  const auto keys = build_occupied({g}, 0.10);
  CHECK(keys.size() == 1);
  CHECK(keys.count(voxel_key(g.mean, 0.10)) == 1);
  CHECK(build_occupied({}, 0.10).empty());
}

TEST_CASE("build_occupied: corner gaussian with voxel-sized sigma matches the dense scan") {
  Gaussian g;
  g.mean = Eigen::Vector3d::Zero();
  g.scales = Eigen::Vector3d(0.10, 0.10, 0.10);
  const auto keys = build_occupied({g}, 0.10);
  // The +-1 sigma box [-v, v] spans indices -1..1 per axis under the
  // half-open voxel convention (the +v face touches voxel 1 exactly).
  CHECK(keys.size() == 27);
  for (int64_t z = -1; z <= 1; ++z) {
    for (int64_t y = -1; y <= 1; ++y) {
      for (int64_t x = -1; x <= 1; ++x) CHECK(keys.count(pack_voxel_indices(x, y, z)) == 1);
    }
  }
}

TEST_CASE("build_occupied equals a corner-enumeration dense-scan oracle") {
  std::mt19937_64 rng(404);
  const double v = 0.10;
  std::vector<Gaussian> gs;
  for (int i = 0; i < 10; ++i) gs.push_back(random_gaussian(rng));
  const auto keys = build_occupied(gs, v);

  std::set<uint64_t> expect;
  for (const auto& g : gs) {
    Eigen::Vector3d lo, hi;
    envelope_box(g, 1.0, &lo, &hi);
    const int64_t x0 = voxel_index(lo.x(), v) - 1, x1 = voxel_index(hi.x(), v) + 1;
    const int64_t y0 = voxel_index(lo.y(), v) - 1, y1 = voxel_index(hi.y(), v) + 1;
    const int64_t z0 = voxel_index(lo.z(), v) - 1, z1 = voxel_index(hi.z(), v) + 1;
    for (int64_t z = z0; z <= z1; ++z) {
      for (int64_t y = y0; y <= y1; ++y) {
        for (int64_t x = x0; x <= x1; ++x) {
          // Half-open voxel [iv, (i+1)v) intersecting the closed box.
          const bool ix = double(x) * v <= hi.x() && double(x + 1) * v > lo.x();
          const bool iy = double(y) * v <= hi.y() && double(y + 1) * v > lo.y();
          const bool iz = double(z) * v <= hi.z() && double(z + 1) * v > lo.z();
          if (ix && iy && iz) expect.insert(pack_voxel_indices(x, y, z));
        }
      }
    }
  }
  CHECK(keys.size() == expect.size());
  for (const uint64_t k : expect) CHECK(keys.count(k) == 1);
}

TEST_CASE("carve_free: pinned single-pixel march stops short of the endpoint voxel") {
  CarveKeyframe kf;
  kf.depth = ImageF(1, 1, 0.30f);
  kf.fx = kf.fy = 1.0;
  kf.cx = kf.cy = 0.0;
  const auto keys = carve_free({kf}, 0.10);
  CHECK(keys.size() == 3);
  for (int64_t z = 0; z <= 2; ++z) CHECK(keys.count(pack_voxel_indices(0, 0, z)) == 1);
  CHECK(keys.count(pack_voxel_indices(0, 0, 3)) == 0);  // endpoint voxel untouched
  CHECK(carve_free({}, 0.10).empty());
}

TEST_CASE("carve_free: rays clip at the maximum length") {
  CarveKeyframe kf;
  kf.depth = ImageF(1, 1, 20.0f);  // far beyond the cap
  kf.fx = kf.fy = 1.0;
  kf.cx = kf.cy = 0.0;
  const auto keys = carve_free({kf}, 0.10);
  // Steps at t = j * 0.05 < 8: the last lands at 7.95, voxel index 79.
  CHECK(keys.size() == 80);
  CHECK(keys.count(pack_voxel_indices(0, 0, 79)) == 1);
  CHECK(keys.count(pack_voxel_indices(0, 0, 80)) == 0);
}

TEST_CASE("carve_free: invalid depths are skipped and keyframes accumulate monotonically") {
  std::mt19937_64 rng(405);
  std::vector<CarveKeyframe> kfs;
  for (int i = 0; i < 3; ++i) {
    CarveKeyframe kf;
    kf.pose.translation =
        Eigen::Vector3d(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
    kf.depth = ImageF(16, 12);
    for (auto& d : kf.depth.data) d = uniform(rng, 0, 1) < 0.3 ? -1.f : float(uniform(rng, 0.5, 3.0));
    kf.fx = kf.fy = 10.0;
    kf.cx = 7.5;
    kf.cy = 5.5;
    kfs.push_back(std::move(kf));
  }
  const auto one = carve_free({kfs[0]}, 0.10);
  const auto two = carve_free({kfs[0], kfs[1]}, 0.10);
  const auto three = carve_free(kfs, 0.10);
  CHECK(one.size() <= two.size());
  CHECK(two.size() <= three.size());
  for (const uint64_t k : one) CHECK(two.count(k) == 1);
  for (const uint64_t k : two) CHECK(three.count(k) == 1);

  CarveKeyframe dead;
  dead.depth = ImageF(8, 8, -2.0f);
  CHECK(carve_free({dead}, 0.10).empty());
}

TEST_CASE("carve_free inside a room matches a per-voxel slab visibility oracle") {
  // Generic-position room [0, 3.203)^3 seen from an off-center camera.
  const double v = 0.10, step = 0.05;
  const double wall = 3.203;
  CarveKeyframe kf;
  kf.pose.translation = Eigen::Vector3d(1.6131, 1.5177, 1.2193);
  kf.fx = kf.fy = 40.0;
  kf.cx = 31.5;
  kf.cy = 23.5;
  kf.depth = ImageF(64, 48);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) {
      const Eigen::Vector3d d((x - kf.cx) / kf.fx, (y - kf.cy) / kf.fy, 1.0);
      double t_exit = std::numeric_limits<double>::infinity();
      for (int axis = 0; axis < 3; ++axis) {
        if (d[axis] > 0) t_exit = std::min(t_exit, (wall - kf.pose.translation[axis]) / d[axis]);
        if (d[axis] < 0) t_exit = std::min(t_exit, (0.0 - kf.pose.translation[axis]) / d[axis]);
      }
      kf.depth.at(x, y) = float(t_exit);  // camera depth = t for unit-z direction
    }
  }
  const auto keys = carve_free({kf}, v);
  CHECK(keys.size() > 100);

  // Oracle: for every voxel of the room grid, intersect each sampled ray
  // with the voxel slab-wise and ask whether a step multiple falls inside
  // the clipped interval.
  struct Ray {
    Eigen::Vector3d o, u;
    double len = 0.0;
  };
  std::vector<Ray> rays;
  for (size_t p = 0; p < kf.depth.size(); p += 16) {
    const float z = kf.depth.data[size_t(p)];
    if (!(z > 0.f)) continue;
    const int x = int(p % 64), y = int(p / 64);
    const Eigen::Vector3d cam(double(z) * (x - kf.cx) / kf.fx, double(z) * (y - kf.cy) / kf.fy,
                              double(z));
    Ray r;
    r.o = kf.pose.translation;
    const Eigen::Vector3d dir = (kf.pose * cam) - r.o;
    r.len = std::min(dir.norm(), 8.0) * (1.0 - 1e-6);  // mirror the endpoint slack
    r.u = dir.normalized();
    rays.push_back(r);
  }
  int visible_count = 0;
  for (int64_t iz = 0; iz < 33; ++iz) {
    for (int64_t iy = 0; iy < 33; ++iy) {
      for (int64_t ix = 0; ix < 33; ++ix) {
        bool visible = false;
        for (const Ray& r : rays) {
          double lo = 0.0, hi = r.len;
          const int64_t idx[3] = {ix, iy, iz};
          for (int axis = 0; axis < 3 && lo < hi; ++axis) {
            const double a = double(idx[axis]) * v, b = a + v;
            if (r.u[axis] == 0.0) {
              if (r.o[axis] < a || r.o[axis] >= b) hi = lo - 1;
            } else {
              double t0 = (a - r.o[axis]) / r.u[axis];
              double t1 = (b - r.o[axis]) / r.u[axis];
              if (t0 > t1) std::swap(t0, t1);
              lo = std::max(lo, t0);
              hi = std::min(hi, t1);
            }
          }
          if (lo >= hi) continue;
          for (int64_t j = int64_t(std::floor(lo / step)); ; ++j) {
            if (j < 0) continue;
            const double t = double(j) * step;
            if (t >= hi || t >= r.len) break;
            if (t >= lo) {
              visible = true;
              break;
            }
          }
          if (visible) break;
        }
        if (visible) ++visible_count;
        CHECK(visible == (keys.count(pack_voxel_indices(ix, iy, iz)) == 1));
      }
    }
  }
  CHECK(size_t(visible_count) == keys.size());  // nothing outside the room grid
}

TEST_CASE("dedup: drops occupied and carved voxels, keeps the rest in order") {
  std::mt19937_64 rng(406);
  OccupancyGrid grid;
  grid.voxel = 0.10;

  std::vector<Gaussian> borrowed;
  for (int i = 0; i < 30; ++i) borrowed.push_back(random_gaussian(rng));
  // Empty grid keeps everything, order preserved.
  const auto all = dedup(borrowed, grid);
  REQUIRE(all.size() == borrowed.size());
  for (size_t i = 0; i < all.size(); ++i) CHECK(all[i].mean == borrowed[i].mean);

  // Mark some voxels occupied, carve others free; the survivors are exactly
  // the membership-filter oracle's picks.
  for (int i = 0; i < 30; i += 3) grid.occupied.insert(voxel_key(borrowed[size_t(i)].mean, 0.10));
  for (int i = 1; i < 30; i += 5) grid.free.insert(voxel_key(borrowed[size_t(i)].mean, 0.10));
  const auto kept = dedup(borrowed, grid);
  std::vector<Eigen::Vector3d> expect;
  for (const auto& g : borrowed) {
    const uint64_t k = voxel_key(g.mean, 0.10);
    if (!grid.occupied.count(k) && !grid.free.count(k)) expect.push_back(g.mean);
  }
  REQUIRE(kept.size() == expect.size());
  for (size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].mean == expect[i]);
  CHECK(kept.size() < borrowed.size());

  // Idempotence.
  const auto twice = dedup(kept, grid);
  REQUIRE(twice.size() == kept.size());
  for (size_t i = 0; i < twice.size(); ++i) CHECK(twice[i].mean == kept[i].mean);

  // A borrowed copy of a target gaussian dies through the occupied set.
  Gaussian target = random_gaussian(rng);
  OccupancyGrid g2;
  g2.occupied = build_occupied({target}, g2.voxel);
  CHECK(dedup({target}, g2).empty());
}

TEST_CASE("fit_exposure: exact relations, constant images, and the gain clamp") {
  std::mt19937_64 rng(407);
  ImageF rendered(16, 16);
  for (auto& p : rendered.data) p = float(uniform(rng, 0.05, 0.95));

  // Identity relation.
  ExposureModel m = fit_exposure(rendered, rendered);
  CHECK(std::abs(m.a) < 1e-12);
  CHECK(std::abs(m.b) < 1e-12);

  // reference = 2 * rendered + 0.1.
  ImageF reference = rendered;
  for (auto& p : reference.data) p = 2.0f * p + 0.1f;
  m = fit_exposure(rendered, reference);
  CHECK(m.a == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(m.b == doctest::Approx(0.1).epsilon(1e-5));
  CHECK(m.gain() == doctest::Approx(2.0).epsilon(1e-6));

  // Constant render: gain indeterminate, bias = mean difference.
  ImageF flat(16, 16, 0.5f);
  ImageF ref2(16, 16);
  for (auto& p : ref2.data) p = float(uniform(rng, 0, 1));
  double mean_ref = 0.0;
  for (const auto& p : ref2.data) mean_ref += p;
  mean_ref /= double(ref2.size());
  m = fit_exposure(flat, ref2);
  CHECK(m.a == 0.0);
  CHECK(m.b == doctest::Approx(mean_ref - 0.5).epsilon(1e-9));

  // Anti-correlated data drives the unconstrained gain negative: clamp and
  // refit the bias.
  ImageF ramp(16, 16);
  ImageF anti(16, 16);
  double sr = 0.0, sa = 0.0;
  for (size_t i = 0; i < ramp.size(); ++i) {
    ramp.data[i] = float(i) / float(ramp.size());
    anti.data[i] = 1.0f - 2.0f * ramp.data[i];
    sr += ramp.data[i];
    sa += anti.data[i];
  }
  m = fit_exposure(ramp, anti);
  CHECK(m.gain() == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(m.b == doctest::Approx(sa / double(ramp.size()) - 1e-3 * sr / double(ramp.size()))
                   .epsilon(1e-9));

  CHECK_THROWS_AS(fit_exposure(ImageF(4, 4), ImageF(5, 4)), std::invalid_argument);
}

TEST_CASE("fit_exposure: noisy affine relation matches a stacked normal-equation oracle") {
  std::mt19937_64 rng(408);
  ImageF rendered(64, 64), reference(64, 64);
  for (size_t i = 0; i < rendered.size(); ++i) {
    rendered.data[i] = float(uniform(rng, 0.0, 1.0));
    reference.data[i] = float(1.7 * rendered.data[i] + 0.05 + 0.02 * gauss(rng));
  }
  const ExposureModel m = fit_exposure(rendered, reference);

  Eigen::MatrixXd a(rendered.size(), 2);
  Eigen::VectorXd y(rendered.size());
  for (size_t i = 0; i < rendered.size(); ++i) {
    a(long(i), 0) = rendered.data[i];
    a(long(i), 1) = 1.0;
    y[long(i)] = reference.data[i];
  }
  const Eigen::Vector2d gb = a.colPivHouseholderQr().solve(y);
  CHECK(m.gain() == doctest::Approx(gb[0]).epsilon(1e-9));
  CHECK(m.b == doctest::Approx(gb[1]).epsilon(1e-7));
}

TEST_CASE("fit_exposure: the valid mask excludes corrupted pixels") {
  std::mt19937_64 rng(409);
  ImageF rendered(16, 16), reference(16, 16);
  MaskImage valid(16, 16, 1);
  for (size_t i = 0; i < rendered.size(); ++i) {
    rendered.data[i] = float(uniform(rng, 0.0, 1.0));
    reference.data[i] = float(1.3 * rendered.data[i] + 0.2);
    if (i % 4 == 0) {
      valid.data[i] = 0;
      reference.data[i] = 99.0f;  // garbage that would wreck an unmasked fit
    }
  }
  const ExposureModel m = fit_exposure(rendered, reference, valid);
  CHECK(m.gain() == doctest::Approx(1.3).epsilon(1e-5));
  CHECK(m.b == doctest::Approx(0.2).epsilon(1e-5));
}

TEST_CASE("fuse: no borrowed input reduces to the pruned target map") {
  std::mt19937_64 rng(410);
  std::vector<Gaussian> target;
  for (int i = 0; i < 20; ++i) target.push_back(random_gaussian(rng));
  target[7].opacity = 0.003f;  // below the prune gate
  target[13].opacity = 0.0049f;

  const FuseResult res = fuse(target, {}, {});
  CHECK(res.map.size() == 18);
  CHECK(res.pruned == 2);
  CHECK(res.borrowed_total == 0);
  CHECK(res.borrowed_retained == 0);
  for (const auto& g : res.map) CHECK(g.opacity >= kMinOpacity);
  CHECK(res.exposure.empty());
}

TEST_CASE("fuse: a fully duplicated borrowed submap changes nothing") {
  std::mt19937_64 rng(411);
  std::vector<Gaussian> target;
  for (int i = 0; i < 25; ++i) target.push_back(random_gaussian(rng));

  BorrowedSubmap dup;
  dup.id = {1, 0};
  dup.gaussians = target;  // same means, identity correction
  const FuseResult res = fuse(target, {dup}, {});
  CHECK(res.map.size() == target.size());
  CHECK(res.borrowed_total == target.size());
  CHECK(res.borrowed_retained == 0);
}

TEST_CASE("fuse: identity corrections with zero overlap concatenate") {
  std::mt19937_64 rng(412);
  std::vector<Gaussian> target;
  for (int i = 0; i < 15; ++i) target.push_back(random_gaussian(rng));
  BorrowedSubmap far_off;
  far_off.id = {1, 0};
  for (int i = 0; i < 12; ++i) {
    Gaussian g = random_gaussian(rng);
    g.mean += Eigen::Vector3d(50, 50, 50);  // far outside the target's grid
    far_off.gaussians.push_back(g);
  }
  const FuseResult res = fuse(target, {far_off}, {});
  REQUIRE(res.map.size() == 27);
  for (size_t i = 0; i < 15; ++i) CHECK(res.map[i].mean == target[i].mean);
  for (size_t i = 0; i < 12; ++i) CHECK(res.map[15 + i].mean == far_off.gaussians[i].mean);
  CHECK(res.borrowed_retained == 12);
}

TEST_CASE("fuse: corrections place borrowed gaussians and the grid gates duplicates") {
  std::mt19937_64 rng(413);
  // Target owns the region around the origin and has carved free space along
  // a corridor; the borrowed agent contributes duplicates (dropped), carved
  // -region points (dropped), and genuinely new structure (kept).
  std::vector<Gaussian> target;
  for (int i = 0; i < 10; ++i) {
    Gaussian g = random_gaussian(rng, 0.8);
    g.scales = Eigen::Vector3d(0.03, 0.03, 0.03);
    target.push_back(g);
  }
  CarveKeyframe kf;
  kf.pose.translation = Eigen::Vector3d(0.013, 0.017, -2.0);
  kf.depth = ImageF(16, 12, 3.0f);
  kf.fx = kf.fy = 8.0;
  kf.cx = 7.5;
  kf.cy = 5.5;

  const Sim3 correction(1.0, Eigen::Quaterniond::Identity(), Eigen::Vector3d(10, 0, 0));
  BorrowedSubmap sub;
  sub.id = {1, 0};
  sub.correction = correction;
  // After the +10 x correction: first 5 land exactly on target means
  // (duplicates), next 5 land far away (new).
  for (int i = 0; i < 5; ++i) {
    Gaussian g = random_gaussian(rng);
    g.mean = target[size_t(i)].mean - Eigen::Vector3d(10, 0, 0);
    sub.gaussians.push_back(g);
  }
  for (int i = 0; i < 5; ++i) {
    Gaussian g = random_gaussian(rng);
    g.mean = Eigen::Vector3d(uniform(rng, 30, 40), 0, 0) - Eigen::Vector3d(10, 0, 0);
    sub.gaussians.push_back(g);
  }

  const FuseResult res = fuse(target, {sub}, {kf});
  CHECK(res.borrowed_total == 10);
  CHECK(res.borrowed_retained == 5);
  REQUIRE(res.map.size() == 15);
  // The survivors sit at corrected (shifted) positions.
  for (size_t i = 0; i < 5; ++i) {
    CHECK((res.map[10 + i].mean - (sub.gaussians[5 + i].mean + Eigen::Vector3d(10, 0, 0)))
              .norm() < 1e-12);
  }
  // And the carved corridor is in the grid.
  CHECK(!res.grid.free.empty());
  CHECK(!res.grid.occupied.empty());
  CHECK(res.exposure.size() == 1);  // default model: no render pair attached
  CHECK(res.exposure[0].a == 0.0);
  CHECK(res.exposure[0].b == 0.0);
}

TEST_CASE("fuse: borrowed gaussians inside carved free space are suppressed") {
  // One keyframe stares down +z through empty space; a borrowed gaussian
  // floating mid-corridor is a ghost and must not survive.
  CarveKeyframe kf;
  kf.depth = ImageF(1, 1, 5.0f);
  kf.fx = kf.fy = 1.0;
  kf.cx = kf.cy = 0.0;

  BorrowedSubmap sub;
  sub.id = {1, 0};
  Gaussian ghost;
  ghost.mean = Eigen::Vector3d(0.01, 0.02, 2.5);  // on the carved ray
  sub.gaussians.push_back(ghost);
  Gaussian keeper;
  keeper.mean = Eigen::Vector3d(2.0, 2.0, 2.5);  // off the ray
  sub.gaussians.push_back(keeper);

  const FuseResult res = fuse({}, {sub}, {kf});
  REQUIRE(res.map.size() == 1);
  CHECK(res.map[0].mean == keeper.mean);
}

TEST_CASE("gaussians_to_ply: header contract and bit-exact binary records") {
  Gaussian g;
  g.mean = Eigen::Vector3d(1.5, -2.25, 0.125);
  g.scales = Eigen::Vector3d(0.1, 0.2, 0.3);
  g.rotation = Eigen::Quaterniond(0.5, 0.5, 0.5, 0.5);
  g.opacity = 0.75f;
  g.color = Eigen::Vector3f(1.0f, 0.5f, 0.0f);

  const std::string blob = gaussians_to_ply({g});
  const size_t header_end = blob.find("end_header\n");
  REQUIRE(header_end != std::string::npos);
  const std::string header = blob.substr(0, header_end);
  CHECK(header.find("format binary_little_endian 1.0") != std::string::npos);
  CHECK(header.find("element vertex 1") != std::string::npos);
  // Property order is the contract: position, scales, rotation, opacity, color.
  const char* props[] = {"property float x",       "property float y",
                         "property float z",       "property float scale_0",
                         "property float scale_1", "property float scale_2",
                         "property float rot_0",   "property float rot_1",
                         "property float rot_2",   "property float rot_3",
                         "property float opacity", "property uchar red",
                         "property uchar green",   "property uchar blue"};
  size_t pos = 0;
  for (const char* p : props) {
    const size_t at = header.find(p, pos);
    CHECK(at != std::string::npos);
    pos = at;
  }

  const size_t body = header_end + std::strlen("end_header\n");
  REQUIRE(blob.size() - body == 11 * 4 + 3);
  float f[11];
  std::memcpy(f, blob.data() + body, sizeof f);
  CHECK(f[0] == 1.5f);
  CHECK(f[1] == -2.25f);
  CHECK(f[2] == 0.125f);
  CHECK(f[3] == 0.1f);
  CHECK(f[4] == 0.2f);
  CHECK(f[5] == 0.3f);
  CHECK(f[6] == 0.5f);  // w first
  CHECK(f[7] == 0.5f);
  CHECK(f[8] == 0.5f);
  CHECK(f[9] == 0.5f);
  CHECK(f[10] == 0.75f);
  CHECK(uint8_t(blob[body + 44]) == 255);
  CHECK(uint8_t(blob[body + 45]) == 128);  // round(0.5 * 255)
  CHECK(uint8_t(blob[body + 46]) == 0);

  CHECK(gaussians_to_ply({}).find("element vertex 0") != std::string::npos);
}

TEST_CASE("write_ply writes the exact blob to disk") {
  std::mt19937_64 rng(414);
  std::vector<Gaussian> gs;
  for (int i = 0; i < 7; ++i) gs.push_back(random_gaussian(rng));
  const std::string path = "/tmp/mags_test_fusion.ply";
  write_ply(path, gs);
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::string disk((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(disk == gaussians_to_ply(gs));
  std::remove(path.c_str());
}

TEST_CASE("grid_to_text: sorted deterministic key listing") {
  OccupancyGrid a, b;
  const uint64_t keys[] = {pack_voxel_indices(5, -2, 9), pack_voxel_indices(0, 0, 0),
                           pack_voxel_indices(-7, 3, 1)};
  for (const uint64_t k : keys) a.occupied.insert(k);
  for (auto it = std::rbegin(keys); it != std::rend(keys); ++it) b.occupied.insert(*it);
  a.free.insert(pack_voxel_indices(1, 1, 1));
  b.free.insert(pack_voxel_indices(1, 1, 1));

  const std::string ta = grid_to_text(a);
  CHECK(ta == grid_to_text(b));  // insertion order is invisible

  std::istringstream is(ta);
  std::string word;
  size_t n = 0;
  is >> word >> n;
  CHECK(word == "occupied");
  REQUIRE(n == 3);
  uint64_t prev = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t k = 0;
    is >> k;
    if (i > 0) CHECK(k > prev);
    prev = k;
  }
  is >> word >> n;
  CHECK(word == "free");
  CHECK(n == 1);
}
